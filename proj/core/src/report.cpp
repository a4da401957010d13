#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "toxtraj/corpus.hpp"
#include "toxtraj/pipeline.hpp"

namespace toxtraj {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("report: missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("report: bad JSON in " + path.string() + ": " + e.what());
  }
}

std::string num(const json& v, int digits = 4) {
  if (v.is_null()) return "NA";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v.get<double>());
  return buf;
}

// MM/DD of a timestamp.
std::string month_day(Timestamp t) { return format_iso8601(t).substr(5, 5); }

std::string week_range(Timestamp t0, int week_len, int begin, int end) {
  const Timestamp day = 86400;
  const Timestamp a = t0 + static_cast<Timestamp>(begin) * week_len * day;
  const Timestamp b = t0 + (static_cast<Timestamp>(end) + 1) * week_len * day - day;
  return month_day(a) + "-" + month_day(b);
}

}  // namespace

std::string render_report(const fs::path& manifest_path) {
  const json manifest = load_json(manifest_path);
  std::map<std::string, json> outputs;
  for (const auto& st : manifest.at("stages")) {
    if (st.at("status") != "ok") continue;
    for (const auto& [name, f] : st.at("outputs").items()) outputs[st.at("name").get<std::string>() + "." + name] = f;
  }
  auto output = [&](const std::string& key) -> std::optional<json> {
    const auto it = outputs.find(key);
    if (it == outputs.end()) return std::nullopt;
    return load_json(it->second.at("path").get<std::string>());
  };

  const Timestamp t0 = manifest.at("window").at("t0").get<Timestamp>();
  const int week_len = manifest.at("window").at("week_len_days").get<int>();

  std::ostringstream md;
  md << "# toxtraj report\n\n";
  md << "root seed: " << manifest.at("root_seed").dump() << " (" << manifest.at("seed_source").get<std::string>()
     << ")\n\n";
  md << "## Stages\n\n```tsv\nstage\tstatus\twall_seconds\n";
  for (const auto& st : manifest.at("stages"))
    md << st.at("name").get<std::string>() << '\t' << st.at("status").get<std::string>() << '\t'
       << (st.contains("wall_seconds") ? num(st.at("wall_seconds"), 3) : std::string("NA")) << '\n';
  md << "```\n\n";

  if (const auto topics = output("merge.topics")) {
    md << "## Topics per level\n\n```tsv\nlevel\tkept\n";
    for (const auto& [lvl, c] : topics->at("level_counts").items()) md << lvl << '\t' << c.dump() << '\n';
    md << "outliers\t" << topics->at("outliers").dump() << "\n```\n\n";
  }

  if (const auto groups = output("groups.groups")) {
    md << "## Groups\n\n```tsv\ngroup\tsize\tmean_toxicity\n";
    for (const auto& [name, g] : groups->at("groups").items())
      md << name << '\t' << g.at("size").dump() << '\t' << num(g.at("mean_toxicity")) << '\n';
    md << "```\n\n## Weekly toxicity\n\n```tsv\ngroup";
    const auto& weekly = groups->at("weekly_toxicity");
    std::size_t weeks = 0;
    for (const auto& [name, series] : weekly.items()) weeks = std::max(weeks, series.size());
    for (std::size_t w = 0; w < weeks; ++w) md << "\tw" << w;
    md << '\n';
    for (const auto& [name, series] : weekly.items()) {
      md << name;
      for (const auto& v : series) md << '\t' << num(v, 3);
      md << '\n';
    }
    md << "```\n\n";
  }

  if (const auto perm = output("permanova.permanova")) {
    md << "## PERMANOVA\n\n```tsv\npair\tfreq\tn_a\tn_b\tpseudo_f\tp_value\teta_squared\n";
    for (const auto& r : perm->at("rows")) {
      md << r.at("pair").get<std::string>() << '\t' << r.at("freq").get<std::string>() << '\t';
      if (r.contains("error")) {
        md << "NA\tNA\tNA\tNA\tNA\t# " << r.at("error").get<std::string>() << '\n';
        continue;
      }
      const std::string f = r.at("f_infinite").get<bool>() ? "inf" : num(r.at("pseudo_f"));
      md << r.at("n_a").dump() << '\t' << r.at("n_b").dump() << '\t' << f << '\t' << num(r.at("p_value")) << '\t'
         << num(r.at("eta_squared")) << '\n';
    }
    md << "```\n\n";
  }

  if (const auto lab = output("assign.labeled")) {
    md << "## Topic assignment\n\n";
    if (!lab->at("f1").is_null())
      md << "macro F1: " << num(lab->at("f1").at("macro_f1")) << ", micro F1: " << num(lab->at("f1").at("micro_f1"))
         << " (n_test " << lab->at("f1").at("n_test").dump() << ")\n\n";
    const auto& topics = lab->at("topics");
    md << "```tsv\ngroup\tweeks\ttopic\tmean_toxicity\n";
    for (const auto& [name, g] : lab->at("groups").items()) {
      if (!g.contains("weekly")) continue;
      for (const auto& run : g.at("weekly").at("runs")) {
        const int topic = run.at("topic").get<int>();
        const std::string key = std::to_string(topic);
        const json tox = topic >= 0 && topics.contains(key) ? topics.at(key).at("mean_toxicity") : json(nullptr);
        md << name << '\t' << week_range(t0, week_len, run.at("begin").get<int>(), run.at("end").get<int>()) << '\t'
           << (topic >= 0 ? key : std::string("unlabeled")) << '\t' << num(tox, 3) << '\n';
      }
    }
    md << "```\n";
  }
  return md.str();
}

}  // namespace toxtraj
