#include "toxtraj/corpus.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/rng.hpp"

namespace toxtraj {

using nlohmann::json;
namespace fs = std::filesystem;

StudyWindow study_window(const StudyWindowConfig& config) {
  StudyWindow w;
  w.t0 = config.t0.value_or(kDefaultWindowStart);
  w.t_end = config.t_end.value_or(kDefaultWindowEnd);
  w.n_daily_grid = config.n_daily_grid;
  w.week_len_days = config.week_len_days;
  if (w.t_end <= w.t0) throw InvalidArgument("study window: t_end must be after t0");
  if (w.n_daily_grid < 2) throw InvalidArgument("study window: daily grid needs at least 2 points");
  if (w.week_len_days < 1) throw InvalidArgument("study window: week length must be positive");
  return w;
}

namespace {

int parse_fixed(std::string_view s, std::size_t pos, std::size_t len, std::string_view whole) {
  int v = 0;
  if (pos + len > s.size()) throw InvalidArgument("bad ISO-8601 timestamp: " + std::string(whole));
  auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
  if (ec != std::errc{} || ptr != s.data() + pos + len)
    throw InvalidArgument("bad ISO-8601 timestamp: " + std::string(whole));
  return v;
}

}  // namespace

Timestamp parse_iso8601(std::string_view text) {
  using namespace std::chrono;
  std::string_view s = text;
  if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.remove_suffix(1);
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw InvalidArgument("bad ISO-8601 timestamp: " + std::string(text));
  const int y = parse_fixed(s, 0, 4, text);
  const int mo = parse_fixed(s, 5, 2, text);
  const int d = parse_fixed(s, 8, 2, text);
  int hh = 0, mm = 0, ss = 0;
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':')
      throw InvalidArgument("bad ISO-8601 timestamp: " + std::string(text));
    hh = parse_fixed(s, 11, 2, text);
    mm = parse_fixed(s, 14, 2, text);
    if (s.size() > 16) {
      if (s[16] != ':' || s.size() != 19) throw InvalidArgument("bad ISO-8601 timestamp: " + std::string(text));
      ss = parse_fixed(s, 17, 2, text);
    }
  }
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) throw InvalidArgument("bad ISO-8601 timestamp: " + std::string(text));
  const auto tp = sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss};
  return tp.time_since_epoch().count();
}

std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{t}};
  const auto day_start = floor<days>(tp);
  const year_month_day ymd{day_start};
  const hh_mm_ss hms{tp - day_start};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long long>(hms.hours().count()), static_cast<long long>(hms.minutes().count()),
                static_cast<long long>(hms.seconds().count()));
  return buf;
}

double normalize_toxicity(int raw) {
  if (raw < 1 || raw > 5) throw InvalidArgument("toxicity rating must be in 1..5, got " + std::to_string(raw));
  return static_cast<double>(raw - 1) / 4.0 * 100.0;
}

bool post_order(const PostRecord& a, const PostRecord& b) {
  if (a.user_id != b.user_id) return a.user_id < b.user_id;
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.post_id < b.post_id;
}

Corpus::Corpus(std::vector<PostRecord> posts, std::optional<EmbeddingMatrix> embeddings, StudyWindow window,
               std::size_t dropped_outside_window)
    : posts_(std::move(posts)), embeddings_(std::move(embeddings)), window_(window), dropped_(dropped_outside_window) {
  index_.reserve(posts_.size());
  for (std::size_t i = 0; i < posts_.size(); ++i) index_.emplace(posts_[i].post_id, i);
}

std::optional<std::size_t> Corpus::find_post(std::string_view post_id) const {
  auto it = index_.find(std::string(post_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Posts file

namespace {

PostRecord parse_post(const json& j) {
  if (!j.is_object()) throw FormatError("record is not a JSON object");
  PostRecord p;
  auto require_string = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw FormatError(std::string("missing or non-string \"") + key + "\"");
    return it->get<std::string>();
  };
  p.post_id = require_string("post_id");
  p.user_id = require_string("user_id");
  auto ts = j.find("timestamp");
  if (ts == j.end() || !ts->is_number_integer()) throw FormatError("missing or non-integer \"timestamp\"");
  p.timestamp = ts->get<Timestamp>();
  if (auto it = j.find("text"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw FormatError("\"text\" must be a string");
    p.text = it->get<std::string>();
  }
  if (auto it = j.find("toxicity_raw"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw FormatError("\"toxicity_raw\" must be an integer");
    p.toxicity_raw = it->get<int>();
    p.toxicity = normalize_toxicity(*p.toxicity_raw);
  }
  if (auto it = j.find("toxicity"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw FormatError("\"toxicity\" must be a number");
    const double t = it->get<double>();
    if (!std::isfinite(t) || t < 0.0 || t > 100.0) throw FormatError("\"toxicity\" must lie in [0, 100]");
    if (p.toxicity && std::abs(*p.toxicity - t) > 1e-9) throw FormatError("\"toxicity\" disagrees with \"toxicity_raw\"");
    p.toxicity = t;
  }
  if (auto it = j.find("topic_id"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw FormatError("\"topic_id\" must be an integer");
    p.topic_id = it->get<int>();
  }
  return p;
}

json post_to_json(const PostRecord& p) {
  json j;
  j["post_id"] = p.post_id;
  j["user_id"] = p.user_id;
  j["timestamp"] = p.timestamp;
  if (p.text) j["text"] = *p.text;
  if (p.toxicity_raw) {
    j["toxicity_raw"] = *p.toxicity_raw;
  } else if (p.toxicity) {
    j["toxicity"] = *p.toxicity;
  }
  if (p.topic_id) j["topic_id"] = *p.topic_id;
  return j;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<PostRecord> read_posts(const fs::path& path) {
  auto in = open_in(path);
  std::vector<PostRecord> posts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      posts.push_back(parse_post(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return posts;
}

void write_posts(const fs::path& path, std::span<const PostRecord> posts) {
  auto out = open_out(path);
  for (const auto& p : posts) out << post_to_json(p).dump() << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// EMB1

namespace {

constexpr std::array<char, 4> kEmbMagic{'E', 'M', 'B', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated header: " + path.string());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

fs::path embedding_ids_path(const fs::path& path) {
  fs::path p = path;
  p += ".ids";
  return p;
}

EmbeddingMatrix read_embeddings(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kEmbMagic) throw FormatError("not an EMB1 file: " + path.string());
  const std::uint32_t n = get_u32(in, path);
  const std::uint32_t d = get_u32(in, path);
  EmbeddingMatrix m;
  m.values = Matrix(n, d);
  std::vector<unsigned char> buf(static_cast<std::size_t>(n) * d * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError("truncated EMB1 payload: " + path.string());
  for (std::size_t i = 0; i < m.values.values.size(); ++i) {
    const unsigned char* b = buf.data() + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw FormatError("non-finite embedding value in " + path.string());
    m.values.values[i] = static_cast<double>(f);
  }
  auto ids = open_in(embedding_ids_path(path));
  std::string line;
  std::unordered_set<std::string> seen;
  while (std::getline(ids, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!seen.insert(line).second) throw FormatError("duplicate embedding row id: " + line);
    m.row_ids.push_back(line);
  }
  if (m.row_ids.size() != n)
    throw FormatError("sidecar lists " + std::to_string(m.row_ids.size()) + " ids but EMB1 has " + std::to_string(n) +
                      " rows: " + path.string());
  return m;
}

void write_embeddings(const fs::path& path, const EmbeddingMatrix& m) {
  if (m.row_ids.size() != m.n()) throw InvalidArgument("embedding matrix: row id count does not match rows");
  {
    auto out = open_out(path, std::ios::binary);
    out.write(kEmbMagic.data(), 4);
    put_u32(out, static_cast<std::uint32_t>(m.n()));
    put_u32(out, static_cast<std::uint32_t>(m.d()));
    for (double v : m.values.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!out) throw FormatError("write failed: " + path.string());
  }
  auto ids = open_out(embedding_ids_path(path));
  for (const auto& id : m.row_ids) ids << id << '\n';
}

// ---------------------------------------------------------------------------
// Corpus assembly

Corpus assemble_corpus(std::vector<PostRecord> posts, std::optional<EmbeddingMatrix> embeddings,
                       const StudyWindow& window) {
  std::unordered_set<std::string> all_ids;
  all_ids.reserve(posts.size());
  for (const auto& p : posts)
    if (!all_ids.insert(p.post_id).second) throw FormatError("duplicate post_id: " + p.post_id);

  const auto before = posts.size();
  std::erase_if(posts, [&](const PostRecord& p) { return !window.contains(p.timestamp); });
  const std::size_t dropped = before - posts.size();
  std::sort(posts.begin(), posts.end(), post_order);
  for (auto& p : posts) p.embedding_row.reset();

  if (embeddings) {
    std::unordered_map<std::string, std::size_t> kept;
    kept.reserve(posts.size());
    for (std::size_t i = 0; i < posts.size(); ++i) kept.emplace(posts[i].post_id, i);
    EmbeddingMatrix compact;
    compact.values = Matrix(0, embeddings->d());
    for (std::size_t r = 0; r < embeddings->n(); ++r) {
      const auto& id = embeddings->row_ids[r];
      auto it = kept.find(id);
      if (it == kept.end()) {
        if (!all_ids.contains(id)) throw FormatError("embedding row id has no post: " + id);
        continue;
      }
      for (double v : embeddings->row(r)) {
        if (!std::isfinite(v)) throw FormatError("non-finite embedding value for " + id);
        compact.values.values.push_back(v);
      }
      posts[it->second].embedding_row = compact.row_ids.size();
      compact.row_ids.push_back(id);
    }
    compact.values.rows = compact.row_ids.size();
    embeddings = std::move(compact);
  }
  return Corpus(std::move(posts), std::move(embeddings), window, dropped);
}

Corpus load_corpus(const fs::path& posts_path, const std::optional<fs::path>& embeddings_path,
                   const StudyWindow& window) {
  auto posts = read_posts(posts_path);
  std::optional<EmbeddingMatrix> emb;
  if (embeddings_path) emb = read_embeddings(*embeddings_path);
  return assemble_corpus(std::move(posts), std::move(emb), window);
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  write_posts(dir / "posts.jsonl", corpus.posts());
  const auto& w = corpus.window();
  json jw = {{"t0", w.t0},
             {"t_end", w.t_end},
             {"n_daily_grid", w.n_daily_grid},
             {"week_len_days", w.week_len_days},
             {"dropped_outside_window", corpus.dropped_outside_window()}};
  open_out(dir / "window.json") << jw.dump(2) << '\n';
  const fs::path emb = dir / "embeddings.emb";
  if (corpus.embeddings()) {
    write_embeddings(emb, *corpus.embeddings());
  } else {
    fs::remove(emb);
    fs::remove(embedding_ids_path(emb));
  }
}

Corpus load_corpus_dir(const fs::path& dir) {
  json jw;
  try {
    jw = json::parse(open_in(dir / "window.json"));
  } catch (const json::exception& e) {
    throw FormatError((dir / "window.json").string() + ": " + e.what());
  }
  StudyWindowConfig cfg;
  cfg.t0 = jw.at("t0").get<Timestamp>();
  cfg.t_end = jw.at("t_end").get<Timestamp>();
  cfg.n_daily_grid = jw.at("n_daily_grid").get<int>();
  cfg.week_len_days = jw.at("week_len_days").get<int>();
  const StudyWindow window = study_window(cfg);
  const fs::path emb = dir / "embeddings.emb";
  std::optional<fs::path> emb_path;
  if (fs::exists(emb)) emb_path = emb;
  Corpus c = load_corpus(dir / "posts.jsonl", emb_path, window);
  const auto dropped = jw.value("dropped_outside_window", std::size_t{0});
  std::vector<PostRecord> posts = c.posts();
  auto embeddings = c.embeddings();
  return Corpus(std::move(posts), std::move(embeddings), window, dropped);
}

// ---------------------------------------------------------------------------
// Toxicity annotation exchange

const std::string_view kToxicityPrompt =
    R"(Task Description:
You will be given a "text" in your language.
Your task is to assign a holistic toxicity score on a 5-point Likert scale to the text. 
Toxicity can take different forms, such as identity attack, bias, microaggression, violence, self-harm, insult, or sexual content.

Note:
- This dataset may contain extremely toxic content.
- Evaluate the text based on how toxic it would be perceived by a native speaker of the language.
- The text may be truncated.

Input:
Text: "{text}"

Output Format:
Respond with a single integer toxicity score [1-5]. Do not include anything else.)";

void write_toxicity_requests(const fs::path& path, std::span<const PostRecord> posts) {
  auto out = open_out(path);
  const std::string templ(kToxicityPrompt);
  const auto slot = templ.find("{text}");
  for (const auto& p : posts) {
    if (!p.text || p.toxicity_raw) continue;
    std::string prompt = templ;
    prompt.replace(slot, 6, *p.text);
    char id[17];
    std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(fnv1a(p.post_id + '\n' + *p.text)));
    out << json{{"task_id", id}, {"post_id", p.post_id}, {"prompt", prompt}}.dump() << '\n';
  }
}

void apply_toxicity_responses(std::vector<PostRecord>& posts, const fs::path& path) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < posts.size(); ++i) index.emplace(posts[i].post_id, i);
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    }
    if (!j.contains("post_id") || !j["post_id"].is_string() || !j.contains("toxicity_raw") ||
        !j["toxicity_raw"].is_number_integer())
      throw FormatError(where + "expected {\"post_id\": string, \"toxicity_raw\": integer}");
    auto it = index.find(j["post_id"].get<std::string>());
    if (it == index.end()) throw FormatError(where + "unknown post_id " + j["post_id"].get<std::string>());
    const int raw = j["toxicity_raw"].get<int>();
    if (raw < 1 || raw > 5) throw FormatError(where + "toxicity_raw outside 1..5");
    posts[it->second].toxicity_raw = raw;
    posts[it->second].toxicity = normalize_toxicity(raw);
  }
}

}  // namespace toxtraj
