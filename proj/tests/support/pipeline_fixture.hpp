#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include "toxtraj/pipeline.hpp"
#include "toxtraj/synth.hpp"

namespace testing_support {

// Writes a synthetic corpus under dir/input and returns a config running the
// whole pipeline on it into dir/<run_name>.
inline toxtraj::PipelineConfig synth_run_config(const std::filesystem::path& dir, std::uint64_t seed,
                                                std::size_t n_users = 60, std::size_t ambient_dim = 0,
                                                const std::string& run_name = "run") {
  toxtraj::synth::ScenarioConfig sc;
  sc.n_users = n_users;
  sc.seed = seed;
  sc.ambient_dim = ambient_dim;
  const auto input = dir / "input";
  if (!std::filesystem::exists(input / "posts.jsonl"))
    toxtraj::synth::write_synth(input, toxtraj::synth::generate_user_streams(sc), sc);
  toxtraj::PipelineConfig c;
  c.seed = seed;
  c.out_dir = dir / run_name;
  c.posts = input / "posts.jsonl";
  c.embeddings = input / "embeddings.emb";
  c.reduce_external = ambient_dim == 0;
  c.reduce_fraction = 0.25;
  c.min_cluster_size = 40;
  c.min_samples = 40;
  c.permutations = 199;
  return c;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Hash of every file in a run directory except the manifest.
inline std::map<std::string, std::string> output_hashes(const std::filesystem::path& run) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(run)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    out[std::filesystem::relative(e.path(), run).string()] = toxtraj::file_hash(e.path());
  }
  return out;
}

}  // namespace testing_support
