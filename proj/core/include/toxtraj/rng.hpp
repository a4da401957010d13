#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace toxtraj {

// Seeding scheme
// --------------
// Every random draw in the library comes from a stream keyed by a root seed
// and a tuple of integer tags (stage, task, repetition, ...). Streams are
// derived by folding each tag into the key with splitmix64, so a stream
// depends only on its key and never on which thread or in which order it is
// consumed. String tags (stage names) are hashed with FNV-1a first.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t stream_key(std::uint64_t root) noexcept { return splitmix64(root); }

template <class... Tags>
constexpr std::uint64_t stream_key(std::uint64_t root, std::uint64_t tag, Tags... rest) noexcept {
  return stream_key(splitmix64(root) ^ splitmix64(tag + 0x632be59bd9b4e019ULL),
                    static_cast<std::uint64_t>(rest)...);
}

/// Seeded pseudo-random stream. Thin wrapper over mt19937_64 so that all
/// sampling helpers share one engine type.
class Rng {
 public:
  using Engine = std::mt19937_64;

  explicit Rng(std::uint64_t key) : engine_(key) {}

  template <class... Tags>
  static Rng stream(std::uint64_t root, Tags... tags) {
    return Rng(stream_key(root, static_cast<std::uint64_t>(tags)...));
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(engine_); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  Engine& engine() { return engine_; }

 private:
  Engine engine_;
};

/// k distinct indices drawn uniformly from [0, n) (Floyd's algorithm), in
/// ascending order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k);

/// In-place Fisher-Yates shuffle driven by Rng::below.
template <class T>
void shuffle(Rng& rng, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace toxtraj
