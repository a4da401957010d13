#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "toxtraj/matrix.hpp"

namespace toxtraj {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

/// Study window and interpolation grid sizes.
struct StudyWindow {
  Timestamp t0 = 0;
  Timestamp t_end = 0;
  int n_daily_grid = 194;
  int week_len_days = 7;

  /// Normalised time of a timestamp: (s - t0) / (t_end - t0).
  double normalized_time(Timestamp s) const {
    return static_cast<double>(s - t0) / static_cast<double>(t_end - t0);
  }
  /// Grid abscissa g / (G - 1).
  double grid_time(int g) const { return static_cast<double>(g) / static_cast<double>(n_daily_grid - 1); }
  /// Number of complete weeks covered by the daily grid.
  int n_weeks() const { return n_daily_grid / week_len_days; }
  bool contains(Timestamp s) const { return s >= t0 && s <= t_end; }

  bool operator==(const StudyWindow&) const = default;
};

inline constexpr Timestamp kDefaultWindowStart = 1681689600;  // 2023-04-17T00:00:00Z
inline constexpr Timestamp kDefaultWindowEnd = 1698451140;    // 2023-10-27T23:59:00Z
inline constexpr int kDefaultDailyGrid = 194;
inline constexpr int kDefaultWeekLength = 7;

struct StudyWindowConfig {
  std::optional<Timestamp> t0;
  std::optional<Timestamp> t_end;
  int n_daily_grid = kDefaultDailyGrid;
  int week_len_days = kDefaultWeekLength;
};

/// Builds a validated window; unset endpoints fall back to the default
/// collection window. Throws InvalidArgument if t_end <= t0 or the grid has
/// fewer than two points.
StudyWindow study_window(const StudyWindowConfig& config = {});

/// Parses "YYYY-MM-DDTHH:MM[:SS][Z]" (UTC) or a bare "YYYY-MM-DD".
Timestamp parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp t);

/// Maps a 1..5 Likert rating onto 0..100: (raw - 1) / 4 * 100.
double normalize_toxicity(int raw);

struct PostRecord {
  std::string post_id;
  std::string user_id;
  Timestamp timestamp = 0;
  std::optional<std::string> text;
  std::optional<int> toxicity_raw;
  std::optional<double> toxicity;
  std::optional<std::size_t> embedding_row;
  std::optional<int> topic_id;

  bool operator==(const PostRecord&) const = default;
};

/// Row-major embedding matrix with one post id per row.
struct EmbeddingMatrix {
  Matrix values;
  std::vector<std::string> row_ids;

  std::size_t n() const { return values.rows; }
  std::size_t d() const { return values.cols; }
  std::span<const double> row(std::size_t i) const { return values.row(i); }

  bool operator==(const EmbeddingMatrix&) const = default;
};

/// Immutable-after-load collection of posts, optionally with embeddings.
/// Posts are ordered by (user_id, timestamp, post_id).
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<PostRecord> posts, std::optional<EmbeddingMatrix> embeddings, StudyWindow window,
         std::size_t dropped_outside_window = 0);

  const std::vector<PostRecord>& posts() const { return posts_; }
  const std::optional<EmbeddingMatrix>& embeddings() const { return embeddings_; }
  const StudyWindow& window() const { return window_; }
  std::size_t dropped_outside_window() const { return dropped_; }

  std::optional<std::size_t> find_post(std::string_view post_id) const;

  bool operator==(const Corpus& other) const {
    return posts_ == other.posts_ && embeddings_ == other.embeddings_ && window_ == other.window_;
  }

 private:
  std::vector<PostRecord> posts_;
  std::optional<EmbeddingMatrix> embeddings_;
  StudyWindow window_;
  std::size_t dropped_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Sort order shared by ingestion and every downstream consumer.
bool post_order(const PostRecord& a, const PostRecord& b);

/// Reads newline-delimited JSON post records. Errors name the 1-based line.
std::vector<PostRecord> read_posts(const std::filesystem::path& path);
void write_posts(const std::filesystem::path& path, std::span<const PostRecord> posts);

/// EMB1 binary embeddings plus a "<path>.ids" sidecar of row post ids.
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix);
std::filesystem::path embedding_ids_path(const std::filesystem::path& path);

/// Assembles a corpus: drops posts outside `window`, sorts, rejects duplicate
/// post ids, and aligns embedding rows to posts. Embedding rows belonging to
/// dropped posts are removed; a row id with no post at all is an error.
Corpus assemble_corpus(std::vector<PostRecord> posts, std::optional<EmbeddingMatrix> embeddings,
                       const StudyWindow& window);

Corpus load_corpus(const std::filesystem::path& posts_path,
                   const std::optional<std::filesystem::path>& embeddings_path,
                   const StudyWindow& window = study_window());

/// A saved corpus is a directory holding posts.jsonl, window.json and, when
/// present, embeddings.emb (+ .ids).
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus_dir(const std::filesystem::path& dir);

}  // namespace toxtraj

namespace toxtraj {

/// Rating prompt sent to an external toxicity annotator; "{text}" is replaced
/// by the post text.
extern const std::string_view kToxicityPrompt;

/// Writes one request per post that has text and no rating:
/// {"task_id", "post_id", "prompt"}.
void write_toxicity_requests(const std::filesystem::path& path, std::span<const PostRecord> posts);

/// Reads {"post_id", "toxicity_raw"} lines and fills toxicity_raw / toxicity.
/// Unknown post ids and ratings outside 1..5 are errors.
void apply_toxicity_responses(std::vector<PostRecord>& posts, const std::filesystem::path& path);

}  // namespace toxtraj
