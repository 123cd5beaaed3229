#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace esbn {

enum class Split { Train, Test };
enum class KeyKind { Written, Retrieved };

struct KeyRow {
  Split split = Split::Train;
  KeyKind kind = KeyKind::Written;
  std::size_t step = 1;     // 1-based time step
  std::size_t problem = 0;  // index within the split
  std::vector<float> values;
};

struct KeyCorpus {
  std::vector<KeyRow> rows;

  /// Rows matching the filters (unset = any).
  KeyCorpus filter(std::optional<Split> split, std::optional<KeyKind> kind, std::optional<std::size_t> step = {}) const;
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().values.size(); }
};

void write_keys_csv(const std::filesystem::path& path, const KeyCorpus& corpus);
KeyCorpus read_keys_csv(const std::filesystem::path& path);

struct Pca2Result {
  std::vector<double> mean;
  std::array<std::vector<double>, 2> components;  // unit vectors
  std::array<double, 2> explained{};              // variance ratios
  std::vector<std::array<double, 2>> projections;
};

/// Top-2 principal components of the rows (N >= 2). Each component's
/// largest-magnitude entry is made positive. Throws on a rank-0 input.
Pca2Result pca2(const std::vector<std::vector<double>>& rows);
Pca2Result pca2(const KeyCorpus& corpus);
std::array<double, 2> project(const Pca2Result& pca, const std::vector<double>& row);

struct OverlapStep {
  std::size_t step = 0;
  std::size_t train_rows = 0, test_rows = 0;
  double centroid_distance = 0.0;
  double dispersion = 0.0;  // pooled RMS distance of points to their own split centroid
  double ratio = 0.0;       // centroid_distance / dispersion, 0 when the centroids coincide
};

/// Per step in [first, last]: fits 2-D PCA on all rows of both corpora, then
/// compares train and test rows of that step in the projected space.
/// Throws if a step has no rows in either corpus.
std::vector<OverlapStep> overlap_report(const KeyCorpus& train, const KeyCorpus& test, std::size_t first,
                                        std::size_t last);

// ----- report bundle -----

struct ResultRow {
  std::string task;
  std::string model;
  bool tcn = true;
  std::string encoder;
  int m = 0;
  std::size_t seeds = 0;
  double mean = 0.0;
  std::optional<double> sem;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct TimecoursePoint {
  std::string run;
  std::uint64_t update = 0;
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Canonical ordering: task, then model list order, then TCN before no-TCN, then m.
void sort_results(std::vector<ResultRow>& rows);

void write_results_csv(const std::filesystem::path& path, std::vector<ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);
/// One row per (model, tcn, encoder), one mean/sem column pair per m.
void write_results_table(const std::filesystem::path& path, const std::string& task, std::vector<ResultRow> rows);
void write_timecourse_csv(const std::filesystem::path& path, const std::vector<TimecoursePoint>& points);
void write_pca_csv(const std::filesystem::path& path, const KeyCorpus& corpus, const Pca2Result& pca);
void write_overlap_csv(const std::filesystem::path& path, const std::vector<OverlapStep>& steps);

}  // namespace esbn
