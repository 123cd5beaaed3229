#pragma once

// Glyph inventory, holdout regimes and the four rule-learning tasks.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace esbn::taskgen {

enum class Task : std::uint8_t { SameDiff = 0, Rmts = 1, Dist3 = 2, IdentityRules = 3 };

inline constexpr std::array<Task, 4> kAllTasks = {Task::SameDiff, Task::Rmts, Task::Dist3, Task::IdentityRules};

std::string_view task_name(Task task);
/// Accepts same_diff | rmts | dist3 | identity_rules.
Task parse_task(std::string_view name);
/// Images per problem: 2, 6, 9, 9.
std::size_t sequence_length(Task task);
/// Output units: 1 (sigmoid) for the binary tasks, 4 (softmax) otherwise.
std::size_t output_units(Task task);
bool is_binary(Task task);

/// Holdout sizes a task supports (98 only for same/different).
std::vector<int> allowed_m(Task task);
bool valid_m(Task task, int m);

// ---------------------------------------------------------------------------
// Glyphs

inline constexpr std::size_t kGlyphCount = 100;
inline constexpr std::size_t kGlyphSide = 32;
inline constexpr std::size_t kGlyphPixels = kGlyphSide * kGlyphSide;

using Image = std::array<float, kGlyphPixels>;  // row-major, values in [0,1]

struct GlyphSet {
  std::vector<Image> images;  // index == glyph id
};

/// 100 distinct stroke glyphs, deterministic in the seed.
GlyphSet render_glyphs(std::uint64_t seed);
/// Loads 000.png..099.png (32x32, any PNG colour type, converted to gray).
GlyphSet load_glyphs(const std::filesystem::path& dir);
void save_glyphs(const GlyphSet& glyphs, const std::filesystem::path& dir);
/// Minimum pairwise L1 distance between images.
double min_pairwise_l1(const GlyphSet& glyphs);

// ---------------------------------------------------------------------------
// Problems and datasets

struct Regime {
  int m = 0;
  std::vector<std::uint8_t> train_ids;  // sorted
  std::vector<std::uint8_t> test_ids;   // sorted; equals train_ids when m == 0
};

/// Withholds m randomly chosen glyph ids for test.
Regime make_regime(Task task, int m, std::uint64_t seed);

struct Problem {
  Task task = Task::SameDiff;
  std::vector<std::uint8_t> ids;  // presentation order
  int target = 0;

  friend bool operator==(const Problem&, const Problem&) = default;
};

struct Dataset {
  Task task = Task::SameDiff;
  int m = 0;
  std::uint64_t seed = 0;
  Regime regime;
  std::vector<Problem> train;
  std::vector<Problem> test;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t test = 0;
};

/// Train/test sizes for every (task, m) cell.
SplitSizes expected_sizes(Task task, int m);

Dataset gen_same_different(int m, std::uint64_t seed);
Dataset gen_rmts(int m, std::uint64_t seed);
Dataset gen_dist3(int m, std::uint64_t seed);
Dataset gen_identity_rules(int m, std::uint64_t seed);
Dataset generate(Task task, int m, std::uint64_t seed);

enum class IdentityRule { ABA, ABB, AAA };
/// Rule instantiated by the first row of an identity-rules problem.
IdentityRule identity_rule_of(const Problem& problem);

/// Packs an id sequence (<= 9 ids of 7 bits) into a key for duplicate checks.
std::uint64_t problem_key(const std::vector<std::uint8_t>& ids);

// ---------------------------------------------------------------------------
// Archive: manifest.json + train.bin + test.bin (+ glyphs/)
//
// Record layout (all single bytes): task, T, T x id, target.

std::vector<std::uint8_t> encode_split(const std::vector<Problem>& problems);
std::vector<Problem> decode_split(const std::vector<std::uint8_t>& bytes);
/// FNV-1a 64 over train.bin followed by test.bin, as 16 hex digits.
std::string dataset_checksum(const Dataset& dataset);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, const GlyphSet* glyphs = nullptr);
/// Throws if the checksum recorded in the manifest does not match the data.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace esbn::taskgen
