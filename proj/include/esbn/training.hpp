#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esbn/analysis.hpp"
#include "esbn/network.hpp"
#include "esbn/taskgen.hpp"

namespace esbn {

struct TrainSpec {
  ModelKind model = ModelKind::Esbn;
  EncoderKind encoder = EncoderKind::Conv;
  bool tcn = true;
  taskgen::Task task = taskgen::Task::SameDiff;
  int m = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;  // 0: resolve from the schedule tables
  int epochs = 0;              // 0: resolve from the schedule tables
  std::size_t batch_size = 32;
  std::uint64_t glyph_seed = 0;
  bool capture_keys = false;  // ESBN kinds only
  std::size_t capture_problems = 500;  // per split
};

/// 5e-4 with TCN; without TCN 5e-5 for every ESBN kind, for RN on RMTS and
/// for PrediNet on dist3 / identity rules, 5e-4 otherwise.
double default_learning_rate(ModelKind model, taskgen::Task task, bool tcn);

/// Per-task defaults by m, with longer schedules for PrediNet and RN on dist3
/// and for PrediNet, RN and the Transformer on identity rules.
int default_epochs(ModelKind model, taskgen::Task task, int m);

/// Fills zero learning rate / epochs and validates the rest.
TrainSpec resolve(TrainSpec spec);

std::string spec_to_json(const TrainSpec& spec);
TrainSpec spec_from_json(const std::string& json);
/// 16 hex digits of FNV-1a over the canonical JSON of the resolved spec.
std::string spec_hash(const TrainSpec& spec);

/// ceil(train_size / batch_size) updates; last partial batch kept.
std::size_t updates_per_epoch(std::size_t train_size, std::size_t batch_size);

struct UpdateRecord {
  std::uint64_t update = 0;
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // per batch
};

struct RunRecord {
  TrainSpec spec;
  std::vector<UpdateRecord> updates;
  double test_accuracy = 0.0;
  double final_train_accuracy = 0.0;  // full train split after training
  double wall_seconds = 0.0;
  std::size_t parameter_count = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::optional<KeyCorpus> keys;
};

struct TrainResult {
  RunRecord record;
  std::unique_ptr<Network<float>> network;
};

using UpdateCallback = std::function<void(const UpdateRecord&)>;

/// Generates the dataset from (task, m, seed), trains with ADAM and evaluates
/// on the full test split. Throws on a non-finite loss.
TrainResult train(const TrainSpec& spec, const taskgen::GlyphSet& glyphs, const UpdateCallback& on_update = {});

/// Same, on a pre-built dataset (its task and m must match the spec).
TrainResult train_on(const TrainSpec& spec, const taskgen::Dataset& data, const taskgen::GlyphSet& glyphs,
                     const UpdateCallback& on_update = {});

/// Fraction of problems answered correctly: sigmoid output > 0.5 for binary
/// tasks, argmax otherwise.
double evaluate(const Network<float>& network, const taskgen::GlyphSet& glyphs,
                const std::vector<taskgen::Problem>& problems, std::size_t batch = 500);

/// Rows written by the ESBN while processing up to `limit` problems of each split.
KeyCorpus capture_keys(const Network<float>& network, const taskgen::GlyphSet& glyphs, const taskgen::Dataset& data,
                       std::size_t limit);

/// Trailing mean of per-batch accuracy; the first update index (1-based) at
/// which it reaches `threshold`, or 0 if never.
std::uint64_t updates_to_reach(const std::vector<UpdateRecord>& updates, double threshold, std::size_t window = 20);

/// Rebuilds the network recorded in a checkpoint and restores its tensors.
std::unique_ptr<Network<float>> load_network(const std::filesystem::path& checkpoint, TrainSpec* spec = nullptr);

// ----- run directories -----

/// <root>/<model>-<task>-m<m>-s<seed>-<hash>
std::filesystem::path run_directory(const std::filesystem::path& root, const TrainSpec& spec);

/// spec.json, metrics.jsonl, summary.json, checkpoint.bin and, when captured, keys.csv.
void write_run(const std::filesystem::path& dir, const TrainResult& result);
RunRecord read_summary(const std::filesystem::path& dir);

// ----- matrix -----

struct CellResult {
  TrainSpec spec;  // seed of the first run
  std::vector<double> accuracies;
  double mean = 0.0;
  std::optional<double> sem;  // absent for a single seed
};

/// Sample standard deviation / sqrt(n); nullopt for n < 2.
std::optional<double> standard_error(const std::vector<double>& values);

struct MatrixOptions {
  std::size_t seeds = 3;
  std::uint64_t first_seed = 0;
  std::size_t jobs = 1;
  std::optional<std::filesystem::path> run_root;  // write every run when set
  bool no_clobber = false;
};

std::vector<CellResult> run_matrix(const std::vector<TrainSpec>& cells, const taskgen::GlyphSet& glyphs,
                                   const MatrixOptions& options);

}  // namespace esbn
