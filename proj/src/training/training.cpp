#include "esbn/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "esbn/esbn.hpp"

namespace esbn {

using taskgen::Task;
using json = nlohmann::ordered_json;

double default_learning_rate(ModelKind model, Task task, bool tcn) {
  if (tcn) return 5e-4;
  if (is_esbn(model)) return 5e-5;
  if (model == ModelKind::Rn && task == Task::Rmts) return 5e-5;
  if (model == ModelKind::PrediNet && (task == Task::Dist3 || task == Task::IdentityRules)) return 5e-5;
  return 5e-4;
}

int default_epochs(ModelKind model, Task task, int m) {
  const auto ms = taskgen::allowed_m(task);
  const auto it = std::find(ms.begin(), ms.end(), m);
  if (it == ms.end()) {
    throw std::invalid_argument("m=" + std::to_string(m) + " is not a holdout size for " +
                                std::string(taskgen::task_name(task)));
  }
  const auto col = static_cast<std::size_t>(it - ms.begin());
  switch (task) {
    case Task::SameDiff: return std::array{50, 50, 50, 100, 100}[col];
    case Task::Rmts: return std::array{50, 50, 50, 200}[col];
    case Task::Dist3:
      if (model == ModelKind::PrediNet) return std::array{100, 100, 100, 150}[col];
      if (model == ModelKind::Rn) return std::array{150, 150, 150, 800}[col];
      return std::array{50, 50, 50, 150}[col];
    case Task::IdentityRules:
      if (model == ModelKind::PrediNet || model == ModelKind::Rn || model == ModelKind::Transformer) {
        return std::array{100, 100, 100, 150}[col];
      }
      return std::array{50, 50, 50, 50}[col];
  }
  throw std::invalid_argument("unknown task");
}

TrainSpec resolve(TrainSpec spec) {
  if (!taskgen::valid_m(spec.task, spec.m)) {
    throw std::invalid_argument("m=" + std::to_string(spec.m) + " is not a holdout size for " +
                                std::string(taskgen::task_name(spec.task)));
  }
  if (spec.learning_rate < 0.0 || !std::isfinite(spec.learning_rate)) {
    throw std::invalid_argument("learning rate must be a positive number");
  }
  if (spec.epochs < 0) throw std::invalid_argument("epochs must be positive");
  if (spec.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (spec.capture_keys && !is_esbn(spec.model)) {
    throw std::invalid_argument("key capture needs an ESBN model, got " + std::string(model_name(spec.model)));
  }
  if (spec.learning_rate == 0.0) spec.learning_rate = default_learning_rate(spec.model, spec.task, spec.tcn);
  if (spec.epochs == 0) spec.epochs = default_epochs(spec.model, spec.task, spec.m);
  return spec;
}

namespace {

json spec_json(const TrainSpec& s) {
  return json{{"model", model_name(s.model)},
              {"encoder", encoder_name(s.encoder)},
              {"tcn", s.tcn},
              {"task", taskgen::task_name(s.task)},
              {"m", s.m},
              {"seed", s.seed},
              {"learning_rate", s.learning_rate},
              {"epochs", s.epochs},
              {"batch_size", s.batch_size},
              {"glyph_seed", s.glyph_seed},
              {"capture_keys", s.capture_keys},
              {"capture_problems", s.capture_problems}};
}

TrainSpec spec_from(const json& j) {
  TrainSpec s;
  s.model = parse_model(j.at("model").get<std::string>());
  s.encoder = parse_encoder(j.at("encoder").get<std::string>());
  s.tcn = j.at("tcn").get<bool>();
  s.task = taskgen::parse_task(j.at("task").get<std::string>());
  s.m = j.at("m").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.epochs = j.at("epochs").get<int>();
  s.batch_size = j.at("batch_size").get<std::size_t>();
  s.glyph_seed = j.value("glyph_seed", std::uint64_t{0});
  s.capture_keys = j.value("capture_keys", false);
  s.capture_problems = j.value("capture_problems", std::size_t{500});
  return s;
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Glyph ids of a batch, deduplicated: `unique` holds each id once and
/// `rows` indexes into it, problem-major.
struct BatchIndex {
  std::vector<std::uint8_t> unique;
  std::vector<std::size_t> rows;
  std::vector<int> targets;
};

BatchIndex index_batch(const std::vector<taskgen::Problem>& problems, std::span<const std::size_t> order) {
  BatchIndex b;
  std::array<int, 256> slot;
  slot.fill(-1);
  for (auto i : order) {
    const auto& p = problems[i];
    for (auto id : p.ids) {
      if (slot[id] < 0) {
        slot[id] = static_cast<int>(b.unique.size());
        b.unique.push_back(id);
      }
      b.rows.push_back(static_cast<std::size_t>(slot[id]));
    }
    b.targets.push_back(p.target);
  }
  return b;
}

std::size_t count_correct(const Tensor<float>& logits, std::span<const int> targets, bool binary) {
  const auto v = logits.data();
  std::size_t correct = 0;
  if (binary) {
    for (std::size_t i = 0; i < targets.size(); ++i) correct += (v[i] > 0.0f ? 1 : 0) == targets[i];
    return correct;
  }
  const std::size_t units = logits.size(1);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = v.subspan(i * units, units);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == targets[i];
  }
  return correct;
}

Tensor<float> all_embeddings(const Network<float>& net, const taskgen::GlyphSet& glyphs) {
  std::vector<std::uint8_t> ids(glyphs.images.size());
  std::iota(ids.begin(), ids.end(), std::uint8_t{0});
  return net.embed(glyph_batch<float>(glyphs, ids));
}

std::vector<std::size_t> flat_rows(const std::vector<taskgen::Problem>& problems, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows;
  for (std::size_t i = begin; i < end; ++i) rows.insert(rows.end(), problems[i].ids.begin(), problems[i].ids.end());
  return rows;
}

}  // namespace

std::string spec_to_json(const TrainSpec& spec) { return spec_json(spec).dump(2); }

TrainSpec spec_from_json(const std::string& text) {
  try {
    return spec_from(json::parse(text));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("bad spec JSON: ") + e.what());
  }
}

std::string spec_hash(const TrainSpec& spec) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(spec_json(resolve(spec)).dump())));
  return buf;
}

std::size_t updates_per_epoch(std::size_t train_size, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  return (train_size + batch_size - 1) / batch_size;
}

double evaluate(const Network<float>& network, const taskgen::GlyphSet& glyphs,
                const std::vector<taskgen::Problem>& problems, std::size_t batch) {
  if (problems.empty()) throw std::invalid_argument("evaluate: empty split");
  if (batch == 0) throw std::invalid_argument("evaluate: batch must be positive");
  const Task task = network.config().task;
  for (const auto& p : problems) {
    if (p.task != task) {
      throw std::invalid_argument("evaluate: network is for " + std::string(taskgen::task_name(task)) +
                                  ", split holds " + std::string(taskgen::task_name(p.task)) + " problems");
    }
  }
  NoGradGuard guard;
  const auto emb = all_embeddings(network, glyphs);
  const bool binary = taskgen::is_binary(task);
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < problems.size(); begin += batch) {
    const std::size_t end = std::min(problems.size(), begin + batch);
    const auto rows = flat_rows(problems, begin, end);
    std::vector<int> targets;
    for (std::size_t i = begin; i < end; ++i) targets.push_back(problems[i].target);
    correct += count_correct(network.forward(emb, rows), targets, binary);
  }
  return static_cast<double>(correct) / static_cast<double>(problems.size());
}

KeyCorpus capture_keys(const Network<float>& network, const taskgen::GlyphSet& glyphs, const taskgen::Dataset& data,
                       std::size_t limit) {
  const auto* model = dynamic_cast<const Esbn<float>*>(&network.core());
  if (!model) throw std::invalid_argument("key capture needs an ESBN model");
  NoGradGuard guard;
  const auto emb = all_embeddings(network, glyphs);
  KeyCorpus corpus;
  for (const auto split : {Split::Train, Split::Test}) {
    const auto& problems = split == Split::Train ? data.train : data.test;
    const std::size_t n = std::min(limit, problems.size());
    constexpr std::size_t kChunk = 250;
    for (std::size_t begin = 0; begin < n; begin += kChunk) {
      const std::size_t end = std::min(n, begin + kChunk);
      KeyCapture cap;
      model->run(network.sequence(emb, flat_rows(problems, begin, end)), &cap, nullptr);
      const std::size_t dim = Esbn<float>::kKeyDim;
      for (std::size_t t = 0; t < cap.written.size(); ++t) {
        for (std::size_t b = 0; b < cap.batch; ++b) {
          for (const auto kind : {KeyKind::Written, KeyKind::Retrieved}) {
            const auto& src = kind == KeyKind::Written ? cap.written[t] : cap.retrieved[t];
            KeyRow row;
            row.split = split;
            row.kind = kind;
            row.step = t + 1;
            row.problem = begin + b;
            row.values.assign(src.begin() + static_cast<std::ptrdiff_t>(b * dim),
                              src.begin() + static_cast<std::ptrdiff_t>((b + 1) * dim));
            corpus.rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return corpus;
}

TrainResult train(const TrainSpec& spec, const taskgen::GlyphSet& glyphs, const UpdateCallback& on_update) {
  const auto resolved = resolve(spec);
  return train_on(resolved, taskgen::generate(resolved.task, resolved.m, resolved.seed), glyphs, on_update);
}

TrainResult train_on(const TrainSpec& spec_in, const taskgen::Dataset& data, const taskgen::GlyphSet& glyphs,
                     const UpdateCallback& on_update) {
  const auto spec = resolve(spec_in);
  if (data.task != spec.task || data.m != spec.m) {
    throw std::invalid_argument("dataset is " + std::string(taskgen::task_name(data.task)) + " m=" +
                                std::to_string(data.m) + ", spec asks for " +
                                std::string(taskgen::task_name(spec.task)) + " m=" + std::to_string(spec.m));
  }
  if (data.train.empty() || data.test.empty()) throw std::invalid_argument("dataset has an empty split");
  if (glyphs.images.size() != taskgen::kGlyphCount) throw std::invalid_argument("glyph set must hold 100 images");

  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.network = std::make_unique<Network<float>>(ModelConfig{spec.model, spec.encoder, spec.tcn, spec.task}, spec.seed);
  auto& net = *result.network;
  auto& rec = result.record;
  rec.spec = spec;
  rec.train_size = data.train.size();
  rec.test_size = data.test.size();
  const auto params = net.trainable();
  rec.parameter_count = count_parameters(params);

  Adam<float> adam(params, {.learning_rate = spec.learning_rate});
  Rng shuffle_rng(derive_seed(spec.seed, "shuffle"));
  const bool binary = taskgen::is_binary(spec.task);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rec.updates.reserve(static_cast<std::size_t>(spec.epochs) * updates_per_epoch(order.size(), spec.batch_size));

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    for (std::size_t begin = 0; begin < order.size(); begin += spec.batch_size) {
      const std::size_t end = std::min(order.size(), begin + spec.batch_size);
      const auto batch = index_batch(data.train, std::span(order).subspan(begin, end - begin));
      const std::uint64_t update = rec.updates.size() + 1;
      Tensor<float> logits, loss;
      try {
        logits = net.forward(net.embed(glyph_batch<float>(glyphs, batch.unique)), batch.rows);
        loss = binary ? bce_with_logits(reshape(logits, {batch.targets.size()}), std::span<const int>(batch.targets))
                      : cross_entropy(logits, std::span<const int>(batch.targets));
        loss.backward();
        adam.step();
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", update " +
                                 std::to_string(update) + " (" + std::string(model_name(spec.model)) + ", lr " +
                                 std::to_string(spec.learning_rate) + "): " + e.what());
      }
      UpdateRecord u;
      u.update = update;
      u.epoch = epoch;
      u.loss = loss.item();
      u.accuracy = static_cast<double>(count_correct(logits, batch.targets, binary)) /
                   static_cast<double>(batch.targets.size());
      rec.updates.push_back(u);
      if (on_update) on_update(u);
    }
  }

  rec.test_accuracy = evaluate(net, glyphs, data.test);
  rec.final_train_accuracy = evaluate(net, glyphs, data.train);
  if (spec.capture_keys) rec.keys = capture_keys(net, glyphs, data, spec.capture_problems);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::uint64_t updates_to_reach(const std::vector<UpdateRecord>& updates, double threshold, std::size_t window) {
  if (window == 0) throw std::invalid_argument("window must be positive");
  double sum = 0.0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    sum += updates[i].accuracy;
    if (i >= window) sum -= updates[i - window].accuracy;
    if (i + 1 >= window && sum / static_cast<double>(window) >= threshold) return i + 1;
  }
  return 0;
}

std::unique_ptr<Network<float>> load_network(const std::filesystem::path& checkpoint, TrainSpec* spec) {
  const auto ck = load_checkpoint(checkpoint);
  const auto s = spec_from_json(ck.spec_json);
  auto net = std::make_unique<Network<float>>(ModelConfig{s.model, s.encoder, s.tcn, s.task}, s.seed);
  restore_parameters(ck, net->all_tensors());
  if (spec) *spec = s;
  return net;
}

// ----- run directories -----

std::filesystem::path run_directory(const std::filesystem::path& root, const TrainSpec& spec) {
  const auto s = resolve(spec);
  return root / (std::string(model_name(s.model)) + "-" + std::string(taskgen::task_name(s.task)) + "-m" +
                 std::to_string(s.m) + "-s" + std::to_string(s.seed) + "-" + spec_hash(s));
}

void write_run(const std::filesystem::path& dir, const TrainResult& result) {
  const auto& rec = result.record;
  std::filesystem::create_directories(dir);
  write_atomic(dir / "spec.json", spec_to_json(rec.spec) + "\n");

  std::string lines;
  for (const auto& u : rec.updates) {
    lines += json{{"update", u.update}, {"epoch", u.epoch}, {"loss", u.loss}, {"accuracy", u.accuracy}}.dump();
    lines += '\n';
  }
  write_atomic(dir / "metrics.jsonl", lines);

  if (rec.keys) {
    write_keys_csv(dir / "keys.csv.tmp", *rec.keys);
    std::filesystem::rename(dir / "keys.csv.tmp", dir / "keys.csv");
  } else {
    std::filesystem::remove(dir / "keys.csv");
  }
  if (result.network) save_checkpoint(dir / "checkpoint.bin", spec_to_json(rec.spec), result.network->all_tensors());

  const json summary{{"spec", spec_json(rec.spec)},
                     {"test_accuracy", rec.test_accuracy},
                     {"final_train_accuracy", rec.final_train_accuracy},
                     {"wall_seconds", rec.wall_seconds},
                     {"parameter_count", rec.parameter_count},
                     {"train_size", rec.train_size},
                     {"test_size", rec.test_size},
                     {"updates", rec.updates.size()},
                     {"keys_captured", rec.keys.has_value()}};
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

RunRecord read_summary(const std::filesystem::path& dir) {
  RunRecord rec;
  try {
    const auto j = json::parse(read_file(dir / "summary.json"));
    rec.spec = spec_from(j.at("spec"));
    rec.test_accuracy = j.at("test_accuracy").get<double>();
    rec.final_train_accuracy = j.at("final_train_accuracy").get<double>();
    rec.wall_seconds = j.at("wall_seconds").get<double>();
    rec.parameter_count = j.at("parameter_count").get<std::size_t>();
    rec.train_size = j.at("train_size").get<std::size_t>();
    rec.test_size = j.at("test_size").get<std::size_t>();
    if (std::filesystem::exists(dir / "metrics.jsonl")) {
      std::istringstream lines(read_file(dir / "metrics.jsonl"));
      std::string line;
      while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto u = json::parse(line);
        rec.updates.push_back({u.at("update").get<std::uint64_t>(), u.at("epoch").get<int>(),
                               u.at("loss").get<double>(), u.at("accuracy").get<double>()});
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("bad run directory " + dir.string() + ": " + e.what());
  }
  if (std::filesystem::exists(dir / "keys.csv")) rec.keys = read_keys_csv(dir / "keys.csv");
  return rec;
}

// ----- matrix -----

std::optional<double> standard_error(const std::vector<double>& values) {
  const auto n = values.size();
  if (n < 2) return std::nullopt;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

std::vector<CellResult> run_matrix(const std::vector<TrainSpec>& cells, const taskgen::GlyphSet& glyphs,
                                   const MatrixOptions& options) {
  if (options.seeds == 0) throw std::invalid_argument("need at least one seed");
  std::vector<TrainSpec> runs;
  for (const auto& cell : cells) {
    for (std::size_t s = 0; s < options.seeds; ++s) {
      auto spec = resolve(cell);
      spec.seed = options.first_seed + s;
      if (options.run_root && options.no_clobber && std::filesystem::exists(run_directory(*options.run_root, spec))) {
        throw std::runtime_error(run_directory(*options.run_root, spec).string() + " exists (--no-clobber)");
      }
      runs.push_back(spec);
    }
  }

  std::vector<double> accuracy(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= runs.size()) return;
      {
        std::lock_guard lock(error_mutex);
        if (error) return;
      }
      try {
        auto result = train(runs[i], glyphs);
        accuracy[i] = result.record.test_accuracy;
        if (options.run_root) write_run(run_directory(*options.run_root, runs[i]), result);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, runs.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  std::vector<CellResult> out;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult r;
    r.spec = runs[c * options.seeds];
    r.accuracies.assign(accuracy.begin() + static_cast<std::ptrdiff_t>(c * options.seeds),
                        accuracy.begin() + static_cast<std::ptrdiff_t>((c + 1) * options.seeds));
    r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / static_cast<double>(options.seeds);
    r.sem = standard_error(r.accuracies);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace esbn
