#include "esbn/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "esbn/sequence_model.hpp"
#include "esbn/taskgen.hpp"

namespace esbn {

namespace {

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }
std::string_view kind_name(KeyKind k) { return k == KeyKind::Written ? "written" : "retrieved"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::runtime_error("bad split '" + s + "'");
}

KeyKind parse_kind(const std::string& s) {
  if (s == "written") return KeyKind::Written;
  if (s == "retrieved") return KeyKind::Retrieved;
  throw std::runtime_error("bad key kind '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(9);
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": bad number '" + s + "'");
  }
}

std::size_t model_rank(const std::string& name) {
  for (std::size_t i = 0; i < std::size(kAllModels); ++i) {
    if (model_name(kAllModels[i]) == name) return i;
  }
  return std::size(kAllModels);
}

std::size_t task_rank(const std::string& name) {
  for (std::size_t i = 0; i < taskgen::kAllTasks.size(); ++i) {
    if (taskgen::task_name(taskgen::kAllTasks[i]) == name) return i;
  }
  return taskgen::kAllTasks.size();
}

std::array<double, 2> centroid(const std::vector<std::array<double, 2>>& pts) {
  std::array<double, 2> c{0.0, 0.0};
  for (const auto& p : pts) {
    c[0] += p[0];
    c[1] += p[1];
  }
  c[0] /= static_cast<double>(pts.size());
  c[1] /= static_cast<double>(pts.size());
  return c;
}

}  // namespace

KeyCorpus KeyCorpus::filter(std::optional<Split> split, std::optional<KeyKind> kind,
                            std::optional<std::size_t> step) const {
  KeyCorpus out;
  for (const auto& r : rows) {
    if (split && r.split != *split) continue;
    if (kind && r.kind != *kind) continue;
    if (step && r.step != *step) continue;
    out.rows.push_back(r);
  }
  return out;
}

void write_keys_csv(const std::filesystem::path& path, const KeyCorpus& corpus) {
  auto out = open_out(path);
  out << "split,kind,step,problem";
  for (std::size_t j = 0; j < corpus.dim(); ++j) out << ",k" << j;
  out << '\n';
  for (const auto& r : corpus.rows) {
    if (r.values.size() != corpus.dim()) throw std::runtime_error("key rows have mixed widths");
    out << split_name(r.split) << ',' << kind_name(r.kind) << ',' << r.step << ',' << r.problem;
    for (float v : r.values) out << ',' << v;
    out << '\n';
  }
}

KeyCorpus read_keys_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
  const auto header = split_csv(line);
  if (header.size() < 4 || header[0] != "split") throw std::runtime_error(path.string() + ": not a key CSV");
  const std::size_t dim = header.size() - 4;
  KeyCorpus corpus;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " columns");
    }
    KeyRow r;
    r.split = parse_split(cells[0]);
    r.kind = parse_kind(cells[1]);
    r.step = static_cast<std::size_t>(parse_double(cells[2], path));
    r.problem = static_cast<std::size_t>(parse_double(cells[3], path));
    r.values.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) r.values[j] = static_cast<float>(parse_double(cells[4 + j], path));
    corpus.rows.push_back(std::move(r));
  }
  return corpus;
}

Pca2Result pca2(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw std::invalid_argument("pca2 needs at least 2 rows, got " + std::to_string(rows.size()));
  const std::size_t n = rows.size();
  const std::size_t d = rows.front().size();
  if (d < 2) throw std::invalid_argument("pca2 needs at least 2 columns");
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != d) throw std::invalid_argument("pca2 rows have mixed widths");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rows[i][j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca2: eigen decomposition failed");
  const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
  const double total = std::max(evals.sum(), 0.0);
  if (total <= 1e-300) throw std::invalid_argument("pca2: input has zero variance");

  Pca2Result out;
  out.mean.assign(mu.data(), mu.data() + d);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components[c].assign(v.data(), v.data() + d);
    out.explained[c] = std::max(evals(static_cast<Eigen::Index>(d) - 1 - c), 0.0) / total;
  }
  out.projections.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.projections.push_back(project(out, rows[i]));
  return out;
}

Pca2Result pca2(const KeyCorpus& corpus) {
  std::vector<std::vector<double>> rows;
  rows.reserve(corpus.rows.size());
  for (const auto& r : corpus.rows) rows.emplace_back(r.values.begin(), r.values.end());
  return pca2(rows);
}

std::array<double, 2> project(const Pca2Result& pca, const std::vector<double>& row) {
  if (row.size() != pca.mean.size()) throw std::invalid_argument("project: width mismatch");
  std::array<double, 2> p{0.0, 0.0};
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double c = row[j] - pca.mean[j];
    p[0] += c * pca.components[0][j];
    p[1] += c * pca.components[1][j];
  }
  return p;
}

std::vector<OverlapStep> overlap_report(const KeyCorpus& train, const KeyCorpus& test, std::size_t first,
                                        std::size_t last) {
  if (first == 0 || last < first) throw std::invalid_argument("overlap_report: bad step range");
  KeyCorpus all;
  all.rows = train.rows;
  all.rows.insert(all.rows.end(), test.rows.begin(), test.rows.end());
  const auto pca = pca2(all);

  std::vector<OverlapStep> out;
  for (std::size_t step = first; step <= last; ++step) {
    std::vector<std::array<double, 2>> a, b;
    for (std::size_t i = 0; i < all.rows.size(); ++i) {
      if (all.rows[i].step != step) continue;
      (i < train.rows.size() ? a : b).push_back(pca.projections[i]);
    }
    if (a.empty() || b.empty()) {
      throw std::runtime_error("overlap_report: step " + std::to_string(step) + " has " + std::to_string(a.size()) +
                               " train and " + std::to_string(b.size()) + " test rows");
    }
    const auto ca = centroid(a);
    const auto cb = centroid(b);
    double ss = 0.0;
    for (const auto& p : a) ss += (p[0] - ca[0]) * (p[0] - ca[0]) + (p[1] - ca[1]) * (p[1] - ca[1]);
    for (const auto& p : b) ss += (p[0] - cb[0]) * (p[0] - cb[0]) + (p[1] - cb[1]) * (p[1] - cb[1]);

    OverlapStep s;
    s.step = step;
    s.train_rows = a.size();
    s.test_rows = b.size();
    s.centroid_distance = std::hypot(ca[0] - cb[0], ca[1] - cb[1]);
    s.dispersion = std::sqrt(ss / static_cast<double>(a.size() + b.size()));
    // Points that collapse onto one location (steps with no input yet) sit at
    // float rounding distance from each other.
    const double scale = 1e-6 * (1.0 + std::hypot(ca[0], ca[1]));
    if (s.centroid_distance <= scale) {
      s.ratio = 0.0;
    } else if (s.dispersion <= scale) {
      s.ratio = std::numeric_limits<double>::infinity();
    } else {
      s.ratio = s.centroid_distance / s.dispersion;
    }
    out.push_back(s);
  }
  return out;
}

// ----- report bundle -----

void sort_results(std::vector<ResultRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& x, const ResultRow& y) {
    const auto kx = std::tuple(task_rank(x.task), model_rank(x.model), !x.tcn, x.encoder, x.m);
    const auto ky = std::tuple(task_rank(y.task), model_rank(y.model), !y.tcn, y.encoder, y.m);
    return kx < ky;
  });
}

void write_results_csv(const std::filesystem::path& path, std::vector<ResultRow> rows) {
  sort_results(rows);
  auto out = open_out(path);
  out << "task,model,tcn,encoder,m,seeds,mean,sem\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.model << ',' << (r.tcn ? 1 : 0) << ',' << r.encoder << ',' << r.m << ',' << r.seeds
        << ',' << r.mean << ',';
    if (r.sem) out << *r.sem;
    out << '\n';
  }
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "task,model,tcn,encoder,m,seeds,mean,sem") {
    throw std::runtime_error(path.string() + ": not a results CSV");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 8) throw std::runtime_error(path.string() + ": expected 8 columns in '" + line + "'");
    ResultRow r;
    r.task = c[0];
    r.model = c[1];
    r.tcn = c[2] == "1";
    r.encoder = c[3];
    r.m = static_cast<int>(parse_double(c[4], path));
    r.seeds = static_cast<std::size_t>(parse_double(c[5], path));
    r.mean = parse_double(c[6], path);
    if (!c[7].empty()) r.sem = parse_double(c[7], path);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_results_table(const std::filesystem::path& path, const std::string& task, std::vector<ResultRow> rows) {
  std::erase_if(rows, [&](const ResultRow& r) { return r.task != task; });
  sort_results(rows);
  std::set<int> ms;
  for (const auto& r : rows) ms.insert(r.m);
  std::vector<int> columns(ms.rbegin(), ms.rend());  // largest holdout first

  using Key = std::tuple<std::string, bool, std::string>;
  std::vector<Key> order;
  std::map<Key, std::map<int, const ResultRow*>> cells;
  for (const auto& r : rows) {
    Key k{r.model, r.tcn, r.encoder};
    if (!cells.contains(k)) order.push_back(k);
    cells[k][r.m] = &r;
  }

  auto out = open_out(path);
  out << "model,tcn,encoder";
  for (int m : columns) out << ",m" << m << "_mean,m" << m << "_sem";
  out << '\n';
  for (const auto& k : order) {
    out << std::get<0>(k) << ',' << (std::get<1>(k) ? 1 : 0) << ',' << std::get<2>(k);
    for (int m : columns) {
      const auto it = cells[k].find(m);
      out << ',';
      if (it != cells[k].end()) out << it->second->mean;
      out << ',';
      if (it != cells[k].end() && it->second->sem) out << *it->second->sem;
    }
    out << '\n';
  }
}

void write_timecourse_csv(const std::filesystem::path& path, const std::vector<TimecoursePoint>& points) {
  auto out = open_out(path);
  out << "run,update,epoch,loss,accuracy\n";
  for (const auto& p : points) {
    out << p.run << ',' << p.update << ',' << p.epoch << ',' << p.loss << ',' << p.accuracy << '\n';
  }
}

void write_pca_csv(const std::filesystem::path& path, const KeyCorpus& corpus, const Pca2Result& pca) {
  auto out = open_out(path);
  out << "pc1,pc2,split,kind,step,problem\n";
  for (const auto& r : corpus.rows) {
    const auto p = project(pca, std::vector<double>(r.values.begin(), r.values.end()));
    out << p[0] << ',' << p[1] << ',' << split_name(r.split) << ',' << kind_name(r.kind) << ',' << r.step << ','
        << r.problem << '\n';
  }
}

void write_overlap_csv(const std::filesystem::path& path, const std::vector<OverlapStep>& steps) {
  auto out = open_out(path);
  out << "step,train_rows,test_rows,centroid_distance,dispersion,ratio\n";
  for (const auto& s : steps) {
    out << s.step << ',' << s.train_rows << ',' << s.test_rows << ',' << s.centroid_distance << ',' << s.dispersion
        << ',' << s.ratio << '\n';
  }
}

}  // namespace esbn
