#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "esbn/analysis.hpp"
#include "esbn/random.hpp"

using namespace esbn;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("esbn_analysis_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Rows with well separated per-column variances.
std::vector<std::vector<double>> sample_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) r[j] = rng.normal() * (1.0 + 1.5 * static_cast<double>(d - j));
  }
  // Mix the columns so the principal axes are not coordinate axes.
  for (auto& r : rows) {
    const double a = r[0], b = r[1];
    r[0] = 0.8 * a + 0.6 * b;
    r[1] = -0.6 * a + 0.8 * b;
  }
  return rows;
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
void jacobi(std::vector<std::vector<double>> a, std::vector<double>& evals, std::vector<std::vector<double>>& evecs) {
  const std::size_t n = a.size();
  evecs.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) evecs[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = evecs[k][p], vkq = evecs[k][q];
          evecs[k][p] = c * vkp - s * vkq;
          evecs[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  evals.resize(n);
  for (std::size_t i = 0; i < n; ++i) evals[i] = a[i][i];
}

KeyRow key(Split split, std::size_t step, std::size_t problem, std::vector<float> values) {
  return KeyRow{split, KeyKind::Written, step, problem, std::move(values)};
}

}  // namespace

// ----- PCA -----

TEST(Pca, TwoPointExample) {
  const auto p = pca2({{0.0, 0.0}, {2.0, 0.0}});
  EXPECT_NEAR(p.projections[0][0], -1.0, 1e-12);
  EXPECT_NEAR(p.projections[1][0], 1.0, 1e-12);
  EXPECT_NEAR(p.projections[0][1], 0.0, 1e-12);
  EXPECT_NEAR(p.explained[0], 1.0, 1e-12);
  EXPECT_NEAR(p.explained[1], 0.0, 1e-12);
  EXPECT_NEAR(p.components[0][0], 1.0, 1e-12);
}

TEST(Pca, MatchesJacobiOracle) {
  const std::size_t n = 40, d = 6;
  const auto rows = sample_rows(n, d, 3);
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / static_cast<double>(n);
  }
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / static_cast<double>(n - 1);
    }
  }
  std::vector<double> evals;
  std::vector<std::vector<double>> evecs;
  jacobi(cov, evals, evecs);
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return evals[x] > evals[y]; });
  double total = 0.0;
  for (double e : evals) total += e;

  const auto p = pca2(rows);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> v(d);
    std::size_t arg = 0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = evecs[j][order[c]];
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    }
    if (v[arg] < 0) {
      for (auto& x : v) x = -x;
    }
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(p.components[c][j], v[j], 1e-8);
    EXPECT_NEAR(p.explained[c], evals[order[c]] / total, 1e-10);
    for (std::size_t i = 0; i < n; ++i) {
      double proj = 0.0;
      for (std::size_t j = 0; j < d; ++j) proj += (rows[i][j] - mean[j]) * v[j];
      EXPECT_NEAR(p.projections[i][c], proj, 1e-8);
    }
  }
  EXPECT_GE(p.explained[0], p.explained[1]);
  EXPECT_GE(p.explained[1], 0.0);
  EXPECT_LE(p.explained[0] + p.explained[1], 1.0 + 1e-12);
}

TEST(Pca, TranslationInvariant) {
  const auto rows = sample_rows(25, 4, 5);
  auto shifted = rows;
  for (auto& r : shifted) {
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += 100.0 - 7.0 * static_cast<double>(j);
  }
  const auto a = pca2(rows), b = pca2(shifted);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(a.projections[i][0], b.projections[i][0], 1e-8);
    EXPECT_NEAR(a.projections[i][1], b.projections[i][1], 1e-8);
  }
}

TEST(Pca, RotationEquivariantUpToSign) {
  const auto rows = sample_rows(25, 3, 7);
  auto rotated = rows;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (auto& r : rotated) {
    const double y = r[1], z = r[2];
    r[1] = c * y - s * z;
    r[2] = s * y + c * z;
  }
  const auto a = pca2(rows), b = pca2(rotated);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(a.explained[k], b.explained[k], 1e-10);
    const double sign = a.projections[0][k] * b.projections[0][k] >= 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(a.projections[i][k], sign * b.projections[i][k], 1e-8);
  }
}

TEST(Pca, Errors) {
  EXPECT_THROW(pca2(std::vector<std::vector<double>>{{1.0, 2.0}}), std::invalid_argument);
  EXPECT_THROW(pca2({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}), std::invalid_argument);
  EXPECT_THROW(pca2({{1.0}, {2.0}}), std::invalid_argument);
  EXPECT_THROW(pca2({{1.0, 2.0}, {1.0, 2.0, 3.0}}), std::invalid_argument);
  const auto p = pca2({{0.0, 0.0}, {2.0, 0.0}});
  EXPECT_THROW(project(p, {1.0}), std::invalid_argument);
}

// ----- overlap -----

TEST(Overlap, IdenticalCorporaGiveZero) {
  KeyCorpus train, test;
  Rng rng(11);
  for (std::size_t step = 1; step <= 2; ++step) {
    for (std::size_t i = 0; i < 10; ++i) {
      std::vector<float> v(4);
      for (auto& x : v) x = static_cast<float>(rng.normal());
      train.rows.push_back(key(Split::Train, step, i, v));
      test.rows.push_back(key(Split::Test, step, i, v));
    }
  }
  const auto r = overlap_report(train, test, 1, 2);
  ASSERT_EQ(r.size(), 2u);
  for (const auto& s : r) {
    EXPECT_EQ(s.ratio, 0.0);
    EXPECT_EQ(s.train_rows, 10u);
    EXPECT_GT(s.dispersion, 0.0);
  }
}

TEST(Overlap, SeparatedClusters) {
  KeyCorpus train, test;
  train.rows = {key(Split::Train, 1, 0, {0, 1, 0}), key(Split::Train, 1, 1, {0, -1, 0})};
  test.rows = {key(Split::Test, 1, 0, {10, 1, 0}), key(Split::Test, 1, 1, {10, -1, 0})};
  const auto r = overlap_report(train, test, 1, 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r[0].centroid_distance, 10.0, 1e-9);
  EXPECT_NEAR(r[0].dispersion, 1.0, 1e-9);
  EXPECT_NEAR(r[0].ratio, 10.0, 1e-9);
}

TEST(Overlap, CollapsedSplitsAreInfinitelyApart) {
  KeyCorpus train, test;
  train.rows = {key(Split::Train, 1, 0, {0, 0, 0}), key(Split::Train, 1, 1, {0, 0, 0}),
                key(Split::Train, 2, 0, {1, 2, 0})};
  test.rows = {key(Split::Test, 1, 0, {5, 0, 0}), key(Split::Test, 2, 0, {1, 2, 0})};
  const auto r = overlap_report(train, test, 1, 1);
  EXPECT_TRUE(std::isinf(r[0].ratio));
}

TEST(Overlap, Errors) {
  KeyCorpus train, test;
  train.rows = {key(Split::Train, 1, 0, {0, 1}), key(Split::Train, 1, 1, {0, -1})};
  test.rows = {key(Split::Test, 1, 0, {3, 1})};
  EXPECT_THROW(overlap_report(train, test, 1, 2), std::runtime_error);
  EXPECT_THROW(overlap_report(train, test, 0, 1), std::invalid_argument);
  EXPECT_THROW(overlap_report(train, test, 2, 1), std::invalid_argument);
}

TEST(KeyCorpus, Filter) {
  KeyCorpus c;
  c.rows = {key(Split::Train, 1, 0, {1, 2}), key(Split::Test, 1, 0, {3, 4}), key(Split::Train, 2, 0, {5, 6})};
  c.rows[2].kind = KeyKind::Retrieved;
  EXPECT_EQ(c.filter(Split::Train, std::nullopt).rows.size(), 2u);
  EXPECT_EQ(c.filter(std::nullopt, KeyKind::Written).rows.size(), 2u);
  EXPECT_EQ(c.filter(Split::Train, KeyKind::Written, 1).rows.size(), 1u);
  EXPECT_EQ(c.filter(std::nullopt, std::nullopt, 3).rows.size(), 0u);
  EXPECT_EQ(c.dim(), 2u);
}

// ----- CSV files -----

TEST(Csv, KeysRoundTrip) {
  const auto dir = scratch("keys");
  KeyCorpus c;
  Rng rng(12);
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<float> v(5);
    for (auto& x : v) x = static_cast<float>(rng.normal() * 1e3);
    c.rows.push_back(key(i % 2 ? Split::Test : Split::Train, 1 + i % 3, i, v));
    c.rows.back().kind = i % 4 == 0 ? KeyKind::Retrieved : KeyKind::Written;
  }
  write_keys_csv(dir / "keys.csv", c);
  EXPECT_EQ(slurp(dir / "keys.csv").substr(0, 36), "split,kind,step,problem,k0,k1,k2,k3,");
  const auto back = read_keys_csv(dir / "keys.csv");
  ASSERT_EQ(back.rows.size(), c.rows.size());
  for (std::size_t i = 0; i < c.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].split, c.rows[i].split);
    EXPECT_EQ(back.rows[i].kind, c.rows[i].kind);
    EXPECT_EQ(back.rows[i].step, c.rows[i].step);
    EXPECT_EQ(back.rows[i].problem, c.rows[i].problem);
    EXPECT_EQ(back.rows[i].values, c.rows[i].values);
  }
  std::ofstream(dir / "bad.csv") << "split,kind,step,problem,k0\ntrain,written,1,0\n";
  EXPECT_THROW(read_keys_csv(dir / "bad.csv"), std::runtime_error);
  std::ofstream(dir / "other.csv") << "a,b\n";
  EXPECT_THROW(read_keys_csv(dir / "other.csv"), std::runtime_error);
}

TEST(Csv, ResultsSortedAndRoundTrip) {
  const auto dir = scratch("results");
  std::vector<ResultRow> rows = {
      {"dist3", "lstm", true, "conv", 95, 3, 0.31, 0.01},
      {"same_diff", "esbn", false, "conv", 0, 3, 0.99, 0.002},
      {"dist3", "esbn", true, "conv", 95, 3, 0.97, 0.004},
      {"dist3", "esbn", true, "conv", 0, 1, 0.98, std::nullopt},
      {"same_diff", "esbn", true, "conv", 98, 3, 1.0, 0.0},
  };
  write_results_csv(dir / "results.csv", rows);
  const auto back = read_results_csv(dir / "results.csv");
  ASSERT_EQ(back.size(), rows.size());
  EXPECT_EQ(back[0].task, "same_diff");
  EXPECT_TRUE(back[0].tcn);
  EXPECT_FALSE(back[1].tcn);
  EXPECT_EQ(back[2].task, "dist3");
  EXPECT_EQ(back[2].model, "esbn");
  EXPECT_EQ(back[2].m, 0);
  EXPECT_FALSE(back[2].sem.has_value());
  EXPECT_EQ(back[3].m, 95);
  EXPECT_EQ(back[4].model, "lstm");
  EXPECT_NEAR(back[4].mean, 0.31, 1e-12);
  EXPECT_NEAR(*back[4].sem, 0.01, 1e-12);

  write_results_csv(dir / "empty.csv", {});
  EXPECT_EQ(slurp(dir / "empty.csv"), "task,model,tcn,encoder,m,seeds,mean,sem\n");
  EXPECT_TRUE(read_results_csv(dir / "empty.csv").empty());
  std::ofstream(dir / "ragged.csv") << "task,model,tcn,encoder,m,seeds,mean,sem\ndist3,esbn,1\n";
  EXPECT_THROW(read_results_csv(dir / "ragged.csv"), std::runtime_error);
}

TEST(Csv, ResultsTableIsWide) {
  const auto dir = scratch("table");
  const std::vector<ResultRow> rows = {
      {"dist3", "lstm", true, "conv", 95, 3, 0.25, 0.5},
      {"dist3", "esbn", true, "conv", 95, 3, 0.75, 0.125},
      {"dist3", "esbn", true, "conv", 0, 1, 1, std::nullopt},
      {"rmts", "esbn", true, "conv", 0, 1, 0.5, std::nullopt},
  };
  write_results_table(dir / "table.csv", "dist3", rows);
  EXPECT_EQ(slurp(dir / "table.csv"),
            "model,tcn,encoder,m95_mean,m95_sem,m0_mean,m0_sem\n"
            "esbn,1,conv,0.75,0.125,1,\n"
            "lstm,1,conv,0.25,0.5,,\n");
  write_results_table(dir / "none.csv", "identity_rules", rows);
  EXPECT_EQ(slurp(dir / "none.csv"), "model,tcn,encoder\n");
}

TEST(Csv, TimecourseAndOverlapHeaders) {
  const auto dir = scratch("misc");
  write_timecourse_csv(dir / "t.csv", {{"run-a", 1, 1, 0.5, 0.25}});
  EXPECT_EQ(slurp(dir / "t.csv"), "run,update,epoch,loss,accuracy\nrun-a,1,1,0.5,0.25\n");
  write_overlap_csv(dir / "o.csv", {});
  EXPECT_EQ(slurp(dir / "o.csv").substr(0, 5), "step,");

  KeyCorpus c;
  c.rows = {key(Split::Train, 1, 0, {0, 0}), key(Split::Test, 2, 3, {2, 0})};
  write_pca_csv(dir / "p.csv", c, pca2(c));
  EXPECT_EQ(slurp(dir / "p.csv"), "pc1,pc2,split,kind,step,problem\n-1,0,train,written,1,0\n1,0,test,written,2,3\n");
}
