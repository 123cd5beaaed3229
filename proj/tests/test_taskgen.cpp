#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "esbn/taskgen.hpp"

using namespace esbn::taskgen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("esbn_taskgen_" + name);
  fs::remove_all(dir);
  return dir;
}

// Independent truth conditions, written directly from each task's definition.
bool oracle_correct(const Problem& p) {
  const auto& v = p.ids;
  switch (p.task) {
    case Task::SameDiff:
      return p.target == (v[0] == v[1] ? 1 : 0);
    case Task::Rmts: {
      const bool src = v[0] == v[1];
      const bool p1 = (v[2] == v[3]) == src;
      const bool p2 = (v[4] == v[5]) == src;
      if (p1 == p2) return false;  // exactly one pair must match
      return p.target == (p1 ? 0 : 1);
    }
    case Task::Dist3: {
      std::multiset<int> row1(v.begin(), v.begin() + 3);
      if (std::set<int>(row1.begin(), row1.end()).size() != 3) return false;
      if (!row1.count(v[3]) || !row1.count(v[4]) || v[3] == v[4]) return false;
      int hidden = -1;
      for (int id : row1) {
        if (id != v[3] && id != v[4]) hidden = id;
      }
      int matches = 0;
      for (int k = 0; k < 4; ++k) matches += v[5 + k] == hidden;
      return matches == 1 && v[5 + p.target] == hidden;
    }
    case Task::IdentityRules: {
      int answer;
      if (v[0] == v[1] && v[1] == v[2]) {
        if (v[3] != v[4]) return false;
        answer = v[3];
      } else if (v[0] == v[2] && v[0] != v[1]) {
        answer = v[3];
      } else if (v[1] == v[2] && v[0] != v[1]) {
        answer = v[4];
      } else {
        return false;
      }
      int matches = 0;
      for (int k = 0; k < 4; ++k) matches += v[5 + k] == answer;
      return matches == 1 && v[5 + p.target] == answer;
    }
  }
  return false;
}

void expect_ids_in(const std::vector<Problem>& split, const std::vector<std::uint8_t>& allowed) {
  const std::set<std::uint8_t> ok(allowed.begin(), allowed.end());
  for (const auto& p : split) {
    for (auto id : p.ids) ASSERT_TRUE(ok.count(id)) << "id " << int(id) << " outside split pool";
  }
}

std::set<std::vector<std::uint8_t>> tuples(const std::vector<Problem>& split) {
  std::set<std::vector<std::uint8_t>> out;
  for (const auto& p : split) out.insert(p.ids);
  return out;
}

}  // namespace

TEST(Regime, SizesAndDisjointness) {
  for (auto task : kAllTasks) {
    for (int m : allowed_m(task)) {
      const auto r = make_regime(task, m, 7);
      if (m == 0) {
        EXPECT_EQ(r.train_ids.size(), 100u);
        EXPECT_EQ(r.train_ids, r.test_ids);
        continue;
      }
      EXPECT_EQ(r.train_ids.size(), 100u - m);
      EXPECT_EQ(r.test_ids.size(), static_cast<std::size_t>(m));
      std::vector<std::uint8_t> both;
      std::set_intersection(r.train_ids.begin(), r.train_ids.end(), r.test_ids.begin(), r.test_ids.end(),
                            std::back_inserter(both));
      EXPECT_TRUE(both.empty());
    }
  }
}

TEST(Regime, M98OnlyForSameDifferent) {
  EXPECT_NO_THROW(make_regime(Task::SameDiff, 98, 0));
  EXPECT_THROW(make_regime(Task::Rmts, 98, 0), std::invalid_argument);
  EXPECT_THROW(gen_dist3(98, 0), std::invalid_argument);
  EXPECT_THROW(make_regime(Task::SameDiff, 90, 0), std::invalid_argument);
}

TEST(Taskgen, ExpectedSizeTable) {
  EXPECT_EQ(expected_sizes(Task::SameDiff, 0).train, 18810u);
  EXPECT_EQ(expected_sizes(Task::SameDiff, 0).test, 990u);
  EXPECT_EQ(expected_sizes(Task::SameDiff, 98).train, 4u);
  EXPECT_EQ(expected_sizes(Task::Rmts, 95).train, 480u);
  EXPECT_EQ(expected_sizes(Task::Dist3, 95).train, 360u);
  EXPECT_EQ(expected_sizes(Task::IdentityRules, 95).train, 8640u);
}

// Every (task, m) cell: sizes, id pools, oracle correctness, balance.
TEST(Taskgen, AllCellsSatisfyInvariants) {
  for (auto task : kAllTasks) {
    for (int m : allowed_m(task)) {
      SCOPED_TRACE(std::string(task_name(task)) + " m=" + std::to_string(m));
      const auto d = generate(task, m, 3);
      const auto sizes = expected_sizes(task, m);
      EXPECT_EQ(d.train.size(), sizes.train);
      EXPECT_EQ(d.test.size(), sizes.test);
      expect_ids_in(d.train, d.regime.train_ids);
      expect_ids_in(d.test, d.regime.test_ids);
      for (const auto* split : {&d.train, &d.test}) {
        for (const auto& p : *split) {
          ASSERT_EQ(p.ids.size(), sequence_length(task));
          ASSERT_TRUE(oracle_correct(p));
        }
        if (task == Task::SameDiff) {
          const auto same = std::count_if(split->begin(), split->end(), [](const Problem& p) { return p.target == 1; });
          EXPECT_EQ(2 * static_cast<std::size_t>(same), split->size());
        }
        if (task == Task::Rmts) {
          const auto same_src =
              std::count_if(split->begin(), split->end(), [](const Problem& p) { return p.ids[0] == p.ids[1]; });
          EXPECT_EQ(2 * static_cast<std::size_t>(same_src), split->size());
        }
        if (task == Task::IdentityRules) {
          std::map<IdentityRule, long> counts;
          for (const auto& p : *split) ++counts[identity_rule_of(p)];
          ASSERT_EQ(counts.size(), 3u);
          const auto [lo, hi] = std::minmax({counts[IdentityRule::ABA], counts[IdentityRule::ABB], counts[IdentityRule::AAA]});
          EXPECT_LE(static_cast<double>(hi - lo), 0.01 * static_cast<double>(split->size()));
        }
      }
      if (m == 0) {
        const auto train = tuples(d.train);
        for (const auto& p : d.test) ASSERT_FALSE(train.count(p.ids)) << "test problem also in train";
      }
    }
  }
}

TEST(Taskgen, SameDifferentM98IsTheFourPairProblems) {
  const auto d = gen_same_different(98, 11);
  ASSERT_EQ(d.regime.train_ids.size(), 2u);
  const auto a = d.regime.train_ids[0], b = d.regime.train_ids[1];
  std::multiset<std::vector<std::uint8_t>> got;
  for (const auto& p : d.train) got.insert(p.ids);
  EXPECT_EQ(got, (std::multiset<std::vector<std::uint8_t>>{{a, a}, {b, b}, {a, b}, {b, a}}));
}

TEST(Taskgen, RmtsM95EnumeratesAllDisjointProblems) {
  const auto d = gen_rmts(95, 5);
  // Brute force: all 6-tuples over the 5 ids with three image-disjoint pairs
  // and exactly one target pair sharing the source relation.
  const auto& pool = d.regime.train_ids;
  std::size_t count = 0;
  std::vector<std::uint8_t> t(6);
  std::function<void(std::size_t)> rec = [&](std::size_t k) {
    if (k == 6) {
      auto images = [&](int i) { return std::set<std::uint8_t>{t[2 * i], t[2 * i + 1]}; };
      for (int i = 0; i < 3; ++i) {
        for (int j = i + 1; j < 3; ++j) {
          for (auto x : images(i)) {
            if (images(j).count(x)) return;
          }
        }
      }
      const bool src = t[0] == t[1];
      if (((t[2] == t[3]) == src) != ((t[4] == t[5]) == src)) ++count;
      return;
    }
    for (auto id : pool) {
      t[k] = id;
      rec(k + 1);
    }
  };
  rec(0);
  EXPECT_EQ(count, 480u);
  EXPECT_EQ(tuples(d.train).size(), 480u);
}

TEST(Taskgen, Dist3M95CoversEveryCore) {
  const auto d = gen_dist3(95, 5);
  std::set<std::vector<std::uint8_t>> cores;
  for (const auto& p : d.train) cores.insert({p.ids.begin(), p.ids.begin() + 5});
  // C(5,3) sets x 6 row-1 orders x 6 row-2 orders.
  EXPECT_EQ(cores.size(), 10u * 6u * 6u);
}

TEST(Taskgen, IdentityM95DuplicatesAaa) {
  const auto d = gen_identity_rules(95, 5);
  std::map<IdentityRule, std::set<std::vector<std::uint8_t>>> unique;
  for (const auto& p : d.train) unique[identity_rule_of(p)].insert(p.ids);
  EXPECT_EQ(unique[IdentityRule::ABA].size(), 2880u);
  EXPECT_EQ(unique[IdentityRule::ABB].size(), 2880u);
  EXPECT_EQ(unique[IdentityRule::AAA].size(), 1440u);
}

TEST(Taskgen, TrivialLabelExamples) {
  // source (a,a), pair1 (b,b), pair2 (c,d) -> pair 1 matches
  EXPECT_TRUE(oracle_correct({Task::Rmts, {1, 1, 2, 2, 3, 4}, 0}));
  // row1 (A,B,C), row2 visible (C,A), choices (D,B,A,C) -> B at index 1
  EXPECT_TRUE(oracle_correct({Task::Dist3, {0, 1, 2, 2, 0, 3, 1, 0, 2}, 1}));
  // ABB with row2 (C,D) -> D
  EXPECT_TRUE(oracle_correct({Task::IdentityRules, {0, 1, 1, 2, 3, 5, 3, 6, 7}, 1}));
}

TEST(Taskgen, DeterministicAndSeedSensitive) {
  for (auto task : kAllTasks) {
    const auto a = generate(task, 95, 42), b = generate(task, 95, 42), c = generate(task, 95, 43);
    EXPECT_EQ(dataset_checksum(a), dataset_checksum(b));
    EXPECT_NE(dataset_checksum(a), dataset_checksum(c));
  }
}

TEST(Taskgen, FrozenChecksums) {
  EXPECT_EQ(dataset_checksum(gen_same_different(98, 0)), "f18d1f2934570cd8");
  EXPECT_EQ(dataset_checksum(gen_dist3(95, 0)), "82523a4b92c4ef0b");
}

TEST(Archive, RoundTripAndCorruption) {
  const auto d = gen_rmts(95, 1);
  const auto dir = temp_dir("roundtrip");
  save_dataset(d, dir);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.task, d.task);
  EXPECT_EQ(back.m, 95);
  EXPECT_EQ(back.train, d.train);
  EXPECT_EQ(back.test, d.test);
  EXPECT_EQ(back.regime.test_ids, d.regime.test_ids);
  {
    std::fstream f(dir / "train.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(2);
    f.put(static_cast<char>(99));
  }
  EXPECT_THROW(load_dataset(dir), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Archive, RecordLayout) {
  const std::vector<Problem> ps = {{Task::Dist3, {0, 1, 2, 2, 0, 3, 1, 0, 2}, 1}};
  const auto bytes = encode_split(ps);
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{2, 9, 0, 1, 2, 2, 0, 3, 1, 0, 2, 1}));
  EXPECT_EQ(decode_split(bytes), ps);
  EXPECT_THROW(decode_split({2, 9, 0, 1}), std::runtime_error);
}

TEST(Glyphs, DeterministicDistinctAndSeeded) {
  const auto a = render_glyphs(0), b = render_glyphs(0), c = render_glyphs(1);
  ASSERT_EQ(a.images.size(), 100u);
  EXPECT_EQ(a.images, b.images);
  EXPECT_GT(min_pairwise_l1(a), 0.0);
  std::multiset<Image> ma(a.images.begin(), a.images.end()), mc(c.images.begin(), c.images.end());
  EXPECT_NE(ma, mc);
  for (const auto& img : a.images) {
    for (float v : img) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Glyphs, PngOverrideRoundTripAndErrors) {
  const auto g = render_glyphs(0);
  const auto dir = temp_dir("glyphs");
  save_glyphs(g, dir);
  const auto back = load_glyphs(dir);
  for (std::size_t i = 0; i < 100; ++i) {
    for (std::size_t k = 0; k < kGlyphPixels; ++k) ASSERT_NEAR(back.images[i][k], g.images[i][k], 0.5f / 255.0f + 1e-6f);
  }
  fs::remove(dir / "050.png");
  EXPECT_THROW(load_glyphs(dir), std::runtime_error);
  fs::remove_all(dir);
  EXPECT_THROW(load_glyphs(dir), std::runtime_error);
}
