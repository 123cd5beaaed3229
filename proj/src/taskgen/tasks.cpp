#include <algorithm>
#include <array>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "esbn/random.hpp"
#include "esbn/taskgen.hpp"

namespace esbn::taskgen {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::SameDiff: return "same_diff";
    case Task::Rmts: return "rmts";
    case Task::Dist3: return "dist3";
    case Task::IdentityRules: return "identity_rules";
  }
  throw std::invalid_argument("unknown task");
}

Task parse_task(std::string_view name) {
  for (auto t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown task '" + std::string(name) +
                              "' (expected same_diff, rmts, dist3 or identity_rules)");
}

std::size_t sequence_length(Task task) {
  switch (task) {
    case Task::SameDiff: return 2;
    case Task::Rmts: return 6;
    case Task::Dist3:
    case Task::IdentityRules: return 9;
  }
  throw std::invalid_argument("unknown task");
}

bool is_binary(Task task) { return task == Task::SameDiff || task == Task::Rmts; }

std::size_t output_units(Task task) { return is_binary(task) ? 1 : 4; }

std::vector<int> allowed_m(Task task) {
  if (task == Task::SameDiff) return {0, 50, 85, 95, 98};
  return {0, 50, 85, 95};
}

bool valid_m(Task task, int m) {
  const auto ms = allowed_m(task);
  return std::find(ms.begin(), ms.end(), m) != ms.end();
}

SplitSizes expected_sizes(Task task, int m) {
  if (!valid_m(task, m)) {
    throw std::invalid_argument("m=" + std::to_string(m) + " is not a valid regime for " + std::string(task_name(task)));
  }
  switch (task) {
    case Task::SameDiff:
      switch (m) {
        case 0: return {18810, 990};
        case 50: return {4900, 4900};
        case 85: return {420, 10000};
        case 95: return {40, 10000};
        default: return {4, 10000};
      }
    case Task::Rmts: return {m == 95 ? 480u : 10000u, 10000};
    case Task::Dist3: return {m == 95 ? 360u : 10000u, 10000};
    case Task::IdentityRules: return {m == 95 ? 8640u : 10000u, 10000};
  }
  throw std::invalid_argument("unknown task");
}

Regime make_regime(Task task, int m, std::uint64_t seed) {
  if (!valid_m(task, m)) {
    throw std::invalid_argument("m=" + std::to_string(m) + " is not a valid regime for " + std::string(task_name(task)));
  }
  std::vector<std::uint8_t> ids(kGlyphCount);
  std::iota(ids.begin(), ids.end(), std::uint8_t{0});
  Regime r;
  r.m = m;
  if (m == 0) {
    r.train_ids = ids;
    r.test_ids = ids;
    return r;
  }
  Rng rng(derive_seed(seed, "regime"));
  rng.shuffle(std::span(ids));
  r.test_ids.assign(ids.begin(), ids.begin() + m);
  r.train_ids.assign(ids.begin() + m, ids.end());
  std::sort(r.test_ids.begin(), r.test_ids.end());
  std::sort(r.train_ids.begin(), r.train_ids.end());
  return r;
}

std::uint64_t problem_key(const std::vector<std::uint8_t>& ids) {
  if (ids.size() > 9) throw std::invalid_argument("problem_key: at most 9 ids");
  std::uint64_t key = ids.size();
  for (auto id : ids) key = (key << 7) | (id & 0x7f);
  return key;
}

IdentityRule identity_rule_of(const Problem& p) {
  if (p.task != Task::IdentityRules || p.ids.size() != 9) throw std::invalid_argument("not an identity-rules problem");
  if (p.ids[0] == p.ids[1] && p.ids[1] == p.ids[2]) return IdentityRule::AAA;
  if (p.ids[0] == p.ids[2]) return IdentityRule::ABA;
  return IdentityRule::ABB;
}

namespace {

using Ids = std::vector<std::uint8_t>;
using KeySet = std::unordered_set<std::uint64_t>;

constexpr std::size_t kCap = 10000;

// First k elements of a random permutation of the pool.
Ids draw_distinct(const Ids& pool, std::size_t k, Rng& rng) {
  if (pool.size() < k) throw std::invalid_argument("id pool too small for task");
  Ids work = pool;
  for (std::size_t i = 0; i < k; ++i) std::swap(work[i], work[i + rng.below(work.size() - i)]);
  work.resize(k);
  return work;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  rng.shuffle(std::span(v));
}

// Repeats each unique problem floor(count/n) times, then draws the remainder without replacement.
void duplicate_stratified(const std::vector<Problem>& uniques, std::size_t count, Rng& rng,
                          std::vector<Problem>& out) {
  if (uniques.empty()) throw std::invalid_argument("no unique problems to duplicate");
  const std::size_t reps = count / uniques.size();
  for (const auto& p : uniques) {
    for (std::size_t r = 0; r < reps; ++r) out.push_back(p);
  }
  std::vector<std::size_t> order(uniques.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_vec(order, rng);
  for (std::size_t k = 0; k < count % uniques.size(); ++k) out.push_back(uniques[order[k]]);
}

// Draws `count` unique problems from `sample`, skipping keys in `seen` (which is updated).
template <typename Sampler>
void sample_unique(std::size_t count, KeySet& seen, Sampler sample, std::vector<Problem>& out) {
  std::size_t misses = 0;
  std::size_t added = 0;
  while (added < count) {
    auto p = sample();
    if (seen.insert(problem_key(p.ids)).second) {
      out.push_back(std::move(p));
      ++added;
      misses = 0;
    } else if (++misses > 1000000) {
      throw std::runtime_error("problem space exhausted while sampling unique problems");
    }
  }
}

// ----- same / different -----

Problem sd_problem(std::uint8_t a, std::uint8_t b) { return {Task::SameDiff, {a, b}, a == b ? 1 : 0}; }

std::vector<Problem> sd_split(const Ids& pool, std::size_t cap, Rng& rng) {
  std::vector<Problem> diffs, sames, out;
  for (auto a : pool) {
    sames.push_back(sd_problem(a, a));
    for (auto b : pool) {
      if (a != b) diffs.push_back(sd_problem(a, b));
    }
  }
  shuffle_vec(diffs, rng);
  const std::size_t n = std::min(diffs.size(), cap / 2);
  out.assign(diffs.begin(), diffs.begin() + static_cast<std::ptrdiff_t>(n));
  duplicate_stratified(sames, n, rng, out);
  shuffle_vec(out, rng);
  return out;
}

// ----- RMTS -----

Problem rmts_problem(std::uint8_t s1, std::uint8_t s2, std::array<std::uint8_t, 2> match,
                     std::array<std::uint8_t, 2> other, bool match_first) {
  const auto& first = match_first ? match : other;
  const auto& second = match_first ? other : match;
  return {Task::Rmts, {s1, s2, first[0], first[1], second[0], second[1]}, match_first ? 0 : 1};
}

std::size_t falling(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < k; ++i) r *= n > i ? n - i : 0;
  return r;
}

// Same-source uses 4 distinct images (s, t, d1, d2); different-source uses 5 (s1, s2, t1, t2, u).
Problem rmts_from(const Ids& v, bool same_source, bool match_first) {
  if (same_source) return rmts_problem(v[0], v[0], {v[1], v[1]}, {v[2], v[3]}, match_first);
  return rmts_problem(v[0], v[1], {v[2], v[3]}, {v[4], v[4]}, match_first);
}

void enumerate_tuples(const Ids& pool, std::size_t k, Ids& cur, const std::function<void(const Ids&)>& visit) {
  if (cur.size() == k) {
    visit(cur);
    return;
  }
  for (auto id : pool) {
    if (std::find(cur.begin(), cur.end(), id) != cur.end()) continue;
    cur.push_back(id);
    enumerate_tuples(pool, k, cur, visit);
    cur.pop_back();
  }
}

std::vector<Problem> rmts_split(const Ids& pool, std::size_t cap, KeySet& seen, Rng& rng) {
  const std::size_t n = pool.size();
  const std::size_t space_same = falling(n, 4) * 2;
  const std::size_t space_diff = falling(n, 5) * 2;
  const std::size_t per_kind = std::min({cap / 2, space_same, space_diff});
  std::vector<Problem> out;
  for (bool same_source : {true, false}) {
    const std::size_t k = same_source ? 4 : 5;
    if (per_kind == (same_source ? space_same : space_diff)) {
      Ids cur;
      enumerate_tuples(pool, k, cur, [&](const Ids& v) {
        for (bool match_first : {true, false}) {
          auto p = rmts_from(v, same_source, match_first);
          if (seen.insert(problem_key(p.ids)).second) out.push_back(std::move(p));
        }
      });
    } else {
      sample_unique(per_kind, seen,
                    [&] { return rmts_from(draw_distinct(pool, k, rng), same_source, rng.below(2) == 0); }, out);
    }
  }
  shuffle_vec(out, rng);
  return out;
}

// ----- distribution of three -----

Problem dist3_problem(const Ids& row1, const Ids& row2, std::uint8_t distractor, Rng& rng) {
  Ids choices = {row1[0], row1[1], row1[2], distractor};
  shuffle_vec(choices, rng);
  Problem p{Task::Dist3, {row1[0], row1[1], row1[2], row2[0], row2[1], choices[0], choices[1], choices[2], choices[3]}, 0};
  p.target = static_cast<int>(std::find(choices.begin(), choices.end(), row2[2]) - choices.begin());
  return p;
}

std::uint8_t draw_outside(const Ids& pool, const Ids& exclude, Rng& rng) {
  Ids rest;
  for (auto id : pool) {
    if (std::find(exclude.begin(), exclude.end(), id) == exclude.end()) rest.push_back(id);
  }
  if (rest.empty()) throw std::invalid_argument("id pool too small for task");
  return rest[rng.below(rest.size())];
}

std::vector<Problem> dist3_split(const Ids& pool, std::size_t cap, KeySet& seen, Rng& rng) {
  const std::size_t n = pool.size();
  const std::size_t space = n * (n - 1) * (n - 2) / 6 * 36;
  std::vector<Problem> out;
  if (space <= cap) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        for (std::size_t k = j + 1; k < n; ++k) {
          Ids set = {pool[i], pool[j], pool[k]};
          Ids row1 = set;
          do {
            Ids row2 = set;
            do {
              auto p = dist3_problem(row1, row2, draw_outside(pool, set, rng), rng);
              if (seen.insert(problem_key(p.ids)).second) out.push_back(std::move(p));
            } while (std::next_permutation(row2.begin(), row2.end()));
          } while (std::next_permutation(row1.begin(), row1.end()));
        }
      }
    }
  } else {
    sample_unique(cap, seen, [&] {
      Ids row1 = draw_distinct(pool, 3, rng);
      Ids row2 = row1;
      shuffle_vec(row2, rng);
      return dist3_problem(row1, row2, draw_outside(pool, row1, rng), rng);
    }, out);
  }
  shuffle_vec(out, rng);
  return out;
}

// ----- identity rules -----

Problem identity_sample(IdentityRule rule, const Ids& pool, Rng& rng) {
  const Ids v = draw_distinct(pool, rule == IdentityRule::AAA ? 2 : 4, rng);
  Ids row1, visible;
  std::uint8_t answer;
  switch (rule) {
    case IdentityRule::ABA:
      row1 = {v[0], v[1], v[0]};
      visible = {v[2], v[3]};
      answer = v[2];
      break;
    case IdentityRule::ABB:
      row1 = {v[0], v[1], v[1]};
      visible = {v[2], v[3]};
      answer = v[3];
      break;
    default:
      row1 = {v[0], v[0], v[0]};
      visible = {v[1], v[1]};
      answer = v[1];
      break;
  }
  Ids others;
  for (auto id : pool) {
    if (id != answer) others.push_back(id);
  }
  Ids choices = draw_distinct(others, 3, rng);
  choices.push_back(answer);
  shuffle_vec(choices, rng);
  Problem p{Task::IdentityRules, row1, 0};
  p.ids.insert(p.ids.end(), visible.begin(), visible.end());
  p.ids.insert(p.ids.end(), choices.begin(), choices.end());
  p.target = static_cast<int>(std::find(choices.begin(), choices.end(), answer) - choices.begin());
  return p;
}

struct IdentityQuota {
  std::array<std::size_t, 3> unique;  // ABA, ABB, AAA
  std::size_t aaa_copies = 1;
};

// 8640-problem set: 2880 ABA + 2880 ABB + 1440 AAA shown twice.
constexpr IdentityQuota kIdentitySmallTrain{{2880, 2880, 1440}, 2};

IdentityQuota balanced_quota(std::size_t total, Rng& rng) {
  IdentityQuota q{{total / 3, total / 3, total / 3}, 1};
  std::array<std::size_t, 3> order = {0, 1, 2};
  rng.shuffle(std::span(order));
  for (std::size_t k = 0; k < total % 3; ++k) ++q.unique[order[k]];
  return q;
}

std::vector<Problem> identity_split(const Ids& pool, const IdentityQuota& quota, KeySet& seen, Rng& rng) {
  std::vector<Problem> out;
  constexpr std::array<IdentityRule, 3> rules = {IdentityRule::ABA, IdentityRule::ABB, IdentityRule::AAA};
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<Problem> part;
    sample_unique(quota.unique[r], seen, [&] { return identity_sample(rules[r], pool, rng); }, part);
    const std::size_t copies = rules[r] == IdentityRule::AAA ? quota.aaa_copies : 1;
    for (std::size_t c = 0; c < copies; ++c) out.insert(out.end(), part.begin(), part.end());
  }
  shuffle_vec(out, rng);
  return out;
}

Dataset make_dataset(Task task, int m, std::uint64_t seed) {
  Dataset d;
  d.task = task;
  d.m = m;
  d.seed = seed;
  d.regime = make_regime(task, m, seed);
  return d;
}

}  // namespace

Dataset gen_same_different(int m, std::uint64_t seed) {
  Dataset d = make_dataset(Task::SameDiff, m, seed);
  Rng rng(derive_seed(seed, "same_diff"));
  if (m != 0) {
    d.train = sd_split(d.regime.train_ids, kCap, rng);
    d.test = sd_split(d.regime.test_ids, kCap, rng);
    return d;
  }
  // Held-out unique problems: 5 'same' images and 495 'different' pairs.
  constexpr std::size_t kTestSame = 5;
  constexpr std::size_t kTestPerClass = 495;
  std::vector<Problem> diffs, sames;
  for (auto a : d.regime.train_ids) {
    sames.push_back(sd_problem(a, a));
    for (auto b : d.regime.train_ids) {
      if (a != b) diffs.push_back(sd_problem(a, b));
    }
  }
  shuffle_vec(diffs, rng);
  shuffle_vec(sames, rng);
  const std::vector<Problem> test_same(sames.begin(), sames.begin() + kTestSame);
  const std::vector<Problem> train_same(sames.begin() + kTestSame, sames.end());
  d.test.assign(diffs.begin(), diffs.begin() + kTestPerClass);
  d.train.assign(diffs.begin() + kTestPerClass, diffs.end());
  duplicate_stratified(test_same, d.test.size(), rng, d.test);
  duplicate_stratified(train_same, d.train.size(), rng, d.train);
  shuffle_vec(d.train, rng);
  shuffle_vec(d.test, rng);
  return d;
}

Dataset gen_rmts(int m, std::uint64_t seed) {
  Dataset d = make_dataset(Task::Rmts, m, seed);
  Rng rng(derive_seed(seed, "rmts"));
  KeySet seen;
  d.train = rmts_split(d.regime.train_ids, kCap, seen, rng);
  if (m != 0) seen.clear();
  d.test = rmts_split(d.regime.test_ids, kCap, seen, rng);
  return d;
}

Dataset gen_dist3(int m, std::uint64_t seed) {
  Dataset d = make_dataset(Task::Dist3, m, seed);
  Rng rng(derive_seed(seed, "dist3"));
  KeySet seen;
  d.train = dist3_split(d.regime.train_ids, kCap, seen, rng);
  if (m != 0) seen.clear();
  d.test = dist3_split(d.regime.test_ids, kCap, seen, rng);
  return d;
}

Dataset gen_identity_rules(int m, std::uint64_t seed) {
  Dataset d = make_dataset(Task::IdentityRules, m, seed);
  Rng rng(derive_seed(seed, "identity_rules"));
  KeySet seen;
  const auto train_quota = m == 95 ? kIdentitySmallTrain : balanced_quota(kCap, rng);
  d.train = identity_split(d.regime.train_ids, train_quota, seen, rng);
  if (m != 0) seen.clear();
  d.test = identity_split(d.regime.test_ids, balanced_quota(kCap, rng), seen, rng);
  return d;
}

Dataset generate(Task task, int m, std::uint64_t seed) {
  switch (task) {
    case Task::SameDiff: return gen_same_different(m, seed);
    case Task::Rmts: return gen_rmts(m, seed);
    case Task::Dist3: return gen_dist3(m, seed);
    case Task::IdentityRules: return gen_identity_rules(m, seed);
  }
  throw std::invalid_argument("unknown task");
}

}  // namespace esbn::taskgen
