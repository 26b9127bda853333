#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "treebandit/oracle.hpp"
#include "treebandit/planner.hpp"

using namespace treebandit;
using treebandit::testing::arbitrary_counts;
using treebandit::testing::played_counts;
using treebandit::testing::random_tree;
using treebandit::testing::RandomTreeShape;

namespace {

struct Scored {
  std::vector<TerminalId> x;
  Policy policy;
  double value;
  std::int64_t m;
};

// Every deterministic policy, one entry per distinct X, scored with a
// direct sum over its terminals. Empty when there are too many policies.
std::vector<Scored> all_classes(const TreeStructure& st,
                                const CountsTable& counts, bool uniform) {
  std::int64_t total = 1;
  for (StateId s = 0; s < st.num_states(); ++s) {
    total *= st.num_actions(s);
    if (total > 50000) return {};
  }
  std::set<std::vector<TerminalId>> seen;
  std::vector<Scored> out;
  Policy pi = Policy::zeros(st);
  for (std::int64_t k = 0; k < total; ++k) {
    auto x = consistent_terminals(st, pi);
    if (seen.insert(x).second) {
      std::int64_t m = INT64_MAX;
      for (auto t : x) m = std::min(m, counts.n(t));
      double v = 0.0;
      for (auto t : x) {
        if (m == 0) break;
        const double hits =
            uniform ? double(counts.outcomes(t).prefix_sum(m))
                    : double(counts.n_plus(t));
        const double plays = uniform ? double(m) : double(counts.n(t));
        v += hits / plays * st.rho(t);
      }
      out.push_back({x, pi, v, m});
    }
    for (StateId s = 0; s < st.num_states(); ++s) {
      if (++pi[s] < st.num_actions(s)) break;
      pi[s] = 0;
    }
  }
  return out;
}

double score(const Scored& c, const ConfidenceWidth& w) {
  return c.m == 0 ? INFINITY : c.value + w(c.m);
}

RandomTreeShape small_shape(Rng& rng) {
  RandomTreeShape shape;
  shape.max_depth = 1 + static_cast<int>(rng() % 4);
  shape.max_actions = 2 + static_cast<int>(rng() % 2);
  shape.max_branching = 1 + static_cast<int>(rng() % 3);
  shape.gamma = rng() % 2 ? 1.0 : 0.5;
  return shape;
}

ConfidenceWidth random_width(Rng& rng) {
  BoundConfig c;
  c.mode = BoundMode::kPractical;
  c.c = 0.01 + uniform01(rng);
  return ConfidenceWidth(c, 2 + static_cast<std::int64_t>(rng() % 1000));
}

CountsTable random_counts(const TreeMdp& mdp, Rng& rng, bool allow_zero,
                          bool keep_log = false) {
  if (keep_log || rng() % 2)
    return played_counts(mdp, rng, 1 + static_cast<int>(rng() % 60),
                         keep_log);
  return arbitrary_counts(mdp.structure(), rng, 30, allow_zero ? 0.1 : 0.0);
}

}  // namespace

TEST(Planner, BestEmpiricalMatchesEnumeration) {
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = arbitrary_counts(st, rng, 20, 0.0);
    auto classes = all_classes(st, counts, false);
    if (classes.empty()) continue;
    double best = -1;
    for (auto& c : classes) best = std::max(best, c.value);
    auto plan = best_empirical_policy(counts, st);
    EXPECT_NEAR(plan.value, best, 1e-12);
    EXPECT_NEAR(v_hat(counts, st, plan.policy), best, 1e-12);
    EXPECT_NEAR(plan.subtree_value[0], best, 1e-12);
  }
}

TEST(Planner, ExactFrequenciesGiveOptimalPolicy) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    const std::int64_t scale = 1 << 24;
    std::vector<std::int64_t> n(st.num_terminals(), scale), np(n.size());
    for (TerminalId t = 0; t < st.num_terminals(); ++t)
      np[t] = std::llround(mdp.reach_prob(t) * scale);
    auto counts = CountsTable::from_counts(n, np, scale);
    auto plan = best_empirical_policy(counts, st);
    EXPECT_NEAR(evaluate_terminal_sum(mdp, plan.policy),
                solve_optimal(mdp).value, 1e-6);
  }
}

TEST(Planner, FindMaxUcbMatchesEnumeration) {
  Rng rng(3);
  int checked = 0;
  for (int i = 0; i < 600; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = random_counts(mdp, rng, true);
    auto classes = all_classes(st, counts, false);
    if (classes.empty()) continue;
    auto w = random_width(rng);
    double best = -INFINITY;
    for (auto& c : classes) best = std::max(best, score(c, w));
    auto plan = find_max_ucb(counts, st, best_empirical_policy(counts, st), w);
    EXPECT_EQ(plan.policy, canonical_form(st, plan.policy));
    if (std::isinf(best)) {
      EXPECT_TRUE(std::isinf(plan.tuple.ucb));
      EXPECT_EQ(play_count(counts, st, plan.policy), 0);
    } else {
      EXPECT_NEAR(plan.tuple.ucb, best, 1e-10);
      EXPECT_NEAR(ucb(counts, st, plan.policy, w), best, 1e-10);
    }
    auto brute = brute_force_max_ucb(counts, st, w);
    if (!std::isinf(best)) { EXPECT_NEAR(brute.ucb, best, 1e-10); }
    ++checked;
  }
  EXPECT_GT(checked, 300);
}

TEST(Planner, ThresholdRouteAgrees) {
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = random_counts(mdp, rng, false);
    auto w = random_width(rng);
    auto pu = find_max_ucb(counts, st, best_empirical_policy(counts, st), w);
    auto th = find_max_ucb_by_threshold(counts, st, w);
    if (std::isinf(pu.tuple.ucb)) {
      EXPECT_TRUE(std::isinf(th.tuple.ucb));
      continue;
    }
    EXPECT_NEAR(pu.tuple.ucb, th.tuple.ucb, 1e-10);
    EXPECT_NEAR(ucb(counts, st, th.policy, w), th.tuple.ucb, 1e-10);
  }
}

TEST(Planner, SecondMaxMatchesEnumeration) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = random_counts(mdp, rng, false);
    auto classes = all_classes(st, counts, false);
    if (classes.empty()) continue;
    auto w = random_width(rng);
    auto best = best_empirical_policy(counts, st);
    auto x1 = consistent_terminals(st, best.policy);
    double target = -INFINITY;
    for (auto& c : classes)
      if (c.x != x1) target = std::max(target, score(c, w));
    if (classes.size() == 1) {
      EXPECT_THROW(second_max_ucb(counts, st, best, w), NoSecondPolicyError);
      continue;
    }
    PlannerStats stats;
    auto plan = second_max_ucb(counts, st, best, w, &stats);
    EXPECT_NE(consistent_terminals(st, plan.policy), x1);
    if (std::isinf(target)) {
      EXPECT_TRUE(std::isinf(plan.tuple.ucb));
    } else {
      EXPECT_NEAR(plan.tuple.ucb, target, 1e-10);
      EXPECT_NEAR(ucb(counts, st, plan.policy, w), target, 1e-10);
    }
  }
}

TEST(Planner, SecondMaxShortCircuits) {
  Rng rng(6);
  int short_circuits = 0;
  for (int i = 0; i < 200; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = random_counts(mdp, rng, false);
    auto w = random_width(rng);
    auto best = best_empirical_policy(counts, st);
    auto first = find_max_ucb(counts, st, best, w);
    if (first.policy == canonical_form(st, best.policy)) continue;
    PlannerStats stats;
    auto second = second_max_ucb(counts, st, best, w, &stats);
    EXPECT_FALSE(stats.second_pass);
    EXPECT_EQ(second.policy, first.policy);
    ++short_circuits;
  }
  EXPECT_GT(short_circuits, 10);
}

TEST(Planner, TwoClassTree) {
  TreeDescription d;
  d.root = 0;
  d.horizon = 1;
  d.nodes = {{0, 1}};
  d.terminals = {{1, std::nullopt}, {2, std::nullopt}};
  d.edges = {{0, 0, 1, 1.0, 0.8}, {0, 1, 2, 1.0, 0.5}};
  auto mdp = TreeMdp::build(d);
  const auto& st = mdp.structure();
  auto counts = CountsTable::from_counts({5, 5}, {5, 5}, 10);
  BoundConfig c;
  auto w = ConfidenceWidth(c, 10);
  auto best = best_empirical_policy(counts, st);
  EXPECT_EQ(best.policy[0], 0);
  auto second = second_max_ucb(counts, st, best, w);
  EXPECT_EQ(second.policy[0], 1);
  EXPECT_NEAR(second.tuple.value, 0.5, 1e-12);
}

TEST(Planner, SinglePolicyTree) {
  TreeDescription d;
  d.root = 0;
  d.horizon = 1;
  d.nodes = {{0, 1}};
  d.terminals = {{1, std::nullopt}, {2, std::nullopt}};
  d.edges = {{0, 0, 1, 0.4, 1.0}, {0, 0, 2, 0.6, 0.0}};
  auto mdp = TreeMdp::build(d);
  const auto& st = mdp.structure();
  auto counts = CountsTable::from_counts({10, 10}, {4, 6}, 10);
  BoundConfig c;
  ConfidenceWidth w(c, 20);
  auto best = best_empirical_policy(counts, st);
  auto plan = find_max_ucb(counts, st, best, w);
  EXPECT_NEAR(plan.tuple.ucb, 0.4 + w(10), 1e-12);
  EXPECT_THROW(second_max_ucb(counts, st, best, w), NoSecondPolicyError);
}

TEST(Planner, RoutesThroughRarelyPlayedBranch) {
  // Root: action 0 -> terminal (rho 0.6) played 1000 times,
  //       action 1 -> terminal (rho 0.5) played once.
  TreeDescription d;
  d.root = 0;
  d.horizon = 1;
  d.nodes = {{0, 1}};
  d.terminals = {{1, std::nullopt}, {2, std::nullopt}};
  d.edges = {{0, 0, 1, 1.0, 0.6}, {0, 1, 2, 1.0, 0.5}};
  auto mdp = TreeMdp::build(d);
  const auto& st = mdp.structure();
  auto counts = CountsTable::from_counts({1000, 1}, {1000, 1}, 1001);
  BoundConfig c;
  c.mode = BoundMode::kPractical;
  c.c = 0.1;
  ConfidenceWidth w(c, 1001);
  ASSERT_GT(w(1) - w(1000), 0.1);
  auto plan = find_max_ucb(counts, st, best_empirical_policy(counts, st), w);
  EXPECT_EQ(plan.policy[0], 1);
  EXPECT_EQ(plan.tuple.n_star, 1);
  EXPECT_EQ(plan.tuple.sigma_star, 1);
}

TEST(Planner, ZeroWidthReducesToValueMaximization) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = arbitrary_counts(st, rng, 20, 0.0);
    auto best = best_empirical_policy(counts, st);
    auto plan = find_max_ucb(counts, st, best, ConfidenceWidth::zero());
    EXPECT_NEAR(plan.tuple.ucb, best.value, 1e-12);
  }
}

TEST(Planner, TupleSigmaStarIsLowestMinimum) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = arbitrary_counts(st, rng, 3, 0.0);
    Policy pi = treebandit::testing::random_policy(st, rng);
    BoundConfig c;
    ConfidenceWidth w(c, 10);
    auto tuple = ucb_tuple(counts, st, pi, w);
    auto x = consistent_terminals(st, pi);
    std::int64_t m = INT64_MAX;
    TerminalId arg = -1;
    for (auto t : x)
      if (counts.n(t) < m) {
        m = counts.n(t);
        arg = t;
      }
    EXPECT_EQ(tuple.n_star, m);
    EXPECT_EQ(tuple.sigma_star, arg);
    EXPECT_EQ(counts.n(tuple.sigma_star), tuple.n_star);
    EXPECT_NEAR(tuple.ucb, tuple.value + w(m), 1e-12);
  }
}

TEST(Planner, NodeVisitsAreLinear) {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    RandomTreeShape shape;
    shape.max_depth = 5;
    shape.terminal_prob = 0.2;
    auto mdp = random_tree(rng, shape);
    const auto& st = mdp.structure();
    auto counts = played_counts(mdp, rng, 50);
    BoundConfig c;
    ConfidenceWidth w(c, 50);
    auto best = best_empirical_policy(counts, st);
    const std::int64_t bound =
        std::int64_t(st.num_states()) * st.max_actions() * st.max_branching() +
        st.num_terminals();
    PlannerStats s1, s2;
    find_max_ucb(counts, st, best, w, &s1);
    try {
      second_max_ucb(counts, st, best, w, &s2);
    } catch (const NoSecondPolicyError&) {
    }
    EXPECT_LE(s1.node_visits, 3 * bound);
    EXPECT_LE(s2.node_visits, 3 * bound);
  }
}

TEST(Planner, Deterministic) {
  Rng a(10), b(10);
  for (int i = 0; i < 20; ++i) {
    auto ma = random_tree(a, small_shape(a));
    auto mb = random_tree(b, small_shape(b));
    auto ca = random_counts(ma, a, false);
    auto cb = random_counts(mb, b, false);
    BoundConfig c;
    ConfidenceWidth w(c, 30);
    auto pa = find_max_ucb(ca, ma.structure(),
                           best_empirical_policy(ca, ma.structure()), w);
    auto pb = find_max_ucb(cb, mb.structure(),
                           best_empirical_policy(cb, mb.structure()), w);
    EXPECT_EQ(pa.policy, pb.policy);
  }
}

TEST(PlannerUniform, MatchesEnumeration) {
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    auto mdp = random_tree(rng, small_shape(rng));
    const auto& st = mdp.structure();
    auto counts = random_counts(mdp, rng, false, true);
    auto classes = all_classes(st, counts, true);
    if (classes.empty()) continue;
    auto w = random_width(rng);

    double best_value = -INFINITY, best_ucb = -INFINITY;
    bool any_played = false;
    for (auto& c : classes) {
      best_ucb = std::max(best_ucb, score(c, w));
      if (c.m > 0) {
        best_value = std::max(best_value, c.value);
        any_played = true;
      }
    }
    if (any_played) {
      auto plan = best_uniform_policy(counts, st);
      EXPECT_NEAR(plan.value, best_value, 1e-12);
      EXPECT_NEAR(v_hat_uniform(counts, st, plan.policy), best_value, 1e-12);

      auto x1 = consistent_terminals(st, plan.policy);
      double second = -INFINITY;
      for (auto& c : classes)
        if (c.x != x1) second = std::max(second, score(c, w));
      if (classes.size() > 1) {
        auto p2 = second_max_ucb_uniform(counts, st, plan.policy, w);
        EXPECT_NE(consistent_terminals(st, p2.policy), x1);
        if (std::isinf(second))
          EXPECT_TRUE(std::isinf(p2.tuple.ucb));
        else
          EXPECT_NEAR(p2.tuple.ucb, second, 1e-10);
      } else {
        EXPECT_THROW(second_max_ucb_uniform(counts, st, plan.policy, w),
                     NoSecondPolicyError);
      }
    }
    auto top = find_max_ucb_uniform(counts, st, w);
    if (std::isinf(best_ucb))
      EXPECT_TRUE(std::isinf(top.tuple.ucb));
    else
      EXPECT_NEAR(top.tuple.ucb, best_ucb, 1e-10);
  }
}

TEST(PlannerUniform, EqualCountsMatchPooled) {
  // A single repeatedly played policy on a one-action-per-state tree gives
  // every terminal the same count.
  TreeDescription d;
  d.root = 0;
  d.horizon = 1;
  d.nodes = {{0, 1}};
  d.terminals = {{1, std::nullopt}, {2, std::nullopt}, {3, std::nullopt}};
  d.edges = {{0, 0, 1, 0.2, 0.9}, {0, 0, 2, 0.5, 0.3}, {0, 0, 3, 0.3, 0.6}};
  auto mdp = TreeMdp::build(d);
  const auto& st = mdp.structure();
  CountsTable counts(st.num_terminals(), true);
  Rng rng(12);
  Policy pi = Policy::zeros(st);
  for (int k = 0; k < 50; ++k)
    counts.record_episode(consistent_terminals(st, pi),
                          sample_terminal(mdp, pi, rng));
  EXPECT_DOUBLE_EQ(best_uniform_policy(counts, st).value,
                   best_empirical_policy(counts, st).value);
}
