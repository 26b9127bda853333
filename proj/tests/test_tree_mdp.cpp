#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "treebandit/games.hpp"
#include "treebandit/tree_mdp.hpp"

using namespace treebandit;
using treebandit::testing::random_policy;
using treebandit::testing::random_tree;
using treebandit::testing::RandomTreeShape;

namespace {

TreeDescription chain() {
  TreeDescription d;
  d.root = 1;
  d.horizon = 2;
  d.nodes = {{1, 1}, {2, 2}};
  d.terminals = {{3, std::nullopt}};
  d.edges = {{1, 0, 2, 1.0, 0.5}, {2, 0, 3, 1.0, 0.5}};
  return d;
}

TreeDescription one_step(double p0, double p1) {
  TreeDescription d;
  d.root = 0;
  d.horizon = 1;
  d.nodes = {{0, 1}};
  d.terminals = {{1, std::nullopt}, {2, std::nullopt}};
  d.edges = {{0, 0, 1, p0, 1.0}, {0, 0, 2, p1, 0.0}};
  return d;
}

bool mentions(const ValidationReport& report, const std::string& text) {
  for (const auto& line : report)
    if (line.find(text) != std::string::npos) return true;
  return false;
}

// Value by direct recursion over the description's edge list.
double naive_value(const TreeDescription& d, const Policy& pi) {
  std::map<std::int64_t, int> level;
  for (const auto& n : d.nodes) level[n.id] = n.level;
  std::function<double(std::int64_t)> value = [&](std::int64_t id) {
    auto it = level.find(id);
    if (it == level.end()) return 0.0;
    const double g = it->second == 0 ? 1.0 : d.gamma;
    double v = 0.0;
    for (const auto& e : d.edges)
      if (e.from == id && e.action == pi[static_cast<StateId>(id)])
        v += e.prob * (e.reward + g * value(e.to));
    return v;
  };
  return value(*d.root);
}

// X(pi) by filtering every terminal's root path.
std::vector<TerminalId> filtered_terminals(const TreeMdp& mdp,
                                           const Policy& pi) {
  std::vector<TerminalId> out;
  auto profiles = compute_terminal_profiles(mdp);
  for (TerminalId t = 0; t < static_cast<TerminalId>(profiles.size()); ++t) {
    bool ok = true;
    for (const auto& step : profiles[t].path)
      ok = ok && pi[step.state] == step.action;
    if (ok) out.push_back(t);
  }
  return out;
}

}  // namespace

TEST(Validate, ChainIsValid) { EXPECT_TRUE(validate(chain()).empty()); }

TEST(Validate, TwoParents) {
  auto d = chain();
  d.nodes.push_back({4, 1});
  d.root = 1;
  d.edges.push_back({4, 0, 3, 1.0, 0.0});
  EXPECT_TRUE(mentions(validate(d), "tree property violated"));
}

TEST(Validate, Normalization) {
  EXPECT_TRUE(mentions(validate(one_step(0.3, 0.6)),
                       "probability normalization violated"));
}

TEST(Validate, MiscViolations) {
  auto d = chain();
  d.root.reset();
  EXPECT_TRUE(mentions(validate(d), "missing root"));

  d = chain();
  d.nodes[1].level = 3;
  d.horizon = 3;
  EXPECT_TRUE(mentions(validate(d), "level violated"));

  d = chain();
  d.edges[0].reward = 0.9;
  EXPECT_TRUE(mentions(validate(d), "return out of range"));

  d = chain();
  d.terminals[0].rho = 0.7;
  EXPECT_TRUE(mentions(validate(d), "terminal return mismatch"));

  d = chain();
  d.horizon = 1;
  EXPECT_TRUE(mentions(validate(d), "horizon violated"));

  d = chain();
  d.edges[1].action = 1;
  EXPECT_TRUE(mentions(validate(d), "not contiguous"));

  d = chain();
  d.gamma = 1.5;
  EXPECT_TRUE(mentions(validate(d), "gamma"));

  d = chain();
  d.terminals.push_back({9, std::nullopt});
  EXPECT_TRUE(mentions(validate(d), "unreachable terminal 9"));

  EXPECT_THROW(TreeMdp::build(one_step(0.3, 0.6)), InvalidTreeError);
}

TEST(Validate, ChanceRootNeedsOneAction) {
  TreeDescription d;
  d.root = 0;
  d.horizon = 1;
  d.nodes = {{0, 0}, {1, 1}};
  d.terminals = {{2, std::nullopt}, {3, std::nullopt}};
  d.edges = {{0, 0, 1, 1.0, 0.0}, {0, 1, 2, 1.0, 0.0}, {1, 0, 3, 1.0, 0.0}};
  EXPECT_TRUE(mentions(validate(d), "exactly one action"));
}

TEST(Build, RenormalizesWithinTolerance) {
  auto mdp = TreeMdp::build(one_step(0.3, 0.7 - 5e-10));
  auto p = mdp.probs(0, 0);
  EXPECT_DOUBLE_EQ(p[0] + p[1], 1.0);
}

TEST(Profiles, Chain) {
  auto mdp = TreeMdp::build(chain());
  auto prof = compute_terminal_profiles(mdp);
  ASSERT_EQ(prof.size(), 1u);
  EXPECT_DOUBLE_EQ(prof[0].rho, 1.0);
  EXPECT_DOUBLE_EQ(prof[0].q, 1.0);
  EXPECT_EQ(prof[0].path.size(), 2u);
  EXPECT_DOUBLE_EQ(evaluate_bellman(mdp, Policy::zeros(mdp.structure())), 1.0);
}

TEST(Profiles, OneStep) {
  auto mdp = TreeMdp::build(one_step(0.3, 0.7));
  auto prof = compute_terminal_profiles(mdp);
  EXPECT_DOUBLE_EQ(prof[0].q, 0.3);
  EXPECT_DOUBLE_EQ(prof[1].q, 0.7);
  EXPECT_DOUBLE_EQ(prof[0].rho, 1.0);
  EXPECT_DOUBLE_EQ(prof[1].rho, 0.0);
}

TEST(Profiles, DiscountedReturn) {
  auto d = chain();
  d.gamma = 0.5;
  auto mdp = TreeMdp::build(d);
  EXPECT_DOUBLE_EQ(mdp.structure().rho(0), 0.75);
}

TEST(Structure, PreorderNumbering) {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    auto mdp = random_tree(rng, RandomTreeShape{});
    const auto& st = mdp.structure();
    for (StateId s = 0; s < st.num_states(); ++s) {
      if (s > 0) { EXPECT_LT(st.parent(s), s); }
      auto [lo, hi] = st.subtree_terminals(s);
      EXPECT_LE(lo, hi);
      for (int a = 0; a < st.num_actions(s); ++a)
        for (const auto& c : st.children(s, a)) {
          if (c.target.is_terminal()) {
            EXPECT_GE(c.target.index, lo);
            EXPECT_LT(c.target.index, hi);
            EXPECT_EQ(st.terminal_parent(c.target.index), s);
            EXPECT_EQ(st.terminal_parent_action(c.target.index), a);
          } else {
            EXPECT_EQ(st.parent(c.target.index), s);
            EXPECT_EQ(st.level(c.target.index), st.level(s) + 1);
          }
        }
    }
  }
}

TEST(Evaluate, MatchesNaiveRecursionAndPartition) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    RandomTreeShape shape;
    shape.gamma = i % 2 ? 0.5 : 1.0;
    auto mdp = random_tree(rng, shape);
    const auto d = describe(mdp);
    const auto& st = mdp.structure();
    for (int j = 0; j < 5; ++j) {
      Policy pi = random_policy(st, rng);
      const double naive = naive_value(d, pi);
      EXPECT_NEAR(evaluate_bellman(mdp, pi), naive, 1e-12);
      EXPECT_NEAR(evaluate_terminal_sum(mdp, pi), naive, 1e-10);
      double mass = 0.0;
      for (auto t : consistent_terminals(st, pi)) mass += mdp.reach_prob(t);
      EXPECT_NEAR(mass, 1.0, 1e-9);
    }
  }
}

TEST(Evaluate, SinglePolicyTreeSumsAllTerminals) {
  auto mdp = TreeMdp::build(one_step(0.25, 0.75));
  Policy pi = Policy::zeros(mdp.structure());
  EXPECT_DOUBLE_EQ(evaluate_terminal_sum(mdp, pi), 0.25);
  EXPECT_EQ(consistent_terminals(mdp.structure(), pi).size(), 2u);
}

TEST(Evaluate, ZeroProbabilityTerminalContributesNothing) {
  auto mdp = TreeMdp::build(one_step(0.0, 1.0));
  EXPECT_DOUBLE_EQ(evaluate_terminal_sum(mdp, Policy::zeros(mdp.structure())),
                   0.0);
}

TEST(Consistency, MatchesPathFilter) {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    auto mdp = random_tree(rng, RandomTreeShape{});
    Policy pi = random_policy(mdp.structure(), rng);
    EXPECT_EQ(consistent_terminals(mdp.structure(), pi),
              filtered_terminals(mdp, pi));
  }
}

TEST(Consistency, CanonicalFormCharacterizesX) {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    RandomTreeShape shape;
    shape.max_depth = 3;
    auto mdp = random_tree(rng, shape);
    const auto& st = mdp.structure();
    for (int j = 0; j < 20; ++j) {
      Policy a = random_policy(st, rng), b = random_policy(st, rng);
      const bool same_x =
          consistent_terminals(st, a) == consistent_terminals(st, b);
      EXPECT_EQ(same_x, canonical_form(st, a) == canonical_form(st, b));
      EXPECT_EQ(consistent_terminals(st, a),
                consistent_terminals(st, canonical_form(st, a)));
      EXPECT_EQ(same_x,
                policy_class_hash(st, a) == policy_class_hash(st, b));
    }
  }
}

TEST(Consistency, CanonicalPolicyForTerminal) {
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    auto mdp = random_tree(rng, RandomTreeShape{});
    const auto& st = mdp.structure();
    for (TerminalId t = 0; t < st.num_terminals(); ++t) {
      Policy pi = canonical_policy_for_terminal(st, t);
      auto x = consistent_terminals(st, pi);
      EXPECT_TRUE(std::binary_search(x.begin(), x.end(), t));
    }
  }
}

TEST(Consistency, KuhnTerminalsAndSharedPrefixes) {
  const auto spec = GameSpec::make(GameId::kKuhn3, Role::kX);
  auto mdp = compile(spec, uniform_opponent(spec));
  const auto& st = mdp.structure();
  auto prof = compute_terminal_profiles(mdp);
  for (TerminalId a = 0; a < st.num_terminals(); ++a) {
    Policy pa = canonical_policy_for_terminal(st, a);
    auto xa = consistent_terminals(st, pa);
    EXPECT_TRUE(std::binary_search(xa.begin(), xa.end(), a));
    EXPECT_EQ(xa, filtered_terminals(mdp, pa));
    for (TerminalId b = a + 1; b < st.num_terminals(); ++b) {
      Policy pb = canonical_policy_for_terminal(st, b);
      const auto& path_a = prof[a].path;
      const auto& path_b = prof[b].path;
      for (std::size_t k = 0; k < std::min(path_a.size(), path_b.size());
           ++k) {
        if (path_a[k].state != path_b[k].state) break;
        if (path_a[k].action != path_b[k].action) break;
        EXPECT_EQ(pa[path_a[k].state], pb[path_b[k].state]);
      }
    }
  }
}

TEST(Sampling, DeterministicTreeIgnoresSeed) {
  auto mdp = TreeMdp::build(chain());
  Rng a(1), b(99);
  auto ta = sample_episode(mdp, Policy::zeros(mdp.structure()), a);
  auto tb = sample_episode(mdp, Policy::zeros(mdp.structure()), b);
  EXPECT_EQ(ta.terminal, tb.terminal);
  EXPECT_EQ(ta.steps.size(), 2u);
  EXPECT_NEAR(ta.ret, 1.0, 1e-12);
}

TEST(Sampling, SameSeedSameTrajectory) {
  Rng gen(23);
  auto mdp = random_tree(gen, RandomTreeShape{});
  Policy pi = random_policy(mdp.structure(), gen);
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    auto ta = sample_episode(mdp, pi, a);
    auto tb = sample_episode(mdp, pi, b);
    EXPECT_EQ(ta.terminal, tb.terminal);
    EXPECT_EQ(ta.steps.size(), tb.steps.size());
    EXPECT_NEAR(ta.ret, mdp.structure().rho(ta.terminal), 1e-12);
    EXPECT_EQ(ta.steps.front().state, 0);
  }
}

TEST(Sampling, FrequenciesMatchReachProbabilities) {
  Rng gen(29);
  auto mdp = random_tree(gen, RandomTreeShape{});
  const auto& st = mdp.structure();
  Policy pi = random_policy(st, gen);
  const int n = 100000;
  std::map<TerminalId, int> hits;
  Rng rng(31);
  for (int i = 0; i < n; ++i) ++hits[sample_terminal(mdp, pi, rng)];
  for (auto t : consistent_terminals(st, pi)) {
    const double q = mdp.reach_prob(t);
    const double se = std::sqrt(q * (1 - q) / n);
    EXPECT_NEAR(hits[t] / double(n), q, 3 * se + 1e-12) << "terminal " << t;
  }
  for (auto [t, k] : hits) {
    auto x = consistent_terminals(st, pi);
    EXPECT_TRUE(std::binary_search(x.begin(), x.end(), t));
  }
}

TEST(SolveOptimal, MatchesExhaustiveSearch) {
  Rng rng(37);
  for (int i = 0; i < 60; ++i) {
    RandomTreeShape shape;
    shape.max_depth = 3;
    auto mdp = random_tree(rng, shape);
    const auto& st = mdp.structure();
    // Every deterministic policy, as a mixed-radix counter.
    Policy pi = Policy::zeros(st);
    double best = -1.0;
    std::int64_t total = 1;
    for (StateId s = 0; s < st.num_states(); ++s) total *= st.num_actions(s);
    if (total > 20000) continue;
    for (std::int64_t k = 0; k < total; ++k) {
      best = std::max(best, evaluate_bellman(mdp, pi));
      for (StateId s = 0; s < st.num_states(); ++s) {
        if (++pi[s] < st.num_actions(s)) break;
        pi[s] = 0;
      }
    }
    auto opt = solve_optimal(mdp);
    EXPECT_NEAR(opt.value, best, 1e-12);
    EXPECT_NEAR(evaluate_bellman(mdp, opt.policy), best, 1e-12);
  }
}

TEST(TextFormat, RoundTripIsExact) {
  Rng rng(41);
  for (int i = 0; i < 30; ++i) {
    RandomTreeShape shape;
    shape.gamma = 0.5;
    auto mdp = random_tree(rng, shape);
    std::stringstream text;
    write_tree_text(text, mdp);
    auto again = TreeMdp::build(read_tree_text(text));
    std::stringstream text2;
    write_tree_text(text2, again);
    EXPECT_EQ(text.str(), text2.str());
    const auto& a = mdp.structure();
    const auto& b = again.structure();
    ASSERT_EQ(a.num_terminals(), b.num_terminals());
    for (TerminalId t = 0; t < a.num_terminals(); ++t) {
      EXPECT_EQ(a.rho(t), b.rho(t));
      EXPECT_EQ(mdp.reach_prob(t), again.reach_prob(t));
    }
  }
}

TEST(TextFormat, CompiledGameRoundTrip) {
  const auto spec = GameSpec::make(GameId::kLeduc, Role::kX);
  auto mdp = compile(spec, uniform_opponent(spec));
  std::stringstream text;
  write_tree_text(text, mdp);
  auto again = TreeMdp::build(read_tree_text(text));
  EXPECT_EQ(again.structure().num_terminals(), 417);
  EXPECT_EQ(again.structure().num_decision_states(), 144);
  const auto opt_a = solve_optimal(mdp);
  const auto opt_b = solve_optimal(again);
  EXPECT_EQ(opt_a.value, opt_b.value);
}

TEST(TextFormat, ParseErrorsCarryLineNumbers) {
  auto expect_line = [](const std::string& text, int line) {
    std::istringstream in(text);
    try {
      read_tree_text(in);
      ADD_FAILURE() << "no error for: " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  expect_line("root 0\nnode 0 level x\n", 2);
  expect_line("# comment\n\nbogus 1\n", 3);
  expect_line("edge 0 0 1 p=0.5\n", 1);
  expect_line("root 0\nroot 1\n", 2);
  expect_line("terminal 4 rho=abc\n", 1);
}

TEST(TextFormat, ReadsHandWrittenTree) {
  std::istringstream in(
      "gamma 1\nhorizon 1\nroot 0\nnode 0 level 1\n"
      "terminal 1 rho=1\nterminal 2 rho=0\n"
      "edge 0 0 1 p=0.3 r=1\nedge 0 0 2 p=0.7 r=0\n");
  auto mdp = TreeMdp::build(read_tree_text(in));
  EXPECT_DOUBLE_EQ(evaluate_terminal_sum(mdp, Policy::zeros(mdp.structure())),
                   0.3);
}
