#include "treebandit/learners.hpp"

#include <algorithm>
#include <cmath>

#include "treebandit/oracle.hpp"
#include "treebandit/planner.hpp"

namespace treebandit {
namespace {

struct Bounds {
  const Policy* best = nullptr;
  std::uint64_t best_class = 0;
  double lcb1 = std::numeric_limits<double>::quiet_NaN();
  double ucb2 = std::numeric_limits<double>::quiet_NaN();
};

// Counts, episode bookkeeping and the initialization phase shared by the
// tree learners.
class Runner {
 public:
  Runner(const Environment& env, Rng& rng, const LearnerOptions& options,
         bool keep_log)
      : env_(env),
        st_(env.structure()),
        rng_(rng),
        options_(options),
        counts_(st_.num_terminals(), keep_log) {}

  const CountsTable& counts() const { return counts_; }
  CountsTable take_counts() { return std::move(counts_); }
  std::int64_t episodes() const { return counts_.episodes(); }
  std::int64_t iteration() const { return iteration_; }
  std::int64_t begin_iteration() { return ++iteration_; }

  bool budget_allows(std::int64_t plays) const {
    return options_.max_episodes <= 0 ||
           counts_.episodes() + plays <= options_.max_episodes;
  }

  // Lowest-id terminal with no plays, or -1.
  TerminalId uncovered() {
    while (next_uncovered_ < st_.num_terminals() &&
           counts_.n(next_uncovered_) > 0)
      ++next_uncovered_;
    return next_uncovered_ < st_.num_terminals() ? next_uncovered_ : -1;
  }

  void play_init(TerminalId sigma) {
    Policy pi =
        canonical_form(st_, canonical_policy_for_terminal(st_, sigma));
    play(pi, Phase::kInit, Bounds{});
  }

  void play(const Policy& pi, Phase phase, const Bounds& bounds) {
    auto x = consistent_terminals(st_, pi);
    const TerminalId reached = env_.play(pi, rng_);
    counts_.record_episode(x, reached);
    if (!options_.sink) return;
    LearnerEvent ev;
    ev.episode = counts_.episodes();
    ev.batch = iteration_;
    ev.phase = phase;
    ev.played_class = terminal_set_hash(x);
    ev.terminal = reached;
    ev.played = &pi;
    ev.best = bounds.best;
    ev.best_class = bounds.best_class;
    ev.lcb1 = bounds.lcb1;
    ev.ucb2 = bounds.ucb2;
    options_.sink(ev);
  }

  void emit_stop(const Bounds& bounds) {
    if (!options_.sink) return;
    LearnerEvent ev;
    ev.episode = counts_.episodes();
    ev.batch = iteration_;
    ev.phase = Phase::kMain;
    ev.best = bounds.best;
    ev.best_class = bounds.best_class;
    ev.lcb1 = bounds.lcb1;
    ev.ucb2 = bounds.ucb2;
    ev.stop = true;
    options_.sink(ev);
  }

 private:
  const Environment& env_;
  const TreeStructure& st_;
  Rng& rng_;
  const LearnerOptions& options_;
  CountsTable counts_;
  std::int64_t iteration_ = 0;
  TerminalId next_uncovered_ = 0;
};

// Returns false when the budget ran out first.
bool initialize(Runner& runner) {
  for (TerminalId sigma = runner.uncovered(); sigma >= 0;
       sigma = runner.uncovered()) {
    if (!runner.budget_allows(1)) return false;
    runner.begin_iteration();
    runner.play_init(sigma);
  }
  return true;
}

PacResult lucb(const Environment& env, const BoundConfig& user_config,
               Rng& rng, const LearnerOptions& options, bool uniform) {
  const auto& st = env.structure();
  const BoundConfig config = BoundConfig::for_tree(
      st, uniform ? Schedule::kLucbUniform : Schedule::kLucb,
      user_config.mode, user_config.delta, user_config.epsilon,
      user_config.c);
  config.check();
  const Estimate estimate = uniform ? Estimate::kUniform : Estimate::kPooled;
  Runner runner(env, rng, options, uniform);
  PacResult result;
  if (!initialize(runner)) {
    result.policy = Policy::zeros(st);
    result.episodes = runner.episodes();
    result.outcome = PacOutcome::kBudgetExhausted;
    return result;
  }

  while (true) {
    const std::int64_t t = runner.begin_iteration();
    const auto& counts = runner.counts();
    const ConfidenceWidth width(config, t);
    ++result.batches;

    Policy pi1;
    EmpiricalPlan plan1;
    if (uniform) {
      pi1 = canonical_form(st, best_uniform_policy(counts, st).policy);
    } else {
      plan1 = best_empirical_policy(counts, st);
      pi1 = canonical_form(st, plan1.policy);
    }
    const UcbTuple t1 = ucb_tuple(counts, st, pi1, width, estimate);
    Bounds bounds;
    bounds.best = &pi1;
    bounds.best_class =
        terminal_set_hash(consistent_terminals(st, pi1));
    bounds.lcb1 = std::min(t1.value, 1.0) - width(t1.n_star);

    UcbPlan plan2;
    bool separated = false;
    try {
      plan2 = uniform ? second_max_ucb_uniform(counts, st, pi1, width)
                      : second_max_ucb(counts, st, plan1, width);
      bounds.ucb2 = plan2.tuple.ucb;
      separated = bounds.lcb1 >= bounds.ucb2 - config.epsilon;
    } catch (const NoSecondPolicyError&) {
      separated = true;
    }

    result.policy = pi1;
    result.episodes = runner.episodes();
    if (separated) {
      runner.emit_stop(bounds);
      result.outcome = PacOutcome::kStopped;
      return result;
    }
    if (!runner.budget_allows(2)) {
      result.outcome = PacOutcome::kBudgetExhausted;
      return result;
    }
    runner.play(pi1, Phase::kMain, bounds);
    runner.play(plan2.policy, Phase::kMain, bounds);
  }
}

}  // namespace

PacResult lucb_t(const Environment& env, const BoundConfig& config, Rng& rng,
                 const LearnerOptions& options) {
  return lucb(env, config, rng, options, false);
}

PacResult lucb_t_uniform(const Environment& env, const BoundConfig& config,
                         Rng& rng, const LearnerOptions& options) {
  return lucb(env, config, rng, options, true);
}

CountsTable ucb_t(const Environment& env, const BoundConfig& user_config,
                  Rng& rng, std::int64_t horizon,
                  const LearnerOptions& options) {
  const auto& st = env.structure();
  const BoundConfig config =
      BoundConfig::for_tree(st, Schedule::kUcb, user_config.mode,
                            user_config.delta, user_config.epsilon,
                            user_config.c);
  config.check();
  Runner runner(env, rng, options, false);
  while (runner.episodes() < horizon) {
    const std::int64_t t = runner.begin_iteration();
    if (TerminalId sigma = runner.uncovered(); sigma >= 0) {
      runner.play_init(sigma);
      continue;
    }
    const auto& counts = runner.counts();
    const ConfidenceWidth width(config, t);
    const EmpiricalPlan best = best_empirical_policy(counts, st);
    const UcbPlan plan = find_max_ucb(counts, st, best, width);
    runner.play(plan.policy, Phase::kMain, Bounds{});
  }
  return runner.take_counts();
}

PacResult flat_lucb(const Environment& env, const BoundConfig& user_config,
                    Rng& rng, const LearnerOptions& options) {
  const auto& st = env.structure();
  const std::vector<Policy> arms = enumerate_policy_classes(st);
  const std::size_t k = arms.size();
  BoundConfig config = user_config;
  config.schedule = Schedule::kFlat;
  config.log_num_policies = std::log(static_cast<double>(k));
  config.num_terminals = st.num_terminals();
  config.check();

  std::vector<std::uint64_t> hash(k);
  for (std::size_t i = 0; i < k; ++i)
    hash[i] = policy_class_hash(st, arms[i]);
  std::vector<std::int64_t> pulls(k, 0);
  std::vector<double> sum(k, 0.0);
  std::vector<double> mean(k, 0.0);
  std::vector<double> inv_sqrt(k, 0.0);
  std::int64_t episodes = 0;
  std::int64_t t = 0;

  auto pull = [&](std::size_t i, Phase phase, const LearnerEvent* context) {
    const TerminalId reached = env.play(arms[i], rng);
    ++episodes;
    ++pulls[i];
    sum[i] += st.rho(reached);
    mean[i] = sum[i] / static_cast<double>(pulls[i]);
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(pulls[i]));
    if (!options.sink) return;
    LearnerEvent ev = context ? *context : LearnerEvent{};
    ev.episode = episodes;
    ev.batch = t;
    ev.phase = phase;
    ev.played_class = hash[i];
    ev.terminal = reached;
    ev.played = &arms[i];
    ev.stop = false;
    options.sink(ev);
  };
  auto budget_allows = [&](std::int64_t plays) {
    return options.max_episodes <= 0 ||
           episodes + plays <= options.max_episodes;
  };

  PacResult result;
  for (std::size_t i = 0; i < k; ++i) {
    if (!budget_allows(1)) {
      result.policy = arms[0];
      result.episodes = episodes;
      result.outcome = PacOutcome::kBudgetExhausted;
      return result;
    }
    ++t;
    pull(i, Phase::kInit, nullptr);
  }

  while (true) {
    ++t;
    ++result.batches;
    const double root_scale = std::sqrt(ConfidenceWidth(config, t).scale());
    std::size_t h = 0;
    for (std::size_t i = 1; i < k; ++i)
      if (mean[i] > mean[h]) h = i;
    LearnerEvent context;
    context.best = &arms[h];
    context.best_class = hash[h];
    context.lcb1 = std::min(mean[h], 1.0) - root_scale * inv_sqrt[h];
    std::size_t l = k;
    double best_ucb = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
      if (i == h) continue;
      const double u = mean[i] + root_scale * inv_sqrt[i];
      if (u > best_ucb) {
        best_ucb = u;
        l = i;
      }
    }
    context.ucb2 = best_ucb;
    result.policy = arms[h];
    result.episodes = episodes;
    if (l == k || context.lcb1 >= best_ucb - config.epsilon) {
      if (options.sink) {
        context.episode = episodes;
        context.batch = t;
        context.phase = Phase::kMain;
        context.stop = true;
        options.sink(context);
      }
      result.outcome = PacOutcome::kStopped;
      return result;
    }
    if (!budget_allows(2)) {
      result.outcome = PacOutcome::kBudgetExhausted;
      return result;
    }
    pull(h, Phase::kMain, &context);
    pull(l, Phase::kMain, &context);
  }
}

}  // namespace treebandit
