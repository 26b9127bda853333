#include "treebandit/oracle.hpp"

#include <algorithm>
#include <limits>
#include <ostream>

#include <boost/math/distributions/binomial.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

namespace treebandit {
namespace {

std::size_t saturating_mul(std::size_t a, std::size_t b, std::size_t cap) {
  if (a == 0 || b == 0) return 0;
  if (a > cap / b) return cap;
  return std::min(a * b, cap);
}

void enumerate_from(const TreeStructure& st, std::vector<StateId>& pending,
                    Policy& pi, std::vector<Policy>& out) {
  if (pending.empty()) {
    out.push_back(pi);
    return;
  }
  const StateId s = pending.back();
  pending.pop_back();
  for (int a = 0; a < st.num_actions(s); ++a) {
    pi[s] = a;
    const std::size_t mark = pending.size();
    auto kids = st.children(s, a);
    for (auto it = kids.rbegin(); it != kids.rend(); ++it)
      if (!it->target.is_terminal()) pending.push_back(it->target.index);
    enumerate_from(st, pending, pi, out);
    pending.resize(mark);
  }
  pi[s] = 0;
  pending.push_back(s);
}

std::string format_optional(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string("NA");
}

}  // namespace

std::size_t count_policy_classes(const TreeStructure& st, std::size_t max) {
  const std::size_t cap = max + 1;
  std::vector<std::size_t> count(st.num_states(), 0);
  for (StateId s = st.num_states(); s-- > 0;) {
    std::size_t total = 0;
    for (int a = 0; a < st.num_actions(s); ++a) {
      std::size_t product = 1;
      for (const Child& c : st.children(s, a))
        if (!c.target.is_terminal())
          product = saturating_mul(product, count[c.target.index], cap);
      total = std::min(total + product, cap);
    }
    count[s] = total;
  }
  return count[0];
}

std::vector<Policy> enumerate_policy_classes(const TreeStructure& st,
                                             std::size_t guard) {
  const std::size_t n = count_policy_classes(st, guard);
  if (n > guard)
    throw GuardExceededError(fmt::format(
        "tree has more than {} policy classes; refusing to enumerate", guard));
  std::vector<Policy> out;
  out.reserve(n);
  std::vector<StateId> pending{0};
  Policy pi = Policy::zeros(st);
  enumerate_from(st, pending, pi, out);
  return out;
}

std::optional<std::size_t> GapReport::find(std::uint64_t hash) const {
  auto it = by_hash.find(hash);
  if (it == by_hash.end()) return std::nullopt;
  return it->second;
}

void GapReport::write_class_csv(std::ostream& out) const {
  out << "class_id,value,delta,delta_eps\n";
  for (std::size_t i = 0; i < classes.size(); ++i)
    fmt::print(out, "{},{},{},{}\n", i, classes[i].value, classes[i].delta,
               classes[i].delta_eps);
}

void GapReport::write_terminal_csv(std::ostream& out) const {
  out << "terminal_id,delta_eps_sigma,delta_min,delta_max\n";
  for (std::size_t i = 0; i < terminals.size(); ++i)
    fmt::print(out, "{},{},{},{}\n", i, terminals[i].delta_eps,
               format_optional(terminals[i].delta_min),
               format_optional(terminals[i].delta_max));
}

GapReport gap_report(const TreeMdp& mdp, double epsilon, std::size_t guard) {
  const auto& st = mdp.structure();
  GapReport report;
  report.epsilon = epsilon;
  auto policies = enumerate_policy_classes(st, guard);
  std::vector<std::vector<TerminalId>> xs;
  xs.reserve(policies.size());
  report.classes.reserve(policies.size());
  for (auto& pi : policies) {
    ClassGap c;
    xs.push_back(consistent_terminals(st, pi));
    c.hash = terminal_set_hash(xs.back());
    c.value = evaluate_terminal_sum(mdp, pi);
    c.policy = std::move(pi);
    report.by_hash.emplace(c.hash, report.classes.size());
    report.classes.push_back(std::move(c));
  }

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : report.classes) best = std::max(best, c.value);
  report.optimal_value = best;
  for (std::size_t i = 0; i < report.classes.size(); ++i)
    if (report.classes[i].value >= best - kOptimalTolerance)
      report.optimal_classes.push_back(i);
  report.optimal_class = report.optimal_classes.front();

  report.second_value = best;
  bool have_second = false;
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    if (i == report.optimal_class) continue;
    if (!have_second || report.classes[i].value > report.second_value) {
      report.second_value = report.classes[i].value;
      have_second = true;
    }
  }
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    auto& c = report.classes[i];
    c.delta = i == report.optimal_class
                  ? best - report.second_value
                  : std::max(0.0, best - c.value);
    c.delta_eps = std::max(c.delta, epsilon);
  }

  std::vector<bool> optimal(report.classes.size(), false);
  for (auto i : report.optimal_classes) optimal[i] = true;
  report.terminals.assign(st.num_terminals(), TerminalGap{});
  std::vector<bool> seen(st.num_terminals(), false);
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    const auto& c = report.classes[i];
    for (TerminalId t : xs[i]) {
      auto& tg = report.terminals[t];
      tg.delta_eps = seen[t] ? std::min(tg.delta_eps, c.delta_eps)
                             : c.delta_eps;
      seen[t] = true;
      if (optimal[i]) continue;
      tg.delta_min = tg.delta_min ? std::min(*tg.delta_min, c.delta) : c.delta;
      tg.delta_max = tg.delta_max ? std::max(*tg.delta_max, c.delta) : c.delta;
    }
  }
  return report;
}

BruteForceUcb brute_force_max_ucb(const CountsTable& counts,
                                  const TreeStructure& structure,
                                  const ConfidenceWidth& width,
                                  Estimate estimate, std::size_t guard) {
  BruteForceUcb best;
  bool found = false;
  for (auto& pi : enumerate_policy_classes(structure, guard)) {
    double u = ucb(counts, structure, pi, width, estimate);
    if (!found || u > best.ucb) {
      best.ucb = u;
      best.policy = std::move(pi);
      found = true;
    }
  }
  return best;
}

CoverageResult coverage_test(const TreeMdp& mdp, const Policy& pi,
                             const std::vector<SchedulePart>& schedule,
                             const ConfidenceWidth& width,
                             std::int64_t replications, std::uint64_t seed) {
  const auto& st = mdp.structure();
  std::vector<std::vector<TerminalId>> xs;
  for (const auto& part : schedule)
    xs.push_back(consistent_terminals(st, part.policy));

  // Interleaved play order, fixed across replications.
  std::vector<std::size_t> order;
  {
    std::vector<std::int64_t> left;
    for (const auto& part : schedule) left.push_back(part.plays);
    bool any = true;
    while (any) {
      any = false;
      for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (left[i] > 0) {
          order.push_back(i);
          --left[i];
          any = true;
        }
      }
    }
  }

  const auto x_pi = consistent_terminals(st, pi);
  CoverageResult result;
  result.replications = replications;
  result.true_value = evaluate_terminal_sum(mdp, pi);
  {
    CountsTable dry(st.num_terminals());
    for (auto i : order) dry.record_episode(xs[i], xs[i].front());
    result.play_count = play_count(dry, x_pi);
  }
  if (result.play_count == 0)
    throw InfeasibleScheduleError(
        "schedule leaves a terminal of the policy unplayed");

  Rng rng(seed);
  for (std::int64_t r = 0; r < replications; ++r) {
    CountsTable counts(st.num_terminals());
    for (auto i : order)
      counts.record_episode(xs[i],
                            sample_terminal(mdp, schedule[i].policy, rng));
    if (result.true_value >= ucb(counts, st, pi, width))
      ++result.upper_violations;
    if (result.true_value <= lcb(counts, st, pi, width))
      ++result.lower_violations;
  }
  return result;
}

double binomial_upper_tail(std::int64_t k, std::int64_t n, double p) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  boost::math::binomial_distribution<double> dist(static_cast<double>(n), p);
  return boost::math::cdf(boost::math::complement(dist, k - 1));
}

}  // namespace treebandit
