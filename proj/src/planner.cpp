#include "treebandit/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace treebandit {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double pooled_weight(const CountsTable& counts, const TreeStructure& st,
                     TerminalId sigma) {
  const std::int64_t n = counts.n(sigma);
  if (n == 0) return 0.0;
  return static_cast<double>(counts.n_plus(sigma)) / static_cast<double>(n) *
         st.rho(sigma);
}

// Sum of all entries but one, and of all entries but two, without
// subtracting from a running total where it can be avoided.
class ExclusionSums {
 public:
  void reset(std::size_t k) {
    pre_.assign(k + 1, 0.0);
    suf_.assign(k + 1, 0.0);
  }
  void build(const std::vector<double>& v) {
    const std::size_t k = v.size();
    reset(k);
    for (std::size_t i = 0; i < k; ++i) pre_[i + 1] = pre_[i] + v[i];
    for (std::size_t i = k; i-- > 0;) suf_[i] = suf_[i + 1] + v[i];
  }
  double total() const { return pre_.back(); }
  double without(std::size_t j) const { return pre_[j] + suf_[j + 1]; }

 private:
  std::vector<double> pre_;
  std::vector<double> suf_;
};

struct Opt {
  bool valid = false;
  double raw = 0.0;
  std::int64_t n = 0;
  double ucb = kNegInf;
};

Opt make_opt(double raw, std::int64_t n, const ConfidenceWidth& width) {
  return {true, raw, n, raw + width(n)};
}

// Strictly better; ties keep the earlier candidate.
bool better(const Opt& cand, const Opt& incumbent) {
  if (!cand.valid) return false;
  if (!incumbent.valid) return true;
  return cand.ucb > incumbent.ucb;
}

// Pooled-estimator solver for the empirical best, the maximum-UCB policy and
// the maximum-UCB deviator from the empirical best.
class PuSolver {
 public:
  PuSolver(const CountsTable& counts, const TreeStructure& st,
           const EmpiricalPlan& best, const ConfidenceWidth& width,
           PlannerStats* stats)
      : counts_(counts), st_(st), best_(best), width_(width), stats_(stats) {
    weight_.resize(st.num_terminals());
    for (TerminalId t = 0; t < st.num_terminals(); ++t)
      weight_[t] = pooled_weight(counts, st, t);
  }

  UcbPlan max_ucb() {
    solve_u();
    Policy pi(std::vector<int>(st_.num_states(), 0));
    reconstruct(pi, 0, Mode::kU);
    return {pi, ucb_tuple(counts_, st_, pi, width_)};
  }

  // Requires max_ucb() to have run.
  UcbPlan max_ucb_deviating() {
    solve_deviators();
    if (!d_[0].valid) throw NoSecondPolicyError();
    Policy pi(std::vector<int>(st_.num_states(), 0));
    reconstruct(pi, 0, Mode::kD);
    return {pi, ucb_tuple(counts_, st_, pi, width_)};
  }

 private:
  enum class Mode { kG, kU, kE, kD };
  struct Choice {
    int action = 0;
    int k = -1;  // designated child
    int j = -1;  // deviating child
  };

  void visit() {
    if (stats_) ++stats_->node_visits;
  }

  double g(const Child& c) const {
    return c.target.is_terminal() ? weight_[c.target.index]
                                  : best_.subtree_value[c.target.index];
  }
  Opt u(const Child& c) const {
    if (c.target.is_terminal()) {
      const TerminalId t = c.target.index;
      return make_opt(weight_[t], counts_.n(t), width_);
    }
    return u_[c.target.index];
  }
  double e(const Child& c) const {
    return c.target.is_terminal() ? kNegInf : e_[c.target.index];
  }
  Opt d(const Child& c) const {
    return c.target.is_terminal() ? Opt{} : d_[c.target.index];
  }

  void load_g(std::span<const Child> kids) {
    gs_.resize(kids.size());
    for (std::size_t i = 0; i < kids.size(); ++i) {
      visit();
      gs_[i] = g(kids[i]);
    }
    excl_.build(gs_);
  }

  void solve_u() {
    u_.assign(st_.num_states(), Opt{});
    u_choice_.assign(st_.num_states(), Choice{});
    for (StateId s = st_.num_states(); s-- > 0;) {
      Opt best;
      Choice pick;
      for (int a = 0; a < st_.num_actions(s); ++a) {
        auto kids = st_.children(s, a);
        load_g(kids);
        for (std::size_t k = 0; k < kids.size(); ++k) {
          Opt child = u(kids[k]);
          Opt cand = make_opt(excl_.without(k) + child.raw, child.n, width_);
          if (better(cand, best)) {
            best = cand;
            pick = {a, static_cast<int>(k), -1};
          }
        }
      }
      u_[s] = best;
      u_choice_[s] = pick;
    }
  }

  void solve_deviators() {
    const int n = st_.num_states();
    e_.assign(n, kNegInf);
    e_choice_.assign(n, Choice{});
    d_.assign(n, Opt{});
    d_choice_.assign(n, Choice{});
    for (StateId s = n; s-- > 0;) {
      const int ref = best_.policy[s];
      double e_best = kNegInf;
      Choice e_pick;
      Opt d_best;
      Choice d_pick;
      for (int a = 0; a < st_.num_actions(s); ++a) {
        auto kids = st_.children(s, a);
        load_g(kids);
        if (a != ref) {
          if (excl_.total() > e_best) {
            e_best = excl_.total();
            e_pick = {a, -1, -1};
          }
          for (std::size_t k = 0; k < kids.size(); ++k) {
            Opt child = u(kids[k]);
            Opt cand =
                make_opt(excl_.without(k) + child.raw, child.n, width_);
            if (better(cand, d_best)) {
              d_best = cand;
              d_pick = {a, static_cast<int>(k), -1};
            }
          }
          continue;
        }
        for (std::size_t j = 0; j < kids.size(); ++j) {
          double cand = excl_.without(j) + e(kids[j]);
          if (cand > e_best) {
            e_best = cand;
            e_pick = {a, -1, static_cast<int>(j)};
          }
        }
        // Two best deviating children by E(c_j) - G(c_j), lowest index first.
        int j1 = -1, j2 = -1;
        double v1 = kNegInf, v2 = kNegInf;
        for (std::size_t j = 0; j < kids.size(); ++j) {
          const double ej = e(kids[j]);
          if (ej == kNegInf) continue;
          const double v = ej - gs_[j];
          if (v > v1) {
            j2 = j1;
            v2 = v1;
            j1 = static_cast<int>(j);
            v1 = v;
          } else if (v > v2) {
            j2 = static_cast<int>(j);
            v2 = v;
          }
        }
        for (std::size_t k = 0; k < kids.size(); ++k) {
          Opt dk = d(kids[k]);
          if (dk.valid) {
            Opt cand = make_opt(excl_.without(k) + dk.raw, dk.n, width_);
            if (better(cand, d_best)) {
              d_best = cand;
              d_pick = {a, static_cast<int>(k), static_cast<int>(k)};
            }
          }
          const int j = j1 != static_cast<int>(k) ? j1 : j2;
          if (j < 0) continue;
          Opt uk = u(kids[k]);
          double raw =
              excl_.total() - gs_[k] - gs_[j] + e(kids[j]) + uk.raw;
          Opt cand = make_opt(raw, uk.n, width_);
          if (better(cand, d_best)) {
            d_best = cand;
            d_pick = {a, static_cast<int>(k), j};
          }
        }
      }
      e_[s] = e_best;
      e_choice_[s] = e_pick;
      d_[s] = d_best;
      d_choice_[s] = d_pick;
    }
  }

  void reconstruct(Policy& pi, StateId root, Mode root_mode) const {
    std::vector<std::pair<StateId, Mode>> stack{{root, root_mode}};
    while (!stack.empty()) {
      auto [s, mode] = stack.back();
      stack.pop_back();
      Choice c;
      switch (mode) {
        case Mode::kG: c = {best_.policy[s], -1, -1}; break;
        case Mode::kU: c = u_choice_[s]; break;
        case Mode::kE: c = e_choice_[s]; break;
        case Mode::kD: c = d_choice_[s]; break;
      }
      pi[s] = c.action;
      const bool on_ref = c.action == best_.policy[s];
      auto kids = st_.children(s, c.action);
      for (std::size_t i = 0; i < kids.size(); ++i) {
        if (kids[i].target.is_terminal()) continue;
        const int idx = static_cast<int>(i);
        Mode next = Mode::kG;
        if (mode == Mode::kU) {
          if (idx == c.k) next = Mode::kU;
        } else if (mode == Mode::kE) {
          if (on_ref && idx == c.j) next = Mode::kE;
        } else if (mode == Mode::kD) {
          if (!on_ref) {
            if (idx == c.k) next = Mode::kU;
          } else if (c.j == c.k) {
            if (idx == c.k) next = Mode::kD;
          } else if (idx == c.k) {
            next = Mode::kU;
          } else if (idx == c.j) {
            next = Mode::kE;
          }
        }
        stack.push_back({kids[i].target.index, next});
      }
    }
  }

  const CountsTable& counts_;
  const TreeStructure& st_;
  const EmpiricalPlan& best_;
  const ConfidenceWidth& width_;
  PlannerStats* stats_;
  std::vector<double> weight_;
  std::vector<double> gs_;
  ExclusionSums excl_;
  std::vector<Opt> u_;
  std::vector<Choice> u_choice_;
  std::vector<double> e_;
  std::vector<Choice> e_choice_;
  std::vector<Opt> d_;
  std::vector<Choice> d_choice_;
};

// Dynamic program over count thresholds. For a fixed m, A(s) is the best
// subtree value among policies whose terminals all have count >= m, and B(s)
// the same restricted to policies where some terminal has count exactly m.
// Ad and Bd additionally require a deviation from a reference policy.
class ThresholdSolver {
 public:
  enum class Weights { kPooled, kUniform };

  ThresholdSolver(const CountsTable& counts, const TreeStructure& st,
                  Weights weights, const Policy* ref, PlannerStats* stats)
      : counts_(counts), st_(st), weights_(weights), ref_(ref),
        stats_(stats) {
    thresholds_.assign(counts.n().begin(), counts.n().end());
    std::sort(thresholds_.begin(), thresholds_.end());
    thresholds_.erase(std::unique(thresholds_.begin(), thresholds_.end()),
                      thresholds_.end());
  }

  // Best policy by value + width(m) over all thresholds. With include_zero
  // false, policies with unplayed terminals are skipped. Returns false when
  // no policy qualifies.
  bool solve(const ConfidenceWidth* width, bool include_zero, Policy& out) {
    const Mode target = ref_ ? Mode::kBd : Mode::kB;
    bool found = false;
    double best_score = kNegInf;
    std::int64_t best_m = 0;
    for (std::int64_t m : thresholds_) {
      if (m == 0 && !include_zero) continue;
      run(m);
      double v = value(0, target);
      if (v == kNegInf) continue;
      double score = width ? v + (*width)(m) : v;
      if (!found || score > best_score) {
        found = true;
        best_score = score;
        best_m = m;
      }
    }
    if (!found) return false;
    run(best_m);
    out = Policy(std::vector<int>(st_.num_states(), 0));
    reconstruct(out, target);
    return true;
  }

 private:
  enum Mode { kA = 0, kB = 1, kAd = 2, kBd = 3 };
  struct Choice {
    int action = 0;
    int j = -1;
    int l = -1;
  };

  double weight(TerminalId t, std::int64_t m) const {
    if (m == 0) return 0.0;
    const double rho = st_.rho(t);
    if (weights_ == Weights::kPooled)
      return static_cast<double>(counts_.n_plus(t)) /
             static_cast<double>(counts_.n(t)) * rho;
    return static_cast<double>(counts_.outcomes(t).prefix_sum(m)) /
           static_cast<double>(m) * rho;
  }

  double value(StateId s, int mode) const { return val_[4 * s + mode]; }

  double child_value(const Child& c, int mode, std::int64_t m) const {
    if (!c.target.is_terminal()) return value(c.target.index, mode);
    const TerminalId t = c.target.index;
    const std::int64_t n = counts_.n(t);
    if (mode == kA && n >= m) return weight(t, m);
    if (mode == kB && n == m) return weight(t, m);
    return kNegInf;
  }

  void run(std::int64_t m) {
    const int n_states = st_.num_states();
    val_.assign(4 * static_cast<std::size_t>(n_states), kNegInf);
    choice_.assign(4 * static_cast<std::size_t>(n_states), Choice{});
    for (StateId s = n_states; s-- > 0;) {
      double best[4] = {kNegInf, kNegInf, kNegInf, kNegInf};
      Choice pick[4];
      auto offer = [&](int mode, double v, Choice c) {
        if (v > best[mode]) {
          best[mode] = v;
          pick[mode] = c;
        }
      };
      for (int a = 0; a < st_.num_actions(s); ++a) {
        auto kids = st_.children(s, a);
        const std::size_t k = kids.size();
        a_.resize(k);
        bool all_valid = true;
        for (std::size_t i = 0; i < k; ++i) {
          if (stats_) ++stats_->node_visits;
          a_[i] = child_value(kids[i], kA, m);
          if (a_[i] == kNegInf) all_valid = false;
        }
        if (!all_valid) continue;
        excl_.build(a_);
        const double sum_a = excl_.total();
        offer(kA, sum_a, {a, -1, -1});
        double b_a = kNegInf;
        Choice b_pick;
        for (std::size_t j = 0; j < k; ++j) {
          double v = child_value(kids[j], kB, m);
          if (v == kNegInf) continue;
          v += excl_.without(j);
          if (v > b_a) {
            b_a = v;
            b_pick = {a, static_cast<int>(j), -1};
          }
        }
        if (b_a > kNegInf) offer(kB, b_a, b_pick);
        if (!ref_) continue;
        if (a != (*ref_)[s]) {
          offer(kAd, sum_a, {a, -1, -1});
          if (b_a > kNegInf) offer(kBd, b_a, b_pick);
          continue;
        }
        for (std::size_t j = 0; j < k; ++j) {
          if (kids[j].target.is_terminal()) continue;
          const StateId cj = kids[j].target.index;
          const double rest = excl_.without(j);
          if (value(cj, kAd) > kNegInf)
            offer(kAd, value(cj, kAd) + rest, {a, static_cast<int>(j), -1});
          if (value(cj, kBd) > kNegInf)
            offer(kBd, value(cj, kBd) + rest,
                  {a, static_cast<int>(j), static_cast<int>(j)});
          if (value(cj, kAd) == kNegInf) continue;
          for (std::size_t l = 0; l < k; ++l) {
            if (l == j) continue;
            double bl = child_value(kids[l], kB, m);
            if (bl == kNegInf) continue;
            offer(kBd, sum_a - a_[j] - a_[l] + value(cj, kAd) + bl,
                  {a, static_cast<int>(j), static_cast<int>(l)});
          }
        }
      }
      for (int mode = 0; mode < 4; ++mode) {
        val_[4 * s + mode] = best[mode];
        choice_[4 * s + mode] = pick[mode];
      }
    }
  }

  void reconstruct(Policy& pi, Mode root_mode) const {
    std::vector<std::pair<StateId, Mode>> stack{{0, root_mode}};
    while (!stack.empty()) {
      auto [s, mode] = stack.back();
      stack.pop_back();
      const Choice c = choice_[4 * s + mode];
      pi[s] = c.action;
      const bool on_ref = ref_ && c.action == (*ref_)[s];
      auto kids = st_.children(s, c.action);
      for (std::size_t i = 0; i < kids.size(); ++i) {
        if (kids[i].target.is_terminal()) continue;
        const int idx = static_cast<int>(i);
        Mode next = kA;
        switch (mode) {
          case kA: break;
          case kB:
            if (idx == c.j) next = kB;
            break;
          case kAd:
            if (on_ref && idx == c.j) next = kAd;
            break;
          case kBd:
            if (!on_ref) {
              if (idx == c.j) next = kB;
            } else if (c.j == c.l) {
              if (idx == c.j) next = kBd;
            } else if (idx == c.j) {
              next = kAd;
            } else if (idx == c.l) {
              next = kB;
            }
            break;
        }
        stack.push_back({kids[i].target.index, next});
      }
    }
  }

  const CountsTable& counts_;
  const TreeStructure& st_;
  Weights weights_;
  const Policy* ref_;
  PlannerStats* stats_;
  std::vector<std::int64_t> thresholds_;
  std::vector<double> val_;
  std::vector<Choice> choice_;
  std::vector<double> a_;
  ExclusionSums excl_;
};

}  // namespace

UcbTuple ucb_tuple(const CountsTable& counts, const TreeStructure& structure,
                   const Policy& pi, const ConfidenceWidth& width,
                   Estimate estimate) {
  auto x = consistent_terminals(structure, pi);
  UcbTuple tuple;
  tuple.n_star = play_count(counts, x);
  for (TerminalId t : x) {
    if (counts.n(t) == tuple.n_star) {
      tuple.sigma_star = t;
      break;
    }
  }
  if (tuple.n_star > 0)
    tuple.value = estimate == Estimate::kPooled
                      ? v_hat(counts, structure, x)
                      : v_hat_uniform(counts, structure, x);
  tuple.ucb = tuple.value + width(tuple.n_star);
  return tuple;
}

EmpiricalPlan best_empirical_policy(const CountsTable& counts,
                                    const TreeStructure& structure) {
  EmpiricalPlan plan;
  plan.policy = Policy::zeros(structure);
  plan.subtree_value.assign(structure.num_states(), 0.0);
  for (StateId s = structure.num_states(); s-- > 0;) {
    double best = kNegInf;
    for (int a = 0; a < structure.num_actions(s); ++a) {
      double v = 0.0;
      for (const Child& c : structure.children(s, a))
        v += c.target.is_terminal()
                 ? pooled_weight(counts, structure, c.target.index)
                 : plan.subtree_value[c.target.index];
      if (v > best) {
        best = v;
        plan.policy[s] = a;
      }
    }
    plan.subtree_value[s] = best;
  }
  plan.value = plan.subtree_value[0];
  return plan;
}

UcbPlan find_max_ucb(const CountsTable& counts,
                     const TreeStructure& structure,
                     const EmpiricalPlan& best, const ConfidenceWidth& width,
                     PlannerStats* stats) {
  PuSolver solver(counts, structure, best, width, stats);
  return solver.max_ucb();
}

UcbPlan second_max_ucb(const CountsTable& counts,
                       const TreeStructure& structure,
                       const EmpiricalPlan& best,
                       const ConfidenceWidth& width, PlannerStats* stats) {
  PuSolver solver(counts, structure, best, width, stats);
  UcbPlan first = solver.max_ucb();
  if (first.policy != canonical_form(structure, best.policy)) {
    if (stats) stats->second_pass = false;
    return first;
  }
  if (stats) stats->second_pass = true;
  return solver.max_ucb_deviating();
}

EmpiricalPlan best_uniform_policy(const CountsTable& counts,
                                  const TreeStructure& structure) {
  ThresholdSolver solver(counts, structure,
                         ThresholdSolver::Weights::kUniform, nullptr,
                         nullptr);
  EmpiricalPlan plan;
  if (!solver.solve(nullptr, false, plan.policy))
    throw EstimateError("every policy has an unplayed terminal");
  plan.value = v_hat_uniform(counts, structure, plan.policy);
  return plan;
}

UcbPlan find_max_ucb_uniform(const CountsTable& counts,
                             const TreeStructure& structure,
                             const ConfidenceWidth& width) {
  ThresholdSolver solver(counts, structure,
                         ThresholdSolver::Weights::kUniform, nullptr,
                         nullptr);
  UcbPlan plan;
  solver.solve(&width, true, plan.policy);
  plan.tuple =
      ucb_tuple(counts, structure, plan.policy, width, Estimate::kUniform);
  return plan;
}

UcbPlan second_max_ucb_uniform(const CountsTable& counts,
                               const TreeStructure& structure,
                               const Policy& best,
                               const ConfidenceWidth& width) {
  UcbPlan first = find_max_ucb_uniform(counts, structure, width);
  const Policy ref = canonical_form(structure, best);
  if (first.policy != ref) return first;
  ThresholdSolver solver(counts, structure,
                         ThresholdSolver::Weights::kUniform, &ref, nullptr);
  UcbPlan plan;
  if (!solver.solve(&width, true, plan.policy)) throw NoSecondPolicyError();
  plan.tuple =
      ucb_tuple(counts, structure, plan.policy, width, Estimate::kUniform);
  return plan;
}

UcbPlan find_max_ucb_by_threshold(const CountsTable& counts,
                                  const TreeStructure& structure,
                                  const ConfidenceWidth& width) {
  ThresholdSolver solver(counts, structure, ThresholdSolver::Weights::kPooled,
                         nullptr, nullptr);
  UcbPlan plan;
  solver.solve(&width, true, plan.policy);
  plan.tuple = ucb_tuple(counts, structure, plan.policy, width);
  return plan;
}

}  // namespace treebandit
