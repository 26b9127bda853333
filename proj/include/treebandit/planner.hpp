#ifndef TREEBANDIT_PLANNER_HPP
#define TREEBANDIT_PLANNER_HPP

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "treebandit/estimator.hpp"
#include "treebandit/tree_mdp.hpp"

namespace treebandit {

// Empirically best policy. `policy` holds the greedy action at every state,
// reached or not, and subtree_value[s] is the best estimated value of the
// subtree below s (pooled estimator only).
struct EmpiricalPlan {
  Policy policy;
  double value = 0.0;
  std::vector<double> subtree_value;
};

// ucb = value + width(n_star); sigma_star is the lowest-id terminal of the
// policy whose count equals n_star = n(policy).
struct UcbTuple {
  double ucb = 0.0;
  double value = 0.0;
  std::int64_t n_star = 0;
  TerminalId sigma_star = -1;
};

struct UcbPlan {
  Policy policy;  // canonical form
  UcbTuple tuple;
};

struct PlannerStats {
  std::int64_t node_visits = 0;
  bool second_pass = false;
};

class NoSecondPolicyError : public std::runtime_error {
 public:
  NoSecondPolicyError()
      : std::runtime_error("tree has a single policy class") {}
};

// Terminal-sum bottom-up pass; ties go to the lowest action.
EmpiricalPlan best_empirical_policy(const CountsTable& counts,
                                    const TreeStructure& structure);

// Maximum-UCB policy. Each (state, action) designates one child to carry the
// optimistic subtree and fills the siblings with their empirical best.
UcbPlan find_max_ucb(const CountsTable& counts,
                     const TreeStructure& structure,
                     const EmpiricalPlan& best, const ConfidenceWidth& width,
                     PlannerStats* stats = nullptr);

// Maximum-UCB policy among those whose terminal set differs from best's.
// Throws NoSecondPolicyError when there is only one class.
UcbPlan second_max_ucb(const CountsTable& counts,
                       const TreeStructure& structure,
                       const EmpiricalPlan& best,
                       const ConfidenceWidth& width,
                       PlannerStats* stats = nullptr);

// Variants on the truncated (uniform) estimator. Its value depends on the
// policy's own play count, so these enumerate the distinct counts m and solve
// one dynamic program per threshold. They need the outcome log.
EmpiricalPlan best_uniform_policy(const CountsTable& counts,
                                  const TreeStructure& structure);
UcbPlan find_max_ucb_uniform(const CountsTable& counts,
                             const TreeStructure& structure,
                             const ConfidenceWidth& width);
UcbPlan second_max_ucb_uniform(const CountsTable& counts,
                               const TreeStructure& structure,
                               const Policy& best,
                               const ConfidenceWidth& width);

// Threshold formulation of find_max_ucb on the pooled estimator. Slower, but
// an independent route to the same maximum.
UcbPlan find_max_ucb_by_threshold(const CountsTable& counts,
                                  const TreeStructure& structure,
                                  const ConfidenceWidth& width);

// Fills the tuple of a given policy from scratch.
UcbTuple ucb_tuple(const CountsTable& counts, const TreeStructure& structure,
                   const Policy& pi, const ConfidenceWidth& width,
                   Estimate estimate = Estimate::kPooled);

}  // namespace treebandit

#endif  // TREEBANDIT_PLANNER_HPP
