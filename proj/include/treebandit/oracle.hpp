#ifndef TREEBANDIT_ORACLE_HPP
#define TREEBANDIT_ORACLE_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "treebandit/estimator.hpp"
#include "treebandit/tree_mdp.hpp"

namespace treebandit {

// Ground truth by exhaustive enumeration, for trees small enough to list.

inline constexpr std::size_t kDefaultClassGuard = std::size_t{1} << 16;

class GuardExceededError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Number of X-classes, saturating at max + 1.
std::size_t count_policy_classes(const TreeStructure& structure,
                                 std::size_t max = SIZE_MAX - 1);

// One canonical policy per distinct X(pi), lowest actions first.
std::vector<Policy> enumerate_policy_classes(
    const TreeStructure& structure, std::size_t guard = kDefaultClassGuard);

struct ClassGap {
  Policy policy;
  std::uint64_t hash = 0;
  double value = 0.0;
  double delta = 0.0;
  double delta_eps = 0.0;
};

struct TerminalGap {
  double delta_eps = 0.0;
  // Empty when every policy through the terminal is optimal.
  std::optional<double> delta_min;
  std::optional<double> delta_max;
};

struct GapReport {
  double epsilon = 0.0;
  double optimal_value = 0.0;
  double second_value = 0.0;
  std::size_t optimal_class = 0;  // pi*, the lowest-id optimal class
  std::vector<std::size_t> optimal_classes;
  std::vector<ClassGap> classes;
  std::vector<TerminalGap> terminals;

  // Index of the class with the given X hash, if any.
  std::optional<std::size_t> find(std::uint64_t hash) const;
  // class_id,value,delta,delta_eps
  void write_class_csv(std::ostream& out) const;
  // terminal_id,delta_eps_sigma,delta_min,delta_max ("NA" when undefined)
  void write_terminal_csv(std::ostream& out) const;

  std::unordered_map<std::uint64_t, std::size_t> by_hash;
};

// Classes within this distance of the optimum count as optimal.
inline constexpr double kOptimalTolerance = 1e-12;

GapReport gap_report(const TreeMdp& mdp, double epsilon,
                     std::size_t guard = kDefaultClassGuard);

struct BruteForceUcb {
  Policy policy;
  double ucb = 0.0;
};

// Maximum UCB over every class; ties go to the earliest enumerated class.
BruteForceUcb brute_force_max_ucb(const CountsTable& counts,
                                  const TreeStructure& structure,
                                  const ConfidenceWidth& width,
                                  Estimate estimate = Estimate::kPooled,
                                  std::size_t guard = kDefaultClassGuard);

// A block of consecutive plays of one policy.
struct SchedulePart {
  Policy policy;
  std::int64_t plays = 0;
};

struct CoverageResult {
  std::int64_t replications = 0;
  std::int64_t upper_violations = 0;  // V(pi) >= ucb
  std::int64_t lower_violations = 0;  // V(pi) <= lcb
  std::int64_t play_count = 0;        // n(pi) at the end of the schedule
  double true_value = 0.0;

  double upper_rate() const {
    return static_cast<double>(upper_violations) / replications;
  }
  double lower_rate() const {
    return static_cast<double>(lower_violations) / replications;
  }
};

class InfeasibleScheduleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Replays the schedule (parts interleaved round-robin, one play at a time)
// `replications` times and counts how often the bounds on pi miss V(pi).
CoverageResult coverage_test(const TreeMdp& mdp, const Policy& pi,
                             const std::vector<SchedulePart>& schedule,
                             const ConfidenceWidth& width,
                             std::int64_t replications, std::uint64_t seed);

// P[X >= k] for X ~ Binomial(n, p).
double binomial_upper_tail(std::int64_t k, std::int64_t n, double p);

}  // namespace treebandit

#endif  // TREEBANDIT_ORACLE_HPP
