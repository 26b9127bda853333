#ifndef TREEBANDIT_ESTIMATOR_HPP
#define TREEBANDIT_ESTIMATOR_HPP

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "treebandit/tree_mdp.hpp"

namespace treebandit {

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised when an estimate needs a terminal that has never been played.
class EstimateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Outcome bits of one terminal in play order, with per-word prefix counts so
// that the number of ones among the first m outcomes is O(1).
class OutcomeLog {
 public:
  void append(bool reached);
  std::int64_t length() const { return length_; }
  std::int64_t prefix_sum(std::int64_t m) const;
  bool outcome(std::int64_t i) const {
    return (words_[i >> 6] >> (i & 63)) & 1u;
  }

 private:
  std::vector<std::uint64_t> words_;
  std::vector<std::int64_t> ones_before_;  // ones in words_[0, w)
  std::int64_t length_ = 0;
};

class CountsTable {
 public:
  explicit CountsTable(std::int32_t num_terminals,
                       bool keep_outcome_log = false);

  // Table with given counts and no outcome log, for tests and replays.
  static CountsTable from_counts(std::vector<std::int64_t> n,
                                 std::vector<std::int64_t> n_plus,
                                 std::int64_t episodes);

  std::int32_t num_terminals() const {
    return static_cast<std::int32_t>(n_.size());
  }
  std::int64_t n(TerminalId sigma) const { return n_[sigma]; }
  std::int64_t n_plus(TerminalId sigma) const { return n_plus_[sigma]; }
  std::span<const std::int64_t> n() const { return n_; }
  std::span<const std::int64_t> n_plus() const { return n_plus_; }
  std::int64_t episodes() const { return episodes_; }
  // Index of the next episode, t = episodes + 1.
  std::int64_t episode_index() const { return episodes_ + 1; }

  // One played episode: every consistent terminal gains a play, the reached
  // one gains a hit.
  void record_episode(std::span<const TerminalId> consistent,
                      TerminalId reached);

  bool has_outcome_log() const { return !logs_.empty(); }
  const OutcomeLog& outcomes(TerminalId sigma) const { return logs_[sigma]; }

  // terminal_id,n,n_plus
  void write_csv(std::ostream& out) const;

 private:
  std::vector<std::int64_t> n_;
  std::vector<std::int64_t> n_plus_;
  std::vector<OutcomeLog> logs_;
  std::int64_t episodes_ = 0;
};

double q_hat(const CountsTable& counts, TerminalId sigma);

// Sum of q_hat * rho over the given terminals (or over X(pi)); not clipped.
double v_hat(const CountsTable& counts, const TreeStructure& structure,
             std::span<const TerminalId> terminals);
double v_hat(const CountsTable& counts, const TreeStructure& structure,
             const Policy& pi);

// Same, using only the first play_count outcomes of every terminal. Needs
// the outcome log.
double v_hat_uniform(const CountsTable& counts,
                     const TreeStructure& structure,
                     std::span<const TerminalId> terminals);
double v_hat_uniform(const CountsTable& counts,
                     const TreeStructure& structure, const Policy& pi);

std::int64_t play_count(const CountsTable& counts,
                        std::span<const TerminalId> terminals);
std::int64_t play_count(const CountsTable& counts,
                        const TreeStructure& structure, const Policy& pi);

enum class BoundMode { kTheory, kPractical };

// Which union bound sets the per-iteration mistake probability.
//   kLucb:        delta / (3 |Pi| t^(|Sigma|+4))
//   kLucbUniform: delta / (3 |Pi| t^5)
//   kUcb:         1 / (|Pi| t^(|Sigma|+4))
//   kFlat:        delta / (3 #arms t^4), Hoeffding width
enum class Schedule { kLucb, kLucbUniform, kUcb, kFlat };

struct BoundConfig {
  BoundMode mode = BoundMode::kTheory;
  double c = 0.1;
  double delta = 0.05;
  double epsilon = 0.1;
  Schedule schedule = Schedule::kLucb;
  // ln |Pi| = |S| ln |A|, or ln(#arms) for the flat schedule.
  double log_num_policies = 0.0;
  std::int32_t num_terminals = 0;

  static BoundConfig for_tree(const TreeStructure& structure,
                              Schedule schedule, BoundMode mode,
                              double delta, double epsilon, double c);
  // Throws std::invalid_argument.
  void check() const;
};

// ln(1/delta_eff(t)) of the configured schedule, whatever the mode.
double delta_schedule(std::int64_t t, const BoundConfig& config);

// The log term inside the width: delta_schedule in theory mode, ln(t/delta)
// in practical mode.
double log_inverse_delta(std::int64_t t, const BoundConfig& config);

// Width for m plays given log_inv = log_inverse_delta(...). Infinite for m=0.
double beta(std::int64_t m, double log_inv, const BoundConfig& config);

// beta(., log_inverse_delta(t), config) with the constant folded in once.
class ConfidenceWidth {
 public:
  ConfidenceWidth(const BoundConfig& config, std::int64_t t);
  // A width that is identically zero, which turns UCB maximization into
  // value maximization.
  static ConfidenceWidth zero();
  // Width for a given ln(1/delta), bypassing the schedule.
  static ConfidenceWidth for_log_inverse(const BoundConfig& config,
                                         double log_inv);

  double operator()(std::int64_t m) const {
    if (m <= 0) return std::numeric_limits<double>::infinity();
    return std::sqrt(scale_ / static_cast<double>(m));
  }
  double scale() const { return scale_; }

 private:
  ConfidenceWidth() = default;
  double scale_ = 0.0;
};

enum class Estimate { kPooled, kUniform };

// ucb = v + beta; lcb = min(v, 1) - beta. A zero play count gives +inf / -inf.
double ucb(const CountsTable& counts, const TreeStructure& structure,
           const Policy& pi, const ConfidenceWidth& width,
           Estimate estimate = Estimate::kPooled);
double lcb(const CountsTable& counts, const TreeStructure& structure,
           const Policy& pi, const ConfidenceWidth& width,
           Estimate estimate = Estimate::kPooled);

}  // namespace treebandit

#endif  // TREEBANDIT_ESTIMATOR_HPP
