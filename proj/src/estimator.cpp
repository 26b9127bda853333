#include "treebandit/estimator.hpp"

#include <algorithm>
#include <bit>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace treebandit {

void OutcomeLog::append(bool reached) {
  const std::int64_t bit = length_ & 63;
  if (bit == 0) {
    ones_before_.push_back(
        words_.empty() ? 0 : ones_before_.back() + std::popcount(words_.back()));
    words_.push_back(0);
  }
  if (reached) words_.back() |= std::uint64_t{1} << bit;
  ++length_;
}

std::int64_t OutcomeLog::prefix_sum(std::int64_t m) const {
  if (m <= 0) return 0;
  if (m > length_)
    throw ContractViolation(fmt::format(
        "prefix of length {} requested from a log of length {}", m, length_));
  const std::int64_t w = m >> 6;
  const std::int64_t bits = m & 63;
  if (bits == 0)
    return w == static_cast<std::int64_t>(words_.size())
               ? ones_before_.back() + std::popcount(words_.back())
               : ones_before_[w];
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  return ones_before_[w] + std::popcount(words_[w] & mask);
}

CountsTable::CountsTable(std::int32_t num_terminals, bool keep_outcome_log)
    : n_(num_terminals, 0), n_plus_(num_terminals, 0) {
  if (keep_outcome_log) logs_.resize(num_terminals);
}

CountsTable CountsTable::from_counts(std::vector<std::int64_t> n,
                                     std::vector<std::int64_t> n_plus,
                                     std::int64_t episodes) {
  if (n.size() != n_plus.size())
    throw ContractViolation("n and n_plus differ in length");
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n_plus[i] < 0 || n_plus[i] > n[i] || n[i] > episodes)
      throw ContractViolation(fmt::format(
          "terminal {}: need 0 <= n_plus <= n <= episodes, got {} {} {}", i,
          n_plus[i], n[i], episodes));
  }
  CountsTable table(0);
  table.n_ = std::move(n);
  table.n_plus_ = std::move(n_plus);
  table.episodes_ = episodes;
  return table;
}

void CountsTable::record_episode(std::span<const TerminalId> consistent,
                                 TerminalId reached) {
  if (std::find(consistent.begin(), consistent.end(), reached) ==
      consistent.end())
    throw ContractViolation(fmt::format(
        "terminal {} reached but not consistent with the played policy",
        reached));
  for (TerminalId sigma : consistent) {
    ++n_[sigma];
    if (!logs_.empty()) logs_[sigma].append(sigma == reached);
  }
  ++n_plus_[reached];
  ++episodes_;
}

void CountsTable::write_csv(std::ostream& out) const {
  out << "terminal_id,n,n_plus\n";
  for (std::size_t i = 0; i < n_.size(); ++i)
    fmt::print(out, "{},{},{}\n", i, n_[i], n_plus_[i]);
}

double q_hat(const CountsTable& counts, TerminalId sigma) {
  if (counts.n(sigma) == 0)
    throw EstimateError(
        fmt::format("terminal {} has not been played", sigma));
  return static_cast<double>(counts.n_plus(sigma)) /
         static_cast<double>(counts.n(sigma));
}

double v_hat(const CountsTable& counts, const TreeStructure& structure,
             std::span<const TerminalId> terminals) {
  double v = 0.0;
  for (TerminalId sigma : terminals)
    v += q_hat(counts, sigma) * structure.rho(sigma);
  return v;
}

double v_hat(const CountsTable& counts, const TreeStructure& structure,
             const Policy& pi) {
  auto x = consistent_terminals(structure, pi);
  return v_hat(counts, structure, x);
}

double v_hat_uniform(const CountsTable& counts,
                     const TreeStructure& structure,
                     std::span<const TerminalId> terminals) {
  if (!counts.has_outcome_log())
    throw ContractViolation("uniform estimate needs the outcome log");
  const std::int64_t m = play_count(counts, terminals);
  if (m == 0) throw EstimateError("policy has an unplayed terminal");
  double v = 0.0;
  for (TerminalId sigma : terminals)
    v += static_cast<double>(counts.outcomes(sigma).prefix_sum(m)) /
         static_cast<double>(m) * structure.rho(sigma);
  return v;
}

double v_hat_uniform(const CountsTable& counts,
                     const TreeStructure& structure, const Policy& pi) {
  auto x = consistent_terminals(structure, pi);
  return v_hat_uniform(counts, structure, x);
}

std::int64_t play_count(const CountsTable& counts,
                        std::span<const TerminalId> terminals) {
  std::int64_t m = std::numeric_limits<std::int64_t>::max();
  for (TerminalId sigma : terminals) m = std::min(m, counts.n(sigma));
  return terminals.empty() ? 0 : m;
}

std::int64_t play_count(const CountsTable& counts,
                        const TreeStructure& structure, const Policy& pi) {
  auto x = consistent_terminals(structure, pi);
  return play_count(counts, x);
}

BoundConfig BoundConfig::for_tree(const TreeStructure& structure,
                                  Schedule schedule, BoundMode mode,
                                  double delta, double epsilon, double c) {
  BoundConfig config;
  config.mode = mode;
  config.schedule = schedule;
  config.delta = delta;
  config.epsilon = epsilon;
  config.c = c;
  config.num_terminals = structure.num_terminals();
  config.log_num_policies =
      structure.num_decision_states() *
      std::log(static_cast<double>(structure.action_alphabet_size()));
  return config;
}

void BoundConfig::check() const {
  if (!(c > 0.0)) throw std::invalid_argument("C must be positive");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("delta must lie in (0, 1)");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("epsilon must lie in (0, 1)");
  if (!(log_num_policies >= 0.0))
    throw std::invalid_argument("log |Pi| must be nonnegative");
}

double delta_schedule(std::int64_t t, const BoundConfig& config) {
  const double log_t = std::log(static_cast<double>(t));
  const double sigma = config.num_terminals;
  switch (config.schedule) {
    case Schedule::kLucb:
      return std::log(3.0 / config.delta) + config.log_num_policies +
             (sigma + 4.0) * log_t;
    case Schedule::kLucbUniform:
      return std::log(3.0 / config.delta) + config.log_num_policies +
             5.0 * log_t;
    case Schedule::kUcb:
      return config.log_num_policies + (sigma + 4.0) * log_t;
    case Schedule::kFlat:
      return std::log(3.0 / config.delta) + config.log_num_policies +
             4.0 * log_t;
  }
  return 0.0;
}

double log_inverse_delta(std::int64_t t, const BoundConfig& config) {
  if (config.mode == BoundMode::kPractical)
    return std::log(static_cast<double>(t)) - std::log(config.delta);
  return delta_schedule(t, config);
}

namespace {

double width_constant(const BoundConfig& config) {
  if (config.mode == BoundMode::kPractical) return config.c;
  return config.schedule == Schedule::kFlat ? 0.5 : 8.0 / 3.0;
}

}  // namespace

double beta(std::int64_t m, double log_inv, const BoundConfig& config) {
  if (m <= 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(width_constant(config) * log_inv / static_cast<double>(m));
}

ConfidenceWidth::ConfidenceWidth(const BoundConfig& config, std::int64_t t)
    : scale_(width_constant(config) * log_inverse_delta(t, config)) {}

ConfidenceWidth ConfidenceWidth::zero() { return ConfidenceWidth(); }

ConfidenceWidth ConfidenceWidth::for_log_inverse(const BoundConfig& config,
                                                 double log_inv) {
  ConfidenceWidth w;
  w.scale_ = width_constant(config) * log_inv;
  return w;
}

namespace {

struct EstimateAndCount {
  double value;
  std::int64_t m;
};

EstimateAndCount estimate(const CountsTable& counts,
                          const TreeStructure& structure, const Policy& pi,
                          Estimate kind) {
  auto x = consistent_terminals(structure, pi);
  const std::int64_t m = play_count(counts, x);
  if (m == 0) return {0.0, 0};
  return {kind == Estimate::kPooled ? v_hat(counts, structure, x)
                                    : v_hat_uniform(counts, structure, x),
          m};
}

}  // namespace

double ucb(const CountsTable& counts, const TreeStructure& structure,
           const Policy& pi, const ConfidenceWidth& width, Estimate kind) {
  auto [v, m] = estimate(counts, structure, pi, kind);
  if (m == 0) return std::numeric_limits<double>::infinity();
  return v + width(m);
}

double lcb(const CountsTable& counts, const TreeStructure& structure,
           const Policy& pi, const ConfidenceWidth& width, Estimate kind) {
  auto [v, m] = estimate(counts, structure, pi, kind);
  if (m == 0) return -std::numeric_limits<double>::infinity();
  return std::min(v, 1.0) - width(m);
}

}  // namespace treebandit
