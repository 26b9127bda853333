#ifndef TREEBANDIT_HARNESS_HPP
#define TREEBANDIT_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "treebandit/estimator.hpp"
#include "treebandit/games.hpp"
#include "treebandit/oracle.hpp"

namespace treebandit {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// uniform | nash:alpha=F | file:PATH
struct OpponentDescriptor {
  enum class Kind { kUniform, kNash, kFile };
  Kind kind = Kind::kUniform;
  double alpha = 1.0 / 3.0;
  std::filesystem::path path;

  static OpponentDescriptor parse(const std::string& text);
  OpponentStrategy load(const GameSpec& spec) const;
};

enum class Algorithm { kLucbT, kLucbTUniform, kUcbT, kFlatLucb };
Algorithm parse_algorithm(std::string_view name);
std::string_view to_string(Algorithm algo);
bool is_pac(Algorithm algo);

// Default C for the practical bound, per game, role and algorithm.
double default_c(GameId game, Role role, Algorithm algo);

struct RunConfig {
  GameId game = GameId::kKuhn3;
  Role role = Role::kX;
  OpponentDescriptor opponent;
  Algorithm algo = Algorithm::kLucbT;
  double epsilon = 0.1;
  double delta = 0.05;
  BoundMode bound = BoundMode::kPractical;
  std::optional<double> c;  // default_c() when unset
  std::vector<std::uint64_t> seeds;
  // Episode budget of PAC learners (0 = none), horizon T of ucb-t.
  std::int64_t budget = 0;
  std::int64_t stride = 1000;
  std::filesystem::path out_dir;
  int threads = 0;  // 0: TREEBANDIT_THREADS or the hardware count

  double effective_c() const { return c ? *c : default_c(game, role, algo); }
  // Throws ConfigError.
  void validate() const;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::int64_t episodes = 0;
  std::int64_t batches = 0;
  bool stopped = false;
  double value = 0.0;  // true value of the returned (or final greedy) policy
  bool mistake = false;
  double regret = 0.0;  // cumulative over all episodes played
};

struct RunSummary {
  double optimal_value = 0.0;
  double mean_episodes = 0.0;
  double se_episodes = 0.0;
  double mistake_rate = 0.0;
  std::vector<SeedResult> seeds;
};

// Compiles the game, runs every seed, and writes progress.csv, runs.csv and
// summary.csv into out_dir (when set). A one-line report goes to `log`.
RunSummary run(const RunConfig& config, std::ostream* log = nullptr);

// Running sum of V(pi*) - V(class played), one entry per episode. Throws
// std::out_of_range for a class the report does not know.
std::vector<double> compute_regret(
    const std::vector<std::uint64_t>& played_classes,
    const GapReport& report);

// Sample mean and standard error (sample sd / sqrt(n)); se is 0 for n < 2.
std::pair<double, double> mean_and_se(const std::vector<double>& values);

int worker_count(int requested);

}  // namespace treebandit

#endif  // TREEBANDIT_HARNESS_HPP
