#ifndef TREEBANDIT_GAMES_HPP
#define TREEBANDIT_GAMES_HPP

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "treebandit/tree_mdp.hpp"

namespace treebandit {

enum class GameId { kKuhn3, kKuhn5, kLeduc };
// x moves first in every betting round, o second.
enum class Role { kX, kO };

GameId parse_game(std::string_view name);  // kuhn3 | kuhn5 | leduc
Role parse_role(std::string_view name);    // x | o
std::string_view to_string(GameId game);
std::string_view to_string(Role role);

struct GameSpec {
  GameId game = GameId::kKuhn3;
  Role role = Role::kX;
  double u_min = -2.0;
  double u_max = 2.0;

  static GameSpec make(GameId game, Role role);
  // Size of the action alphabet: check, bid, call, fold (+ raise in Leduc).
  int num_actions() const { return game == GameId::kLeduc ? 5 : 4; }
};

// Behavioural strategy of the non-learning player: infoset key to a
// distribution over action names.
//
// Infoset keys: "<card>:<history>" in Kuhn, e.g. "Q:kb"; in Leduc
// "<card>:<round-1 history>" before the community card and
// "<card><community>:<round-1 history>/<round-2 history>" after it, e.g.
// "KJ:bc/k". Cards are J, Q, K (and T, A in 5-card Kuhn). History letters:
// k check, b bid, c call, r raise, f fold.
class OpponentStrategy {
 public:
  using Distribution = std::map<std::string, double>;

  void set(const std::string& key, Distribution distribution) {
    table_[key] = std::move(distribution);
  }
  const Distribution* find(const std::string& key) const {
    auto it = table_.find(key);
    return it == table_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, Distribution>& entries() const {
    return table_;
  }
  bool operator==(const OpponentStrategy&) const = default;

 private:
  std::map<std::string, Distribution> table_;
};

class StrategyError : public std::runtime_error {
 public:
  StrategyError(int line, const std::string& message);
  explicit StrategyError(const std::string& message)
      : std::runtime_error(message) {}
  // 0 when the error is not tied to a line.
  int line() const { return line_; }

 private:
  int line_ = 0;
};

class CompileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InfosetInfo {
  std::string key;
  std::vector<std::string> actions;  // legal action names in alphabet order
};

// Every opponent information set of the game, sorted by key.
std::vector<InfosetInfo> opponent_infosets(const GameSpec& spec);

OpponentStrategy uniform_opponent(const GameSpec& spec);

// The closed-form equilibrium family of 3-card Kuhn poker. When the agent is
// x the opponent plays o's (unique) equilibrium strategy; when the agent is o,
// x bids the jack with probability alpha. alpha in [0, 1/3].
OpponentStrategy kuhn_nash_opponent(const GameSpec& spec, double alpha);

// Text format, one record per line: "<infoset_key> <action_name> <prob>".
// '#' starts a comment line. With a spec, unknown keys and illegal actions
// are rejected too. Throws StrategyError.
OpponentStrategy load_strategy(std::istream& in,
                               const GameSpec* spec = nullptr);
OpponentStrategy load_strategy(const std::filesystem::path& path,
                               const GameSpec* spec = nullptr);
void write_strategy(std::ostream& out, const OpponentStrategy& strategy);

// Throws StrategyError on a missing infoset, illegal action or a
// distribution that does not sum to one.
void check_strategy(const GameSpec& spec, const OpponentStrategy& strategy);

// The agent's decision tree against a fixed opponent. States are the agent's
// action-observation histories below a chance root (the deal); terminals are
// the agent's view of finished games, with return equal to the expected
// normalized utility given that view. Throws CompileError.
TreeMdp compile(const GameSpec& spec, const OpponentStrategy& opponent);

// The same tree together with the infoset key of every state (empty for the
// chance root) and the history key of every terminal, indexed by id.
struct CompiledGame {
  TreeMdp mdp;
  std::vector<std::string> state_keys;
  std::vector<std::string> terminal_keys;
};
CompiledGame compile_game(const GameSpec& spec,
                          const OpponentStrategy& opponent);

}  // namespace treebandit

#endif  // TREEBANDIT_GAMES_HPP
