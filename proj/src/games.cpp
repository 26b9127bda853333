#include "treebandit/games.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace treebandit {
namespace {

enum Action { kCheck, kBid, kCall, kRaise, kFold };
constexpr std::array<std::string_view, 5> kActionNames = {
    "check", "bid", "call", "raise", "fold"};
constexpr std::array<char, 5> kActionLetters = {'k', 'b', 'c', 'r', 'f'};

constexpr double kSumTolerance = 1e-9;

struct Rules {
  GameId game;

  bool leduc() const { return game == GameId::kLeduc; }
  int rounds() const { return leduc() ? 2 : 1; }
  int bet(int round) const { return leduc() ? (round == 0 ? 2 : 4) : 1; }
  char card_letter(int card) const {
    switch (game) {
      case GameId::kKuhn3: return "JQK"[card];
      case GameId::kKuhn5: return "TJQKA"[card];
      case GameId::kLeduc: return "JQK"[card / 2];
    }
    return '?';
  }
  int rank(int card) const { return leduc() ? card / 2 : card; }
  int deck_size() const {
    switch (game) {
      case GameId::kKuhn3: return 3;
      case GameId::kKuhn5: return 5;
      case GameId::kLeduc: return 6;
    }
    return 0;
  }
};

// Position in the full game (both players' cards known).
struct GameState {
  std::array<int, 2> card{};
  int community = -1;
  int round = 0;
  std::array<std::string, 2> history;
  std::array<int, 2> contrib{1, 1};
  int to_act = 0;
  bool facing = false;  // a bid or raise is pending
  bool raised = false;  // the current round already had a raise
  int folded = -1;
  bool finished = false;
  bool needs_community = false;
};

std::vector<int> legal_actions(const Rules& rules, const GameState& s) {
  if (!s.facing) return {kCheck, kBid};
  if (rules.leduc() && !s.raised) return {kCall, kRaise, kFold};
  return {kCall, kFold};
}

void end_round(const Rules& rules, GameState& s) {
  if (s.round + 1 >= rules.rounds()) {
    s.finished = true;
    return;
  }
  ++s.round;
  s.to_act = 0;
  s.facing = false;
  s.raised = false;
  s.needs_community = true;
}

GameState apply(const Rules& rules, GameState s, int action) {
  const int p = s.to_act;
  const int q = 1 - p;
  s.history[s.round] += kActionLetters[action];
  switch (action) {
    case kCheck:
      if (s.history[s.round] == "kk") {
        end_round(rules, s);
        return s;
      }
      break;
    case kBid:
      s.contrib[p] += rules.bet(s.round);
      s.facing = true;
      break;
    case kRaise:
      s.contrib[p] = s.contrib[q] + rules.bet(s.round);
      s.raised = true;
      break;
    case kCall:
      s.contrib[p] = s.contrib[q];
      end_round(rules, s);
      return s;
    case kFold:
      s.folded = p;
      s.finished = true;
      return s;
  }
  s.to_act = q;
  return s;
}

// Utility of player p in a finished game.
int utility(const Rules& rules, const GameState& s, int p) {
  const int q = 1 - p;
  if (s.folded >= 0) return s.folded == p ? -s.contrib[p] : s.contrib[q];
  auto strength = [&](int player) {
    const int r = rules.rank(s.card[player]);
    if (s.community >= 0 && r == rules.rank(s.community)) return 100 + r;
    return r;
  };
  const int a = strength(p);
  const int b = strength(q);
  if (a > b) return s.contrib[q];
  if (a < b) return -s.contrib[p];
  return 0;
}

std::string view_key(const Rules& rules, const GameState& s, int p) {
  std::string key(1, rules.card_letter(s.card[p]));
  if (s.community >= 0) key += rules.card_letter(s.community);
  key += ':';
  key += s.history[0];
  if (s.round >= 1 && rules.leduc()) {
    key += '/';
    key += s.history[1];
  }
  return key;
}

// Enumerates every full game history, carrying two path weights: one under
// the real opponent and one under a uniform opponent. Chance scales both;
// on_decision decides how each legal action scales them.
struct Walker {
  using Recurse = std::function<void(int, double, double)>;

  const Rules& rules;
  std::function<void(const GameState&, double, double)> on_terminal;
  std::function<void(const GameState&, double, double, const Recurse&)>
      on_decision;

  void walk(const GameState& s, double w, double wf) {
    if (s.finished) {
      on_terminal(s, w, wf);
      return;
    }
    if (s.needs_community) {
      std::vector<int> deck;
      for (int c = 0; c < rules.deck_size(); ++c)
        if (c != s.card[0] && c != s.card[1]) deck.push_back(c);
      const double share = 1.0 / static_cast<double>(deck.size());
      for (int c : deck) {
        GameState next = s;
        next.community = c;
        next.needs_community = false;
        walk(next, w * share, wf * share);
      }
      return;
    }
    on_decision(s, w, wf, [&](int action, double factor, double factor_f) {
      walk(apply(rules, s, action), w * factor, wf * factor_f);
    });
  }

  void walk_all_deals() {
    const int n = rules.deck_size();
    const double p = 1.0 / (n * (n - 1));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        GameState s;
        s.card = {i, j};
        walk(s, p, p);
      }
    }
  }
};

std::string action_list(const std::vector<int>& actions) {
  std::string out;
  for (int a : actions) {
    if (!out.empty()) out += ", ";
    out += kActionNames[a];
  }
  return out;
}

}  // namespace

GameId parse_game(std::string_view name) {
  if (name == "kuhn3") return GameId::kKuhn3;
  if (name == "kuhn5") return GameId::kKuhn5;
  if (name == "leduc") return GameId::kLeduc;
  throw std::invalid_argument(fmt::format("unknown game '{}'", name));
}

Role parse_role(std::string_view name) {
  if (name == "x") return Role::kX;
  if (name == "o") return Role::kO;
  throw std::invalid_argument(fmt::format("unknown role '{}'", name));
}

std::string_view to_string(GameId game) {
  switch (game) {
    case GameId::kKuhn3: return "kuhn3";
    case GameId::kKuhn5: return "kuhn5";
    case GameId::kLeduc: return "leduc";
  }
  return "?";
}

std::string_view to_string(Role role) { return role == Role::kX ? "x" : "o"; }

GameSpec GameSpec::make(GameId game, Role role) {
  GameSpec spec;
  spec.game = game;
  spec.role = role;
  spec.u_min = game == GameId::kLeduc ? -13.0 : -2.0;
  spec.u_max = -spec.u_min;
  return spec;
}

StrategyError::StrategyError(int line, const std::string& message)
    : std::runtime_error(fmt::format("line {}: {}", line, message)),
      line_(line) {}

std::vector<InfosetInfo> opponent_infosets(const GameSpec& spec) {
  const Rules rules{spec.game};
  const int opponent = spec.role == Role::kX ? 1 : 0;
  std::map<std::string, std::vector<int>> found;
  Walker walker{rules, [](const GameState&, double, double) {},
                [&](const GameState& s, double, double,
                    const Walker::Recurse& recurse) {
                  auto legal = legal_actions(rules, s);
                  if (s.to_act == opponent)
                    found.emplace(view_key(rules, s, opponent), legal);
                  for (int a : legal) recurse(a, 1.0, 1.0);
                }};
  walker.walk_all_deals();
  std::vector<InfosetInfo> out;
  for (auto& [key, legal] : found) {
    InfosetInfo info{key, {}};
    for (int a : legal) info.actions.emplace_back(kActionNames[a]);
    out.push_back(std::move(info));
  }
  return out;
}

OpponentStrategy uniform_opponent(const GameSpec& spec) {
  OpponentStrategy strategy;
  for (const auto& info : opponent_infosets(spec)) {
    OpponentStrategy::Distribution d;
    for (const auto& a : info.actions)
      d[a] = 1.0 / static_cast<double>(info.actions.size());
    strategy.set(info.key, std::move(d));
  }
  return strategy;
}

OpponentStrategy kuhn_nash_opponent(const GameSpec& spec, double alpha) {
  if (spec.game != GameId::kKuhn3)
    throw std::invalid_argument(
        "the closed-form equilibrium exists only for 3-card Kuhn poker");
  if (!(alpha >= 0.0 && alpha <= 1.0 / 3.0 + 1e-12))
    throw std::invalid_argument("alpha must lie in [0, 1/3]");
  OpponentStrategy s;
  auto two = [](const char* a, double pa, const char* b) {
    return OpponentStrategy::Distribution{{a, pa}, {b, 1.0 - pa}};
  };
  if (spec.role == Role::kX) {
    // Opponent is o.
    s.set("J:b", two("call", 0.0, "fold"));
    s.set("Q:b", two("call", 1.0 / 3.0, "fold"));
    s.set("K:b", two("call", 1.0, "fold"));
    s.set("J:k", two("bid", 1.0 / 3.0, "check"));
    s.set("Q:k", two("bid", 0.0, "check"));
    s.set("K:k", two("bid", 1.0, "check"));
  } else {
    s.set("J:", two("bid", alpha, "check"));
    s.set("Q:", two("bid", 0.0, "check"));
    s.set("K:", two("bid", 3.0 * alpha, "check"));
    s.set("J:kb", two("call", 0.0, "fold"));
    s.set("Q:kb", two("call", alpha + 1.0 / 3.0, "fold"));
    s.set("K:kb", two("call", 1.0, "fold"));
  }
  return s;
}

OpponentStrategy load_strategy(std::istream& in, const GameSpec* spec) {
  std::map<std::string, std::vector<std::string>> legal;
  if (spec)
    for (auto& info : opponent_infosets(*spec))
      legal.emplace(info.key, info.actions);

  OpponentStrategy strategy;
  std::map<std::string, OpponentStrategy::Distribution> table;
  std::map<std::string, int> first_line;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::istringstream fields(raw);
    std::string key;
    if (!(fields >> key) || key.front() == '#') continue;
    std::string action;
    std::string prob_text;
    std::string extra;
    if (!(fields >> action >> prob_text) || (fields >> extra))
      throw StrategyError(line_no,
                          "expected '<infoset_key> <action> <probability>'");
    double prob = 0.0;
    auto [ptr, ec] = std::from_chars(
        prob_text.data(), prob_text.data() + prob_text.size(), prob);
    if (ec != std::errc() || ptr != prob_text.data() + prob_text.size())
      throw StrategyError(line_no,
                          fmt::format("bad probability '{}'", prob_text));
    if (!(prob >= 0.0 && prob <= 1.0))
      throw StrategyError(line_no,
                          fmt::format("probability {} outside [0, 1]", prob));
    if (spec) {
      auto it = legal.find(key);
      if (it == legal.end())
        throw StrategyError(line_no,
                            fmt::format("unknown infoset key '{}'", key));
      if (std::find(it->second.begin(), it->second.end(), action) ==
          it->second.end())
        throw StrategyError(
            line_no, fmt::format("action '{}' is not legal at '{}'", action,
                                 key));
    } else if (std::find(kActionNames.begin(), kActionNames.end(), action) ==
               kActionNames.end()) {
      throw StrategyError(line_no, fmt::format("unknown action '{}'", action));
    }
    first_line.emplace(key, line_no);
    if (!table[key].emplace(action, prob).second)
      throw StrategyError(line_no,
                          fmt::format("duplicate action '{}' at '{}'", action,
                                      key));
  }
  for (auto& [key, dist] : table) {
    double sum = 0.0;
    for (auto& [a, p] : dist) sum += p;
    if (std::abs(sum - 1.0) > kSumTolerance)
      throw StrategyError(
          first_line[key],
          fmt::format("probabilities at '{}' sum to {}, not 1", key, sum));
    strategy.set(key, std::move(dist));
  }
  return strategy;
}

OpponentStrategy load_strategy(const std::filesystem::path& path,
                               const GameSpec* spec) {
  std::ifstream in(path);
  if (!in)
    throw StrategyError(fmt::format("cannot open strategy file {}",
                                    path.string()));
  return load_strategy(in, spec);
}

void write_strategy(std::ostream& out, const OpponentStrategy& strategy) {
  out << "# infoset action probability\n";
  for (const auto& [key, dist] : strategy.entries())
    for (const auto& [action, p] : dist)
      fmt::print(out, "{} {} {}\n", key, action, p);
}

void check_strategy(const GameSpec& spec, const OpponentStrategy& strategy) {
  for (const auto& info : opponent_infosets(spec)) {
    const auto* dist = strategy.find(info.key);
    if (!dist)
      throw StrategyError(
          fmt::format("strategy is missing infoset '{}'", info.key));
    double sum = 0.0;
    for (const auto& [action, p] : *dist) {
      if (std::find(info.actions.begin(), info.actions.end(), action) ==
          info.actions.end())
        throw StrategyError(fmt::format(
            "action '{}' is not legal at '{}'", action, info.key));
      if (!(p >= 0.0 && p <= 1.0))
        throw StrategyError(fmt::format(
            "probability {} outside [0, 1] at '{}'", p, info.key));
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
      throw StrategyError(fmt::format(
          "probabilities at '{}' sum to {}, not 1", info.key, sum));
  }
}

namespace {

struct AgentNode {
  std::string key;
  bool terminal = false;
  int level = 0;
  double w = 0.0;       // probability mass under the real opponent
  double wf = 0.0;      // same with a uniform opponent
  double mass_u = 0.0;  // w-weighted normalized utility
  double mass_uf = 0.0;
  std::vector<int> legal;                // global action codes
  std::vector<std::vector<int>> children;  // per local action
};

}  // namespace

CompiledGame compile_game(const GameSpec& spec,
                          const OpponentStrategy& opponent) {
  const Rules rules{spec.game};
  const int agent = spec.role == Role::kX ? 0 : 1;
  const double span = spec.u_max - spec.u_min;

  std::vector<AgentNode> nodes(1);
  nodes[0].key = "";
  nodes[0].legal = {-1};
  nodes[0].children.resize(1);
  std::unordered_map<std::string, int> state_index;
  std::unordered_map<std::string, int> terminal_index;

  auto child_node = [&](bool terminal, const std::string& key, int parent,
                        int local_action) {
    auto& index = terminal ? terminal_index : state_index;
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(nodes.size());
    AgentNode node;
    node.key = key;
    node.terminal = terminal;
    node.level = nodes[parent].level + 1;
    nodes.push_back(std::move(node));
    nodes[parent].children[local_action].push_back(id);
    index.emplace(key, id);
    return id;
  };

  // The agent's last (node, local action) on the current walk path.
  std::vector<std::pair<int, int>> anchor{{0, 0}};

  Walker walker{rules, nullptr, nullptr};
  walker.on_terminal = [&](const GameState& s, double w, double wf) {
    auto [parent, action] = anchor.back();
    const int id = child_node(true, view_key(rules, s, agent), parent, action);
    const double u =
        (static_cast<double>(utility(rules, s, agent)) - spec.u_min) / span;
    nodes[id].w += w;
    nodes[id].mass_u += w * u;
    nodes[id].wf += wf;
    nodes[id].mass_uf += wf * u;
  };
  walker.on_decision = [&](const GameState& s, double w, double wf,
                           const Walker::Recurse& recurse) {
    const auto legal = legal_actions(rules, s);
    if (s.to_act == agent) {
      auto [parent, action] = anchor.back();
      const int id =
          child_node(false, view_key(rules, s, agent), parent, action);
      if (nodes[id].legal.empty()) {
        nodes[id].legal = legal;
        nodes[id].children.resize(legal.size());
      }
      nodes[id].w += w;
      nodes[id].wf += wf;
      for (std::size_t i = 0; i < legal.size(); ++i) {
        anchor.push_back({id, static_cast<int>(i)});
        recurse(legal[i], 1.0, 1.0);
        anchor.pop_back();
      }
      return;
    }
    const std::string key = view_key(rules, s, 1 - agent);
    const auto* dist = opponent.find(key);
    if (!dist)
      throw CompileError(
          fmt::format("opponent strategy is missing infoset '{}'", key));
    double sum = 0.0;
    for (const auto& [name, p] : *dist) {
      auto pos = std::find(kActionNames.begin(), kActionNames.end(), name);
      const int code = static_cast<int>(pos - kActionNames.begin());
      if (pos == kActionNames.end() ||
          std::find(legal.begin(), legal.end(), code) == legal.end())
        throw CompileError(fmt::format(
            "opponent action '{}' is not legal at '{}' (legal: {})", name,
            key, action_list(legal)));
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
      throw CompileError(fmt::format(
          "opponent probabilities at '{}' sum to {}, not 1", key, sum));
    const double uniform = 1.0 / static_cast<double>(legal.size());
    for (int a : legal) {
      auto it = dist->find(std::string(kActionNames[a]));
      recurse(a, it == dist->end() ? 0.0 : it->second, uniform);
    }
  };
  walker.walk_all_deals();

  // Preorder numbering, matching TreeMdp::build.
  CompiledGame out;
  TreeDescription d;
  d.gamma = 1.0;
  d.action_alphabet_size = spec.num_actions();
  std::vector<int> state_ids;
  std::vector<int> terminal_ids;
  std::vector<std::int64_t> new_id(nodes.size(), -1);
  {
    std::vector<int> stack{0};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      if (nodes[v].terminal) {
        terminal_ids.push_back(v);
        continue;
      }
      state_ids.push_back(v);
      for (auto ait = nodes[v].children.rbegin();
           ait != nodes[v].children.rend(); ++ait)
        for (auto cit = ait->rbegin(); cit != ait->rend(); ++cit)
          stack.push_back(*cit);
    }
  }
  const std::int64_t num_states = static_cast<std::int64_t>(state_ids.size());
  for (std::size_t i = 0; i < state_ids.size(); ++i)
    new_id[state_ids[i]] = static_cast<std::int64_t>(i);
  for (std::size_t i = 0; i < terminal_ids.size(); ++i)
    new_id[terminal_ids[i]] = num_states + static_cast<std::int64_t>(i);

  auto rho = [&](const AgentNode& t) {
    return t.w > 0.0 ? t.mass_u / t.w : t.mass_uf / t.wf;
  };
  int horizon = 0;
  for (int v : state_ids) {
    const AgentNode& node = nodes[v];
    d.nodes.push_back({new_id[v], node.level});
    horizon = std::max(horizon, node.level);
    out.state_keys.push_back(node.key);
    for (std::size_t a = 0; a < node.children.size(); ++a) {
      const auto& kids = node.children[a];
      double sum_w = 0.0;
      double sum_wf = 0.0;
      for (int c : kids) {
        sum_w += nodes[c].w;
        sum_wf += nodes[c].wf;
      }
      for (int c : kids) {
        const double p =
            sum_w > 0.0 ? nodes[c].w / sum_w : nodes[c].wf / sum_wf;
        const double r = nodes[c].terminal ? rho(nodes[c]) : 0.0;
        d.edges.push_back({new_id[v], static_cast<int>(a), new_id[c], p, r});
      }
      d.labels.push_back({new_id[v], static_cast<int>(a),
                          v == 0 ? std::string("deal")
                                 : std::string(kActionNames[node.legal[a]])});
    }
  }
  for (int v : terminal_ids) {
    d.terminals.push_back({new_id[v], rho(nodes[v])});
    out.terminal_keys.push_back(nodes[v].key);
  }
  d.root = 0;
  d.horizon = horizon;
  try {
    out.mdp = TreeMdp::build(d);
  } catch (const InvalidTreeError& e) {
    throw CompileError(std::string("compiled tree is invalid: ") + e.what());
  }
  return out;
}

TreeMdp compile(const GameSpec& spec, const OpponentStrategy& opponent) {
  return compile_game(spec, opponent).mdp;
}

}  // namespace treebandit
