#ifndef TREEBANDIT_TREE_MDP_HPP
#define TREEBANDIT_TREE_MDP_HPP

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace treebandit {

using StateId = std::int32_t;
using TerminalId = std::int32_t;
using Rng = std::mt19937_64;

// Uniform double in [0, 1) built from the top 53 bits of one draw, so that
// sampled streams are identical across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Either a decision state or a terminal of a built tree.
struct NodeRef {
  enum class Kind : std::uint8_t { kState, kTerminal };
  Kind kind = Kind::kState;
  std::int32_t index = -1;

  static NodeRef state(StateId s) { return {Kind::kState, s}; }
  static NodeRef terminal(TerminalId t) { return {Kind::kTerminal, t}; }
  bool is_terminal() const { return kind == Kind::kTerminal; }
  auto operator<=>(const NodeRef&) const = default;
};

// Loosely-typed tree as read from a file or assembled by a game compiler.
// Ids are arbitrary and shared between decision nodes and terminals. Nothing
// here is checked; see validate() and TreeMdp::build().
struct TreeDescription {
  struct Node {
    std::int64_t id = 0;
    int level = 1;
  };
  struct Terminal {
    std::int64_t id = 0;
    std::optional<double> rho;  // cached return; checked against the edges
  };
  struct Edge {
    std::int64_t from = 0;
    int action = 0;
    std::int64_t to = 0;
    double prob = 1.0;
    double reward = 0.0;
  };
  struct ActionLabel {
    std::int64_t node = 0;
    int action = 0;
    std::string label;
  };

  std::vector<Node> nodes;
  std::vector<Terminal> terminals;
  std::vector<Edge> edges;
  std::vector<ActionLabel> labels;
  std::optional<std::int64_t> root;
  double gamma = 1.0;
  int horizon = 0;
  // Size of the global action alphabet |A|; 0 means "max actions per state".
  int action_alphabet_size = 0;
};

// One message per violated structural invariant; empty means well-formed.
using ValidationReport = std::vector<std::string>;

ValidationReport validate(const TreeDescription& description);

class InvalidTreeError : public std::runtime_error {
 public:
  explicit InvalidTreeError(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

// Child entry of a (state, action) pair. Probabilities live in TreeMdp so the
// structure can be handed to learners without leaking the model.
struct Child {
  NodeRef target;
  double reward = 0.0;
};

// Topology, rewards and returns of a tree MDP: everything a learner is
// allowed to know. States and terminals are numbered in depth-first preorder
// from the root, so every child has a larger index than its parent and the
// terminals below any state form a contiguous id range.
//
// A root at level 0 is a chance root: it must have exactly one action, it is
// not counted in num_decision_states(), and the horizon counts the decision
// levels below it. Game compilers use it to fold the deal into the tree.
class TreeStructure {
 public:
  StateId root() const { return 0; }
  std::int32_t num_states() const {
    return static_cast<std::int32_t>(states_.size());
  }
  std::int32_t num_decision_states() const { return num_decision_states_; }
  std::int32_t num_terminals() const {
    return static_cast<std::int32_t>(terminals_.size());
  }
  int horizon() const { return horizon_; }
  double gamma() const { return gamma_; }
  int max_actions() const { return max_actions_; }
  int max_branching() const { return max_branching_; }
  int action_alphabet_size() const { return action_alphabet_size_; }

  int level(StateId s) const { return states_[s].level; }
  int num_actions(StateId s) const { return states_[s].action_count; }
  StateId parent(StateId s) const { return states_[s].parent; }
  int parent_action(StateId s) const { return states_[s].parent_action; }
  std::span<const Child> children(StateId s, int a) const;
  // Offset of children(s, a)[0] in the flat child array.
  std::int32_t child_offset(StateId s, int a) const {
    return actions_[states_[s].action_begin + a].child_begin;
  }
  const std::string& action_label(StateId s, int a) const {
    return action_labels_[states_[s].action_begin + a];
  }

  double rho(TerminalId t) const { return terminals_[t].rho; }
  StateId terminal_parent(TerminalId t) const { return terminals_[t].parent; }
  int terminal_parent_action(TerminalId t) const {
    return terminals_[t].parent_action;
  }
  // Half-open terminal id range of the subtree rooted at s.
  std::pair<TerminalId, TerminalId> subtree_terminals(StateId s) const {
    return {states_[s].terminal_begin, states_[s].terminal_end};
  }

 private:
  friend class TreeMdp;

  struct StateRec {
    int level = 0;
    StateId parent = -1;
    int parent_action = -1;
    std::int32_t action_begin = 0;
    int action_count = 0;
    TerminalId terminal_begin = 0;
    TerminalId terminal_end = 0;
  };
  struct ActionRec {
    std::int32_t child_begin = 0;
    std::int32_t child_count = 0;
  };
  struct TerminalRec {
    double rho = 0.0;
    StateId parent = -1;
    int parent_action = -1;
  };

  std::vector<StateRec> states_;
  std::vector<ActionRec> actions_;
  std::vector<std::string> action_labels_;
  std::vector<Child> children_;
  std::vector<TerminalRec> terminals_;
  double gamma_ = 1.0;
  int horizon_ = 0;
  int max_actions_ = 0;
  int max_branching_ = 0;
  int action_alphabet_size_ = 0;
  std::int32_t num_decision_states_ = 0;
};

// Immutable ground-truth model: structure plus transition probabilities and
// the cached reach probability q of every terminal.
class TreeMdp {
 public:
  // Validates, renormalizes probabilities that are within 1e-9 of summing to
  // one, and renumbers into depth-first preorder. Throws InvalidTreeError.
  static TreeMdp build(const TreeDescription& description);

  const TreeStructure& structure() const { return structure_; }
  std::span<const double> probs(StateId s, int a) const;
  double reach_prob(TerminalId t) const { return reach_prob_[t]; }

 private:
  TreeStructure structure_;
  std::vector<double> child_prob_;  // parallel to the flat child array
  std::vector<double> reach_prob_;
};

// Re-checks a built tree against the same invariants as validate().
ValidationReport validate(const TreeMdp& mdp);

// Assigns a local action index to every state (including a chance root).
class Policy {
 public:
  Policy() = default;
  explicit Policy(std::vector<int> actions) : actions_(std::move(actions)) {}
  static Policy zeros(const TreeStructure& structure) {
    return Policy(std::vector<int>(structure.num_states(), 0));
  }

  int operator[](StateId s) const { return actions_[s]; }
  int& operator[](StateId s) { return actions_[s]; }
  std::size_t size() const { return actions_.size(); }
  const std::vector<int>& actions() const { return actions_; }
  bool operator==(const Policy&) const = default;

 private:
  std::vector<int> actions_;
};

struct PathStep {
  StateId state = 0;
  int action = 0;
};

struct TerminalProfile {
  double rho = 0.0;
  double q = 0.0;
  std::vector<PathStep> path;
};

// rho and q of every terminal from one depth-first pass over the edges.
std::vector<TerminalProfile> compute_terminal_profiles(const TreeMdp& mdp);

// Bottom-up Bellman recursion with V(terminal) = 0.
double evaluate_bellman(const TreeMdp& mdp, const Policy& pi);

// Sum over X(pi) of q * rho.
double evaluate_terminal_sum(const TreeMdp& mdp, const Policy& pi);

// X(pi) in increasing terminal id order.
std::vector<TerminalId> consistent_terminals(const TreeStructure& structure,
                                             const Policy& pi);

// States reached by following pi from the root.
std::vector<bool> reachable_states(const TreeStructure& structure,
                                   const Policy& pi);

// Member of Y(sigma): path actions along sigma's root path, lowest action
// index everywhere else.
Policy canonical_policy_for_terminal(const TreeStructure& structure,
                                     TerminalId sigma);

// Representative of pi's X-class: states not reached under pi get action 0.
// Two policies have the same X iff their canonical forms are equal.
Policy canonical_form(const TreeStructure& structure, const Policy& pi);

// 64-bit FNV-1a hash of X(pi).
std::uint64_t policy_class_hash(const TreeStructure& structure,
                                const Policy& pi);
std::uint64_t terminal_set_hash(std::span<const TerminalId> terminals);

struct TrajectoryStep {
  StateId state = 0;
  int action = 0;
  NodeRef next;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  TerminalId terminal = -1;
  double ret = 0.0;
};

Trajectory sample_episode(const TreeMdp& mdp, const Policy& pi, Rng& rng);

// Terminal reached by one episode, without recording the path.
TerminalId sample_terminal(const TreeMdp& mdp, const Policy& pi, Rng& rng);

struct OptimalSolution {
  Policy policy;
  double value = 0.0;
};

// Exact optimal policy by bottom-up maximization with the true model; ties go
// to the lowest action index.
OptimalSolution solve_optimal(const TreeMdp& mdp);

// Text serialization, one record per line:
//   gamma <float> / horizon <int> / root <id> / node <id> level <h> /
//   terminal <id> rho=<float> / edge <s> <a> <s'> p=<float> r=<float>
// Floats are written in shortest round-trip form. Lines that are empty or
// start with '#' are ignored.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

TreeDescription read_tree_text(std::istream& in);
void write_tree_text(std::ostream& out, const TreeMdp& mdp);
TreeDescription describe(const TreeMdp& mdp);

}  // namespace treebandit

#endif  // TREEBANDIT_TREE_MDP_HPP
