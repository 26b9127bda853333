#include "treebandit/tree_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <utility>

#include <fmt/format.h>

namespace treebandit {
namespace {

constexpr double kProbTolerance = 1e-9;
// Sums closer to one than this are kept bit-for-bit, so that a written and
// re-read tree is unchanged.
constexpr double kRenormalizeThreshold = 1e-12;
constexpr double kReturnTolerance = 1e-12;

struct IdInfo {
  bool terminal = false;
  std::size_t index = 0;  // into description.nodes / description.terminals
};

// Edges of one (node, action) pair, in order of appearance.
using ActionEdges = std::map<int, std::vector<std::size_t>>;

}  // namespace

InvalidTreeError::InvalidTreeError(ValidationReport report)
    : std::runtime_error([&] {
        std::string msg = "invalid tree MDP:";
        for (const auto& issue : report) msg += "\n  " + issue;
        return msg;
      }()),
      report_(std::move(report)) {}

ValidationReport validate(const TreeDescription& d) {
  ValidationReport report;
  std::unordered_map<std::int64_t, IdInfo> ids;
  for (std::size_t i = 0; i < d.nodes.size(); ++i) {
    if (!ids.emplace(d.nodes[i].id, IdInfo{false, i}).second)
      report.push_back(fmt::format("duplicate id {}", d.nodes[i].id));
  }
  for (std::size_t i = 0; i < d.terminals.size(); ++i) {
    if (!ids.emplace(d.terminals[i].id, IdInfo{true, i}).second)
      report.push_back(fmt::format("duplicate id {}", d.terminals[i].id));
  }
  if (!(d.gamma >= 0.0 && d.gamma <= 1.0))
    report.push_back(fmt::format("gamma {} outside [0, 1]", d.gamma));
  if (d.horizon < 1)
    report.push_back(fmt::format("horizon {} is below 1", d.horizon));

  bool root_ok = false;
  if (!d.root) {
    report.push_back("missing root");
  } else {
    auto it = ids.find(*d.root);
    if (it == ids.end() || it->second.terminal)
      report.push_back(fmt::format("root {} is not a decision node", *d.root));
    else
      root_ok = true;
  }

  std::unordered_map<std::int64_t, ActionEdges> out_edges;
  std::unordered_map<std::int64_t, std::pair<std::int64_t, int>> parent_of;
  bool edges_ok = true;
  for (std::size_t e = 0; e < d.edges.size(); ++e) {
    const auto& edge = d.edges[e];
    auto from = ids.find(edge.from);
    auto to = ids.find(edge.to);
    if (from == ids.end() || to == ids.end()) {
      report.push_back(fmt::format("edge {} -> {} references an unknown node",
                                   edge.from, edge.to));
      edges_ok = false;
      continue;
    }
    if (from->second.terminal) {
      report.push_back(
          fmt::format("terminal {} has outgoing edges", edge.from));
      edges_ok = false;
      continue;
    }
    if (edge.action < 0) {
      report.push_back(fmt::format("negative action index on node {}",
                                   edge.from));
      edges_ok = false;
      continue;
    }
    if (!(edge.prob >= 0.0 && edge.prob <= 1.0)) {
      report.push_back(fmt::format(
          "probability {} out of range on edge {} {} {}", edge.prob,
          edge.from, edge.action, edge.to));
    }
    if (!std::isfinite(edge.reward)) {
      report.push_back(fmt::format("non-finite reward on edge {} {} {}",
                                   edge.from, edge.action, edge.to));
    }
    auto [it, inserted] =
        parent_of.emplace(edge.to, std::make_pair(edge.from, edge.action));
    if (!inserted) {
      report.push_back(fmt::format(
          "tree property violated: {} has more than one parent", edge.to));
      edges_ok = false;
    }
    if (root_ok && edge.to == *d.root) {
      report.push_back(fmt::format(
          "tree property violated: root {} has a parent", *d.root));
      edges_ok = false;
    }
    out_edges[edge.from][edge.action].push_back(e);
  }

  for (const auto& node : d.nodes) {
    auto it = out_edges.find(node.id);
    if (it == out_edges.end()) {
      report.push_back(fmt::format("decision node {} has no actions", node.id));
      edges_ok = false;
      continue;
    }
    int expected = 0;
    for (const auto& [action, edges] : it->second) {
      if (action != expected++) {
        report.push_back(fmt::format(
            "actions of node {} are not contiguous from 0", node.id));
        edges_ok = false;
        break;
      }
      double sum = 0.0;
      for (auto e : edges) sum += d.edges[e].prob;
      if (std::abs(sum - 1.0) > kProbTolerance) {
        report.push_back(fmt::format(
            "probability normalization violated: node {} action {} sums to {}",
            node.id, action, sum));
      }
    }
  }

  if (!root_ok || !edges_ok) return report;

  // Depth-first walk from the root: reachability, levels and returns.
  const auto& root_node = d.nodes[ids[*d.root].index];
  if (root_node.level != 0 && root_node.level != 1)
    report.push_back(fmt::format("level violated: root {} at level {}",
                                 root_node.id, root_node.level));
  if (root_node.level == 0 && out_edges[root_node.id].size() != 1)
    report.push_back(fmt::format(
        "chance root {} must have exactly one action", root_node.id));

  struct Frame {
    std::int64_t id;
    double ret;
    double discount;
  };
  std::unordered_map<std::int64_t, bool> seen;
  std::vector<Frame> stack{{*d.root, 0.0, 1.0}};
  seen[*d.root] = true;
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    const auto& info = ids[f.id];
    if (info.terminal) {
      const auto& term = d.terminals[info.index];
      if (f.ret < -kReturnTolerance || f.ret > 1.0 + kReturnTolerance)
        report.push_back(fmt::format(
            "return out of range: terminal {} has rho {}", term.id, f.ret));
      if (term.rho && std::abs(*term.rho - f.ret) > kProbTolerance)
        report.push_back(fmt::format(
            "terminal return mismatch: terminal {} declares rho {} but its "
            "path sums to {}",
            term.id, *term.rho, f.ret));
      continue;
    }
    const auto& node = d.nodes[info.index];
    if (node.level > d.horizon && d.horizon >= 1)
      report.push_back(fmt::format("horizon violated: node {} at level {}",
                                   node.id, node.level));
    if (node.level == 0 && node.id != *d.root)
      report.push_back(
          fmt::format("level violated: non-root node {} at level 0", node.id));
    for (const auto& [action, edges] : out_edges[node.id]) {
      for (auto e : edges) {
        const auto& edge = d.edges[e];
        if (seen[edge.to]) continue;
        seen[edge.to] = true;
        const auto& child = ids[edge.to];
        if (!child.terminal) {
          int child_level = d.nodes[child.index].level;
          if (child_level != node.level + 1)
            report.push_back(fmt::format(
                "level violated: node {} at level {} under node {} at level {}",
                edge.to, child_level, node.id, node.level));
        }
        // The chance root carries no discount step.
        double step_discount = node.level == 0 ? 1.0 : d.gamma;
        stack.push_back({edge.to, f.ret + f.discount * edge.reward,
                         f.discount * step_discount});
      }
    }
  }
  for (const auto& node : d.nodes)
    if (!seen[node.id])
      report.push_back(fmt::format("unreachable node {}", node.id));
  for (const auto& term : d.terminals)
    if (!seen[term.id])
      report.push_back(fmt::format("unreachable terminal {}", term.id));
  return report;
}

TreeMdp TreeMdp::build(const TreeDescription& d) {
  ValidationReport report = validate(d);
  if (!report.empty()) throw InvalidTreeError(std::move(report));

  std::unordered_map<std::int64_t, IdInfo> ids;
  for (std::size_t i = 0; i < d.nodes.size(); ++i)
    ids[d.nodes[i].id] = {false, i};
  for (std::size_t i = 0; i < d.terminals.size(); ++i)
    ids[d.terminals[i].id] = {true, i};
  std::unordered_map<std::int64_t, ActionEdges> out_edges;
  for (std::size_t e = 0; e < d.edges.size(); ++e)
    out_edges[d.edges[e].from][d.edges[e].action].push_back(e);
  std::map<std::pair<std::int64_t, int>, std::string> labels;
  for (const auto& l : d.labels) labels[{l.node, l.action}] = l.label;

  // Preorder numbering.
  std::unordered_map<std::int64_t, std::int32_t> new_index;
  std::vector<std::int64_t> state_order;
  std::int32_t next_terminal = 0;
  std::vector<std::int64_t> stack{*d.root};
  while (!stack.empty()) {
    std::int64_t id = stack.back();
    stack.pop_back();
    if (ids[id].terminal) {
      new_index[id] = next_terminal++;
      continue;
    }
    new_index[id] = static_cast<std::int32_t>(state_order.size());
    state_order.push_back(id);
    const auto& actions = out_edges[id];
    for (auto ait = actions.rbegin(); ait != actions.rend(); ++ait)
      for (auto eit = ait->second.rbegin(); eit != ait->second.rend(); ++eit)
        stack.push_back(d.edges[*eit].to);
  }

  TreeMdp mdp;
  TreeStructure& st = mdp.structure_;
  st.gamma_ = d.gamma;
  st.horizon_ = d.horizon;
  st.states_.resize(state_order.size());
  st.terminals_.resize(next_terminal);
  for (std::size_t s = 0; s < state_order.size(); ++s) {
    std::int64_t id = state_order[s];
    auto& rec = st.states_[s];
    rec.level = d.nodes[ids[id].index].level;
    rec.action_begin = static_cast<std::int32_t>(st.actions_.size());
    const auto& actions = out_edges[id];
    rec.action_count = static_cast<int>(actions.size());
    st.max_actions_ = std::max(st.max_actions_, rec.action_count);
    if (rec.level >= 1) ++st.num_decision_states_;
    for (const auto& [action, edges] : actions) {
      TreeStructure::ActionRec arec;
      arec.child_begin = static_cast<std::int32_t>(st.children_.size());
      arec.child_count = static_cast<std::int32_t>(edges.size());
      st.max_branching_ = std::max<int>(st.max_branching_, arec.child_count);
      double sum = 0.0;
      for (auto e : edges) sum += d.edges[e].prob;
      bool renormalize = std::abs(sum - 1.0) > kRenormalizeThreshold;
      for (auto e : edges) {
        const auto& edge = d.edges[e];
        bool is_terminal = ids[edge.to].terminal;
        std::int32_t child = new_index[edge.to];
        NodeRef ref = is_terminal ? NodeRef::terminal(child)
                                  : NodeRef::state(child);
        st.children_.push_back({ref, edge.reward});
        mdp.child_prob_.push_back(renormalize ? edge.prob / sum : edge.prob);
        if (is_terminal) {
          st.terminals_[child].parent = static_cast<StateId>(s);
          st.terminals_[child].parent_action = action;
        } else {
          st.states_[child].parent = static_cast<StateId>(s);
          st.states_[child].parent_action = action;
        }
      }
      st.actions_.push_back(arec);
      auto lit = labels.find({id, action});
      st.action_labels_.push_back(lit == labels.end() ? std::string()
                                                      : lit->second);
    }
  }
  st.action_alphabet_size_ = d.action_alphabet_size > 0
                                 ? d.action_alphabet_size
                                 : st.max_actions_;

  // Terminal ranges bottom-up; returns and reach probabilities top-down.
  for (StateId s = st.num_states() - 1; s >= 0; --s) {
    auto& rec = st.states_[s];
    rec.terminal_begin = st.num_terminals();
    rec.terminal_end = 0;
    for (int a = 0; a < rec.action_count; ++a) {
      for (const auto& c : st.children(s, a)) {
        TerminalId b = c.target.is_terminal()
                           ? c.target.index
                           : st.states_[c.target.index].terminal_begin;
        TerminalId e = c.target.is_terminal()
                           ? c.target.index + 1
                           : st.states_[c.target.index].terminal_end;
        rec.terminal_begin = std::min(rec.terminal_begin, b);
        rec.terminal_end = std::max(rec.terminal_end, e);
      }
    }
  }
  mdp.reach_prob_.assign(st.num_terminals(), 0.0);
  std::vector<double> state_ret(st.num_states(), 0.0);
  std::vector<double> state_q(st.num_states(), 1.0);
  std::vector<double> state_discount(st.num_states(), 1.0);
  for (StateId s = 0; s < st.num_states(); ++s) {
    double step = st.states_[s].level == 0 ? 1.0 : st.gamma_;
    for (int a = 0; a < st.num_actions(s); ++a) {
      auto kids = st.children(s, a);
      auto probs = mdp.probs(s, a);
      for (std::size_t k = 0; k < kids.size(); ++k) {
        double ret = state_ret[s] + state_discount[s] * kids[k].reward;
        double q = state_q[s] * probs[k];
        if (kids[k].target.is_terminal()) {
          st.terminals_[kids[k].target.index].rho = ret;
          mdp.reach_prob_[kids[k].target.index] = q;
        } else {
          state_ret[kids[k].target.index] = ret;
          state_q[kids[k].target.index] = q;
          state_discount[kids[k].target.index] = state_discount[s] * step;
        }
      }
    }
  }
  return mdp;
}

std::span<const Child> TreeStructure::children(StateId s, int a) const {
  const auto& arec = actions_[states_[s].action_begin + a];
  return {children_.data() + arec.child_begin,
          static_cast<std::size_t>(arec.child_count)};
}

std::span<const double> TreeMdp::probs(StateId s, int a) const {
  std::int32_t off = structure_.child_offset(s, a);
  return {child_prob_.data() + off, structure_.children(s, a).size()};
}

ValidationReport validate(const TreeMdp& mdp) {
  return validate(describe(mdp));
}

std::vector<TerminalProfile> compute_terminal_profiles(const TreeMdp& mdp) {
  const auto& st = mdp.structure();
  std::vector<TerminalProfile> out(st.num_terminals());
  struct Frame {
    StateId s;
    double ret;
    double q;
    double discount;
    std::vector<PathStep> path;
  };
  std::vector<Frame> stack;
  stack.push_back({st.root(), 0.0, 1.0, 1.0, {}});
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    double step = st.level(f.s) == 0 ? 1.0 : st.gamma();
    for (int a = 0; a < st.num_actions(f.s); ++a) {
      auto kids = st.children(f.s, a);
      auto probs = mdp.probs(f.s, a);
      auto path = f.path;
      path.push_back({f.s, a});
      for (std::size_t k = 0; k < kids.size(); ++k) {
        double ret = f.ret + f.discount * kids[k].reward;
        double q = f.q * probs[k];
        if (kids[k].target.is_terminal()) {
          out[kids[k].target.index] = {ret, q, path};
        } else {
          stack.push_back(
              {kids[k].target.index, ret, q, f.discount * step, path});
        }
      }
    }
  }
  return out;
}

double evaluate_bellman(const TreeMdp& mdp, const Policy& pi) {
  const auto& st = mdp.structure();
  std::vector<double> value(st.num_states(), 0.0);
  for (StateId s = st.num_states() - 1; s >= 0; --s) {
    int a = pi[s];
    auto kids = st.children(s, a);
    auto probs = mdp.probs(s, a);
    double gamma = st.level(s) == 0 ? 1.0 : st.gamma();
    double v = 0.0;
    for (std::size_t k = 0; k < kids.size(); ++k) {
      double next = kids[k].target.is_terminal()
                        ? 0.0
                        : value[kids[k].target.index];
      v += probs[k] * (kids[k].reward + gamma * next);
    }
    value[s] = v;
  }
  return value[st.root()];
}

double evaluate_terminal_sum(const TreeMdp& mdp, const Policy& pi) {
  const auto& st = mdp.structure();
  double v = 0.0;
  for (TerminalId t : consistent_terminals(st, pi))
    v += mdp.reach_prob(t) * st.rho(t);
  return v;
}

std::vector<TerminalId> consistent_terminals(const TreeStructure& st,
                                             const Policy& pi) {
  std::vector<TerminalId> out;
  std::vector<StateId> stack{st.root()};
  while (!stack.empty()) {
    StateId s = stack.back();
    stack.pop_back();
    auto kids = st.children(s, pi[s]);
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) {
      if (it->target.is_terminal())
        out.push_back(it->target.index);
      else
        stack.push_back(it->target.index);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<bool> reachable_states(const TreeStructure& st, const Policy& pi) {
  std::vector<bool> reached(st.num_states(), false);
  reached[st.root()] = true;
  for (StateId s = 0; s < st.num_states(); ++s) {
    if (!reached[s]) continue;
    for (const auto& c : st.children(s, pi[s]))
      if (!c.target.is_terminal()) reached[c.target.index] = true;
  }
  return reached;
}

Policy canonical_policy_for_terminal(const TreeStructure& st,
                                     TerminalId sigma) {
  Policy pi = Policy::zeros(st);
  StateId s = st.terminal_parent(sigma);
  pi[s] = st.terminal_parent_action(sigma);
  while (st.parent(s) >= 0) {
    pi[st.parent(s)] = st.parent_action(s);
    s = st.parent(s);
  }
  return pi;
}

Policy canonical_form(const TreeStructure& st, const Policy& pi) {
  auto reached = reachable_states(st, pi);
  Policy out = Policy::zeros(st);
  for (StateId s = 0; s < st.num_states(); ++s)
    if (reached[s]) out[s] = pi[s];
  return out;
}

std::uint64_t terminal_set_hash(std::span<const TerminalId> terminals) {
  std::uint64_t h = 1469598103934665603ULL;
  for (TerminalId t : terminals) {
    auto v = static_cast<std::uint32_t>(t);
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::uint64_t policy_class_hash(const TreeStructure& st, const Policy& pi) {
  auto x = consistent_terminals(st, pi);
  return terminal_set_hash(x);
}

namespace {

std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    last_positive = k;
    acc += probs[k];
    if (u < acc) return k;
  }
  // Rounding left u above the cumulative sum.
  return last_positive;
}

}  // namespace

Trajectory sample_episode(const TreeMdp& mdp, const Policy& pi, Rng& rng) {
  const auto& st = mdp.structure();
  Trajectory traj;
  StateId s = st.root();
  while (true) {
    int a = pi[s];
    auto kids = st.children(s, a);
    const Child& next = kids[sample_index(mdp.probs(s, a), rng)];
    traj.steps.push_back({s, a, next.target});
    if (next.target.is_terminal()) {
      traj.terminal = next.target.index;
      traj.ret = st.rho(traj.terminal);
      return traj;
    }
    s = next.target.index;
  }
}

TerminalId sample_terminal(const TreeMdp& mdp, const Policy& pi, Rng& rng) {
  const auto& st = mdp.structure();
  StateId s = st.root();
  while (true) {
    int a = pi[s];
    const Child& next = st.children(s, a)[sample_index(mdp.probs(s, a), rng)];
    if (next.target.is_terminal()) return next.target.index;
    s = next.target.index;
  }
}

OptimalSolution solve_optimal(const TreeMdp& mdp) {
  const auto& st = mdp.structure();
  std::vector<double> value(st.num_states(), 0.0);
  Policy pi = Policy::zeros(st);
  for (StateId s = st.num_states() - 1; s >= 0; --s) {
    double gamma = st.level(s) == 0 ? 1.0 : st.gamma();
    double best = -1.0;
    for (int a = 0; a < st.num_actions(s); ++a) {
      auto kids = st.children(s, a);
      auto probs = mdp.probs(s, a);
      double v = 0.0;
      for (std::size_t k = 0; k < kids.size(); ++k) {
        double next = kids[k].target.is_terminal()
                          ? 0.0
                          : value[kids[k].target.index];
        v += probs[k] * (kids[k].reward + gamma * next);
      }
      if (a == 0 || v > best) {
        best = v;
        pi[s] = a;
      }
    }
    value[s] = best;
  }
  return {canonical_form(st, pi), value[st.root()]};
}

}  // namespace treebandit
