#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "treebandit/tree_mdp.hpp"

namespace treebandit {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view token, int line, std::string_view what) {
  T value{};
  auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ParseError(line, fmt::format("bad {} '{}'", what, token));
  return value;
}

double parse_keyed(std::string_view token, std::string_view key, int line) {
  if (token.substr(0, key.size()) != key)
    throw ParseError(line, fmt::format("expected {}<float>, got '{}'", key,
                                       token));
  return parse_number<double>(token.substr(key.size()), line, key);
}

}  // namespace

ParseError::ParseError(int line, const std::string& message)
    : std::runtime_error(fmt::format("line {}: {}", line, message)),
      line_(line) {}

TreeDescription read_tree_text(std::istream& in) {
  TreeDescription d;
  bool have_gamma = false;
  bool have_horizon = false;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    auto tok = split_ws(raw);
    if (tok.empty() || tok[0].front() == '#') continue;
    auto expect = [&](std::size_t n) {
      if (tok.size() != n)
        throw ParseError(line_no, fmt::format("'{}' record takes {} fields",
                                              tok[0], n - 1));
    };
    if (tok[0] == "node") {
      expect(4);
      if (tok[2] != "level")
        throw ParseError(line_no, "expected 'node <id> level <h>'");
      d.nodes.push_back(
          {parse_number<std::int64_t>(tok[1], line_no, "id"),
           parse_number<int>(tok[3], line_no, "level")});
    } else if (tok[0] == "edge") {
      expect(6);
      TreeDescription::Edge e;
      e.from = parse_number<std::int64_t>(tok[1], line_no, "id");
      e.action = parse_number<int>(tok[2], line_no, "action");
      e.to = parse_number<std::int64_t>(tok[3], line_no, "id");
      e.prob = parse_keyed(tok[4], "p=", line_no);
      e.reward = parse_keyed(tok[5], "r=", line_no);
      d.edges.push_back(e);
    } else if (tok[0] == "terminal") {
      expect(3);
      d.terminals.push_back({parse_number<std::int64_t>(tok[1], line_no, "id"),
                             parse_keyed(tok[2], "rho=", line_no)});
    } else if (tok[0] == "gamma") {
      expect(2);
      if (have_gamma) throw ParseError(line_no, "duplicate gamma record");
      have_gamma = true;
      d.gamma = parse_number<double>(tok[1], line_no, "gamma");
    } else if (tok[0] == "horizon") {
      expect(2);
      if (have_horizon) throw ParseError(line_no, "duplicate horizon record");
      have_horizon = true;
      d.horizon = parse_number<int>(tok[1], line_no, "horizon");
    } else if (tok[0] == "root") {
      expect(2);
      if (d.root) throw ParseError(line_no, "duplicate root record");
      d.root = parse_number<std::int64_t>(tok[1], line_no, "id");
    } else {
      throw ParseError(line_no, fmt::format("unknown record '{}'", tok[0]));
    }
  }
  return d;
}

TreeDescription describe(const TreeMdp& mdp) {
  const auto& st = mdp.structure();
  TreeDescription d;
  const std::int64_t term_base = st.num_states();
  d.gamma = st.gamma();
  d.horizon = st.horizon();
  d.root = st.root();
  d.action_alphabet_size = st.action_alphabet_size();
  for (StateId s = 0; s < st.num_states(); ++s) {
    d.nodes.push_back({s, st.level(s)});
    for (int a = 0; a < st.num_actions(s); ++a) {
      if (!st.action_label(s, a).empty())
        d.labels.push_back({s, a, st.action_label(s, a)});
      auto kids = st.children(s, a);
      auto probs = mdp.probs(s, a);
      for (std::size_t k = 0; k < kids.size(); ++k) {
        std::int64_t to = kids[k].target.is_terminal()
                              ? term_base + kids[k].target.index
                              : kids[k].target.index;
        d.edges.push_back({s, a, to, probs[k], kids[k].reward});
      }
    }
  }
  for (TerminalId t = 0; t < st.num_terminals(); ++t)
    d.terminals.push_back({term_base + t, st.rho(t)});
  return d;
}

void write_tree_text(std::ostream& out, const TreeMdp& mdp) {
  TreeDescription d = describe(mdp);
  fmt::print(out, "gamma {}\nhorizon {}\nroot {}\n", d.gamma, d.horizon,
             *d.root);
  for (const auto& n : d.nodes) fmt::print(out, "node {} level {}\n", n.id,
                                           n.level);
  for (const auto& t : d.terminals)
    fmt::print(out, "terminal {} rho={}\n", t.id, *t.rho);
  for (const auto& e : d.edges)
    fmt::print(out, "edge {} {} {} p={} r={}\n", e.from, e.action, e.to,
               e.prob, e.reward);
}

}  // namespace treebandit
