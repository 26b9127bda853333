#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "treebandit/games.hpp"
#include "treebandit/harness.hpp"
#include "treebandit/oracle.hpp"
#include "treebandit/tree_mdp.hpp"

using namespace treebandit;

namespace {

struct GameArgs {
  std::string game = "kuhn3";
  std::string role = "x";
  std::string opponent = "uniform";

  void add(CLI::App* cmd) {
    cmd->add_option("--game", game, "kuhn3 | kuhn5 | leduc")
        ->check(CLI::IsMember({"kuhn3", "kuhn5", "leduc"}));
    cmd->add_option("--role", role, "x | o")->check(CLI::IsMember({"x", "o"}));
    cmd->add_option("--opponent", opponent,
                    "uniform | nash:alpha=F | file:PATH");
  }
  GameSpec spec() const {
    return GameSpec::make(parse_game(game), parse_role(role));
  }
  TreeMdp compile_tree() const {
    const GameSpec s = spec();
    return compile(s, OpponentDescriptor::parse(opponent).load(s));
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-structured bandit learners on poker tree MDPs"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "run a learner over seeds");
  GameArgs run_game;
  run_game.add(run_cmd);
  std::string algo = "lucb-t";
  std::string bound = "practical";
  RunConfig config;
  std::optional<double> c;
  std::int64_t num_seeds = 0;
  std::vector<std::uint64_t> seed_list;
  std::string out_dir;
  run_cmd->add_option("--algo", algo)
      ->check(CLI::IsMember({"lucb-t", "lucb-t-uniform", "ucb-t", "flat-lucb"}));
  run_cmd->add_option("--epsilon", config.epsilon);
  run_cmd->add_option("--delta", config.delta);
  run_cmd->add_option("--bound", bound)
      ->check(CLI::IsMember({"theory", "practical"}));
  run_cmd->add_option("--c", c, "constant of the practical bound");
  auto* seeds_opt =
      run_cmd->add_option("--seeds", num_seeds, "seeds 1..N")->check(
          CLI::PositiveNumber);
  auto* list_opt = run_cmd->add_option("--seed-list", seed_list)->delimiter(',');
  seeds_opt->excludes(list_opt);
  run_cmd->add_option("--budget", config.budget,
                      "episode budget (PAC) or horizon T (ucb-t)");
  run_cmd->add_option("--stride", config.stride);
  run_cmd->add_option("--out", out_dir, "output directory");
  run_cmd->add_option("--threads", config.threads);

  // export
  auto* export_cmd = app.add_subcommand("export", "write the compiled tree");
  GameArgs export_game;
  export_game.add(export_cmd);
  std::string export_path;
  export_cmd->add_option("--out", export_path)->required();

  // gaps
  auto* gaps_cmd = app.add_subcommand("gaps", "exact gap report CSVs");
  GameArgs gaps_game;
  gaps_game.add(gaps_cmd);
  double gaps_eps = 0.1;
  std::string classes_path, terminals_path;
  gaps_cmd->add_option("--epsilon", gaps_eps);
  gaps_cmd->add_option("--classes", classes_path)->required();
  gaps_cmd->add_option("--terminals", terminals_path)->required();

  // strategy
  auto* strat_cmd =
      app.add_subcommand("strategy", "write a built-in opponent strategy");
  GameArgs strat_game;
  strat_game.add(strat_cmd);
  std::string strat_path;
  strat_cmd->add_option("--out", strat_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      config.game = parse_game(run_game.game);
      config.role = parse_role(run_game.role);
      config.opponent = OpponentDescriptor::parse(run_game.opponent);
      config.algo = parse_algorithm(algo);
      config.bound =
          bound == "theory" ? BoundMode::kTheory : BoundMode::kPractical;
      config.c = c;
      if (!seed_list.empty()) {
        config.seeds = seed_list;
      } else {
        config.seeds.resize(num_seeds > 0 ? num_seeds : 10);
        std::iota(config.seeds.begin(), config.seeds.end(), 1);
      }
      config.out_dir = out_dir;
      run(config, &std::cout);
    } else if (*export_cmd) {
      auto out = open_out(export_path);
      write_tree_text(out, export_game.compile_tree());
    } else if (*gaps_cmd) {
      const GapReport report = gap_report(gaps_game.compile_tree(), gaps_eps);
      auto classes = open_out(classes_path);
      report.write_class_csv(classes);
      auto terminals = open_out(terminals_path);
      report.write_terminal_csv(terminals);
      fmt::print("V* = {}, {} classes\n", report.optimal_value,
                 report.classes.size());
    } else if (*strat_cmd) {
      const GameSpec s = strat_game.spec();
      auto out = open_out(strat_path);
      write_strategy(out, OpponentDescriptor::parse(strat_game.opponent).load(s));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
