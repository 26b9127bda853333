#include "treebandit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "treebandit/learners.hpp"
#include "treebandit/planner.hpp"

namespace treebandit {
namespace {

// Mistakes are judged with this much slack on the epsilon margin.
constexpr double kMistakeTolerance = 1e-9;

constexpr std::int64_t kDefaultPacBudget = 10'000'000;
constexpr std::int64_t kDefaultHorizon = 100'000;

}  // namespace

OpponentDescriptor OpponentDescriptor::parse(const std::string& text) {
  OpponentDescriptor d;
  if (text == "uniform") return d;
  if (text.rfind("nash", 0) == 0) {
    d.kind = Kind::kNash;
    if (text == "nash") return d;
    const std::string prefix = "nash:alpha=";
    if (text.rfind(prefix, 0) != 0)
      throw ConfigError(fmt::format("bad opponent '{}'", text));
    const std::string value = text.substr(prefix.size());
    char* end = nullptr;
    d.alpha = std::strtod(value.c_str(), &end);
    if (value.empty() || *end != '\0')
      throw ConfigError(fmt::format("bad alpha in '{}'", text));
    return d;
  }
  if (text.rfind("file:", 0) == 0 && text.size() > 5) {
    d.kind = Kind::kFile;
    d.path = text.substr(5);
    return d;
  }
  throw ConfigError(fmt::format(
      "bad opponent '{}': expected uniform, nash:alpha=F or file:PATH", text));
}

OpponentStrategy OpponentDescriptor::load(const GameSpec& spec) const {
  switch (kind) {
    case Kind::kUniform: return uniform_opponent(spec);
    case Kind::kNash: return kuhn_nash_opponent(spec, alpha);
    case Kind::kFile: return load_strategy(path, &spec);
  }
  return {};
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "lucb-t") return Algorithm::kLucbT;
  if (name == "lucb-t-uniform") return Algorithm::kLucbTUniform;
  if (name == "ucb-t") return Algorithm::kUcbT;
  if (name == "flat-lucb") return Algorithm::kFlatLucb;
  throw ConfigError(fmt::format("unknown algorithm '{}'", name));
}

std::string_view to_string(Algorithm algo) {
  switch (algo) {
    case Algorithm::kLucbT: return "lucb-t";
    case Algorithm::kLucbTUniform: return "lucb-t-uniform";
    case Algorithm::kUcbT: return "ucb-t";
    case Algorithm::kFlatLucb: return "flat-lucb";
  }
  return "?";
}

bool is_pac(Algorithm algo) { return algo != Algorithm::kUcbT; }

double default_c(GameId game, Role role, Algorithm algo) {
  if (game == GameId::kLeduc) return 1.0;
  if (algo == Algorithm::kUcbT) return 0.1;
  return role == Role::kX ? 0.1 : 1.0;
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw ConfigError("epsilon must lie in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0))
    throw ConfigError("delta must lie in (0, 1)");
  if (!(effective_c() > 0.0)) throw ConfigError("C must be positive");
  if (budget < 0) throw ConfigError("budget must be nonnegative");
  if (opponent.kind == OpponentDescriptor::Kind::kFile &&
      !std::filesystem::exists(opponent.path))
    throw ConfigError(fmt::format("opponent file {} does not exist",
                                  opponent.path.string()));
  if (opponent.kind == OpponentDescriptor::Kind::kNash &&
      game != GameId::kKuhn3)
    throw ConfigError("the nash opponent is only available for kuhn3");
  if (opponent.kind == OpponentDescriptor::Kind::kNash &&
      !(opponent.alpha >= 0.0 && opponent.alpha <= 1.0 / 3.0 + 1e-12))
    throw ConfigError("alpha must lie in [0, 1/3]");
}

std::vector<double> compute_regret(
    const std::vector<std::uint64_t>& played_classes,
    const GapReport& report) {
  std::vector<double> out;
  out.reserve(played_classes.size());
  double total = 0.0;
  for (auto h : played_classes) {
    auto idx = report.find(h);
    if (!idx)
      throw std::out_of_range(
          fmt::format("class {:016x} is not in the gap report", h));
    total += report.optimal_value - report.classes[*idx].value;
    out.push_back(total);
  }
  return out;
}

std::pair<double, double> mean_and_se(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

int worker_count(int requested) {
  int n = requested;
  if (n <= 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TREEBANDIT_THREADS")) {
      const int cap = std::atoi(env);
      if (cap > 0) n = std::min(n > 0 ? n : cap, cap);
    }
  }
  return std::max(n, 1);
}

namespace {

// Exact policy values, looked up by X-class hash.
class ValueBook {
 public:
  ValueBook(const TreeMdp& mdp, const GapReport* report)
      : mdp_(mdp), report_(report) {}

  double value(std::uint64_t hash, const Policy& pi) {
    if (report_) {
      if (auto idx = report_->find(hash)) return report_->classes[*idx].value;
    }
    auto it = cache_.find(hash);
    if (it != cache_.end()) return it->second;
    const double v = evaluate_terminal_sum(mdp_, pi);
    cache_.emplace(hash, v);
    return v;
  }

 private:
  const TreeMdp& mdp_;
  const GapReport* report_;
  std::unordered_map<std::uint64_t, double> cache_;
};

struct SeedOutput {
  SeedResult result;
  std::string progress;
};

SeedOutput run_seed(const RunConfig& config, const TreeMdp& mdp,
                    const GapReport* report, double optimal_value,
                    std::uint64_t seed) {
  const auto& st = mdp.structure();
  Environment env(mdp);
  BoundConfig bounds;
  bounds.mode = config.bound;
  bounds.c = config.effective_c();
  bounds.delta = config.delta;
  bounds.epsilon = config.epsilon;

  ValueBook book(mdp, report);
  SeedOutput out;
  out.result.seed = seed;
  const std::string_view algo = to_string(config.algo);
  double regret = 0.0;
  double gap = std::numeric_limits<double>::quiet_NaN();
  std::int64_t last_row = 0;

  auto row = [&](std::int64_t episode, bool stopped) {
    out.progress += fmt::format(
        "{},{},{},{},{},{}\n", seed, episode, algo,
        std::isnan(gap) ? std::string("NA") : fmt::format("{}", gap), regret,
        stopped ? 1 : 0);
    last_row = episode;
  };

  LearnerOptions options;
  options.sink = [&](const LearnerEvent& ev) {
    if (ev.stop) {
      if (ev.best) gap = optimal_value - book.value(ev.best_class, *ev.best);
      row(ev.episode, true);
      return;
    }
    regret += optimal_value - book.value(ev.played_class, *ev.played);
    if (is_pac(config.algo)) {
      if (ev.best) gap = optimal_value - book.value(ev.best_class, *ev.best);
    } else {
      gap = optimal_value - book.value(ev.played_class, *ev.played);
    }
    if (ev.episode % config.stride == 0) row(ev.episode, false);
  };

  row(0, false);
  Rng rng(seed);
  Policy answer;
  if (config.algo == Algorithm::kUcbT) {
    options.max_episodes = 0;
    const std::int64_t horizon =
        config.budget > 0 ? config.budget : kDefaultHorizon;
    CountsTable counts = ucb_t(env, bounds, rng, horizon, options);
    if (last_row != counts.episodes()) row(counts.episodes(), false);
    answer = canonical_form(st, best_empirical_policy(counts, st).policy);
    out.result.episodes = counts.episodes();
    out.result.stopped = false;
  } else {
    options.max_episodes =
        config.budget > 0 ? config.budget : kDefaultPacBudget;
    PacResult pac;
    switch (config.algo) {
      case Algorithm::kLucbT: pac = lucb_t(env, bounds, rng, options); break;
      case Algorithm::kLucbTUniform:
        pac = lucb_t_uniform(env, bounds, rng, options);
        break;
      case Algorithm::kFlatLucb:
        pac = flat_lucb(env, bounds, rng, options);
        break;
      case Algorithm::kUcbT: break;
    }
    if (pac.outcome == PacOutcome::kBudgetExhausted &&
        last_row != pac.episodes)
      row(pac.episodes, false);
    answer = pac.policy;
    out.result.episodes = pac.episodes;
    out.result.batches = pac.batches;
    out.result.stopped = pac.outcome == PacOutcome::kStopped;
  }
  out.result.value = book.value(policy_class_hash(st, answer), answer);
  out.result.mistake =
      out.result.value < optimal_value - config.epsilon - kMistakeTolerance;
  out.result.regret = regret;
  return out;
}

}  // namespace

RunSummary run(const RunConfig& config, std::ostream* log) {
  config.validate();
  const GameSpec spec = GameSpec::make(config.game, config.role);
  const OpponentStrategy opponent = config.opponent.load(spec);
  const TreeMdp mdp = compile(spec, opponent);
  const auto& st = mdp.structure();

  std::optional<GapReport> report;
  if (count_policy_classes(st, kDefaultClassGuard) <= kDefaultClassGuard)
    report = gap_report(mdp, config.epsilon);
  const double optimal_value =
      report ? report->optimal_value : solve_optimal(mdp).value;

  std::vector<SeedOutput> outputs(config.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= config.seeds.size()) return;
      try {
        outputs[i] = run_seed(config, mdp, report ? &*report : nullptr,
                              optimal_value, config.seeds[i]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n_workers = std::min<int>(worker_count(config.threads),
                                      static_cast<int>(config.seeds.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  RunSummary summary;
  summary.optimal_value = optimal_value;
  std::vector<double> episodes;
  int mistakes = 0;
  for (auto& o : outputs) {
    summary.seeds.push_back(o.result);
    episodes.push_back(static_cast<double>(o.result.episodes));
    mistakes += o.result.mistake ? 1 : 0;
  }
  std::tie(summary.mean_episodes, summary.se_episodes) = mean_and_se(episodes);
  summary.mistake_rate =
      static_cast<double>(mistakes) / static_cast<double>(outputs.size());

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    std::ofstream progress(config.out_dir / "progress.csv");
    progress << "seed,episode,algo,value_gap,cum_regret,stopped\n";
    for (auto& o : outputs) progress << o.progress;
    std::ofstream runs(config.out_dir / "runs.csv");
    runs << "seed,algo,episodes,batches,stopped,value,mistake,final_regret\n";
    for (auto& r : summary.seeds)
      fmt::print(runs, "{},{},{},{},{},{},{},{}\n", r.seed,
                 to_string(config.algo), r.episodes, r.batches,
                 r.stopped ? 1 : 0, r.value, r.mistake ? 1 : 0, r.regret);
    std::ofstream sum(config.out_dir / "summary.csv");
    sum << "algo,game,role,epsilon,delta,mean_episodes,se_episodes,"
           "mistake_rate\n";
    fmt::print(sum, "{},{},{},{},{},{},{},{}\n", to_string(config.algo),
               to_string(config.game), to_string(config.role),
               config.epsilon, config.delta, summary.mean_episodes,
               summary.se_episodes, summary.mistake_rate);
  }
  if (log) {
    const double rel = summary.mean_episodes > 0.0
                           ? 100.0 * summary.se_episodes /
                                 summary.mean_episodes
                           : 0.0;
    fmt::print(*log,
               "{} on {} ({}), {} seeds: episodes {:.4g} +- {:.4g} ({:.1f}%), "
               "mistake rate {:.3f}\n",
               to_string(config.algo), to_string(config.game),
               to_string(config.role), config.seeds.size(),
               summary.mean_episodes, summary.se_episodes, rel,
               summary.mistake_rate);
  }
  return summary;
}

}  // namespace treebandit
