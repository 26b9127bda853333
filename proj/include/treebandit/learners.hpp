#ifndef TREEBANDIT_LEARNERS_HPP
#define TREEBANDIT_LEARNERS_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>

#include "treebandit/estimator.hpp"
#include "treebandit/tree_mdp.hpp"

namespace treebandit {

// What a learner may touch: the known structure (topology, rewards, returns)
// and the ability to run an episode. Transition probabilities stay hidden.
class Environment {
 public:
  explicit Environment(std::shared_ptr<const TreeMdp> mdp)
      : owner_(std::move(mdp)), mdp_(owner_.get()) {}
  // Non-owning; mdp must outlive the environment.
  explicit Environment(const TreeMdp& mdp) : mdp_(&mdp) {}

  const TreeStructure& structure() const { return mdp_->structure(); }
  TerminalId play(const Policy& pi, Rng& rng) const {
    return sample_terminal(*mdp_, pi, rng);
  }

 private:
  std::shared_ptr<const TreeMdp> owner_;
  const TreeMdp* mdp_;
};

enum class Phase { kInit, kMain };

// Emitted after every episode, and once more when a PAC learner stops (with
// stop set and the episode index of the last play). Pointers are only valid
// during the callback.
struct LearnerEvent {
  std::int64_t episode = 0;
  std::int64_t batch = 0;  // loop iteration t
  Phase phase = Phase::kInit;
  std::uint64_t played_class = 0;
  TerminalId terminal = -1;
  const Policy* played = nullptr;
  // PAC learners: current empirical best and the stopping-rule bounds.
  const Policy* best = nullptr;
  std::uint64_t best_class = 0;
  double lcb1 = std::numeric_limits<double>::quiet_NaN();
  double ucb2 = std::numeric_limits<double>::quiet_NaN();
  bool stop = false;
};

using EventSink = std::function<void(const LearnerEvent&)>;

struct LearnerOptions {
  std::int64_t max_episodes = 0;  // 0 means no budget
  EventSink sink;
};

enum class PacOutcome { kStopped, kBudgetExhausted };

struct PacResult {
  Policy policy;  // canonical form
  std::int64_t episodes = 0;
  std::int64_t batches = 0;  // stopping checks performed
  PacOutcome outcome = PacOutcome::kStopped;
};

// The learners read mode, C, delta and epsilon from the config; the schedule
// and the |Pi|, |Sigma| terms are derived from the structure.
PacResult lucb_t(const Environment& env, const BoundConfig& config, Rng& rng,
                 const LearnerOptions& options = {});
PacResult lucb_t_uniform(const Environment& env, const BoundConfig& config,
                         Rng& rng, const LearnerOptions& options = {});
// Runs exactly `horizon` episodes and returns the final counts.
CountsTable ucb_t(const Environment& env, const BoundConfig& config, Rng& rng,
                  std::int64_t horizon, const LearnerOptions& options = {});
// One arm per policy class; refuses trees with more than 2^16 classes.
PacResult flat_lucb(const Environment& env, const BoundConfig& config,
                    Rng& rng, const LearnerOptions& options = {});

}  // namespace treebandit

#endif  // TREEBANDIT_LEARNERS_HPP
