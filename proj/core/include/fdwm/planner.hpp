#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fdwm/geometry.hpp"
#include "fdwm/sim.hpp"

namespace fdwm {

struct PlanConfig {
    int horizon = 5;
    int population = 64;
    int elites = 8;
    int iterations = 4;
    double action_lo = -0.05, action_hi = 0.05;
    int replan_every = 1;
    double success_threshold = 0.05;
    double sigma_floor = 1e-3;

    void validate() const;
};

struct GoalSpec {
    RgbdFrame goal_frame;
};

// mean squared RGB error over all pixels
double goal_cost(const RgbdFrame& frame, const GoalSpec& goal);

// Scores a batch of candidate action sequences by the final rolled-out frame.
using BatchRollout =
    std::function<std::vector<RgbdFrame>(const std::vector<std::vector<Action>>&)>;

struct PlanResult {
    std::vector<Action> best;
    double best_cost = 0.0;
    std::vector<double> best_per_iteration;  // best-ever after each iteration
};

// Cross-entropy method over action sequences: zero-mean diagonal Gaussian
// with sigma at half the bound range, clipped samples, elites refit the
// distribution, best-ever sequence returned. Deterministic in the seed.
PlanResult cem_plan(const BatchRollout& rollout, const GoalSpec& goal, const PlanConfig& config,
                    uint64_t seed);

struct EpisodeResult {
    bool success = false;
    double final_cost = 0.0;
    std::vector<double> cost_trace;  // true-observation cost per control step
    std::vector<RgbdFrame> frames;
    int steps = 0;
};

// Builds a candidate scorer from the current true observation/state; the
// learned model uses the frame, the oracle uses the simulator state.
using RolloutFactory =
    std::function<BatchRollout(const RgbdFrame& obs, const WorldState& state)>;

// Receding-horizon control in the real simulator. Success is judged only on
// true observations against the goal image.
EpisodeResult mpc_episode(const EnvConfig& env, const WorldState& start,
                          const RolloutFactory& make_rollout, const GoalSpec& goal,
                          const PlanConfig& config, int max_steps, uint64_t seed);

// Baseline that samples uniformly random in-bounds actions.
EpisodeResult random_policy_episode(const EnvConfig& env, const WorldState& start,
                                    const GoalSpec& goal, const PlanConfig& config, int max_steps,
                                    uint64_t seed);

// Scorer backed by the simulator itself (planning upper bound).
BatchRollout oracle_rollout(const EnvConfig& env, const WorldState& state);

}  // namespace fdwm
