#include "fdwm/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fdwm/rng.hpp"

namespace fdwm {

void PlanConfig::validate() const {
    if (horizon < 1) throw std::invalid_argument("plan: horizon must be >= 1");
    if (elites < 1 || elites > population)
        throw std::invalid_argument("plan: need 1 <= elites <= population");
    if (iterations < 1) throw std::invalid_argument("plan: iterations must be >= 1");
    if (!(action_lo < action_hi)) throw std::invalid_argument("plan: empty action bounds");
    if (replan_every < 1) throw std::invalid_argument("plan: replan_every must be >= 1");
}

double goal_cost(const RgbdFrame& frame, const GoalSpec& goal) {
    if (frame.h != goal.goal_frame.h || frame.w != goal.goal_frame.w)
        throw std::invalid_argument("goal_cost: extent mismatch");
    double s = 0.0;
    for (size_t i = 0; i < frame.rgb.size(); ++i) {
        double d = static_cast<double>(frame.rgb[i]) - static_cast<double>(goal.goal_frame.rgb[i]);
        s += d * d;
    }
    return s / static_cast<double>(frame.rgb.size());
}

PlanResult cem_plan(const BatchRollout& rollout, const GoalSpec& goal, const PlanConfig& config,
                    uint64_t seed) {
    config.validate();
    const int dims = config.horizon * 2;
    std::vector<double> mean(static_cast<size_t>(dims), 0.0);
    std::vector<double> sigma(static_cast<size_t>(dims),
                              0.5 * (config.action_hi - config.action_lo));

    PlanResult result;
    result.best_cost = std::numeric_limits<double>::infinity();

    for (int it = 0; it < config.iterations; ++it) {
        std::vector<std::vector<Action>> candidates(static_cast<size_t>(config.population));
        for (int c = 0; c < config.population; ++c) {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(it), static_cast<uint64_t>(c)));
            auto& cand = candidates[static_cast<size_t>(c)];
            cand.resize(static_cast<size_t>(config.horizon));
            for (int t = 0; t < config.horizon; ++t) {
                double dx = mean[static_cast<size_t>(t) * 2] +
                            sigma[static_cast<size_t>(t) * 2] * rng.normal();
                double dy = mean[static_cast<size_t>(t) * 2 + 1] +
                            sigma[static_cast<size_t>(t) * 2 + 1] * rng.normal();
                cand[static_cast<size_t>(t)] = {
                    std::clamp(dx, config.action_lo, config.action_hi),
                    std::clamp(dy, config.action_lo, config.action_hi)};
            }
        }

        std::vector<RgbdFrame> finals = rollout(candidates);
        if (finals.size() != candidates.size())
            throw std::runtime_error("cem_plan: rollout returned wrong candidate count");
        std::vector<double> costs(candidates.size());
        for (size_t c = 0; c < candidates.size(); ++c) {
            costs[c] = goal_cost(finals[c], goal);
            if (!std::isfinite(costs[c]))
                throw std::runtime_error("cem_plan: non-finite cost for candidate " +
                                         std::to_string(c) + " at iteration " +
                                         std::to_string(it));
        }

        std::vector<size_t> order(candidates.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](size_t a, size_t b) { return costs[a] < costs[b]; });

        if (costs[order[0]] < result.best_cost) {
            result.best_cost = costs[order[0]];
            result.best = candidates[order[0]];
        }
        result.best_per_iteration.push_back(result.best_cost);

        // refit to elites
        for (int t = 0; t < dims; ++t) {
            double m = 0.0;
            for (int e = 0; e < config.elites; ++e) {
                const auto& cand = candidates[order[static_cast<size_t>(e)]];
                double v = t % 2 == 0 ? cand[static_cast<size_t>(t / 2)].dx
                                      : cand[static_cast<size_t>(t / 2)].dy;
                m += v;
            }
            m /= config.elites;
            double var = 0.0;
            for (int e = 0; e < config.elites; ++e) {
                const auto& cand = candidates[order[static_cast<size_t>(e)]];
                double v = t % 2 == 0 ? cand[static_cast<size_t>(t / 2)].dx
                                      : cand[static_cast<size_t>(t / 2)].dy;
                var += (v - m) * (v - m);
            }
            var /= config.elites;
            mean[static_cast<size_t>(t)] = m;
            sigma[static_cast<size_t>(t)] = std::max(config.sigma_floor, std::sqrt(var));
        }
    }
    return result;
}

EpisodeResult mpc_episode(const EnvConfig& env, const WorldState& start,
                          const RolloutFactory& make_rollout, const GoalSpec& goal,
                          const PlanConfig& config, int max_steps, uint64_t seed) {
    config.validate();
    EpisodeResult res;
    WorldState state = start;
    RgbdFrame obs = render(state, env);
    res.frames.push_back(obs);
    double cost = goal_cost(obs, goal);
    res.cost_trace.push_back(cost);
    if (cost < config.success_threshold) {
        res.success = true;
        res.final_cost = cost;
        return res;
    }

    int executed = 0;
    while (executed < max_steps) {
        BatchRollout rollout = make_rollout(obs, state);
        PlanResult plan =
            cem_plan(rollout, goal, config, mix_seed(seed, static_cast<uint64_t>(executed)));
        int to_run = std::min(config.replan_every, static_cast<int>(plan.best.size()));
        for (int i = 0; i < to_run && executed < max_steps; ++i) {
            state = step(state, env, plan.best[static_cast<size_t>(i)]);
            ++executed;
            obs = render(state, env);
            res.frames.push_back(obs);
            res.cost_trace.push_back(goal_cost(obs, goal));
        }
        if (res.cost_trace.back() < config.success_threshold) break;
    }
    res.steps = executed;
    res.final_cost = res.cost_trace.back();
    res.success = res.final_cost < config.success_threshold;
    return res;
}

EpisodeResult random_policy_episode(const EnvConfig& env, const WorldState& start,
                                    const GoalSpec& goal, const PlanConfig& config, int max_steps,
                                    uint64_t seed) {
    EpisodeResult res;
    WorldState state = start;
    RgbdFrame obs = render(state, env);
    res.frames.push_back(obs);
    res.cost_trace.push_back(goal_cost(obs, goal));
    if (res.cost_trace.back() < config.success_threshold) {
        res.success = true;
        res.final_cost = res.cost_trace.back();
        return res;
    }
    Rng rng(mix_seed(seed, 0x7a4d0ULL));
    for (int t = 0; t < max_steps; ++t) {
        Action a{rng.uniform(config.action_lo, config.action_hi),
                 rng.uniform(config.action_lo, config.action_hi)};
        state = step(state, env, a);
        obs = render(state, env);
        res.frames.push_back(obs);
        res.cost_trace.push_back(goal_cost(obs, goal));
    }
    res.steps = max_steps;
    res.final_cost = res.cost_trace.back();
    res.success = res.final_cost < config.success_threshold;
    return res;
}

BatchRollout oracle_rollout(const EnvConfig& env, const WorldState& state) {
    return [env, state](const std::vector<std::vector<Action>>& candidates) {
        std::vector<RgbdFrame> finals;
        finals.reserve(candidates.size());
        for (const auto& seq : candidates) {
            WorldState s = state;
            for (const Action& a : seq) s = step(s, env, a);
            finals.push_back(render(s, env));
        }
        return finals;
    };
}

}  // namespace fdwm
