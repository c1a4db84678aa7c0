#pragma once

#include <vector>

#include "metagrad/common.hpp"
#include "metagrad/rng.hpp"

namespace metagrad {

// ---------------------------------------------------------------------------
// Multi-armed bandit task family: arm means drawn as exp(Uniform(lo, hi)),
// pull rewards get additive Gaussian noise.
// ---------------------------------------------------------------------------

struct BanditTaskConfig {
    int arms = 30;
    double mean_log_lo = -100.0;
    double mean_log_hi = 1.0;
    double noise_sd = 2.0;
};

struct BanditTask {
    Vec arm_means;
    double noise_sd = 2.0;
};

BanditTask sample_bandit_task(const BanditTaskConfig& cfg, RngStream& rng);

inline double bandit_pull(const BanditTask& task, int arm, RngStream& rng) {
    return task.arm_means[static_cast<std::size_t>(arm)] + task.noise_sd * rng.normal();
}

// expected one-pull reward under policy `pi`
inline double bandit_expected_reward(const BanditTask& task, std::span<const double> pi) {
    return dot(task.arm_means, pi);
}

// ---------------------------------------------------------------------------
// Two-object gridworld. Square room; reaching an object yields +1 or -1
// (which object is positive flips every `flip_interval` environment steps),
// every other step costs `step_penalty`. Episodes are a fixed `horizon` long;
// reaching an object relocates both objects, it does not terminate.
// ---------------------------------------------------------------------------

struct GridConfig {
    int size = 5;
    int horizon = 16;
    long flip_interval = 6400;
    double step_penalty = -0.04;

    int cells() const { return size * size; }
    int feature_dim() const { return 3 * cells() + horizon; }
};

struct GridState {
    int agent = 0;
    int obj_a = 0;
    int obj_b = 0;
    int t = 0;
};

struct GridStepResult {
    double reward = 0.0;
    bool done = false;
};

class GridworldEnv {
  public:
    explicit GridworldEnv(const GridConfig& cfg) : cfg_(cfg) {}

    void reset_episode(RngStream& rng);

    // action: 0 up, 1 down, 2 left, 3 right. Wall bumps keep the cell.
    GridStepResult step(int action, RngStream& rng);

    const GridState& state() const { return st_; }
    void set_state(const GridState& st) { st_ = st; }
    long global_step() const { return global_step_; }
    void set_global_step(long s) { global_step_ = s; }
    // positive object is A in even phases, B in odd ones
    bool phase_flipped() const { return (global_step_ / cfg_.flip_interval) % 2 == 1; }
    const GridConfig& config() const { return cfg_; }

  private:
    void relocate_objects(RngStream& rng);

    GridConfig cfg_;
    GridState st_;
    long global_step_ = 0;
};

// Feature map: one-hot agent cell, one-hot cell per object, one-hot timestep.
// Exactly four active indices; callers exploit the sparsity.
struct GridFeatures {
    int idx[4];
    static GridFeatures of(const GridConfig& cfg, int agent, int obj_a, int obj_b, int t) {
        const int c = cfg.cells();
        return GridFeatures{{agent, c + obj_a, 2 * c + obj_b, 3 * c + t}};
    }
};

// ---------------------------------------------------------------------------
// Tiny Bernoulli bandit with an enumerable outcome space, used as the exact
// oracle instance. Rewards are 0/1 with per-arm success probability.
// ---------------------------------------------------------------------------

struct EnumerableBandit {
    Vec probs;  // 2-3 arms
    int arms() const { return static_cast<int>(probs.size()); }
    double reward_prob(int arm, double reward) const {
        const double p = probs[static_cast<std::size_t>(arm)];
        return reward > 0.5 ? p : 1.0 - p;
    }
    double expected_reward(std::span<const double> pi) const { return dot(probs, pi); }
};

struct EnumeratedOutcome {
    double probability = 0.0;
    std::vector<int> arms;     // one entry per pull
    std::vector<double> rewards;
};

// All (arm, reward) sequences of `pulls` pulls under a fixed policy sequence
// (one distribution per pull). Probabilities sum to one.
std::vector<EnumeratedOutcome> enumerate_outcomes(const EnumerableBandit& bandit,
                                                  const std::vector<Vec>& policy_per_pull);

}  // namespace metagrad
