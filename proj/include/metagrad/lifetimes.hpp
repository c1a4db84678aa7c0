#pragma once

#include <optional>

#include "metagrad/environments.hpp"
#include "metagrad/estimator.hpp"
#include "metagrad/learners.hpp"
#include "metagrad/meta_params.hpp"

// Lifetime runners: one lifetime = one inner learner trained from scratch on
// one sampled task. Lifetimes are embarrassingly parallel; every run draws
// all randomness from its own StreamTree.

namespace metagrad {

// ---------------------------------------------------------------------------
// Bandit lifetimes
// ---------------------------------------------------------------------------

struct BanditPreset {
    BanditTaskConfig task;
    int lifetime = 30;   // batches sampled; lifetime - 1 inner updates
    int batch_size = 10;
    double logit_init_sd = 0.01;
    std::vector<int> bucket_starts{0, 8};

    int max_truncation() const { return lifetime - 1; }
};

struct BanditLifetimeResult {
    LifetimeTape tape;        // recorded over the (possibly truncated) window
    double mean_return = 0.0; // batch-mean reward averaged over the full lifetime
    bool aborted = false;
};

// Runs one lifetime recording the tape over a window of `truncation` inner
// updates (window start drawn uniformly; the full-lifetime window is
// deterministic). The meta-Jacobian starts at zero at the window start.
BanditLifetimeResult run_bandit_lifetime(const BanditPreset& preset, const MetaParams& eta,
                                         HessianMode hessian_mode, int truncation, StreamTree tree);

// Objective-only evaluation: mean batch reward averaged over the lifetime,
// or over a randomly drawn window of `truncation` updates when
// truncation >= 0. Returns NaN when the lifetime aborts.
double bandit_lifetime_return(const BanditPreset& preset, const MetaParams& eta, StreamTree tree,
                              int truncation = -1);

// The meta-objective the estimators target: the sum over window steps of the
// batch-mean reward (the full lifetime when truncation < 0). Ground-truth
// differencing and black-box fitness must use this scale.
double bandit_lifetime_objective(const BanditPreset& preset, const MetaParams& eta, StreamTree tree,
                                 int truncation = -1);

// ---------------------------------------------------------------------------
// Maze lifetimes (advantage-estimation study): fresh learner per lifetime,
// single window starting at the initial parameters, constant reward phase.
// ---------------------------------------------------------------------------

struct MazePreset {
    grid::LearnerConfig learner;
    int lifetime = 8;     // batches; lifetime - 1 inner updates
    int batch_size = 10;

    static MazePreset standard();
};

struct MazeLifetimeResult {
    LifetimeTape tape;
    double mean_return = 0.0;  // mean per-step reward over the lifetime
    bool aborted = false;
};

MazeLifetimeResult run_maze_lifetime(const MazePreset& preset, const MetaParams& eta,
                                     HessianMode hessian_mode, BaselineMode baseline,
                                     StreamTree tree);

// Sum over lifetime steps of the batch-mean discounted episode return; the
// quantity whose gradient the maze estimators target.
double maze_lifetime_objective(const MazePreset& preset, const MetaParams& eta, StreamTree tree);

// ---------------------------------------------------------------------------
// Online gridworld learner: persists across outer updates, one truncation
// window of inner updates per call. The tape covers the window; the Jacobian
// resets at its start.
// ---------------------------------------------------------------------------

struct GridOnlinePreset {
    grid::LearnerConfig learner;
    int inner_batch = 5;   // parallel environments, one episode each per update
    int truncation = 16;   // inner updates per outer update

    static GridOnlinePreset standard();
};

struct GridOnlineLearner {
    Vec theta;
    Vec reward_history;       // mean batch reward per inner update, most recent last
    long env_steps = 0;       // per-environment step count, drives the reward phase
    long inner_updates = 0;

    explicit GridOnlineLearner(const GridOnlinePreset& preset);
};

struct GridWindowResult {
    LifetimeTape tape;
    double objective = 0.0;          // sum over window steps of batch-mean discounted return
    double mean_step_reward = 0.0;   // per environment step, over the window
    double mean_episode_return = 0.0;
    double mean_entropy_coef = 0.0;
    bool aborted = false;
};

// Advances the learner by `preset.truncation` inner updates. With
// `want_tape` false only the inner learning runs (objective evaluation for
// black-box estimators).
GridWindowResult run_grid_window(const GridOnlinePreset& preset, GridOnlineLearner& learner,
                                 const MetaParams& eta, HessianMode hessian_mode,
                                 BaselineMode baseline, StreamTree tree, bool want_tape);

}  // namespace metagrad
