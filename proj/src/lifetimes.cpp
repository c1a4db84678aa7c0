#include "metagrad/lifetimes.hpp"

#include <algorithm>
#include <limits>

namespace metagrad {

namespace {

// stream tags within one lifetime tree
enum : std::uint64_t { kTaskTag = 1, kInitTag = 2, kDataTag = 3, kWindowTag = 4 };

int draw_window_start(int lifetime, int truncation, StreamTree& tree) {
    const int starts = lifetime - truncation;  // window covers steps [s, s+T]
    if (starts <= 1) return 0;
    RngStream rng = tree.stream(kWindowTag);
    return static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(starts)));
}

MetaParams bandit_eta(const BanditPreset& preset, const MetaParams& eta) {
    MetaParams out = eta;
    if (out.mapping == MetaMapping::LearningRateBuckets && out.bucket_starts.empty())
        out.bucket_starts = preset.bucket_starts;
    return out;
}

}  // namespace

BanditLifetimeResult run_bandit_lifetime(const BanditPreset& preset, const MetaParams& eta_in,
                                         HessianMode hessian_mode, int truncation, StreamTree tree) {
    const MetaParams eta = bandit_eta(preset, eta_in);
    const int lifetime = preset.lifetime;
    if (truncation < 1 || truncation > preset.max_truncation())
        throw ConfigError("bandit truncation outside [1, lifetime-1]");

    BanditLifetimeResult result;
    const int start = draw_window_start(lifetime, truncation, tree);
    const int last = start + truncation;
    result.tape.window_start = start;
    result.tape.lifetime = lifetime;
    result.tape.steps.reserve(static_cast<std::size_t>(truncation) + 1);

    RngStream task_rng = tree.stream(kTaskTag);
    RngStream init_rng = tree.stream(kInitTag);
    RngStream data_rng = tree.stream(kDataTag);

    const BanditTask task = sample_bandit_task(preset.task, task_rng);
    Vec theta(static_cast<std::size_t>(preset.task.arms));
    for (double& v : theta) v = preset.logit_init_sd * init_rng.normal();

    Matrix jac(eta.values.size(), theta.size());
    Vec scratch;
    double return_sum = 0.0;

    try {
        for (int k = 0; k < lifetime; ++k) {
            const Vec pi = softmax(theta);
            const bandit::Batch batch = bandit::sample_batch(task, pi, preset.batch_size, data_rng);
            const bandit::StepOps ops(eta, theta, batch, k);
            return_sum += ops.mean_return();

            const bool in_window = k >= start && k <= last;
            if (in_window) record_step(result.tape, jac, ops, BaselineMode::None);
            if (k < lifetime - 1) {
                if (in_window && k < last) propagate_meta_jacobian(jac, ops, hessian_mode, scratch);
                const Vec step = ops.update();
                axpy(1.0, step, theta);
                require_finite(theta, "bandit logits");
            }
        }
    } catch (const NonFiniteError&) {
        result.aborted = true;
        return result;
    }
    result.mean_return = return_sum / static_cast<double>(lifetime);
    return result;
}

namespace {

// window sum of batch-mean rewards, and the number of steps in the window
std::pair<double, int> bandit_window_sum(const BanditPreset& preset, const MetaParams& eta,
                                         StreamTree tree, int truncation) {
    const int lifetime = preset.lifetime;
    int start = 0;
    int last = lifetime - 1;
    if (truncation >= 0) {
        start = draw_window_start(lifetime, truncation, tree);
        last = start + truncation;
    }

    RngStream task_rng = tree.stream(kTaskTag);
    RngStream init_rng = tree.stream(kInitTag);
    RngStream data_rng = tree.stream(kDataTag);

    const BanditTask task = sample_bandit_task(preset.task, task_rng);
    Vec theta(static_cast<std::size_t>(preset.task.arms));
    for (double& v : theta) v = preset.logit_init_sd * init_rng.normal();

    double return_sum = 0.0;
    int counted = 0;
    for (int k = 0; k < lifetime; ++k) {
        const Vec pi = softmax(theta);
        const bandit::Batch batch = bandit::sample_batch(task, pi, preset.batch_size, data_rng);
        if (k >= start && k <= last) {
            double batch_sum = 0.0;
            for (const bandit::Pull& pull : batch) batch_sum += pull.reward;
            return_sum += batch_sum / static_cast<double>(preset.batch_size);
            ++counted;
        }
        if (k < lifetime - 1) {
            const bandit::StepOps ops(eta, theta, batch, k);
            const Vec step = ops.update();
            axpy(1.0, step, theta);
            require_finite(theta, "bandit logits");
        }
    }
    return {return_sum, counted};
}

}  // namespace

double bandit_lifetime_return(const BanditPreset& preset, const MetaParams& eta_in, StreamTree tree,
                              int truncation) {
    try {
        const auto [sum, counted] =
            bandit_window_sum(preset, bandit_eta(preset, eta_in), tree, truncation);
        return sum / static_cast<double>(counted);
    } catch (const NonFiniteError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

double bandit_lifetime_objective(const BanditPreset& preset, const MetaParams& eta_in,
                                 StreamTree tree, int truncation) {
    try {
        return bandit_window_sum(preset, bandit_eta(preset, eta_in), tree, truncation).first;
    } catch (const NonFiniteError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

// ---------------------------------------------------------------------------

MazePreset MazePreset::standard() {
    MazePreset p;
    p.learner.env.size = 3;
    p.learner.env.horizon = 8;
    p.learner.env.flip_interval = 64;
    p.learner.inner_lr = 1.0;
    p.learner.value_coef = 0.1;
    p.learner.gamma = 0.99;
    p.lifetime = 8;
    p.batch_size = 10;
    return p;
}

namespace {

grid::Batch sample_grid_batch(const grid::LearnerConfig& cfg, std::span<const double> theta,
                              int batch_size, long env_step_base, StreamTree step_tree) {
    grid::Batch batch;
    batch.episodes.reserve(static_cast<std::size_t>(batch_size));
    for (int e = 0; e < batch_size; ++e) {
        GridworldEnv env(cfg.env);
        env.set_global_step(env_step_base);
        RngStream rng = step_tree.child(static_cast<std::uint64_t>(e)).stream();
        env.reset_episode(rng);
        batch.episodes.push_back(grid::sample_episode(cfg, theta, env, rng));
    }
    return batch;
}

double batch_step_reward(const grid::Batch& batch) {
    double sum = 0.0;
    std::size_t steps = 0;
    for (const grid::Episode& ep : batch.episodes) {
        for (const grid::Transition& tr : ep) sum += tr.reward;
        steps += ep.size();
    }
    return sum / static_cast<double>(steps);
}

double batch_mean_discounted_return(const grid::LearnerConfig& cfg, const grid::Batch& batch) {
    double sum = 0.0;
    for (const grid::Episode& ep : batch.episodes) {
        double disc = 0.0;
        for (std::size_t t = ep.size(); t-- > 0;) disc = ep[t].reward + cfg.gamma * disc;
        sum += disc;
    }
    return sum / static_cast<double>(batch.episodes.size());
}

}  // namespace

MazeLifetimeResult run_maze_lifetime(const MazePreset& preset, const MetaParams& eta,
                                     HessianMode hessian_mode, BaselineMode baseline,
                                     StreamTree tree) {
    MazeLifetimeResult result;
    result.tape.window_start = 0;
    result.tape.lifetime = preset.lifetime;

    Vec theta = grid::zero_theta(preset.learner);
    Vec history(EntropyNet::kInputDim, 0.0);
    Matrix jac(eta.values.size(), theta.size());
    Vec scratch;
    double reward_sum = 0.0;

    try {
        for (int k = 0; k < preset.lifetime; ++k) {
            const grid::Batch batch =
                sample_grid_batch(preset.learner, theta, preset.batch_size,
                                  static_cast<long>(k) * preset.learner.env.horizon,
                                  tree.child({kDataTag, static_cast<std::uint64_t>(k)}));
            const grid::StepOps ops(preset.learner, eta, theta, batch, history);
            reward_sum += batch_step_reward(batch);

            record_step(result.tape, jac, ops, baseline);
            if (k < preset.lifetime - 1) {
                propagate_meta_jacobian(jac, ops, hessian_mode, scratch);
                const Vec step = ops.update();
                axpy(1.0, step, theta);
                require_finite(theta, "maze parameters");
            }
            std::rotate(history.begin(), history.begin() + 1, history.end());
            history.back() = batch_step_reward(batch);
        }
    } catch (const NonFiniteError&) {
        result.aborted = true;
        return result;
    }
    result.mean_return = reward_sum / static_cast<double>(preset.lifetime);
    return result;
}

double maze_lifetime_objective(const MazePreset& preset, const MetaParams& eta, StreamTree tree) {
    Vec theta = grid::zero_theta(preset.learner);
    Vec history(EntropyNet::kInputDim, 0.0);
    double objective = 0.0;
    try {
        for (int k = 0; k < preset.lifetime; ++k) {
            const grid::Batch batch =
                sample_grid_batch(preset.learner, theta, preset.batch_size,
                                  static_cast<long>(k) * preset.learner.env.horizon,
                                  tree.child({kDataTag, static_cast<std::uint64_t>(k)}));
            objective += batch_mean_discounted_return(preset.learner, batch);
            if (k < preset.lifetime - 1) {
                const grid::StepOps ops(preset.learner, eta, theta, batch, history);
                const Vec step = ops.update();
                axpy(1.0, step, theta);
                require_finite(theta, "maze parameters");
            }
            std::rotate(history.begin(), history.begin() + 1, history.end());
            history.back() = batch_step_reward(batch);
        }
    } catch (const NonFiniteError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return objective;
}

// ---------------------------------------------------------------------------

GridOnlinePreset GridOnlinePreset::standard() {
    GridOnlinePreset p;
    p.learner.env.size = 5;
    p.learner.env.horizon = 16;
    p.learner.env.flip_interval = 6400;
    p.learner.inner_lr = 1.0;
    p.learner.value_coef = 0.1;
    p.learner.gamma = 0.99;
    p.inner_batch = 5;
    p.truncation = 16;
    return p;
}

GridOnlineLearner::GridOnlineLearner(const GridOnlinePreset& preset)
    : theta(grid::zero_theta(preset.learner)), reward_history(EntropyNet::kInputDim, 0.0) {}

GridWindowResult run_grid_window(const GridOnlinePreset& preset, GridOnlineLearner& learner,
                                 const MetaParams& eta, HessianMode hessian_mode,
                                 BaselineMode baseline, StreamTree tree, bool want_tape) {
    GridWindowResult result;
    result.tape.window_start = 0;
    result.tape.lifetime = preset.truncation;

    Matrix jac;
    if (want_tape) jac = Matrix(eta.values.size(), learner.theta.size());
    Vec scratch;
    double step_reward_sum = 0.0;
    double episode_return_sum = 0.0;
    double objective_sum = 0.0;
    double coef_sum = 0.0;
    long episodes = 0;

    try {
        for (int k = 0; k < preset.truncation; ++k) {
            const grid::Batch batch =
                sample_grid_batch(preset.learner, learner.theta, preset.inner_batch,
                                  learner.env_steps,
                                  tree.child({kDataTag, static_cast<std::uint64_t>(k)}));
            const grid::StepOps ops(preset.learner, eta, learner.theta, batch, learner.reward_history);
            step_reward_sum += batch_step_reward(batch);
            objective_sum += batch_mean_discounted_return(preset.learner, batch);
            for (const grid::Episode& ep : batch.episodes) {
                double raw = 0.0;
                for (const grid::Transition& tr : ep) raw += tr.reward;
                episode_return_sum += raw;
                ++episodes;
            }
            coef_sum += ops.entropy_coef();

            if (want_tape) {
                record_step(result.tape, jac, ops, baseline);
                if (k < preset.truncation - 1) propagate_meta_jacobian(jac, ops, hessian_mode, scratch);
            }
            const Vec step = ops.update();
            axpy(1.0, step, learner.theta);
            require_finite(learner.theta, "gridworld parameters");

            std::rotate(learner.reward_history.begin(), learner.reward_history.begin() + 1,
                        learner.reward_history.end());
            learner.reward_history.back() = batch_step_reward(batch);
            learner.env_steps += preset.learner.env.horizon;
            ++learner.inner_updates;
        }
    } catch (const NonFiniteError&) {
        result.aborted = true;
        return result;
    }
    result.objective = objective_sum;
    result.mean_step_reward = step_reward_sum / static_cast<double>(preset.truncation);
    result.mean_episode_return = episode_return_sum / static_cast<double>(episodes);
    result.mean_entropy_coef = coef_sum / static_cast<double>(preset.truncation);
    return result;
}

}  // namespace metagrad
