#include "metagrad/training.hpp"

#include <algorithm>
#include <cmath>

#include "metagrad/parallel.hpp"

namespace metagrad {

void OuterOptimizer::step(Vec& eta, const Vec& grad) {
    if (kind == Kind::Sgd) {
        axpy(lr, grad, eta);
        ++t;
        return;
    }
    if (m.size() != eta.size()) {
        m.assign(eta.size(), 0.0);
        v.assign(eta.size(), 0.0);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < eta.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        eta[i] += lr * mhat / (std::sqrt(vhat) + eps);
    }
}

nlohmann::json OuterOptimizer::to_json() const {
    return nlohmann::json{{"kind", kind == Kind::Sgd ? "sgd" : "adam"},
                          {"lr", lr},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"eps", eps},
                          {"m", m},
                          {"v", v},
                          {"t", t}};
}

OuterOptimizer OuterOptimizer::from_json(const nlohmann::json& j) {
    OuterOptimizer opt;
    opt.kind = j.at("kind").get<std::string>() == "adam" ? Kind::Adam : Kind::Sgd;
    opt.lr = j.at("lr").get<double>();
    opt.beta1 = j.at("beta1").get<double>();
    opt.beta2 = j.at("beta2").get<double>();
    opt.eps = j.at("eps").get<double>();
    opt.m = j.at("m").get<Vec>();
    opt.v = j.at("v").get<Vec>();
    opt.t = j.at("t").get<long>();
    return opt;
}

namespace {

void clip_by_global_norm(Vec& grad, double max_norm) {
    if (max_norm <= 0.0) return;
    const double n = norm2(grad);
    if (n > max_norm) scale(grad, max_norm / n);
}

struct UpdateOutcome {
    Vec gradient;
    double mean_return = 0.0;
    long aborted = 0;
    long env_samples = 0;
};

}  // namespace

TrainResult run_bandit_meta(const BanditPreset& preset, const MetaParams& eta0,
                            const TrainOptions& opts, StreamTree tree, const TrainHooks& hooks) {
    MetaParams eta = eta0;
    if (eta.bucket_starts.empty()) eta.bucket_starts = preset.bucket_starts;
    eta.validate(preset.lifetime);
    opts.spec.validate(preset.lifetime);

    OuterOptimizer optimizer;
    optimizer.kind = opts.optimizer;
    optimizer.lr = opts.outer_lr;
    if (!opts.resume_state.empty()) {
        optimizer = OuterOptimizer::from_json(opts.resume_state.at("optimizer"));
        eta.values = opts.resume_state.at("eta").get<Vec>();
    }

    TrainResult result;
    const long samples_per_lifetime =
        static_cast<long>(preset.lifetime) * static_cast<long>(preset.batch_size);

    auto record = [&](long update, const UpdateOutcome& outcome) {
        if (opts.record_interval > 0 &&
            (update % opts.record_interval == 0 || update == opts.outer_updates - 1)) {
            CurvePoint point;
            point.update = update;
            point.mean_return = outcome.mean_return;
            point.eta = eta.values;
            point.aborted = outcome.aborted;
            result.curve.push_back(point);
            if (hooks.on_point) hooks.on_point(point);
        }
        if (opts.checkpoint_interval > 0 && hooks.on_checkpoint &&
            (update + 1) % opts.checkpoint_interval == 0) {
            nlohmann::json state{{"update", update + 1}, {"eta", eta.values},
                                 {"optimizer", optimizer.to_json()}};
            hooks.on_checkpoint(update + 1, state);
        }
    };

    for (long update = opts.start_update; update < opts.outer_updates; ++update) {
        const StreamTree update_tree = tree.child(static_cast<std::uint64_t>(update));
        UpdateOutcome outcome;

        if (opts.spec.backprop_based()) {
            const std::size_t n = static_cast<std::size_t>(opts.parallel_runs);
            std::vector<BanditLifetimeResult> lifetimes(n);
            parallel_for(n, opts.threads, [&](std::size_t i) {
                lifetimes[i] = run_bandit_lifetime(preset, eta, opts.spec.effective_hessian_mode(),
                                                   opts.spec.truncation, update_tree.child(i));
            });
            Vec grad(eta.values.size(), 0.0);
            double return_sum = 0.0;
            long kept = 0;
            for (const BanditLifetimeResult& life : lifetimes) {
                if (life.aborted) {
                    ++outcome.aborted;
                    continue;
                }
                const Vec g = assemble_meta_gradient(life.tape, opts.spec);
                axpy(1.0, g, grad);
                return_sum += life.mean_return;
                ++kept;
                outcome.env_samples += samples_per_lifetime;
            }
            if (kept == 0 ||
                static_cast<double>(outcome.aborted) > opts.abort_fraction * static_cast<double>(n))
                throw RunAborted("more than " + std::to_string(100 * opts.abort_fraction) +
                                 "% of lifetimes diverged in update " + std::to_string(update));
            scale(grad, 1.0 / static_cast<double>(kept));
            outcome.gradient = std::move(grad);
            outcome.mean_return = return_sum / static_cast<double>(kept);
        } else {
            // black-box estimators consume objective-only lifetimes
            const int window =
                opts.spec.truncation < preset.max_truncation() &&
                        opts.spec.kind == EstimatorKind::EvolutionStrategies
                    ? opts.spec.truncation
                    : -1;
            double value_sum = 0.0;
            long value_count = 0;
            // gradient evaluations target the window-sum objective; the curve
            // probe reports the ordinary average lifetime return
            const StochasticObjective objective = [&](const Vec& values, StreamTree eval) {
                MetaParams point = eta;
                point.values = values;
                return bandit_lifetime_objective(preset, point, eval, window);
            };
            auto probe_mean_return = [&](std::size_t count) {
                Vec probe(count);
                parallel_for(probe.size(), opts.threads, [&](std::size_t i) {
                    probe[i] = bandit_lifetime_return(preset, eta, update_tree.child({9000, i}));
                });
                for (double v : probe)
                    if (std::isfinite(v)) {
                        value_sum += v;
                        ++value_count;
                    }
                outcome.env_samples += static_cast<long>(count) * samples_per_lifetime;
            };
            if (opts.spec.kind == EstimatorKind::EvolutionStrategies) {
                EsOptions es = opts.es;
                es.pairs = std::max(1, opts.parallel_runs / 2);
                es.threads = opts.threads;
                outcome.gradient = es_meta_gradient(eta.values, objective, es, update_tree);
                probe_mean_return(8);
                outcome.env_samples += static_cast<long>(2 * es.pairs) * samples_per_lifetime;
            } else if (opts.spec.kind == EstimatorKind::FiniteDifferences) {
                FdOptions fd = opts.fd;
                if (fd.samples <= 1) fd.samples = opts.parallel_runs;
                fd.threads = opts.threads;
                long aborted = 0;
                outcome.gradient =
                    finite_difference_meta_gradient(eta.values, objective, fd, update_tree, &aborted);
                outcome.aborted = aborted;
                probe_mean_return(8);
                outcome.env_samples +=
                    static_cast<long>(2 * eta.values.size()) * fd.samples * samples_per_lifetime;
            } else {
                throw ConfigError("estimator kind is not trainable");
            }
            outcome.mean_return = value_count > 0 ? value_sum / static_cast<double>(value_count) : 0.0;
        }

        clip_by_global_norm(outcome.gradient, opts.grad_clip);
        optimizer.step(eta.values, outcome.gradient);
        require_finite(eta.values, "meta-parameters");
        result.total_aborted += outcome.aborted;
        result.env_samples += outcome.env_samples;
        record(update, outcome);
    }

    result.final_eta = eta.values;
    result.optimizer = optimizer;
    return result;
}

TrainResult run_grid_meta(const GridOnlinePreset& preset, int outer_batch, const MetaParams& eta0,
                          const TrainOptions& opts, StreamTree tree, const TrainHooks& hooks) {
    MetaParams eta = eta0;
    eta.validate(preset.truncation + 1);
    if (outer_batch < 1) throw ConfigError("outer batch must be positive");
    if (opts.spec.kind == EstimatorKind::EvolutionStrategies && outer_batch % 2 != 0)
        throw ConfigError("evolution strategies needs an even outer batch for antithetic pairs");

    OuterOptimizer optimizer;
    optimizer.kind = opts.optimizer;
    optimizer.lr = opts.outer_lr;

    std::vector<GridOnlineLearner> learners(static_cast<std::size_t>(outer_batch),
                                            GridOnlineLearner(preset));
    if (!opts.resume_state.empty()) {
        optimizer = OuterOptimizer::from_json(opts.resume_state.at("optimizer"));
        eta.values = opts.resume_state.at("eta").get<Vec>();
        const nlohmann::json& saved = opts.resume_state.at("learners");
        if (saved.size() != learners.size())
            throw ConfigError("checkpoint learner count does not match outer batch");
        for (std::size_t i = 0; i < learners.size(); ++i) {
            learners[i].theta = saved[i].at("theta").get<Vec>();
            learners[i].reward_history = saved[i].at("reward_history").get<Vec>();
            learners[i].env_steps = saved[i].at("env_steps").get<long>();
            learners[i].inner_updates = saved[i].at("inner_updates").get<long>();
        }
    }

    TrainResult result;
    double smoothed = 0.0;
    bool smoothed_init = false;
    const double ema = std::exp(-std::log(2.0) / std::max(1.0, opts.smoothing_halflife));

    for (long update = opts.start_update; update < opts.outer_updates; ++update) {
        const StreamTree update_tree = tree.child(static_cast<std::uint64_t>(update));
        const std::size_t n = learners.size();
        std::vector<GridWindowResult> windows(n);
        UpdateOutcome outcome;

        if (opts.spec.backprop_based()) {
            parallel_for(n, opts.threads, [&](std::size_t i) {
                windows[i] = run_grid_window(preset, learners[i], eta,
                                             opts.spec.effective_hessian_mode(),
                                             opts.spec.baseline_mode, update_tree.child(i), true);
            });
            Vec grad(eta.values.size(), 0.0);
            long kept = 0;
            for (const GridWindowResult& w : windows) {
                if (w.aborted) {
                    ++outcome.aborted;
                    continue;
                }
                axpy(1.0, assemble_meta_gradient(w.tape, opts.spec), grad);
                ++kept;
            }
            if (kept == 0 ||
                static_cast<double>(outcome.aborted) > opts.abort_fraction * static_cast<double>(n))
                throw RunAborted("more than " + std::to_string(100 * opts.abort_fraction) +
                                 "% of learners diverged in update " + std::to_string(update));
            scale(grad, 1.0 / static_cast<double>(kept));
            outcome.gradient = std::move(grad);
        } else if (opts.spec.kind == EstimatorKind::EvolutionStrategies) {
            // Each learner tracks its own perturbed meta-parameters; pairs are
            // antithetic in the noise.
            const std::size_t pairs = n / 2;
            std::vector<Vec> noise(pairs);
            for (std::size_t p = 0; p < pairs; ++p) {
                RngStream eps_rng = update_tree.child({7000, p}).stream();
                noise[p].resize(eta.values.size());
                for (double& e : noise[p]) e = eps_rng.normal();
            }
            parallel_for(n, opts.threads, [&](std::size_t i) {
                const std::size_t p = i / 2;
                const double sign = i % 2 == 0 ? 1.0 : -1.0;
                MetaParams perturbed = eta;
                axpy(sign * opts.es.sigma, noise[p], perturbed.values);
                windows[i] = run_grid_window(preset, learners[i], perturbed, HessianMode::Sampled,
                                             BaselineMode::None, update_tree.child(i), false);
            });
            Vec fitness(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                if (windows[i].aborted) {
                    ++outcome.aborted;
                    fitness[i] = 0.0;
                } else {
                    fitness[i] = windows[i].objective;
                }
            }
            if (opts.es.standardize) {
                double mean = 0.0;
                for (double f : fitness) mean += f;
                mean /= static_cast<double>(n);
                double var = 0.0;
                for (double f : fitness) var += (f - mean) * (f - mean);
                const double sd = std::sqrt(var / static_cast<double>(n));
                if (sd > 0.0)
                    for (double& f : fitness) f = (f - mean) / sd;
                else
                    for (double& f : fitness) f = 0.0;
            }
            Vec grad(eta.values.size(), 0.0);
            const double scale_f = 1.0 / (2.0 * static_cast<double>(pairs) * opts.es.sigma);
            for (std::size_t p = 0; p < pairs; ++p)
                axpy(scale_f * (fitness[2 * p] - fitness[2 * p + 1]), noise[p], grad);
            outcome.gradient = std::move(grad);
        } else {
            throw ConfigError("estimator kind is not trainable online");
        }

        double return_sum = 0.0, coef_sum = 0.0, step_reward_sum = 0.0;
        long kept = 0;
        for (const GridWindowResult& w : windows) {
            if (w.aborted) continue;
            return_sum += w.mean_episode_return;
            coef_sum += w.mean_entropy_coef;
            step_reward_sum += w.mean_step_reward;
            ++kept;
        }
        outcome.mean_return = kept > 0 ? return_sum / static_cast<double>(kept) : 0.0;
        outcome.env_samples = static_cast<long>(n) * preset.truncation * preset.inner_batch *
                              preset.learner.env.horizon;

        clip_by_global_norm(outcome.gradient, opts.grad_clip);
        optimizer.step(eta.values, outcome.gradient);
        require_finite(eta.values, "meta-parameters");

        if (!smoothed_init) {
            smoothed = outcome.mean_return;
            smoothed_init = true;
        } else {
            smoothed = ema * smoothed + (1.0 - ema) * outcome.mean_return;
        }
        result.total_aborted += outcome.aborted;
        result.env_samples += outcome.env_samples;

        if (opts.record_interval > 0 &&
            (update % opts.record_interval == 0 || update == opts.outer_updates - 1)) {
            CurvePoint point;
            point.update = update;
            point.mean_return = outcome.mean_return;
            point.smoothed_return = smoothed;
            point.entropy_coef = kept > 0 ? coef_sum / static_cast<double>(kept) : 0.0;
            point.eta = eta.values;
            point.aborted = outcome.aborted;
            result.curve.push_back(point);
            if (hooks.on_point) hooks.on_point(point);
        }
        if (opts.checkpoint_interval > 0 && hooks.on_checkpoint &&
            (update + 1) % opts.checkpoint_interval == 0) {
            nlohmann::json saved_learners = nlohmann::json::array();
            for (const GridOnlineLearner& l : learners) {
                saved_learners.push_back({{"theta", l.theta},
                                          {"reward_history", l.reward_history},
                                          {"env_steps", l.env_steps},
                                          {"inner_updates", l.inner_updates}});
            }
            nlohmann::json state{{"update", update + 1},
                                 {"eta", eta.values},
                                 {"optimizer", optimizer.to_json()},
                                 {"learners", std::move(saved_learners)}};
            hooks.on_checkpoint(update + 1, state);
        }
    }

    result.final_eta = eta.values;
    result.optimizer = optimizer;
    return result;
}

}  // namespace metagrad
