#include "metagrad/enumeration.hpp"

namespace metagrad::enumeration {

namespace {

// expected one-pull reward and its logit gradient under the current policy
double policy_value(const EnumerableBandit& bandit, const Vec& pi) {
    return bandit.expected_reward(pi);
}

Vec policy_value_grad(const EnumerableBandit& bandit, const Vec& pi) {
    const double rbar = bandit.expected_reward(pi);
    Vec g(pi.size());
    for (std::size_t a = 0; a < pi.size(); ++a) g[a] = pi[a] * (bandit.probs[a] - rbar);
    return g;
}

// All ordered batches of `size` pulls with their probabilities under pi.
struct BatchOutcome {
    bandit::Batch batch;
    double probability = 1.0;
};

std::vector<BatchOutcome> batch_outcomes(const EnumerableBandit& bandit, const Vec& pi, int size) {
    std::vector<BatchOutcome> out;
    BatchOutcome cur;
    auto recurse = [&](auto&& self, int pull) -> void {
        if (pull == size) {
            out.push_back(cur);
            return;
        }
        for (int arm = 0; arm < bandit.arms(); ++arm) {
            for (double reward : {1.0, 0.0}) {
                cur.batch.push_back(bandit::Pull{arm, reward});
                const double saved = cur.probability;
                cur.probability *= pi[static_cast<std::size_t>(arm)] * bandit.reward_prob(arm, reward);
                self(self, pull + 1);
                cur.probability = saved;
                cur.batch.pop_back();
            }
        }
    };
    recurse(recurse, 0);
    return out;
}

}  // namespace

double exact_objective(const Problem& prob) {
    double total = 0.0;
    auto recurse = [&](auto&& self, const Vec& theta, int step, double probability) -> void {
        const Vec pi = softmax(theta);
        total += probability * policy_value(prob.bandit, pi);
        if (step == prob.lifetime - 1) return;
        for (const BatchOutcome& outcome : batch_outcomes(prob.bandit, pi, prob.batch_size)) {
            const bandit::StepOps ops(prob.eta, theta, outcome.batch, step);
            Vec next = theta;
            axpy(1.0, ops.update(), next);
            self(self, next, step + 1, probability * outcome.probability);
        }
    };
    recurse(recurse, prob.theta0, 0, 1.0);
    return total;
}

ExactResult exact_meta_gradient(const Problem& prob) {
    const std::size_t d_eta = prob.eta.values.size();
    const std::size_t d_theta = prob.theta0.size();
    ExactResult result;
    result.gradient.assign(d_eta, 0.0);

    // carries: theta, J = d theta / d eta, S = d log P(prefix) / d eta
    auto recurse = [&](auto&& self, const Vec& theta, const Matrix& jac, const Vec& logp_grad,
                       int step, double probability) -> void {
        const Vec pi = softmax(theta);
        const double rbar = policy_value(prob.bandit, pi);
        const Vec rbar_grad = policy_value_grad(prob.bandit, pi);
        result.objective += probability * rbar;
        for (std::size_t r = 0; r < d_eta; ++r) {
            // product rule: value term through theta, probability term through log P
            result.gradient[r] += probability * (dot(jac.row(r), rbar_grad) + rbar * logp_grad[r]);
        }
        if (step == prob.lifetime - 1) return;
        for (const BatchOutcome& outcome : batch_outcomes(prob.bandit, pi, prob.batch_size)) {
            // deterministic update for this batch realization
            const double inv_n = 1.0 / static_cast<double>(outcome.batch.size());
            const int bucket = prob.eta.bucket_for_step(step);
            const double lr = prob.eta.values[static_cast<std::size_t>(bucket)];

            Vec grad_step(d_theta, 0.0);
            double reward_sum = 0.0;
            for (const bandit::Pull& pull : outcome.batch) {
                reward_sum += pull.reward;
                grad_step[static_cast<std::size_t>(pull.arm)] += inv_n * pull.reward;
            }
            const double mean_reward = reward_sum * inv_n;
            for (std::size_t b = 0; b < d_theta; ++b) grad_step[b] -= mean_reward * pi[b];

            Vec next_theta = theta;
            axpy(lr, grad_step, next_theta);

            // J' = J + grad_eta(update) + J grad_theta(update), written out for
            // the softmax closed form:
            //   (J grad_theta(update))_{r,b} = -lr rbatch pi_b (J_{r,b} - (J pi)_r)
            Matrix next_jac = jac;
            for (std::size_t r = 0; r < d_eta; ++r) {
                const double jpi = dot(jac.row(r), pi);
                auto row = next_jac.row(r);
                for (std::size_t b = 0; b < d_theta; ++b) {
                    double delta = -lr * mean_reward * pi[b] * (jac.at(r, b) - jpi);
                    if (static_cast<int>(r) == bucket) delta += grad_step[b];
                    row[b] += delta;
                }
            }

            // d log P / d eta gains one score term per pull of this batch
            Vec next_logp = logp_grad;
            for (const bandit::Pull& pull : outcome.batch) {
                const std::size_t arm = static_cast<std::size_t>(pull.arm);
                for (std::size_t r = 0; r < d_eta; ++r) {
                    double proj = jac.at(r, arm);
                    proj -= dot(jac.row(r), pi);
                    next_logp[r] += proj;
                }
            }

            self(self, next_theta, next_jac, next_logp, step + 1,
                 probability * outcome.probability);
        }
    };

    Matrix jac0(d_eta, d_theta);
    recurse(recurse, prob.theta0, jac0, Vec(d_eta, 0.0), 0, 1.0);
    result.outcome_count = 1;
    for (int i = 0; i < prob.lifetime * prob.batch_size; ++i)
        result.outcome_count *= 2 * prob.bandit.arms();
    return result;
}

Vec exact_objective_fd_gradient(const Problem& prob, double epsilon, int levels) {
    const std::size_t d = prob.eta.values.size();
    Vec grad(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        // central differences at epsilon / 2^j, then a Richardson tableau
        std::vector<double> table(static_cast<std::size_t>(levels));
        for (int j = 0; j < levels; ++j) {
            const double h = epsilon / static_cast<double>(1 << j);
            Problem up = prob;
            up.eta.values[r] += h;
            Problem down = prob;
            down.eta.values[r] -= h;
            table[static_cast<std::size_t>(j)] =
                (exact_objective(up) - exact_objective(down)) / (2.0 * h);
        }
        for (int m = 1; m < levels; ++m) {
            const double factor = std::pow(4.0, m);
            for (int j = levels - 1; j >= m; --j) {
                table[static_cast<std::size_t>(j)] =
                    (factor * table[static_cast<std::size_t>(j)] -
                     table[static_cast<std::size_t>(j - 1)]) /
                    (factor - 1.0);
            }
        }
        grad[r] = table[static_cast<std::size_t>(levels - 1)];
    }
    return grad;
}

namespace {

Vec expected_estimator_impl(const Problem& prob, const EstimatorSpec& spec,
                            const double* constant_baseline) {
    const std::size_t d_eta = prob.eta.values.size();
    Vec expectation(d_eta, 0.0);

    LifetimeTape tape;
    tape.window_start = 0;
    tape.lifetime = prob.lifetime;
    const HessianMode hmode = spec.effective_hessian_mode();

    auto recurse = [&](auto&& self, const Vec& theta, const Matrix& jac, int step,
                       double probability) -> void {
        const Vec pi = softmax(theta);
        for (const BatchOutcome& outcome : batch_outcomes(prob.bandit, pi, prob.batch_size)) {
            const bandit::StepOps ops(prob.eta, theta, outcome.batch, step);
            if (constant_baseline == nullptr) {
                record_step(tape, jac, ops, spec.baseline_mode);
            } else {
                // shifted-return recording for control-variate checks
                StepRecord rec;
                const Vec bscore = ops.batch_score();
                rec.correction = jac.apply(bscore);
                const int n = ops.traj_count();
                rec.direct.assign(jac.rows, 0.0);
                rec.batch_returns.resize(static_cast<std::size_t>(n));
                double adj_sum = 0.0, raw_sum = 0.0;
                for (int i = 0; i < n; ++i) {
                    const Vec projected = jac.apply(ops.traj_score(i));
                    const double adjusted = ops.traj_return(i) - *constant_baseline;
                    rec.batch_returns[static_cast<std::size_t>(i)] = adjusted;
                    axpy(adjusted / n, projected, rec.direct);
                    adj_sum += adjusted;
                    raw_sum += ops.raw_return(i);
                }
                rec.mean_return = raw_sum / n;
                rec.mean_weight = adj_sum / n;
                tape.steps.push_back(std::move(rec));
            }

            if (step == prob.lifetime - 1) {
                const Vec estimate = assemble_meta_gradient(tape, spec);
                axpy(probability * outcome.probability, estimate, expectation);
            } else {
                Matrix next_jac = propagate_meta_jacobian(jac, ops, hmode);
                Vec next_theta = theta;
                axpy(1.0, ops.update(), next_theta);
                self(self, next_theta, next_jac, step + 1, probability * outcome.probability);
            }
            tape.steps.pop_back();
        }
    };

    Matrix jac0(d_eta, prob.theta0.size());
    recurse(recurse, prob.theta0, jac0, 0, 1.0);
    return expectation;
}

}  // namespace

Vec expected_estimator(const Problem& prob, const EstimatorSpec& spec) {
    return expected_estimator_impl(prob, spec, nullptr);
}

Vec expected_estimator_with_baseline(const Problem& prob, const EstimatorSpec& spec,
                                     double constant_baseline) {
    return expected_estimator_impl(prob, spec, &constant_baseline);
}

}  // namespace metagrad::enumeration
