#include "metagrad/learners.hpp"

#include <algorithm>
#include <cmath>

namespace metagrad {

Vec softmax(std::span<const double> logits) {
    Vec out(logits.size());
    double m = logits[0];
    for (double z : logits) m = std::max(m, z);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& p : out) p /= sum;
    return out;
}

namespace bandit {

Batch sample_batch(const BanditTask& task, std::span<const double> pi, int size, RngStream& rng) {
    Batch batch(static_cast<std::size_t>(size));
    for (Pull& pull : batch) {
        pull.arm = rng.categorical(pi);
        pull.reward = bandit_pull(task, pull.arm, rng);
    }
    return batch;
}

double inner_objective(std::span<const double> theta, const Batch& batch) {
    const Vec pi = softmax(theta);
    double value = 0.0;
    for (const Pull& pull : batch) value += std::log(pi[static_cast<std::size_t>(pull.arm)]) * pull.reward;
    return value / static_cast<double>(batch.size());
}

StepOps::StepOps(const MetaParams& eta, std::span<const double> theta, const Batch& batch, int step)
    : batch_(&batch),
      pi_(softmax(theta)),
      reward_by_arm_(theta.size(), 0.0),
      count_by_arm_(theta.size(), 0.0),
      arms_(static_cast<int>(theta.size())),
      meta_dim_(eta.dim()) {
    double total = 0.0;
    for (const Pull& pull : batch) {
        reward_by_arm_[static_cast<std::size_t>(pull.arm)] += pull.reward;
        count_by_arm_[static_cast<std::size_t>(pull.arm)] += 1.0;
        total += pull.reward;
    }
    mean_reward_ = total / static_cast<double>(batch.size());
    bucket_ = eta.bucket_for_step(step);
    learning_rate_ = eta.values[static_cast<std::size_t>(bucket_)];
}

Vec StepOps::grad() const {
    const double inv_n = 1.0 / static_cast<double>(batch_->size());
    const double total = mean_reward_ * static_cast<double>(batch_->size());
    Vec g(static_cast<std::size_t>(arms_));
    for (int a = 0; a < arms_; ++a) {
        const std::size_t i = static_cast<std::size_t>(a);
        g[i] = inv_n * (reward_by_arm_[i] - total * pi_[i]);
    }
    return g;
}

void StepOps::add_hvp(std::span<const double> v, std::span<double> out) const {
    const double pv = dot(pi_, v);
    for (int a = 0; a < arms_; ++a) {
        const std::size_t i = static_cast<std::size_t>(a);
        out[i] += mean_reward_ * pi_[i] * (pv - v[i]);
    }
}

void StepOps::add_expected_hessian_extra(std::span<const double> v, std::span<double> out) const {
    // sum over pulls of (score . v) * reward * score / n, with score = e_a - pi
    const double pv = dot(pi_, v);
    const double inv_n = 1.0 / static_cast<double>(batch_->size());
    double coef_total = 0.0;
    Vec coef(static_cast<std::size_t>(arms_), 0.0);
    for (int a = 0; a < arms_; ++a) {
        const std::size_t i = static_cast<std::size_t>(a);
        coef[i] = reward_by_arm_[i] * (v[i] - pv);
        coef_total += coef[i];
    }
    for (int a = 0; a < arms_; ++a) {
        const std::size_t i = static_cast<std::size_t>(a);
        out[i] += inv_n * (coef[i] - coef_total * pi_[i]);
    }
}

Vec StepOps::update() const {
    Vec u = grad();
    scale(u, learning_rate_);
    return u;
}

void StepOps::add_update_hvp(std::span<const double> v, HessianMode mode, std::span<double> out) const {
    Vec tmp(static_cast<std::size_t>(arms_), 0.0);
    add_hvp(v, tmp);
    if (mode == HessianMode::ExpectedEstimate) add_expected_hessian_extra(v, tmp);
    axpy(learning_rate_, tmp, out);
}

void StepOps::add_update_mixed_row(int row, std::span<double> out) const {
    if (row != bucket_) return;  // other buckets do not touch this step's update
    const Vec g = grad();
    axpy(1.0, g, out);
}

Vec StepOps::batch_score() const {
    const double n = static_cast<double>(batch_->size());
    Vec s(static_cast<std::size_t>(arms_));
    for (int a = 0; a < arms_; ++a) {
        const std::size_t i = static_cast<std::size_t>(a);
        s[i] = count_by_arm_[i] - n * pi_[i];
    }
    return s;
}

Vec StepOps::traj_score(int i) const {
    Vec s(static_cast<std::size_t>(arms_));
    for (int a = 0; a < arms_; ++a) s[static_cast<std::size_t>(a)] = -pi_[static_cast<std::size_t>(a)];
    s[static_cast<std::size_t>((*batch_)[static_cast<std::size_t>(i)].arm)] += 1.0;
    return s;
}

}  // namespace bandit

namespace grid {

Vec zero_theta(const LearnerConfig& cfg) { return Vec(static_cast<std::size_t>(cfg.param_dim()), 0.0); }

namespace {

inline void action_logits(const LearnerConfig& cfg, std::span<const double> theta, const GridFeatures& f,
                          double* logits) {
    const int fd = cfg.feature_dim();
    for (int a = 0; a < kActions; ++a) {
        const double* row = theta.data() + a * fd;
        logits[a] = row[f.idx[0]] + row[f.idx[1]] + row[f.idx[2]] + row[f.idx[3]];
    }
}

inline void softmax4(const double* logits, double* pi) {
    double m = logits[0];
    for (int a = 1; a < kActions; ++a) m = std::max(m, logits[a]);
    double sum = 0.0;
    for (int a = 0; a < kActions; ++a) {
        pi[a] = std::exp(logits[a] - m);
        sum += pi[a];
    }
    for (int a = 0; a < kActions; ++a) pi[a] /= sum;
}

}  // namespace

Episode sample_episode(const LearnerConfig& cfg, std::span<const double> theta, GridworldEnv& env,
                       RngStream& rng) {
    Episode ep;
    ep.reserve(static_cast<std::size_t>(cfg.env.horizon));
    for (;;) {
        const GridState st = env.state();
        const GridFeatures f = GridFeatures::of(cfg.env, st.agent, st.obj_a, st.obj_b, st.t);
        double logits[kActions], pi[kActions];
        action_logits(cfg, theta, f, logits);
        softmax4(logits, pi);
        const int action = rng.categorical(std::span<const double>(pi, kActions));
        const GridStepResult res = env.step(action, rng);
        ep.push_back(Transition{st.agent, st.obj_a, st.obj_b, st.t, action, res.reward});
        if (res.done) return ep;
    }
}

double inner_objective(const LearnerConfig& cfg, double entropy_coef, std::span<const double> theta,
                       const Batch& batch) {
    const double* w = theta.data() + cfg.policy_dim();
    double total = 0.0;
    for (const Episode& ep : batch.episodes) {
        double ret = 0.0;
        for (std::size_t t = ep.size(); t-- > 0;) ret = ep[t].reward + cfg.gamma * ret;
        double log_prob = 0.0, entropy = 0.0, value_sq = 0.0;
        double togo = ret;
        for (std::size_t t = 0; t < ep.size(); ++t) {
            const Transition& tr = ep[t];
            const GridFeatures f = GridFeatures::of(cfg.env, tr.agent, tr.obj_a, tr.obj_b, tr.t);
            double logits[kActions], pi[kActions];
            action_logits(cfg, theta, f, logits);
            softmax4(logits, pi);
            log_prob += std::log(pi[tr.action]);
            for (int a = 0; a < kActions; ++a) entropy -= pi[a] * std::log(pi[a]);
            const double v = w[f.idx[0]] + w[f.idx[1]] + w[f.idx[2]] + w[f.idx[3]];
            value_sq += (v - togo) * (v - togo);
            togo = (togo - tr.reward) / cfg.gamma;
        }
        total += log_prob * ret + entropy_coef * entropy - cfg.value_coef * 0.5 * value_sq;
    }
    return total / static_cast<double>(batch.episodes.size());
}

StepOps::StepOps(const LearnerConfig& cfg, const MetaParams& eta, std::span<const double> theta,
                 const Batch& batch, std::span<const double> reward_history)
    : cfg_(&cfg), batch_(&batch), theta_(theta) {
    coef_ = eta.entropy_coef(reward_history);
    coef_grad_ = eta.entropy_coef_grad(reward_history);
    const int n = static_cast<int>(batch.episodes.size());
    inv_n_ = 1.0 / static_cast<double>(n);

    discounted_return_.resize(static_cast<std::size_t>(n));
    raw_return_.resize(static_cast<std::size_t>(n));
    start_value_.resize(static_cast<std::size_t>(n));
    entropy_grad_.assign(static_cast<std::size_t>(cfg.param_dim()), 0.0);

    const int fd = cfg.feature_dim();
    const double* w = theta.data() + cfg.policy_dim();

    std::size_t total_views = 0;
    for (const Episode& ep : batch.episodes) total_views += ep.size();
    views_.reserve(total_views);

    for (int e = 0; e < n; ++e) {
        const Episode& ep = batch.episodes[static_cast<std::size_t>(e)];
        double disc = 0.0, raw = 0.0;
        for (std::size_t t = ep.size(); t-- > 0;) {
            disc = ep[t].reward + cfg.gamma * disc;
            raw += ep[t].reward;
        }
        discounted_return_[static_cast<std::size_t>(e)] = disc;
        raw_return_[static_cast<std::size_t>(e)] = raw;

        double togo = disc;
        for (std::size_t t = 0; t < ep.size(); ++t) {
            const Transition& tr = ep[t];
            TransitionView view;
            const GridFeatures f = GridFeatures::of(cfg.env, tr.agent, tr.obj_a, tr.obj_b, tr.t);
            for (int k = 0; k < 4; ++k) view.features[k] = f.idx[k];
            view.action = tr.action;
            view.episode = e;
            double logits[kActions];
            action_logits(cfg, theta, f, logits);
            softmax4(logits, view.pi);
            double entropy = 0.0;
            for (int a = 0; a < kActions; ++a) entropy -= view.pi[a] * std::log(view.pi[a]);
            view.entropy = entropy;
            for (int a = 0; a < kActions; ++a)
                view.ent_grad[a] = -view.pi[a] * (std::log(view.pi[a]) + entropy);
            const double value = w[f.idx[0]] + w[f.idx[1]] + w[f.idx[2]] + w[f.idx[3]];
            view.value_err = value - togo;
            if (t == 0) start_value_[static_cast<std::size_t>(e)] = value;
            togo = (togo - tr.reward) / cfg.gamma;

            for (int a = 0; a < kActions; ++a) {
                const double g = inv_n_ * view.ent_grad[a];
                double* row = entropy_grad_.data() + a * fd;
                for (int k = 0; k < 4; ++k) row[view.features[k]] += g;
            }
            views_.push_back(view);
        }
    }
}

void StepOps::add_policy_grad_block(std::span<double> out) const {
    const int fd = cfg_->feature_dim();
    for (const TransitionView& view : views_) {
        const double ret = discounted_return_[static_cast<std::size_t>(view.episode)];
        for (int a = 0; a < kActions; ++a) {
            const double indicator = a == view.action ? 1.0 : 0.0;
            const double g = inv_n_ * ((indicator - view.pi[a]) * ret + coef_ * view.ent_grad[a]);
            double* row = out.data() + a * fd;
            for (int k = 0; k < 4; ++k) row[view.features[k]] += g;
        }
    }
}

Vec StepOps::grad() const {
    Vec g(static_cast<std::size_t>(cfg_->param_dim()), 0.0);
    add_policy_grad_block(g);
    double* wg = g.data() + cfg_->policy_dim();
    for (const TransitionView& view : views_) {
        const double coef = -cfg_->value_coef * inv_n_ * view.value_err;
        for (int k = 0; k < 4; ++k) wg[view.features[k]] += coef;
    }
    return g;
}

Vec StepOps::update() const {
    Vec u = grad();
    scale(u, cfg_->inner_lr);
    return u;
}

void StepOps::add_update_hvp(std::span<const double> v, HessianMode mode, std::span<double> out) const {
    const int fd = cfg_->feature_dim();
    const double lr = cfg_->inner_lr;
    const double* vw = v.data() + cfg_->policy_dim();
    double* ow = out.data() + cfg_->policy_dim();

    // per-episode accumulator for the score outer-product term
    const std::size_t n = discounted_return_.size();
    Vec score_dot;
    if (mode == HessianMode::ExpectedEstimate) score_dot.assign(n, 0.0);

    for (const TransitionView& view : views_) {
        double u[kActions];
        double pu = 0.0;
        for (int a = 0; a < kActions; ++a) {
            const double* row = v.data() + a * fd;
            u[a] = row[view.features[0]] + row[view.features[1]] + row[view.features[2]] +
                   row[view.features[3]];
            pu += view.pi[a] * u[a];
        }
        const double ret = discounted_return_[static_cast<std::size_t>(view.episode)];
        double gu = 0.0;
        for (int a = 0; a < kActions; ++a) gu += view.ent_grad[a] * u[a];
        for (int a = 0; a < kActions; ++a) {
            // log-policy Hessian (pi pi^T - diag pi) on the return part,
            // exact entropy Hessian on the regularizer
            const double h_ret = view.pi[a] * (pu - u[a]) * ret;
            const double h_ent =
                -view.pi[a] * (std::log(view.pi[a]) + view.entropy + 1.0) * (u[a] - pu) - view.pi[a] * gu;
            const double g = lr * inv_n_ * (h_ret + coef_ * h_ent);
            double* row = out.data() + a * fd;
            for (int k = 0; k < 4; ++k) row[view.features[k]] += g;
        }
        const double wdot = vw[view.features[0]] + vw[view.features[1]] + vw[view.features[2]] +
                            vw[view.features[3]];
        const double gw = -lr * cfg_->value_coef * inv_n_ * wdot;
        for (int k = 0; k < 4; ++k) ow[view.features[k]] += gw;

        if (mode == HessianMode::ExpectedEstimate)
            score_dot[static_cast<std::size_t>(view.episode)] += u[view.action] - pu;
    }

    if (mode == HessianMode::ExpectedEstimate) {
        for (const TransitionView& view : views_) {
            const std::size_t e = static_cast<std::size_t>(view.episode);
            const double coef = lr * inv_n_ * discounted_return_[e] * score_dot[e];
            for (int a = 0; a < kActions; ++a) {
                const double indicator = a == view.action ? 1.0 : 0.0;
                const double g = coef * (indicator - view.pi[a]);
                double* row = out.data() + a * fd;
                for (int k = 0; k < 4; ++k) row[view.features[k]] += g;
            }
        }
    }
}

void StepOps::add_update_mixed_row(int row, std::span<double> out) const {
    axpy(cfg_->inner_lr * coef_grad_[static_cast<std::size_t>(row)], entropy_grad_, out);
}

Vec StepOps::batch_score() const {
    Vec s(static_cast<std::size_t>(cfg_->param_dim()), 0.0);
    const int fd = cfg_->feature_dim();
    for (const TransitionView& view : views_) {
        for (int a = 0; a < kActions; ++a) {
            const double indicator = a == view.action ? 1.0 : 0.0;
            const double g = indicator - view.pi[a];
            double* row = s.data() + a * fd;
            for (int k = 0; k < 4; ++k) row[view.features[k]] += g;
        }
    }
    return s;
}

Vec StepOps::traj_score(int i) const {
    Vec s(static_cast<std::size_t>(cfg_->param_dim()), 0.0);
    const int fd = cfg_->feature_dim();
    for (const TransitionView& view : views_) {
        if (view.episode != i) continue;
        for (int a = 0; a < kActions; ++a) {
            const double indicator = a == view.action ? 1.0 : 0.0;
            const double g = indicator - view.pi[a];
            double* row = s.data() + a * fd;
            for (int k = 0; k < 4; ++k) row[view.features[k]] += g;
        }
    }
    return s;
}

double StepOps::mean_raw_return() const {
    double sum = 0.0;
    for (double r : raw_return_) sum += r;
    return sum * inv_n_;
}

}  // namespace grid

}  // namespace metagrad
