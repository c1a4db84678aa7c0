#pragma once

#include <span>
#include <vector>

#include "metagrad/common.hpp"
#include "metagrad/environments.hpp"
#include "metagrad/estimator.hpp"
#include "metagrad/meta_params.hpp"

namespace metagrad {

Vec softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Bandit REINFORCE learner. theta holds one logit per arm; a trajectory is a
// single pull, so the return is the pull's reward. The meta-parameters give a
// bucketed learning-rate schedule over the inner steps.
// ---------------------------------------------------------------------------

namespace bandit {

struct Pull {
    int arm = 0;
    double reward = 0.0;
};

using Batch = std::vector<Pull>;

Batch sample_batch(const BanditTask& task, std::span<const double> pi, int size, RngStream& rng);

// value of the sampled inner objective; numeric-oracle target for grad()
double inner_objective(std::span<const double> theta, const Batch& batch);

// Derivative capability bound to one (eta, theta, batch, step) tuple.
// Softmax structure keeps everything closed form: the score of arm a is
// e_a - pi and the log-policy Hessian pi pi^T - diag(pi) is arm-independent.
class StepOps {
  public:
    StepOps(const MetaParams& eta, std::span<const double> theta, const Batch& batch, int step);

    int param_dim() const { return arms_; }
    int meta_dim() const { return meta_dim_; }
    int traj_count() const { return static_cast<int>(batch_->size()); }

    Vec grad() const;                             // gradient of the sampled objective
    void add_hvp(std::span<const double> v, std::span<double> out) const;
    void add_expected_hessian_extra(std::span<const double> v, std::span<double> out) const;

    Vec update() const;                           // learning_rate(step) * grad
    void add_update_hvp(std::span<const double> v, HessianMode mode, std::span<double> out) const;
    void add_update_mixed_row(int row, std::span<double> out) const;

    Vec batch_score() const;                      // sum of per-pull scores
    Vec traj_score(int i) const;
    double traj_return(int i) const { return (*batch_)[static_cast<std::size_t>(i)].reward; }
    double raw_return(int i) const { return traj_return(i); }
    double baseline_value(int) const { return 0.0; }

    double mean_return() const { return mean_reward_; }
    const Vec& policy() const { return pi_; }

  private:
    const Batch* batch_;
    Vec pi_;
    Vec reward_by_arm_;  // summed reward per arm over the batch
    Vec count_by_arm_;
    double mean_reward_ = 0.0;
    double learning_rate_ = 0.0;
    int bucket_ = 0;
    int arms_ = 0;
    int meta_dim_ = 0;
};

static_assert(true);

}  // namespace bandit

// ---------------------------------------------------------------------------
// Gridworld actor-critic with a linear-softmax policy over one-hot features
// and a linear value baseline. theta packs the policy matrix (actions x
// features, row-major) followed by the value weights. The inner objective is
//   policy-gradient surrogate + coef * entropy - value_coef * 1/2 squared error,
// ascended by SGD; the meta-parameters control the entropy coefficient.
// ---------------------------------------------------------------------------

namespace grid {

constexpr int kActions = 4;

struct Transition {
    int agent = 0;
    int obj_a = 0;
    int obj_b = 0;
    int t = 0;
    int action = 0;
    double reward = 0.0;
};

using Episode = std::vector<Transition>;

struct Batch {
    std::vector<Episode> episodes;
};

struct LearnerConfig {
    GridConfig env;
    double inner_lr = 1.0;
    double value_coef = 0.1;
    double gamma = 0.99;

    int feature_dim() const { return env.feature_dim(); }
    int policy_dim() const { return kActions * feature_dim(); }
    int param_dim() const { return policy_dim() + feature_dim(); }
};

Vec zero_theta(const LearnerConfig& cfg);

// Samples one episode with the softmax policy; env must have been reset.
Episode sample_episode(const LearnerConfig& cfg, std::span<const double> theta, GridworldEnv& env,
                       RngStream& rng);

double inner_objective(const LearnerConfig& cfg, double entropy_coef, std::span<const double> theta,
                       const Batch& batch);

class StepOps {
  public:
    // reward_history feeds the entropy-coefficient schedule (most recent last)
    StepOps(const LearnerConfig& cfg, const MetaParams& eta, std::span<const double> theta,
            const Batch& batch, std::span<const double> reward_history);

    int param_dim() const { return cfg_->param_dim(); }
    int meta_dim() const { return static_cast<int>(coef_grad_.size()); }
    int traj_count() const { return static_cast<int>(batch_->episodes.size()); }

    Vec grad() const;
    Vec update() const;
    void add_update_hvp(std::span<const double> v, HessianMode mode, std::span<double> out) const;
    void add_update_mixed_row(int row, std::span<double> out) const;

    Vec batch_score() const;
    Vec traj_score(int i) const;
    double traj_return(int i) const { return discounted_return_[static_cast<std::size_t>(i)]; }
    double raw_return(int i) const { return raw_return_[static_cast<std::size_t>(i)]; }
    double baseline_value(int i) const { return start_value_[static_cast<std::size_t>(i)]; }

    double entropy_coef() const { return coef_; }
    double mean_raw_return() const;

  private:
    struct TransitionView {
        int features[4];
        int action;
        double pi[kActions];
        double ent_grad[kActions];  // d entropy / d logits
        double entropy;
        double value_err;           // V(s_t) - G_t
        int episode;
    };

    void add_policy_grad_block(std::span<double> out) const;

    const LearnerConfig* cfg_;
    const Batch* batch_;
    std::span<const double> theta_;
    std::vector<TransitionView> views_;
    Vec discounted_return_;
    Vec raw_return_;
    Vec start_value_;
    Vec entropy_grad_;   // gradient of the mean entropy term (policy block only)
    double coef_ = 0.0;  // entropy coefficient from the meta-parameters
    Vec coef_grad_;      // d coef / d eta
    double inv_n_ = 0.0;
};

}  // namespace grid

}  // namespace metagrad
