#include "metagrad/environments.hpp"

namespace metagrad {

BanditTask sample_bandit_task(const BanditTaskConfig& cfg, RngStream& rng) {
    BanditTask task;
    task.noise_sd = cfg.noise_sd;
    task.arm_means.resize(static_cast<std::size_t>(cfg.arms));
    for (double& m : task.arm_means) m = std::exp(rng.uniform(cfg.mean_log_lo, cfg.mean_log_hi));
    return task;
}

void GridworldEnv::reset_episode(RngStream& rng) {
    st_.agent = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg_.cells())));
    st_.t = 0;
    relocate_objects(rng);
}

void GridworldEnv::relocate_objects(RngStream& rng) {
    // Distinct cells; a draw landing on the agent is relocated immediately
    // and grants no reward.
    const std::uint64_t n = static_cast<std::uint64_t>(cfg_.cells());
    for (;;) {
        const int a = static_cast<int>(rng.uniform_int(n));
        const int b = static_cast<int>(rng.uniform_int(n));
        if (a == b) continue;
        if (a == st_.agent || b == st_.agent) continue;
        st_.obj_a = a;
        st_.obj_b = b;
        return;
    }
}

GridStepResult GridworldEnv::step(int action, RngStream& rng) {
    const int size = cfg_.size;
    int row = st_.agent / size;
    int col = st_.agent % size;
    switch (action) {
        case 0: if (row > 0) --row; break;
        case 1: if (row < size - 1) ++row; break;
        case 2: if (col > 0) --col; break;
        case 3: if (col < size - 1) ++col; break;
        default: throw ConfigError("gridworld action out of range");
    }
    st_.agent = row * size + col;

    const bool flipped = phase_flipped();
    GridStepResult res;
    if (st_.agent == st_.obj_a) {
        res.reward = flipped ? -1.0 : 1.0;
        relocate_objects(rng);
    } else if (st_.agent == st_.obj_b) {
        res.reward = flipped ? 1.0 : -1.0;
        relocate_objects(rng);
    } else {
        res.reward = cfg_.step_penalty;
    }

    ++global_step_;
    ++st_.t;
    res.done = st_.t >= cfg_.horizon;
    return res;
}

std::vector<EnumeratedOutcome> enumerate_outcomes(const EnumerableBandit& bandit,
                                                  const std::vector<Vec>& policy_per_pull) {
    std::vector<EnumeratedOutcome> out;
    EnumeratedOutcome cur;
    cur.probability = 1.0;

    // depth-first over (arm, reward) choices per pull
    auto recurse = [&](auto&& self, std::size_t pull) -> void {
        if (pull == policy_per_pull.size()) {
            out.push_back(cur);
            return;
        }
        const Vec& pi = policy_per_pull[pull];
        for (int arm = 0; arm < bandit.arms(); ++arm) {
            for (double reward : {1.0, 0.0}) {
                const double p = pi[static_cast<std::size_t>(arm)] * bandit.reward_prob(arm, reward);
                cur.arms.push_back(arm);
                cur.rewards.push_back(reward);
                const double saved = cur.probability;
                cur.probability *= p;
                self(self, pull + 1);
                cur.probability = saved;
                cur.arms.pop_back();
                cur.rewards.pop_back();
            }
        }
    };
    recurse(recurse, 0);
    return out;
}

}  // namespace metagrad
