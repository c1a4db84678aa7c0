#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "metagrad/enumeration.hpp"
#include "metagrad/estimator.hpp"
#include "metagrad/learners.hpp"
#include "metagrad/rng.hpp"
#include "numeric_oracles.hpp"

using namespace metagrad;

namespace {

Vec random_vec(std::size_t n, RngStream& rng, double scale = 1.0) {
    Vec v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

bandit::Batch random_bandit_batch(int arms, int size, RngStream& rng) {
    bandit::Batch batch(static_cast<std::size_t>(size));
    for (auto& pull : batch) {
        pull.arm = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(arms)));
        pull.reward = rng.normal() + rng.uniform(-0.5, 1.5);
    }
    return batch;
}

// deterministic update chain on frozen data
Vec bandit_chain(const MetaParams& eta, Vec theta, const std::vector<bandit::Batch>& batches) {
    for (std::size_t k = 0; k < batches.size(); ++k) {
        const bandit::StepOps ops(eta, theta, batches[k], static_cast<int>(k));
        axpy(1.0, ops.update(), theta);
    }
    return theta;
}

Matrix bandit_chain_jacobian(const MetaParams& eta, Vec theta,
                             const std::vector<bandit::Batch>& batches, HessianMode mode) {
    Matrix jac(eta.values.size(), theta.size());
    Vec scratch;
    for (std::size_t k = 0; k < batches.size(); ++k) {
        const bandit::StepOps ops(eta, theta, batches[k], static_cast<int>(k));
        propagate_meta_jacobian(jac, ops, mode, scratch);
        axpy(1.0, ops.update(), theta);
    }
    return jac;
}

bool bytes_equal(const Vec& a, const Vec& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

LifetimeTape random_tape(int steps, std::size_t d_eta, RngStream& rng) {
    LifetimeTape tape;
    tape.window_start = 0;
    tape.lifetime = steps;
    for (int k = 0; k < steps; ++k) {
        StepRecord rec;
        rec.correction = random_vec(d_eta, rng);
        rec.direct = random_vec(d_eta, rng);
        rec.batch_returns = random_vec(3, rng);
        double sum = 0.0;
        for (double r : rec.batch_returns) sum += r;
        rec.mean_weight = sum / 3.0;
        rec.mean_return = rec.mean_weight;
        tape.steps.push_back(std::move(rec));
    }
    return tape;
}

}  // namespace

TEST_CASE("first propagation step reproduces the sampled gradient") {
    RngStream rng(31);
    const MetaParams eta = make_lr_bucket_params({0.8, 0.3}, {0, 8});
    const Vec theta = random_vec(5, rng);
    const bandit::Batch batch = random_bandit_batch(5, 4, rng);
    const bandit::StepOps ops(eta, theta, batch, 0);

    Matrix jac(2, 5);
    Vec scratch;
    propagate_meta_jacobian(jac, ops, HessianMode::Sampled, scratch);
    const Vec g = ops.grad();
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(jac.at(0, i) == g[i]);  // bucket 0 is active at step 0
        CHECK(jac.at(1, i) == 0.0);
    }
}

TEST_CASE("zero rewards make both hessian modes identical") {
    RngStream rng(32);
    const MetaParams eta = make_lr_bucket_params({0.8, 0.3}, {0, 8});
    Vec theta = random_vec(6, rng);
    std::vector<bandit::Batch> batches;
    for (int k = 0; k < 4; ++k) {
        bandit::Batch b = random_bandit_batch(6, 5, rng);
        for (auto& pull : b) pull.reward = 0.0;
        batches.push_back(std::move(b));
    }
    const Matrix sampled = bandit_chain_jacobian(eta, theta, batches, HessianMode::Sampled);
    const Matrix expected = bandit_chain_jacobian(eta, theta, batches, HessianMode::ExpectedEstimate);
    CHECK(std::memcmp(sampled.data.data(), expected.data.data(),
                      sampled.data.size() * sizeof(double)) == 0);
}

TEST_CASE("three-arm two-step jacobian matches frozen-data differences") {
    RngStream rng(33);
    const MetaParams eta = make_lr_bucket_params({0.9, 0.4}, {0, 1});
    const Vec theta0 = random_vec(3, rng, 0.5);
    std::vector<bandit::Batch> batches{random_bandit_batch(3, 4, rng),
                                       random_bandit_batch(3, 4, rng)};

    const Matrix jac = bandit_chain_jacobian(eta, theta0, batches, HessianMode::Sampled);
    for (std::size_t r = 0; r < 2; ++r) {
        Vec dir(2, 0.0);
        dir[r] = 1.0;
        const Vec fd = oracles::fd_directional(
            [&](const Vec& values) {
                MetaParams p = eta;
                p.values = values;
                return bandit_chain(p, theta0, batches);
            },
            eta.values, dir, 1e-5);
        Vec got(jac.row(r).begin(), jac.row(r).end());
        CHECK(oracles::rel_err(got, fd) < 1e-5);
    }
}

TEST_CASE("jacobian matches frozen-data differences on random instances") {
    RngStream rng(34);
    const MetaParams eta_template = make_lr_bucket_params({0.0, 0.0}, {0, 2});
    for (int trial = 0; trial < 20; ++trial) {
        MetaParams eta = eta_template;
        eta.values = {rng.uniform(0.2, 1.2), rng.uniform(0.2, 1.2)};
        const int arms = 3 + static_cast<int>(rng.uniform_int(5));
        const int steps = 3 + static_cast<int>(rng.uniform_int(3));
        const Vec theta0 = random_vec(static_cast<std::size_t>(arms), rng, 0.5);
        std::vector<bandit::Batch> batches;
        for (int k = 0; k < steps; ++k) batches.push_back(random_bandit_batch(arms, 4, rng));

        const HessianMode mode = trial % 2 == 0 ? HessianMode::Sampled : HessianMode::Sampled;
        const Matrix jac = bandit_chain_jacobian(eta, theta0, batches, mode);
        for (std::size_t r = 0; r < 2; ++r) {
            Vec dir(2, 0.0);
            dir[r] = 1.0;
            const Vec fd = oracles::fd_directional(
                [&](const Vec& values) {
                    MetaParams p = eta;
                    p.values = values;
                    return bandit_chain(p, theta0, batches);
                },
                eta.values, dir, 1e-5);
            Vec got(jac.row(r).begin(), jac.row(r).end());
            const double scale = std::max(1.0, norm2(fd));
            CHECK(oracles::max_abs_diff(got, fd) < 1e-5 * scale);
        }
    }
}

TEST_CASE("grid jacobian matches frozen-data differences") {
    grid::LearnerConfig cfg;
    cfg.env.size = 3;
    cfg.env.horizon = 4;
    cfg.inner_lr = 0.8;
    cfg.value_coef = 0.1;
    cfg.gamma = 0.9;
    RngStream rng(35);
    const Vec history(10, 0.0);

    const MetaParams eta = make_scalar_entropy_params(0.3);
    const Vec theta0 = random_vec(static_cast<std::size_t>(cfg.param_dim()), rng, 0.2);

    std::vector<grid::Batch> batches;
    Vec theta = theta0;
    const StreamTree data{777};
    for (int k = 0; k < 3; ++k) {
        grid::Batch batch;
        for (int e = 0; e < 3; ++e) {
            GridworldEnv env(cfg.env);
            RngStream erng = data.child({static_cast<std::uint64_t>(k),
                                         static_cast<std::uint64_t>(e)}).stream();
            env.reset_episode(erng);
            batch.episodes.push_back(grid::sample_episode(cfg, theta, env, erng));
        }
        const grid::StepOps ops(cfg, eta, theta, batch, history);
        axpy(1.0, ops.update(), theta);
        batches.push_back(std::move(batch));
    }

    auto chain = [&](const Vec& values) {
        MetaParams p = eta;
        p.values = values;
        Vec t = theta0;
        for (std::size_t k = 0; k < batches.size(); ++k) {
            const grid::StepOps ops(cfg, p, t, batches[k], history);
            axpy(1.0, ops.update(), t);
        }
        return t;
    };

    Matrix jac(1, static_cast<std::size_t>(cfg.param_dim()));
    Vec scratch;
    {
        Vec t = theta0;
        for (std::size_t k = 0; k < batches.size(); ++k) {
            const grid::StepOps ops(cfg, eta, t, batches[k], history);
            propagate_meta_jacobian(jac, ops, HessianMode::Sampled, scratch);
            axpy(1.0, ops.update(), t);
        }
    }
    const Vec fd = oracles::fd_directional(chain, eta.values, Vec{1.0}, 1e-5);
    Vec got(jac.row(0).begin(), jac.row(0).end());
    CHECK(oracles::max_abs_diff(got, fd) < 1e-5 * std::max(1.0, norm2(fd)));
}

TEST_CASE("record_step basics") {
    RngStream rng(36);
    const MetaParams eta = make_lr_bucket_params({0.8, 0.3}, {0, 8});

    SUBCASE("zero jacobian records zero terms") {
        const Vec theta = random_vec(4, rng);
        const bandit::Batch batch = random_bandit_batch(4, 6, rng);
        const bandit::StepOps ops(eta, theta, batch, 0);
        Matrix jac(2, 4);
        LifetimeTape tape;
        tape.lifetime = 1;
        record_step(tape, jac, ops, BaselineMode::None);
        for (double x : tape.steps[0].correction) CHECK(x == 0.0);
        for (double x : tape.steps[0].direct) CHECK(x == 0.0);
    }

    SUBCASE("single-trajectory direct term has no averaging") {
        const Vec theta = random_vec(3, rng);
        const bandit::Batch batch{{1, 1.7}};
        const bandit::StepOps ops(eta, theta, batch, 0);
        Matrix jac(2, 3);
        RngStream jrng(37);
        for (double& x : jac.data) x = jrng.normal();
        LifetimeTape tape;
        tape.lifetime = 1;
        record_step(tape, jac, ops, BaselineMode::None);
        const Vec proj = jac.apply(ops.traj_score(0));
        for (std::size_t r = 0; r < 2; ++r)
            CHECK(tape.steps[0].direct[r] == doctest::Approx(proj[r] * 1.7).epsilon(1e-12));
    }

    SUBCASE("correction score matches the closed-form softmax score") {
        const Vec theta{0.3, -0.2};
        const bandit::Batch batch{{0, 1.0}, {1, 0.0}};
        const bandit::StepOps ops(eta, theta, batch, 0);
        Matrix jac(2, 2);
        jac.at(0, 0) = 0.5;
        jac.at(0, 1) = -0.25;
        jac.at(1, 0) = 0.1;
        jac.at(1, 1) = 0.7;
        LifetimeTape tape;
        tape.lifetime = 1;
        record_step(tape, jac, ops, BaselineMode::None);

        // by hand: pi = softmax(theta), batch score = (1,1) - 2 pi
        const double e0 = std::exp(0.3), e1 = std::exp(-0.2);
        const double z = e0 + e1;
        const double p0 = e0 / z, p1 = e1 / z;
        const double s0 = 1.0 - 2.0 * p0, s1 = 1.0 - 2.0 * p1;
        CHECK(tape.steps[0].correction[0] == doctest::Approx(0.5 * s0 - 0.25 * s1).epsilon(1e-12));
        CHECK(tape.steps[0].correction[1] == doctest::Approx(0.1 * s0 + 0.7 * s1).epsilon(1e-12));
    }
}

TEST_CASE("assembly reduction identities are byte-identical") {
    RngStream rng(38);
    const LifetimeTape tape = random_tape(7, 3, rng);

    EstimatorSpec naive;
    naive.kind = EstimatorKind::Naive;
    EstimatorSpec sc0;
    sc0.kind = EstimatorKind::SamplingCorrected;
    sc0.lambda = 0.0;
    EstimatorSpec sc1;
    sc1.kind = EstimatorKind::SamplingCorrected;
    sc1.lambda = 1.0;
    EstimatorSpec exp1;
    exp1.kind = EstimatorKind::ExpDiscounted;
    exp1.alpha = 1.0;
    EstimatorSpec exp0;
    exp0.kind = EstimatorKind::ExpDiscounted;
    exp0.alpha = 0.0;

    const Vec g_naive = assemble_meta_gradient(tape, naive);
    CHECK(bytes_equal(assemble_meta_gradient(tape, sc0), g_naive));
    CHECK(bytes_equal(assemble_meta_gradient(tape, exp0), g_naive));
    CHECK(bytes_equal(assemble_meta_gradient(tape, exp1), assemble_meta_gradient(tape, sc1)));

    // dice-style assembly coincides with the corrected one on a shared tape
    EstimatorSpec dice;
    dice.kind = EstimatorKind::DiceStyle;
    dice.lambda = 1.0;
    CHECK(bytes_equal(assemble_meta_gradient(tape, dice), assemble_meta_gradient(tape, sc1)));
}

TEST_CASE("window bounds are validated") {
    RngStream rng(39);
    LifetimeTape tape = random_tape(5, 2, rng);
    EstimatorSpec spec;
    spec.kind = EstimatorKind::Naive;

    tape.window_start = 2;
    tape.lifetime = 5;  // 2 + 5 > 5
    CHECK_THROWS_AS(assemble_meta_gradient(tape, spec), WindowOutOfRange);

    tape.window_start = 0;
    tape.lifetime = 5;
    CHECK_NOTHROW(assemble_meta_gradient(tape, spec));

    LifetimeTape empty;
    empty.lifetime = 5;
    CHECK_THROWS_AS(assemble_meta_gradient(empty, spec), WindowOutOfRange);
}

TEST_CASE("lambda weighting interpolates between naive and corrected") {
    RngStream rng(40);
    const LifetimeTape tape = random_tape(6, 2, rng);
    EstimatorSpec spec;
    spec.kind = EstimatorKind::SamplingCorrected;
    spec.lambda = 0.4;
    const Vec mid = assemble_meta_gradient(tape, spec);
    spec.lambda = 1.0;
    const Vec full = assemble_meta_gradient(tape, spec);
    spec.kind = EstimatorKind::Naive;
    const Vec base = assemble_meta_gradient(tape, spec);
    for (std::size_t i = 0; i < mid.size(); ++i)
        CHECK(mid[i] == doctest::Approx(base[i] + 0.4 * (full[i] - base[i])).epsilon(1e-9));
}

TEST_CASE("enumerated expectation certifies unbiasedness") {
    enumeration::Problem prob;
    prob.bandit.probs = {0.8, 0.3};
    prob.eta = make_lr_bucket_params({0.7}, {0});
    prob.theta0 = {0.2, -0.1};
    prob.lifetime = 3;
    prob.batch_size = 1;

    const enumeration::ExactResult exact = enumeration::exact_meta_gradient(prob);

    EstimatorSpec corrected;
    corrected.kind = EstimatorKind::SamplingCorrected;
    corrected.lambda = 1.0;
    const Vec corrected_mean = enumeration::expected_estimator(prob, corrected);
    CHECK(std::abs(corrected_mean[0] - exact.gradient[0]) < 1e-10);

    EstimatorSpec naive;
    naive.kind = EstimatorKind::Naive;
    const Vec naive_mean = enumeration::expected_estimator(prob, naive);
    INFO("naive gap = ", std::abs(naive_mean[0] - exact.gradient[0]));
    CHECK(std::abs(naive_mean[0] - exact.gradient[0]) > 1e-6);

    EstimatorSpec dice;
    dice.kind = EstimatorKind::DiceStyle;
    dice.lambda = 1.0;
    const Vec dice_mean = enumeration::expected_estimator(prob, dice);
    INFO("dice gap = ", std::abs(dice_mean[0] - exact.gradient[0]));
    CHECK(std::abs(dice_mean[0] - exact.gradient[0]) > 1e-8);
}

TEST_CASE("constant baseline leaves the direct-term expectation unchanged") {
    enumeration::Problem prob;
    prob.bandit.probs = {0.7, 0.4};
    prob.eta = make_lr_bucket_params({0.6}, {0});
    prob.theta0 = {0.1, 0.3};
    prob.lifetime = 3;
    prob.batch_size = 1;

    EstimatorSpec naive;
    naive.kind = EstimatorKind::Naive;
    const Vec plain = enumeration::expected_estimator(prob, naive);
    const Vec shifted = enumeration::expected_estimator_with_baseline(prob, naive, 0.37);
    CHECK(std::abs(plain[0] - shifted[0]) < 1e-10);
}

TEST_CASE("es estimator basics") {
    SUBCASE("constant objective gives the exact zero vector") {
        const StochasticObjective f = [](const Vec&, StreamTree) { return 3.5; };
        EsOptions opts;
        opts.pairs = 16;
        opts.standardize = false;
        const Vec g = es_meta_gradient({0.5, -0.2}, f, opts, StreamTree{5});
        for (double x : g) CHECK(x == 0.0);

        opts.standardize = true;
        const Vec gz = es_meta_gradient({0.5, -0.2}, f, opts, StreamTree{5});
        for (double x : gz) CHECK(x == 0.0);
    }

    SUBCASE("quadratic objective recovers the smoothed gradient") {
        const Vec eta{0.8, -0.6};
        const StochasticObjective f = [](const Vec& x, StreamTree) {
            return -0.5 * dot(x, x);
        };
        EsOptions opts;
        opts.sigma = 0.1;
        opts.pairs = 100000;
        opts.standardize = false;
        const Vec g = es_meta_gradient(eta, f, opts, StreamTree{6});
        // single-pair estimates have per-coordinate variance ~ |eta|^2 + ...;
        // bound loosely by 3 standard errors of the pair mean
        const double se = 3.0 * 1.5 / std::sqrt(100000.0);
        CHECK(std::abs(g[0] - (-eta[0])) < se);
        CHECK(std::abs(g[1] - (-eta[1])) < se);
    }

    SUBCASE("nan evaluations raise") {
        const StochasticObjective f = [](const Vec&, StreamTree) {
            return std::numeric_limits<double>::quiet_NaN();
        };
        EsOptions opts;
        CHECK_THROWS_AS(es_meta_gradient({0.1}, f, opts, StreamTree{7}), NonFiniteError);
    }
}

TEST_CASE("finite differences on a linear objective are exact") {
    const Vec a{1.25, -2.5};
    const StochasticObjective f = [&](const Vec& x, StreamTree) { return dot(a, x); };
    FdOptions opts;
    opts.epsilon = 0.37;
    opts.samples = 3;
    const Vec g = finite_difference_meta_gradient({0.4, 0.9}, f, opts, StreamTree{8});
    CHECK(g[0] == doctest::Approx(a[0]).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(a[1]).epsilon(1e-12));
}

TEST_CASE("fd variance scales like one over epsilon squared without crn") {
    // eta-independent noise: the fd output is pure noise / (2 eps)
    const StochasticObjective f = [](const Vec&, StreamTree tree) {
        RngStream rng = tree.stream(99);
        return rng.normal();
    };
    auto variance_at = [&](double eps) {
        FdOptions opts;
        opts.epsilon = eps;
        opts.samples = 1;
        opts.crn = false;
        double sum = 0.0, sq = 0.0;
        const int reps = 4000;
        for (int i = 0; i < reps; ++i) {
            const Vec g =
                finite_difference_meta_gradient({0.0}, f, opts, StreamTree{9}.child(i));
            sum += g[0];
            sq += g[0] * g[0];
        }
        return sq / reps - (sum / reps) * (sum / reps);
    };
    const double ratio = variance_at(0.01) / variance_at(0.1);
    INFO("variance ratio = ", ratio);
    CHECK(ratio > 50.0);
    CHECK(ratio < 200.0);
}

TEST_CASE("common random numbers cancel shared noise") {
    const StochasticObjective f = [](const Vec& x, StreamTree tree) {
        RngStream rng = tree.stream(99);
        return x[0] + rng.normal();
    };
    FdOptions opts;
    opts.epsilon = 0.05;
    opts.samples = 4;
    opts.crn = true;
    const Vec g = finite_difference_meta_gradient({0.2}, f, opts, StreamTree{10});
    CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("propagation flags non-finite results") {
    const MetaParams eta = make_lr_bucket_params({1e200}, {0});
    const Vec theta{0.0, 0.0};
    const bandit::Batch batch{{0, 1e200}};
    const bandit::StepOps ops(eta, theta, batch, 0);
    Matrix jac(1, 2);
    jac.at(0, 0) = 1e200;
    Vec scratch;
    CHECK_THROWS_AS(propagate_meta_jacobian(jac, ops, HessianMode::Sampled, scratch),
                    NonFiniteError);
}
