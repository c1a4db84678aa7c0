#include "metagrad/meta_params.hpp"

#include <array>

namespace metagrad {

double EntropyNet::coefficient(std::span<const double> p, std::span<const double> x) {
    const double* W1 = p.data();
    const double* b1 = p.data() + kInputDim * kHiddenDim;
    const double* w2 = b1 + kHiddenDim;
    const double b2 = w2[kHiddenDim];
    double y = b2;
    for (int h = 0; h < kHiddenDim; ++h) {
        double z = b1[h];
        for (int i = 0; i < kInputDim; ++i) z += W1[h * kInputDim + i] * x[static_cast<std::size_t>(i)];
        if (z > 0.0) y += w2[h] * z;
    }
    return sigmoid(y);
}

Vec EntropyNet::coefficient_grad(std::span<const double> p, std::span<const double> x) {
    const double* W1 = p.data();
    const double* b1 = p.data() + kInputDim * kHiddenDim;
    const double* w2 = b1 + kHiddenDim;
    const double b2 = w2[kHiddenDim];

    std::array<double, kHiddenDim> h{};
    std::array<bool, kHiddenDim> active{};
    double y = b2;
    for (int j = 0; j < kHiddenDim; ++j) {
        double z = b1[j];
        for (int i = 0; i < kInputDim; ++i) z += W1[j * kInputDim + i] * x[static_cast<std::size_t>(i)];
        active[static_cast<std::size_t>(j)] = z > 0.0;
        h[static_cast<std::size_t>(j)] = z > 0.0 ? z : 0.0;
        y += w2[j] * h[static_cast<std::size_t>(j)];
    }
    const double c = sigmoid(y);
    const double dy = c * (1.0 - c);

    Vec g(static_cast<std::size_t>(param_count()), 0.0);
    double* gW1 = g.data();
    double* gb1 = g.data() + kInputDim * kHiddenDim;
    double* gw2 = gb1 + kHiddenDim;
    for (int j = 0; j < kHiddenDim; ++j) {
        gw2[j] = dy * h[static_cast<std::size_t>(j)];
        if (!active[static_cast<std::size_t>(j)]) continue;
        const double back = dy * w2[j];
        gb1[j] = back;
        for (int i = 0; i < kInputDim; ++i) gW1[j * kInputDim + i] = back * x[static_cast<std::size_t>(i)];
    }
    gw2[kHiddenDim] = dy;  // b2
    return g;
}

void MetaParams::validate(int lifetime) const {
    if (values.empty()) throw ConfigError("meta-parameter vector must be non-empty");
    if (!all_finite(values)) throw ConfigError("meta-parameter vector has non-finite entries");
    switch (mapping) {
        case MetaMapping::LearningRateBuckets: {
            if (bucket_starts.size() != values.size())
                throw ConfigError("bucket count must match meta-parameter dimension");
            int prev = -1;
            for (int s : bucket_starts) {
                if (s <= prev) throw ConfigError("bucket boundaries must be strictly increasing");
                if (s < 0 || s >= lifetime) throw ConfigError("bucket boundary outside [0, lifetime)");
                prev = s;
            }
            break;
        }
        case MetaMapping::ScalarEntropyCoef:
            if (values.size() != 1) throw ConfigError("scalar entropy coefficient needs exactly one meta-parameter");
            break;
        case MetaMapping::EntropyScheduleNet:
            if (static_cast<int>(values.size()) != EntropyNet::param_count())
                throw ConfigError("entropy schedule net expects " + std::to_string(EntropyNet::param_count()) +
                                  " meta-parameters");
            break;
    }
}

int MetaParams::bucket_for_step(int step) const {
    if (bucket_starts.empty() || step < bucket_starts.front())
        throw BucketMismatch("step " + std::to_string(step) + " precedes every learning-rate bucket");
    int idx = 0;
    for (std::size_t i = 1; i < bucket_starts.size(); ++i) {
        if (step >= bucket_starts[i]) idx = static_cast<int>(i);
    }
    return idx;
}

double MetaParams::entropy_coef(std::span<const double> reward_history) const {
    if (mapping == MetaMapping::ScalarEntropyCoef) return sigmoid(values[0]);
    if (mapping != MetaMapping::EntropyScheduleNet)
        throw ConfigError("meta-parameter mapping does not define an entropy coefficient");
    return EntropyNet::coefficient(values, reward_history);
}

Vec MetaParams::entropy_coef_grad(std::span<const double> reward_history) const {
    if (mapping == MetaMapping::ScalarEntropyCoef) {
        const double c = sigmoid(values[0]);
        return Vec{c * (1.0 - c)};
    }
    if (mapping != MetaMapping::EntropyScheduleNet)
        throw ConfigError("meta-parameter mapping does not define an entropy coefficient");
    return EntropyNet::coefficient_grad(values, reward_history);
}

MetaParams make_lr_bucket_params(Vec rates, std::vector<int> starts) {
    MetaParams p;
    p.values = std::move(rates);
    p.mapping = MetaMapping::LearningRateBuckets;
    p.bucket_starts = std::move(starts);
    return p;
}

MetaParams make_scalar_entropy_params(double value) {
    MetaParams p;
    p.values = Vec{value};
    p.mapping = MetaMapping::ScalarEntropyCoef;
    return p;
}

MetaParams make_entropy_net_params(Vec packed) {
    MetaParams p;
    p.values = std::move(packed);
    p.mapping = MetaMapping::EntropyScheduleNet;
    return p;
}

}  // namespace metagrad
