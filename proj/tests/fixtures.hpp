#pragma once

#include "fedgen/classifier.hpp"
#include "fedgen/nn.hpp"
#include "oracles.hpp"

#include <random>

namespace fixtures {

using fedgen::nn::Act;

inline fedgen::ClassifierConfig tiny_classifier() {
    fedgen::ClassifierConfig c;
    c.input = {1, 4, 4};
    c.conv1 = 2;
    c.conv2 = 3;
    c.feature_dim = 4;
    return c;
}

/// n images of `shape`, uniform in [0, 1].
inline Act random_images(fedgen::ImageShape shape, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0, 1);
    Act x(shape.channels, static_cast<Eigen::Index>(n) * shape.pixels());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    return x;
}

inline Act random_act(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, float scale = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0, scale);
    Act x(rows, cols);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return x;
}

/// Sample s of a (channels, n*H*W) activation as an oracle tensor.
inline oracle::Tensor sample_tensor(const Act& x, fedgen::ImageShape shape, int s) {
    oracle::Tensor t(shape.channels, shape.height, shape.width);
    for (int c = 0; c < shape.channels; ++c)
        for (int p = 0; p < shape.pixels(); ++p)
            t.v[static_cast<std::size_t>(c * shape.pixels() + p)] = x(c, s * shape.pixels() + p);
    return t;
}

inline std::vector<double> column(const Act& m, Eigen::Index s) {
    std::vector<double> v(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, s);
    return v;
}

/// Perturbs every parameter by N(0, scale) so copies stop being identical.
inline void jitter(fedgen::ParamSet& p, std::uint64_t seed, float scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0, scale);
    for (auto& e : p)
        for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] += g(rng);
}

} // namespace fixtures
