#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gga/nn.hpp"
#include "gga/tensor.hpp"

namespace gga::testing {

inline constexpr std::size_t kPropertyCases = 1000;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

inline void randomize(Model& m, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& layer : m.params())
        for (auto& t : layer)
            for (auto& v : t.values()) v = u(rng);
}

/// Small dense network with random shape; softplus activations when smooth.
inline Model random_mlp(std::mt19937_64& rng, bool smooth, std::size_t max_dim = 6) {
    std::uniform_int_distribution<std::size_t> dim(2, max_dim);
    const std::size_t in = dim(rng), hidden = dim(rng), classes = dim(rng);
    std::vector<LayerSpec> layers{LayerSpec::dense(in, hidden),
                                  smooth ? LayerSpec::softplus(2.0) : LayerSpec::rectifier(),
                                  LayerSpec::dense(hidden, classes)};
    Model m({in}, layers, classes);
    randomize(m, rng);
    return m;
}

/// Tiny convolutional network on a [2,5,5] input.
inline Model random_cnn(std::mt19937_64& rng, bool smooth) {
    std::vector<LayerSpec> layers{LayerSpec::conv2d(2, 3, 3, 2, 1),
                                  smooth ? LayerSpec::softplus(2.0) : LayerSpec::rectifier(),
                                  LayerSpec::flatten(), LayerSpec::dense(27, 4)};
    Model m({2, 5, 5}, layers, 4);
    randomize(m, rng, 0.8);
    return m;
}

/// Linear classifier logits = W x with zero bias.
inline Model linear_model(const std::vector<std::vector<double>>& w) {
    const std::size_t c = w.size(), d = w[0].size();
    Model m({d}, {LayerSpec::dense(d, c)}, c);
    auto& weight = m.params()[0][0];
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < d; ++j) weight[i * d + j] = w[i][j];
    return m;
}

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace gga::testing
