#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "gga/nn.hpp"
#include "gga/saliency.hpp"

namespace gga {

/// Gradient oracle of a scalar function; lets the probes run on analytic
/// test functions as well as on model losses.
using GradientOracle = std::function<Tensor(const Tensor&)>;

GradientOracle model_loss_gradient(const Model& model, std::size_t class_index, LossKind kind = LossKind::Sce);

/// Cosine between -grad f(x_tilde) and x - x_tilde; nullopt when either
/// vector is zero.
std::optional<double> zeta(const GradientOracle& grad, const Tensor& x, const Tensor& x_tilde);
std::optional<double> zeta(const Model& model, const Tensor& x, const Tensor& x_tilde, std::size_t class_index);

struct ZetaSample {
    double sigma = 0.0;
    std::vector<double> values;
    std::size_t undefined = 0;  // draws where zeta was undefined
    bool correct = false;
};

/// zeta at n neighbours x + sigma * eta, eta standard normal.
ZetaSample zeta_stats(const GradientOracle& grad, const Tensor& x, double sigma, std::size_t n, std::uint64_t seed);
ZetaSample zeta_stats(const Model& model, const Tensor& x, std::size_t class_index, double sigma, std::size_t n,
                      std::uint64_t seed);

/// Linear-interpolated quantile of an unsorted list, q in [0,1].
double quantile(std::vector<double> values, double q);

/// Directional second difference <(grad f(x + r e) - grad f(x)) / r, e>.
double directional_curvature(const GradientOracle& grad, const Tensor& x, const Tensor& e, double r);

inline const std::vector<double> kDefaultSigmaSweep{0.01, 0.05, 0.1, 0.5, 1.0};

struct SurfaceGrid {
    std::vector<double> eps1_axis;
    std::vector<double> eps2_axis;
    std::vector<double> z;                       // row-major [eps1][eps2] mean(S1)
    std::vector<std::size_t> predicted_class;    // same layout
    std::vector<bool> degenerate;                // same layout
    Tensor gamma;
    Tensor gamma_perp;

    double z_at(std::size_t i, std::size_t j) const { return z[i * eps2_axis.size() + j]; }
    std::size_t class_at(std::size_t i, std::size_t j) const { return predicted_class[i * eps2_axis.size() + j]; }
};

/// Unit vector orthogonal to the unit vector gamma, from a seeded Gaussian
/// draw and one Gram-Schmidt step.
Tensor orthogonal_direction(const Tensor& gamma, std::uint64_t seed);

/// Evenly spaced axis of `points` values over [lo, hi].
std::vector<double> linspace(double lo, double hi, std::size_t points);

/// mean(S1) of the full CSM and the prediction at x + e1*gamma + e2*gamma_perp
/// (clipped to [lo, hi]) over the grid. `perturbation` is normalized.
SurfaceGrid csm_surface(const Model& model, const Tensor& x, const Tensor& perturbation,
                        const std::vector<double>& eps1_axis, const std::vector<double>& eps2_axis,
                        std::uint64_t seed, double lo = 0.0, double hi = 1.0);

/// eps1,eps2,mean_s1,predicted_class rows.
void write_surface_csv(std::ostream& out, const SurfaceGrid& g);

}  // namespace gga
