#include "gga/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gga/error.hpp"
#include "gga/features.hpp"
#include "gga/parallel.hpp"

namespace gga {

GradientOracle model_loss_gradient(const Model& model, std::size_t class_index, LossKind kind) {
    return [&model, class_index, kind](const Tensor& x) { return input_gradient(model, x, class_index, kind); };
}

std::optional<double> zeta(const GradientOracle& grad, const Tensor& x, const Tensor& x_tilde) {
    const Tensor g = grad(x_tilde);
    std::vector<double> neg_g(g.size()), disp(x.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        neg_g[i] = -g[i];
        disp[i] = x[i] - x_tilde[i];
    }
    const double ng = norm2(neg_g), nd = norm2(disp);
    if (ng == 0.0 || nd == 0.0 || !std::isfinite(ng)) return std::nullopt;
    return std::clamp(dot(neg_g, disp) / (ng * nd), -1.0, 1.0);
}

std::optional<double> zeta(const Model& model, const Tensor& x, const Tensor& x_tilde, std::size_t class_index) {
    return zeta(model_loss_gradient(model, class_index), x, x_tilde);
}

ZetaSample zeta_stats(const GradientOracle& grad, const Tensor& x, double sigma, std::size_t n, std::uint64_t seed) {
    if (!(sigma > 0.0)) throw usage_error("zeta noise sigma must be positive");
    if (n == 0) throw usage_error("zeta needs at least one injection");
    ZetaSample s;
    s.sigma = sigma;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
        Tensor xt = x;
        for (auto& v : xt.values()) v += sigma * normal(rng);
        if (auto z = zeta(grad, x, xt)) s.values.push_back(*z);
        else ++s.undefined;
    }
    if (s.values.empty()) throw numerical_error("zeta undefined for every noise draw");
    return s;
}

ZetaSample zeta_stats(const Model& model, const Tensor& x, std::size_t class_index, double sigma, std::size_t n,
                      std::uint64_t seed) {
    return zeta_stats(model_loss_gradient(model, class_index), x, sigma, n, seed);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw usage_error("quantile of an empty list");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= values.size()) return values.back();
    return values[i] + (pos - static_cast<double>(i)) * (values[i + 1] - values[i]);
}

double directional_curvature(const GradientOracle& grad, const Tensor& x, const Tensor& e, double r) {
    Tensor xr = x;
    for (std::size_t i = 0; i < x.size(); ++i) xr[i] += r * e[i];
    const Tensor g1 = grad(xr), g0 = grad(x);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (g1[i] - g0[i]) / r * e[i];
    return s;
}

Tensor orthogonal_direction(const Tensor& gamma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (;;) {
        Tensor v(gamma.shape());
        for (auto& t : v.values()) t = normal(rng);
        const double proj = dot(v.values(), gamma.values());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * gamma[i];
        // Second pass removes the residual component left by rounding.
        const double proj2 = dot(v.values(), gamma.values());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj2 * gamma[i];
        const double len = norm2(v.values());
        if (len > 1e-8) {
            for (auto& t : v.values()) t /= len;
            return v;
        }
    }
}

std::vector<double> linspace(double lo, double hi, std::size_t points) {
    std::vector<double> axis(points);
    for (std::size_t i = 0; i < points; ++i)
        axis[i] = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    return axis;
}

SurfaceGrid csm_surface(const Model& model, const Tensor& x, const Tensor& perturbation,
                        const std::vector<double>& eps1_axis, const std::vector<double>& eps2_axis,
                        std::uint64_t seed, double lo, double hi) {
    const double len = norm2(perturbation.values());
    if (len == 0.0) throw usage_error("surface direction must be non-zero");
    SurfaceGrid g;
    g.eps1_axis = eps1_axis;
    g.eps2_axis = eps2_axis;
    g.gamma = perturbation;
    for (auto& v : g.gamma.values()) v /= len;
    g.gamma_perp = orthogonal_direction(g.gamma, seed);
    const std::size_t n1 = eps1_axis.size(), n2 = eps2_axis.size();
    g.z.assign(n1 * n2, 0.0);
    g.predicted_class.assign(n1 * n2, 0);
    std::vector<char> degenerate(n1 * n2, 0);
    parallel_for(n1 * n2, [&](std::size_t k) {
        const double e1 = eps1_axis[k / n2], e2 = eps2_axis[k % n2];
        Tensor p = x;
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = std::clamp(x[i] + e1 * g.gamma[i] + e2 * g.gamma_perp[i], lo, hi);
        const CosineSimilarityMatrix m = csm(model, p);
        const GgaFeatureVector f = features(m);
        g.z[k] = f.s1.mean;
        g.predicted_class[k] = f.predicted_class;
        degenerate[k] = f.degenerate;
    });
    g.degenerate.assign(degenerate.begin(), degenerate.end());
    return g;
}

void write_surface_csv(std::ostream& out, const SurfaceGrid& g) {
    out.precision(17);
    out << "eps1,eps2,mean_s1,predicted_class\n";
    for (std::size_t i = 0; i < g.eps1_axis.size(); ++i)
        for (std::size_t j = 0; j < g.eps2_axis.size(); ++j)
            out << g.eps1_axis[i] << ',' << g.eps2_axis[j] << ',' << g.z_at(i, j) << ',' << g.class_at(i, j) << '\n';
}

}  // namespace gga
