#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gga/container.hpp"
#include "gga/features.hpp"

namespace gga {

/// Equal-width histogram over [lo, hi].
struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::size_t bins = 1;
    std::vector<double> counts;
    double total = 0.0;

    double width() const { return (hi - lo) / static_cast<double>(bins); }
    /// Bin index of v, or -1 outside [lo, hi].
    long bin_of(double v) const;
    /// (count + 1) / ((total + bins) * width); out-of-range values see count 0.
    double density(double v) const;
};

struct LodaOptions {
    std::size_t projections = 100;
    std::size_t bins = 100;
    std::uint64_t seed = 0;
    bool standardize = true;
    bool include_softmax = false;
};

/// Ensemble of one-dimensional histograms over sparse random projections.
/// Immutable after fit; score() is safe to call concurrently.
class LodaDetector {
public:
    LodaDetector() = default;

    static LodaDetector fit(std::span<const std::vector<double>> samples, const LodaOptions& opts);
    static LodaDetector fit(std::span<const GgaFeatureVector> samples, const LodaOptions& opts);

    /// Negative mean log density across projections; higher is more anomalous.
    double score(std::span<const double> f) const;
    double score(const GgaFeatureVector& f) const;

    double threshold() const noexcept { return threshold_; }
    void set_threshold(double t) noexcept { threshold_ = t; }
    bool flags(double score) const noexcept { return score > threshold_; }

    std::size_t dimension() const noexcept { return mean_.size(); }
    const LodaOptions& options() const noexcept { return opts_; }
    const std::vector<std::vector<double>>& projections() const noexcept { return projections_; }
    const std::vector<Histogram>& histograms() const noexcept { return histograms_; }
    std::vector<Histogram>& histograms() noexcept { return histograms_; }
    const std::vector<double>& feature_mean() const noexcept { return mean_; }
    const std::vector<double>& feature_scale() const noexcept { return scale_; }

    Container to_container() const;
    static LodaDetector from_container(const Container& c);

private:
    std::vector<double> transform(std::span<const double> f) const;

    LodaOptions opts_;
    std::vector<double> mean_;
    std::vector<double> scale_;
    std::vector<std::vector<double>> projections_;  // dense storage, ceil(sqrt(d)) nonzeros each
    std::vector<Histogram> histograms_;
    double threshold_ = 0.0;
};

/// The ceil(tpr * n)-th smallest clean score: flagging score > threshold then
/// accepts at least a tpr fraction of the clean set.
double calibrate_threshold(std::vector<double> clean_scores, double tpr = 0.95);

void save_detector(const std::filesystem::path& path, const LodaDetector& det);
LodaDetector load_detector(const std::filesystem::path& path);

}  // namespace gga
