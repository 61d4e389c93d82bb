#include "gga/loda.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gga/error.hpp"

namespace gga {
namespace {

constexpr double kRangeMargin = 0.05;

}  // namespace

long Histogram::bin_of(double v) const {
    if (!(v >= lo && v <= hi)) return -1;
    const auto b = static_cast<long>(std::floor((v - lo) / width()));
    return std::clamp(b, 0L, static_cast<long>(bins) - 1);
}

double Histogram::density(double v) const {
    const long b = bin_of(v);
    const double count = b < 0 ? 0.0 : counts[static_cast<std::size_t>(b)];
    return (count + 1.0) / ((total + static_cast<double>(bins)) * width());
}

LodaDetector LodaDetector::fit(std::span<const std::vector<double>> samples, const LodaOptions& opts) {
    if (samples.size() < 2) throw data_error("LODA needs at least two training vectors");
    if (opts.projections == 0 || opts.bins == 0) throw usage_error("LODA projections and bins must be positive");
    const std::size_t d = samples.front().size();
    if (d == 0) throw data_error("LODA training vectors are empty");
    for (const auto& s : samples)
        if (s.size() != d) throw data_error("LODA training vectors differ in dimension");

    LodaDetector det;
    det.opts_ = opts;
    det.mean_.assign(d, 0.0);
    det.scale_.assign(d, 1.0);
    if (opts.standardize) {
        const double n = static_cast<double>(samples.size());
        for (const auto& s : samples)
            for (std::size_t k = 0; k < d; ++k) det.mean_[k] += s[k];
        for (auto& m : det.mean_) m /= n;
        std::vector<double> var(d, 0.0);
        for (const auto& s : samples)
            for (std::size_t k = 0; k < d; ++k) var[k] += (s[k] - det.mean_[k]) * (s[k] - det.mean_[k]);
        for (std::size_t k = 0; k < d; ++k) {
            const double sd = std::sqrt(var[k] / n);
            det.scale_[k] = sd > 0.0 ? sd : 1.0;
        }
    }

    std::vector<std::vector<double>> z;
    z.reserve(samples.size());
    for (const auto& s : samples) z.push_back(det.transform(s));

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto nonzeros = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
    std::vector<std::size_t> dims(d);
    std::vector<double> projected(z.size());
    for (std::size_t p = 0; p < opts.projections; ++p) {
        std::iota(dims.begin(), dims.end(), std::size_t{0});
        std::shuffle(dims.begin(), dims.end(), rng);
        std::vector<double> w(d, 0.0);
        for (std::size_t k = 0; k < nonzeros; ++k) {
            double v = 0.0;
            while (v == 0.0) v = normal(rng);
            w[dims[k]] = v;
        }
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < z.size(); ++i) {
            projected[i] = dot(w, z[i]);
            lo = std::min(lo, projected[i]);
            hi = std::max(hi, projected[i]);
        }
        const double margin = hi > lo ? kRangeMargin * (hi - lo) : 0.5;
        Histogram h;
        h.lo = lo - margin;
        h.hi = hi + margin;
        h.bins = opts.bins;
        h.counts.assign(opts.bins, 0.0);
        for (double v : projected) h.counts[static_cast<std::size_t>(h.bin_of(v))] += 1.0;
        h.total = static_cast<double>(z.size());
        det.projections_.push_back(std::move(w));
        det.histograms_.push_back(std::move(h));
    }
    return det;
}

LodaDetector LodaDetector::fit(std::span<const GgaFeatureVector> samples, const LodaOptions& opts) {
    std::vector<std::vector<double>> rows;
    rows.reserve(samples.size());
    for (const auto& f : samples) rows.push_back(f.as_vector(opts.include_softmax));
    return fit(rows, opts);
}

std::vector<double> LodaDetector::transform(std::span<const double> f) const {
    if (f.size() != mean_.size())
        throw usage_error("feature vector has dimension " + std::to_string(f.size()) + ", detector expects " +
                          std::to_string(mean_.size()));
    std::vector<double> z(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) z[k] = (f[k] - mean_[k]) / scale_[k];
    return z;
}

double LodaDetector::score(std::span<const double> f) const {
    if (histograms_.empty()) throw usage_error("LODA detector is not fitted");
    const auto z = transform(f);
    double s = 0.0;
    for (std::size_t p = 0; p < projections_.size(); ++p) s -= std::log(histograms_[p].density(dot(projections_[p], z)));
    return s / static_cast<double>(projections_.size());
}

double LodaDetector::score(const GgaFeatureVector& f) const { return score(f.as_vector(opts_.include_softmax)); }

Container LodaDetector::to_container() const {
    Container c;
    c.kind = "loda";
    c.meta["projections"] = opts_.projections;
    c.meta["bins"] = opts_.bins;
    c.meta["seed"] = opts_.seed;
    c.meta["standardize"] = opts_.standardize;
    c.meta["include_softmax"] = opts_.include_softmax;
    c.meta["threshold"] = threshold_;
    const std::size_t d = mean_.size(), k = projections_.size(), b = opts_.bins;
    c.add("mean", Tensor({d}, mean_));
    c.add("scale", Tensor({d}, scale_));
    std::vector<double> w, ranges, counts, totals;
    for (std::size_t p = 0; p < k; ++p) {
        w.insert(w.end(), projections_[p].begin(), projections_[p].end());
        ranges.push_back(histograms_[p].lo);
        ranges.push_back(histograms_[p].hi);
        counts.insert(counts.end(), histograms_[p].counts.begin(), histograms_[p].counts.end());
        totals.push_back(histograms_[p].total);
    }
    c.add("projections", Tensor({k, d}, std::move(w)));
    c.add("ranges", Tensor({k, 2}, std::move(ranges)));
    c.add("counts", Tensor({k, b}, std::move(counts)));
    c.add("totals", Tensor({k}, std::move(totals)));
    // The threshold also travels as a tensor so it round-trips bit-exactly.
    c.add("threshold", Tensor({1}, std::vector<double>{threshold_}));
    return c;
}

LodaDetector LodaDetector::from_container(const Container& c) {
    if (c.kind != "loda") throw data_error("container is not a LODA detector");
    LodaDetector det;
    det.opts_.projections = c.meta.at("projections");
    det.opts_.bins = c.meta.at("bins");
    det.opts_.seed = c.meta.at("seed");
    det.opts_.standardize = c.meta.at("standardize");
    det.opts_.include_softmax = c.meta.at("include_softmax");
    det.threshold_ = c.tensor("threshold")[0];
    det.mean_ = c.tensor("mean").raw();
    det.scale_ = c.tensor("scale").raw();
    const std::size_t d = det.mean_.size(), k = det.opts_.projections, b = det.opts_.bins;
    const Tensor& w = c.tensor("projections");
    const Tensor& ranges = c.tensor("ranges");
    const Tensor& counts = c.tensor("counts");
    const Tensor& totals = c.tensor("totals");
    if (w.size() != k * d || counts.size() != k * b || ranges.size() != 2 * k || totals.size() != k)
        throw data_error("LODA container tensors are inconsistent with its header");
    for (std::size_t p = 0; p < k; ++p) {
        det.projections_.emplace_back(w.raw().begin() + static_cast<std::ptrdiff_t>(p * d),
                                      w.raw().begin() + static_cast<std::ptrdiff_t>((p + 1) * d));
        Histogram h;
        h.lo = ranges[2 * p];
        h.hi = ranges[2 * p + 1];
        h.bins = b;
        h.counts.assign(counts.raw().begin() + static_cast<std::ptrdiff_t>(p * b),
                        counts.raw().begin() + static_cast<std::ptrdiff_t>((p + 1) * b));
        h.total = totals[p];
        det.histograms_.push_back(std::move(h));
    }
    return det;
}

double calibrate_threshold(std::vector<double> clean_scores, double tpr) {
    if (clean_scores.empty()) throw usage_error("calibration needs at least one clean score");
    if (!(tpr > 0.0 && tpr < 1.0)) throw usage_error("tpr must lie in (0,1)");
    std::sort(clean_scores.begin(), clean_scores.end());
    const double n = static_cast<double>(clean_scores.size());
    // Guard against tpr*n landing a rounding error above an integer.
    auto rank = static_cast<std::size_t>(std::ceil(tpr * n - 1e-9 * n));
    rank = std::clamp<std::size_t>(rank, 1, clean_scores.size());
    return clean_scores[rank - 1];
}

void save_detector(const std::filesystem::path& path, const LodaDetector& det) { save_container(path, det.to_container()); }

LodaDetector load_detector(const std::filesystem::path& path) {
    return LodaDetector::from_container(load_container(path, "loda"));
}

}  // namespace gga
