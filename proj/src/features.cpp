#include "gga/features.hpp"

#include <algorithm>
#include <cmath>

#include "gga/error.hpp"

namespace gga {

SetStats set_statistics(std::span<const double> values) {
    SetStats s;
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    double sum = 0.0, sq = 0.0;
    s.min = s.max = values[0];
    for (double v : values) {
        sum += v;
        sq += v * v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.mean = std::clamp(sum / n, s.min, s.max);
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / n);
    s.energy = sq / n;
    return s;
}

std::array<double, 10> GgaFeatureVector::values() const {
    return {s1.mean, s1.max, s1.min, s1.std, s1.energy, s2.mean, s2.max, s2.min, s2.std, s2.energy};
}

std::vector<double> GgaFeatureVector::as_vector(bool include_softmax) const {
    const auto v = values();
    std::vector<double> out(v.begin(), v.end());
    if (include_softmax) out.push_back(softmax_score);
    return out;
}

std::pair<std::vector<double>, std::vector<double>> split_sets(const CosineSimilarityMatrix& csm) {
    if (csm.size < 2) throw usage_error("a CSM needs at least two classes to split");
    if (csm.predicted_index >= csm.size) throw usage_error("predicted class is not part of the CSM");
    std::vector<double> s1, s2;
    for (std::size_t i = 0; i < csm.size; ++i)
        for (std::size_t j = i + 1; j < csm.size; ++j)
            (i == csm.predicted_index || j == csm.predicted_index ? s2 : s1).push_back(csm.at(i, j));
    return {std::move(s1), std::move(s2)};
}

GgaFeatureVector features(const CosineSimilarityMatrix& csm) {
    const auto [s1, s2] = split_sets(csm);
    GgaFeatureVector f;
    f.s1 = set_statistics(s1);
    f.s2 = set_statistics(s2);
    f.predicted_class = csm.predicted_class();
    f.degenerate = s1.empty() || csm.any_degenerate();
    f.softmax_score = csm.top_probability;
    return f;
}

void write_features_csv_header(std::ostream& out) {
    for (int i = 1; i <= 10; ++i) out << 'f' << i << ',';
    out << "predicted_class,label,source_tag\n";
}

void write_features_csv_row(std::ostream& out, const GgaFeatureVector& f, int label, const std::string& source_tag) {
    out.precision(17);
    for (double v : f.values()) out << v << ',';
    out << f.predicted_class << ',' << label << ',' << source_tag << '\n';
}

}  // namespace gga
