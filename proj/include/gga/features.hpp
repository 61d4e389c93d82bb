#pragma once

#include <array>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gga/saliency.hpp"

namespace gga {

struct SetStats {
    double mean = 0.0;
    double max = 0.0;
    double min = 0.0;
    double std = 0.0;     // population standard deviation
    double energy = 0.0;  // mean of squares

    friend bool operator==(const SetStats&, const SetStats&) = default;
};

/// All-zero statistics for an empty set.
SetStats set_statistics(std::span<const double> values);

struct GgaFeatureVector {
    SetStats s1;  // pairs not involving the predicted class
    SetStats s2;  // pairs involving the predicted class
    std::size_t predicted_class = 0;
    bool degenerate = false;
    double softmax_score = 0.0;

    /// f1..f10 = (mean, max, min, std, energy) over S1 then S2.
    std::array<double, 10> values() const;
    /// f1..f10, optionally followed by the softmax score.
    std::vector<double> as_vector(bool include_softmax = false) const;
};

/// Strict upper triangle split into S1 (neither index is the predicted
/// position) and S2 (one index is). Both are listed in row-major order.
std::pair<std::vector<double>, std::vector<double>> split_sets(const CosineSimilarityMatrix& csm);

GgaFeatureVector features(const CosineSimilarityMatrix& csm);

/// Header: f1..f10,predicted_class,label,source_tag
void write_features_csv_header(std::ostream& out);
void write_features_csv_row(std::ostream& out, const GgaFeatureVector& f, int label, const std::string& source_tag);

}  // namespace gga
