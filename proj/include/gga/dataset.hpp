#pragma once

#include <string>
#include <vector>

#include "gga/tensor.hpp"

namespace gga {

/// Label used for out-of-distribution samples; they never enter training.
inline constexpr int kNoLabel = -1;

struct LabeledDataset {
    std::vector<Tensor> inputs;
    std::vector<int> labels;
    double domain_lo = 0.0;
    double domain_hi = 1.0;
    std::string tag = "clean";

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }
    /// Throws a data error if lengths differ, inputs leave the domain or a
    /// label is >= num_classes (pass 0 to skip the label check).
    void validate(std::size_t num_classes = 0) const;
};

}  // namespace gga
