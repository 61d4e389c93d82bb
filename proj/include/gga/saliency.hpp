#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "gga/nn.hpp"
#include "gga/tensor.hpp"

namespace gga {

/// Elementwise sign of a class-conditional input gradient, entries in {-1,0,1}.
struct SaliencyMap {
    std::size_t class_index = 0;
    Tensor values;

    /// All-zero map; its cosine with anything is defined as 0.
    bool degenerate() const;
};

/// Sign of `gradient`, with sign(0) = 0. Throws a numerical error naming the
/// class if the gradient holds NaN or Inf.
SaliencyMap sign_map(std::size_t class_index, const Tensor& gradient);
SaliencyMap saliency(const Model& model, const Tensor& x, std::size_t class_index, LossKind kind = LossKind::Sce);

double cosine(std::span<const double> a, std::span<const double> b);
double cosine(const SaliencyMap& a, const SaliencyMap& b);

/// Pairwise cosine similarities between the saliency maps of `class_ids`.
/// class_ids[0] is the predicted class.
struct CosineSimilarityMatrix {
    std::size_t size = 0;
    std::vector<double> entries;  // row-major size x size
    std::vector<std::size_t> class_ids;
    std::size_t predicted_index = 0;
    std::vector<bool> degenerate;  // per position in class_ids
    double top_probability = 0.0;  // softmax score of the predicted class

    double at(std::size_t i, std::size_t j) const { return entries[i * size + j]; }
    std::size_t predicted_class() const { return class_ids[predicted_index]; }
    bool any_degenerate() const;
};

struct CsmOptions {
    std::size_t top_n = 0;  // 0 means all classes
    LossKind loss = LossKind::Sce;
};

/// Classes ordered by descending softmax probability, ties by ascending index.
std::vector<std::size_t> ranked_classes(std::span<const double> logits);

CosineSimilarityMatrix csm_from_maps(const std::vector<SaliencyMap>& maps, std::size_t predicted_index = 0);
CosineSimilarityMatrix csm(const Model& model, const Tensor& x, const CsmOptions& opts = {});
std::vector<CosineSimilarityMatrix> csm_batch(const Model& model, std::span<const Tensor> inputs,
                                              const CsmOptions& opts = {});

/// "m", the class_ids row, then m matrix rows.
void write_csm_csv(std::ostream& out, const CosineSimilarityMatrix& m);
/// Binary PGM (P5); cosine -1 maps to black, +1 to white, each cell a
/// cell_px square.
void write_csm_pgm(std::ostream& out, const CosineSimilarityMatrix& m, std::size_t cell_px = 8);

}  // namespace gga
