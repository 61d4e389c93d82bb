#include "gga/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gga/error.hpp"
#include "gga/parallel.hpp"

namespace gga {

bool SaliencyMap::degenerate() const {
    return std::all_of(values.values().begin(), values.values().end(), [](double v) { return v == 0.0; });
}

SaliencyMap sign_map(std::size_t class_index, const Tensor& gradient) {
    if (!gradient.all_finite())
        throw numerical_error("non-finite input gradient for class " + std::to_string(class_index));
    SaliencyMap s{class_index, Tensor(gradient.shape())};
    for (std::size_t i = 0; i < gradient.size(); ++i)
        s.values[i] = gradient[i] > 0.0 ? 1.0 : (gradient[i] < 0.0 ? -1.0 : 0.0);
    return s;
}

SaliencyMap saliency(const Model& model, const Tensor& x, std::size_t class_index, LossKind kind) {
    if (class_index >= model.num_classes())
        throw usage_error("class " + std::to_string(class_index) + " out of range");
    return sign_map(class_index, input_gradient(model, x, class_index, kind));
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw usage_error("cosine of vectors with different sizes");
    const double na = dot(a, a), nb = dot(b, b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot(a, b) / std::sqrt(na * nb), -1.0, 1.0);
}

double cosine(const SaliencyMap& a, const SaliencyMap& b) {
    if (a.values.shape() != b.values.shape()) throw usage_error("saliency maps differ in shape");
    return cosine(a.values.values(), b.values.values());
}

bool CosineSimilarityMatrix::any_degenerate() const {
    return std::any_of(degenerate.begin(), degenerate.end(), [](bool d) { return d; });
}

std::vector<std::size_t> ranked_classes(std::span<const double> logits) {
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Softmax is monotone in the logits, so ranking logits ranks probabilities.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    return order;
}

CosineSimilarityMatrix csm_from_maps(const std::vector<SaliencyMap>& maps, std::size_t predicted_index) {
    CosineSimilarityMatrix m;
    m.size = maps.size();
    m.entries.assign(m.size * m.size, 0.0);
    m.predicted_index = predicted_index;
    for (const auto& s : maps) {
        m.class_ids.push_back(s.class_index);
        m.degenerate.push_back(s.degenerate());
    }
    for (std::size_t i = 0; i < m.size; ++i) {
        m.entries[i * m.size + i] = m.degenerate[i] ? 0.0 : 1.0;
        for (std::size_t j = i + 1; j < m.size; ++j) {
            const double c = cosine(maps[i], maps[j]);
            m.entries[i * m.size + j] = c;
            m.entries[j * m.size + i] = c;
        }
    }
    return m;
}

CosineSimilarityMatrix csm(const Model& model, const Tensor& x, const CsmOptions& opts) {
    const std::size_t c = model.num_classes();
    const std::size_t n = opts.top_n == 0 ? c : opts.top_n;
    if (n < 2 || n > c)
        throw usage_error("top_n must lie in [2, " + std::to_string(c) + "], got " + std::to_string(n));
    // One forward pass shared by the n backward passes.
    const ForwardTrace trace = forward_trace(model, x);
    const Tensor& logits = trace.logits();
    std::vector<std::size_t> ids = ranked_classes(logits.values());
    ids.resize(n);
    std::vector<SaliencyMap> maps;
    maps.reserve(n);
    for (std::size_t cls : ids)
        maps.push_back(sign_map(cls, backward(model, trace, loss_gradient(logits.values(), cls, opts.loss))));
    CosineSimilarityMatrix m = csm_from_maps(maps, 0);
    m.top_probability = softmax(logits.values())[ids[0]];
    return m;
}

std::vector<CosineSimilarityMatrix> csm_batch(const Model& model, std::span<const Tensor> inputs,
                                              const CsmOptions& opts) {
    std::vector<CosineSimilarityMatrix> out(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) { out[i] = csm(model, inputs[i], opts); });
    return out;
}

void write_csm_csv(std::ostream& out, const CosineSimilarityMatrix& m) {
    out.precision(17);
    out << m.size << '\n';
    for (std::size_t i = 0; i < m.size; ++i) out << (i ? "," : "") << m.class_ids[i];
    out << '\n';
    for (std::size_t i = 0; i < m.size; ++i) {
        for (std::size_t j = 0; j < m.size; ++j) out << (j ? "," : "") << m.at(i, j);
        out << '\n';
    }
}

void write_csm_pgm(std::ostream& out, const CosineSimilarityMatrix& m, std::size_t cell_px) {
    const std::size_t side = m.size * cell_px;
    out << "P5\n" << side << ' ' << side << "\n255\n";
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            const double v = m.at(y / cell_px, x / cell_px);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
        }
}

}  // namespace gga
