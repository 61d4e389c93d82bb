#include "gga/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gga/error.hpp"

namespace gga {

void LabeledDataset::validate(std::size_t num_classes) const {
    if (inputs.size() != labels.size())
        throw data_error("dataset '" + tag + "' has " + std::to_string(inputs.size()) + " inputs but " +
                         std::to_string(labels.size()) + " labels");
    if (!(domain_lo < domain_hi)) throw data_error("dataset '" + tag + "' has an empty domain range");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (double v : inputs[i].values())
            if (!(v >= domain_lo && v <= domain_hi))
                throw data_error("dataset '" + tag + "' sample " + std::to_string(i) + " leaves the domain range");
        if (num_classes > 0 && labels[i] >= static_cast<int>(num_classes))
            throw data_error("dataset '" + tag + "' sample " + std::to_string(i) + " has label " +
                             std::to_string(labels[i]) + " >= " + std::to_string(num_classes));
    }
}

IdxArray parse_idx(const std::string& bytes) {
    auto byte = [&](std::size_t off) { return static_cast<std::uint8_t>(bytes[off]); };
    if (bytes.size() < 4) throw data_error("IDX file truncated at byte offset " + std::to_string(bytes.size()));
    if (byte(0) != 0 || byte(1) != 0)
        throw data_error("bad IDX magic at byte offset 0");
    IdxArray a;
    a.type_code = byte(2);
    if (a.type_code != 0x08) throw data_error("unsupported IDX element type at byte offset 2 (only uint8)");
    const std::size_t rank = byte(3);
    if (rank == 0) throw data_error("IDX rank 0 at byte offset 3");
    std::size_t pos = 4;
    std::size_t count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
        if (pos + 4 > bytes.size()) throw data_error("IDX header truncated at byte offset " + std::to_string(pos));
        const std::uint32_t v = (std::uint32_t{byte(pos)} << 24) | (std::uint32_t{byte(pos + 1)} << 16) |
                                (std::uint32_t{byte(pos + 2)} << 8) | std::uint32_t{byte(pos + 3)};
        a.dims.push_back(v);
        count *= v;
        pos += 4;
    }
    if (bytes.size() - pos < count)
        throw data_error("IDX payload truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                         std::to_string(pos + count) + " bytes)");
    a.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
    return a;
}

std::string encode_idx(const IdxArray& a) {
    std::string out{'\0', '\0', static_cast<char>(a.type_code), static_cast<char>(a.dims.size())};
    for (auto d : a.dims)
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((d >> s) & 0xff));
    out.append(a.payload.begin(), a.payload.end());
    return out;
}

LabeledDataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels) {
    const IdxArray img = parse_idx(read_file(images));
    if (img.dims.size() != 3) throw data_error(images.string() + ": expected magic 0x00000803 (rank-3 image array)");
    LabeledDataset data;
    data.tag = images.stem().string();
    const std::size_t n = img.dims[0], rows = img.dims[1], cols = img.dims[2];
    data.inputs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t({1, rows, cols});
        for (std::size_t j = 0; j < rows * cols; ++j) t[j] = img.payload[i * rows * cols + j] / 255.0;
        data.inputs.push_back(std::move(t));
    }
    data.labels.assign(n, kNoLabel);
    if (labels) {
        const IdxArray lab = parse_idx(read_file(*labels));
        if (lab.dims.size() != 1) throw data_error(labels->string() + ": expected magic 0x00000801 (rank-1 labels)");
        if (lab.dims[0] != n)
            throw data_error(labels->string() + ": " + std::to_string(lab.dims[0]) + " labels for " +
                             std::to_string(n) + " images");
        for (std::size_t i = 0; i < n; ++i) data.labels[i] = lab.payload[i];
    }
    return data;
}

void write_idx(const LabeledDataset& data, const std::filesystem::path& images,
               const std::optional<std::filesystem::path>& labels) {
    if (data.empty()) throw data_error("cannot write an empty dataset as IDX");
    const Shape& s = data.inputs.front().shape();
    const std::size_t rows = s.size() >= 2 ? s[s.size() - 2] : 1, cols = s.back();
    IdxArray img;
    img.dims = {static_cast<std::uint32_t>(data.size()), static_cast<std::uint32_t>(rows),
                static_cast<std::uint32_t>(cols)};
    for (const auto& t : data.inputs) {
        if (t.size() != rows * cols) throw data_error("IDX export needs single-channel images of equal size");
        for (double v : t.values())
            img.payload.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    write_file_atomic(images, encode_idx(img));
    if (labels) {
        IdxArray lab;
        lab.dims = {static_cast<std::uint32_t>(data.size())};
        for (int y : data.labels) lab.payload.push_back(static_cast<std::uint8_t>(y < 0 ? 255 : y));
        write_file_atomic(*labels, encode_idx(lab));
    }
}

LabeledDataset load_csv(const std::filesystem::path& path, double domain_lo, double domain_hi) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path.string());
    LabeledDataset data;
    data.tag = path.stem().string();
    data.domain_lo = domain_lo;
    data.domain_hi = domain_hi;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw data_error(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (row.size() < 2) throw data_error(path.string() + ":" + std::to_string(line_no) + ": need label and features");
        if (!data.inputs.empty() && row.size() - 1 != data.inputs.front().size())
            throw data_error(path.string() + ":" + std::to_string(line_no) + ": inconsistent feature count");
        data.labels.push_back(static_cast<int>(row[0]));
        data.inputs.push_back(Tensor::vector(std::vector<double>(row.begin() + 1, row.end())));
    }
    data.validate();
    return data;
}

LabeledDataset gen_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation, std::uint64_t seed) {
    if (classes == 0 || dim == 0) throw usage_error("blobs need at least one class and one dimension");
    LabeledDataset data;
    data.tag = "blobs";
    if (n == 0) return data;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Rejection-sample centres in a cube, growing it whenever packing stalls.
    double side = separation * std::pow(static_cast<double>(classes), 1.0 / static_cast<double>(dim)) * 2.0;
    std::vector<std::vector<double>> centres;
    while (centres.size() < classes) {
        std::uniform_real_distribution<double> unif(-side / 2, side / 2);
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            std::vector<double> c(dim);
            for (auto& v : c) v = unif(rng);
            placed = std::all_of(centres.begin(), centres.end(), [&](const std::vector<double>& o) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < dim; ++k) d2 += (c[k] - o[k]) * (c[k] - o[k]);
                return d2 >= separation * separation;
            });
            if (placed) centres.push_back(std::move(c));
        }
        if (!placed) side *= 1.5;
    }

    std::vector<std::vector<double>> raw(n, std::vector<double>(dim));
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = i % classes;
        for (std::size_t k = 0; k < dim; ++k) {
            raw[i][k] = centres[y][k] + normal(rng);
            lo = std::min(lo, raw[i][k]);
            hi = std::max(hi, raw[i][k]);
        }
        data.labels.push_back(static_cast<int>(y));
    }
    const double scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
    for (auto& r : raw) {
        for (auto& v : r) v = std::clamp((v - lo) * scale, 0.0, 1.0);
        data.inputs.push_back(Tensor::vector(std::move(r)));
    }
    return data;
}

NoiseKind parse_noise_kind(const std::string& text) {
    if (text == "uniform") return NoiseKind::Uniform;
    if (text == "gaussian") return NoiseKind::Gaussian;
    throw usage_error("unknown noise kind '" + text + "'");
}

LabeledDataset gen_noise_ood(const Shape& shape, std::size_t n, NoiseKind kind, std::uint64_t seed,
                             double gaussian_mean) {
    LabeledDataset data;
    data.tag = kind == NoiseKind::Uniform ? "noise-uniform" : "noise-gaussian";
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(gaussian_mean, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t(shape);
        for (auto& v : t.values()) v = kind == NoiseKind::Uniform ? unif(rng) : std::clamp(normal(rng), 0.0, 1.0);
        data.inputs.push_back(std::move(t));
        data.labels.push_back(kNoLabel);
    }
    return data;
}

LabeledDataset subset(const LabeledDataset& data, const std::vector<std::size_t>& indices) {
    LabeledDataset out;
    out.domain_lo = data.domain_lo;
    out.domain_hi = data.domain_hi;
    out.tag = data.tag;
    for (auto i : indices) {
        out.inputs.push_back(data.inputs.at(i));
        out.labels.push_back(data.labels.at(i));
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    count = std::min(count, order.size());
    return {subset(data, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count)}),
            subset(data, {order.begin() + static_cast<std::ptrdiff_t>(count), order.end()})};
}

Container dataset_to_container(const LabeledDataset& data, const nlohmann::json& provenance,
                               const std::vector<bool>* success) {
    Container c;
    c.kind = "dataset";
    c.meta["tag"] = data.tag;
    c.meta["domain"] = {data.domain_lo, data.domain_hi};
    if (!provenance.is_null()) c.meta["provenance"] = provenance;
    Shape sample = data.empty() ? Shape{0} : data.inputs.front().shape();
    Shape stacked{data.size()};
    stacked.insert(stacked.end(), sample.begin(), sample.end());
    std::vector<double> flat;
    flat.reserve(shape_size(stacked));
    for (const auto& t : data.inputs) {
        if (t.shape() != sample) throw data_error("dataset container needs samples of equal shape");
        flat.insert(flat.end(), t.values().begin(), t.values().end());
    }
    c.meta["sample_shape"] = sample;
    c.add("inputs", Tensor(stacked, std::move(flat)));
    std::vector<double> labels(data.labels.begin(), data.labels.end());
    c.add("labels", Tensor({data.size()}, std::move(labels)));
    if (success) {
        const std::size_t n = success->size();
        c.add("success", Tensor({n}, std::vector<double>(success->begin(), success->end())));
    }
    return c;
}

LabeledDataset dataset_from_container(const Container& c, std::vector<bool>* success) {
    if (c.kind != "dataset") throw data_error("container is not a dataset");
    LabeledDataset data;
    data.tag = c.meta.value("tag", std::string("dataset"));
    data.domain_lo = c.meta.at("domain")[0].get<double>();
    data.domain_hi = c.meta.at("domain")[1].get<double>();
    const Shape sample = c.meta.at("sample_shape").get<Shape>();
    const Tensor& inputs = c.tensor("inputs");
    const Tensor& labels = c.tensor("labels");
    const std::size_t n = labels.size();
    const std::size_t per = shape_size(sample);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(inputs.raw().begin() + static_cast<std::ptrdiff_t>(i * per),
                              inputs.raw().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
        data.inputs.emplace_back(sample, std::move(v));
        data.labels.push_back(static_cast<int>(labels[i]));
    }
    if (success) {
        success->clear();
        if (c.has("success"))
            for (double v : c.tensor("success").values()) success->push_back(v != 0.0);
    }
    return data;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data, const nlohmann::json& provenance,
                  const std::vector<bool>* success) {
    save_container(path, dataset_to_container(data, provenance, success));
}

LabeledDataset load_dataset(const std::filesystem::path& path, std::vector<bool>* success) {
    return dataset_from_container(load_container(path, "dataset"), success);
}

}  // namespace gga
