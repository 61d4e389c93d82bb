#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gga/container.hpp"
#include "gga/dataset.hpp"

namespace gga {

/// Raw IDX array: element type code, big-endian dimensions and uint8 payload.
struct IdxArray {
    std::uint8_t type_code = 0x08;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;
};

IdxArray parse_idx(const std::string& bytes);
std::string encode_idx(const IdxArray& a);

/// Loads an IDX image file (magic 0x00000803, pixels scaled to [0,1]) and an
/// optional IDX label file (magic 0x00000801). Without labels every sample
/// carries kNoLabel.
LabeledDataset load_idx(const std::filesystem::path& images,
                        const std::optional<std::filesystem::path>& labels = std::nullopt);
/// Inverse of load_idx; pixels are quantized with round(v * 255).
void write_idx(const LabeledDataset& data, const std::filesystem::path& images,
               const std::optional<std::filesystem::path>& labels = std::nullopt);

/// Rows of "label,f1,f2,...". Blank lines are skipped.
LabeledDataset load_csv(const std::filesystem::path& path, double domain_lo, double domain_hi);

/// Isotropic unit-variance Gaussian clusters around seeded centres whose
/// pairwise distance is at least `separation`; the whole set is mapped to
/// [0,1] by one global affine transform. Labels cycle through the classes.
LabeledDataset gen_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation, std::uint64_t seed);

enum class NoiseKind { Uniform, Gaussian };
NoiseKind parse_noise_kind(const std::string& text);

/// Synthetic OOD images: uniform draws U[0,1] or Gaussian(mean, 1) clipped to
/// [0,1]. Labels are kNoLabel.
LabeledDataset gen_noise_ood(const Shape& shape, std::size_t n, NoiseKind kind, std::uint64_t seed,
                             double gaussian_mean = 0.5);

LabeledDataset subset(const LabeledDataset& data, const std::vector<std::size_t>& indices);
/// First `count` samples in a seeded random order, the rest in the second slot.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, std::size_t count, std::uint64_t seed);

/// Dataset container. `provenance` lands in meta; `success` is an optional
/// per-sample mask saved alongside attack batches.
Container dataset_to_container(const LabeledDataset& data, const nlohmann::json& provenance = {},
                               const std::vector<bool>* success = nullptr);
LabeledDataset dataset_from_container(const Container& c, std::vector<bool>* success = nullptr);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& data, const nlohmann::json& provenance = {},
                  const std::vector<bool>* success = nullptr);
LabeledDataset load_dataset(const std::filesystem::path& path, std::vector<bool>* success = nullptr);

}  // namespace gga
