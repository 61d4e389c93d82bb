#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gga/tensor.hpp"

namespace gga {

inline constexpr std::uint32_t kContainerVersion = 1;

/// Versioned binary container shared by models, detectors and datasets.
///
/// Layout: 8-byte magic "GGACNTR\0", u32 version, u64 header length, a JSON
/// header {kind, meta, tensors:[{name, shape}]}, then every tensor's data as
/// little-endian IEEE-754 doubles in header order.
struct Container {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }
    const Tensor& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
};

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes, const std::string& expected_kind = {});

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path, const std::string& expected_kind = {});

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, used as a content fingerprint in manifests and reports.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace gga
