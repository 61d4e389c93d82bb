#include "gga/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gga/error.hpp"

namespace gga {
namespace {

constexpr char kMagic[8] = {'G', 'G', 'A', 'C', 'N', 'T', 'R', '\0'};

template <typename T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size())
        throw data_error("container truncated at byte offset " + std::to_string(pos));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(T);
    return v;
}

}  // namespace

const Tensor& Container::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw data_error("container '" + kind + "' has no tensor named '" + name + "'");
}

bool Container::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

std::string encode_container(const Container& c) {
    nlohmann::json header;
    header["kind"] = c.kind;
    header["meta"] = c.meta;
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : c.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    const std::string text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kContainerVersion);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& [name, t] : c.tensors)
        for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

Container decode_container(const std::string& bytes, const std::string& expected_kind) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw data_error("not a container file (bad magic at byte offset 0)");
    std::size_t pos = sizeof(kMagic);
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kContainerVersion)
        throw data_error("unsupported container version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(bytes, pos);
    if (pos + header_len > bytes.size())
        throw data_error("container header truncated at byte offset " + std::to_string(pos));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("malformed container header: ") + e.what());
    }
    pos += header_len;

    Container c;
    c.kind = header.at("kind").get<std::string>();
    if (!expected_kind.empty() && c.kind != expected_kind)
        throw data_error("expected a '" + expected_kind + "' container, found '" + c.kind + "'");
    c.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> data(shape_size(shape));
        for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
        c.add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
    if (pos != bytes.size()) throw data_error("trailing bytes after container payload at offset " + std::to_string(pos));
    return c;
}

void save_container(const std::filesystem::path& path, const Container& c) { write_file_atomic(path, encode_container(c)); }

Container load_container(const std::filesystem::path& path, const std::string& expected_kind) {
    return decode_container(read_file(path), expected_kind);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw data_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace gga
