#include "attnseg/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace attnseg {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace {

constexpr char kTensorMagic[4] = {'A', 'T', 'N', 'S'};
constexpr char kCheckpointMagic[4] = {'A', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("unexpected end of stream while reading tensor data");
    return v;
}

} // namespace

void write_atns(std::ostream& os, const Tensor& t) {
    os.write(kTensorMagic, 4);
    write_pod<uint32_t>(os, kVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(double)));
}

Tensor read_atns(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kTensorMagic, 4) != 0) {
        std::ostringstream msg;
        msg << "bad tensor magic bytes:";
        for (int i = 0; i < 4 && is; ++i) msg << " 0x" << std::hex << (0xff & static_cast<int>(magic[i]));
        throw FormatError(msg.str());
    }
    const auto version = read_pod<uint32_t>(is);
    if (version != kVersion) throw FormatError("unsupported tensor format version " + std::to_string(version));
    const auto rank = read_pod<uint32_t>(is);
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is));
    const int64_t n = numel_of(shape);
    std::vector<double> data(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw FormatError("unexpected end of stream while reading tensor values");
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_atns(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    write_atns(os, t);
}

Tensor load_atns(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    return read_atns(is);
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& config) {
    nlohmann::json manifest;
    manifest["config"] = config;
    auto& entries = manifest["tensors"];

    // lay the records out first so the manifest can carry offsets
    std::ostringstream blob(std::ios::binary);
    for (const auto& [name, t] : tensors) {
        entries[name] = {{"offset", static_cast<uint64_t>(blob.tellp())}, {"shape", t.shape()}};
        write_atns(blob, t);
    }
    const std::string manifest_str = manifest.dump();
    const std::string blob_str = blob.str();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(kCheckpointMagic, 4);
    write_pod<uint32_t>(os, kVersion);
    write_pod<uint64_t>(os, manifest_str.size());
    os.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
    os.write(blob_str.data(), static_cast<std::streamsize>(blob_str.size()));
}

const Tensor* CheckpointData::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint file: " + path);
    }
    const auto version = read_pod<uint32_t>(is);
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto manifest_len = read_pod<uint64_t>(is);
    std::string manifest_str(manifest_len, '\0');
    is.read(manifest_str.data(), static_cast<std::streamsize>(manifest_len));
    if (!is) throw FormatError("truncated checkpoint manifest in " + path);

    nlohmann::json manifest = nlohmann::json::parse(manifest_str, nullptr, false);
    if (manifest.is_discarded()) throw FormatError("invalid checkpoint manifest JSON in " + path);

    CheckpointData out;
    out.config = manifest.value("config", nlohmann::json::object());

    // order records by offset so reads stay sequential
    std::vector<std::pair<uint64_t, std::string>> order;
    for (auto& [name, entry] : manifest["tensors"].items()) {
        order.emplace_back(entry["offset"].get<uint64_t>(), name);
    }
    std::sort(order.begin(), order.end());
    const auto blob_start = is.tellg();
    for (const auto& [offset, name] : order) {
        is.seekg(blob_start + static_cast<std::streamoff>(offset));
        out.tensors.emplace_back(name, read_atns(is));
    }
    return out;
}

} // namespace attnseg
