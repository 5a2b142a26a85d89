#include "mpfgvc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mpfgvc/errors.hpp"

using nlohmann::json;

namespace mpfgvc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'M', 'P', 'F', 'G'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& params,
                     const std::string& config_json) {
    json header;
    header["config"] = config_json.empty() ? json::object() : json::parse(config_json);
    json records = json::array();
    std::uint64_t offset = 0;
    for (const auto& p : params) {
        json r;
        r["name"] = p.name;
        r["shape"] = p.tensor.shape();
        r["offset"] = offset;
        r["count"] = p.tensor.numel();
        records.push_back(std::move(r));
        offset += static_cast<std::uint64_t>(p.tensor.numel()) * sizeof(double);
    }
    header["records"] = std::move(records);
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& p : params) {
        const auto& v = p.tensor.values();
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw IoError("short write to checkpoint " + path.string());
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r.tensor;
    return nullptr;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path.string() + ": not a checkpoint file");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (in.gcount() != static_cast<std::streamsize>(header_len))
        throw FormatError(path.string() + ": truncated header");
    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": bad header json: " + e.what());
    }

    Checkpoint ckpt;
    ckpt.config_json = header.value("config", json::object()).dump();
    const std::streampos payload_start = in.tellg();
    for (const auto& r : header.at("records")) {
        CheckpointRecord rec;
        rec.name = r.at("name").get<std::string>();
        rec.shape = r.at("shape").get<Shape>();
        const auto offset = r.at("offset").get<std::uint64_t>();
        const auto count = r.at("count").get<std::int64_t>();
        if (count != shape_numel(rec.shape))
            throw FormatError(path.string() + ": record '" + rec.name + "' count/shape mismatch");
        std::vector<double> v(static_cast<std::size_t>(count));
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(v.size() * sizeof(double)))
            throw FormatError(path.string() + ": truncated payload for '" + rec.name + "'");
        // Bit-exact restore: bypass precision quantization on purpose.
        const Precision saved = default_precision();
        set_default_precision(Precision::f64);
        rec.tensor = Tensor::from(rec.shape, std::move(v));
        set_default_precision(saved);
        ckpt.records.push_back(std::move(rec));
    }
    return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, std::vector<Parameter>& params) {
    for (auto& p : params) {
        const Tensor* src = ckpt.find(p.name);
        if (!src) throw FormatError("checkpoint is missing parameter '" + p.name + "'");
        if (src->shape() != p.tensor.shape())
            throw FormatError("checkpoint shape mismatch for '" + p.name + "': " +
                              shape_str(src->shape()) + " vs " + shape_str(p.tensor.shape()));
        p.tensor.values() = src->values();
        p.tensor.clear_grad();
    }
}

}  // namespace mpfgvc
