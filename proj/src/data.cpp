#include "mpfgvc/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mpfgvc/errors.hpp"
#include "mpfgvc/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mpfgvc {

void write_pnm(const fs::path& path, const PnmImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw FormatError("pnm supports 1 or 3 channels, got " + std::to_string(img.channels));
    if (static_cast<std::int64_t>(img.pixels.size()) != img.height * img.width * img.channels)
        throw FormatError("pixel buffer size mismatch for " + path.string());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("short write to " + path.string());
}

namespace {

std::string next_pnm_token(std::istream& in) {
    std::string tok;
    for (;;) {
        const int c = in.get();
        if (c == EOF) return tok;
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
}

}  // namespace

PnmImage read_pnm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::string magic = next_pnm_token(in);
    PnmImage img;
    if (magic == "P5")
        img.channels = 1;
    else if (magic == "P6")
        img.channels = 3;
    else
        throw FormatError(path.string() + ": unsupported magic '" + magic + "'");
    try {
        img.width = std::stoll(next_pnm_token(in));
        img.height = std::stoll(next_pnm_token(in));
        const long maxval = std::stol(next_pnm_token(in));
        if (maxval != 255) throw FormatError(path.string() + ": expected maxval 255");
    } catch (const std::invalid_argument&) {
        throw FormatError(path.string() + ": malformed header");
    }
    const auto count = img.height * img.width * img.channels;
    img.pixels.resize(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(count));
    if (in.gcount() != static_cast<std::streamsize>(count))
        throw FormatError(path.string() + ": truncated pixel data");
    return img;
}

namespace {

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// Smooth low-frequency texture shared by all classes.
std::vector<double> make_background(const GenSpec& spec, Rng& rng) {
    const auto side = spec.image_side;
    std::vector<double> bg(static_cast<std::size_t>(side * side * spec.channels));
    for (std::int64_t c = 0; c < spec.channels; ++c) {
        const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
        const double px = rng.uniform(0.0, 2.0 * M_PI), py = rng.uniform(0.0, 2.0 * M_PI);
        for (std::int64_t y = 0; y < side; ++y)
            for (std::int64_t x = 0; x < side; ++x) {
                const double v =
                    0.5 +
                    0.15 * std::sin(2.0 * M_PI * fx * static_cast<double>(x) / static_cast<double>(side) + px) *
                        std::cos(2.0 * M_PI * fy * static_cast<double>(y) / static_cast<double>(side) + py);
                bg[static_cast<std::size_t>((y * side + x) * spec.channels + c)] = v;
            }
    }
    return bg;
}

// Per-class full-image texture; stamping cell j copies this texture's cell j
// so image content depends only on (class, cell), not placement order.
std::vector<double> make_class_texture(const GenSpec& spec, std::int64_t cls) {
    Rng rng(mix64(spec.seed, 0x10001ULL + static_cast<std::uint64_t>(cls)));
    const auto side = spec.image_side;
    std::vector<double> tex(static_cast<std::size_t>(side * side * spec.channels));
    for (auto& v : tex) v = rng.uniform();
    return tex;
}

std::string image_relpath(const std::string& split, std::int64_t cls, std::int64_t idx,
                          std::int64_t channels) {
    const char* ext = channels == 1 ? ".pgm" : ".ppm";
    return split + "/class_" + std::to_string(cls) + "/img_" + std::to_string(idx) + ext;
}

}  // namespace

DatasetMeta generate_dataset(const GenSpec& spec, const fs::path& root) {
    if (spec.image_side % spec.patch_side != 0)
        throw ConfigError("image_side must be divisible by patch_side");
    const std::int64_t grid = spec.image_side / spec.patch_side;
    const std::int64_t n_cells = grid * grid;
    if (spec.signal_patches > n_cells)
        throw ConfigError("signal_patches " + std::to_string(spec.signal_patches) + " > cells " +
                          std::to_string(n_cells));
    if (spec.channels != 1 && spec.channels != 3) throw ConfigError("channels must be 1 or 3");
    if (spec.num_classes < 2) throw ConfigError("need at least 2 classes");

    DatasetMeta meta;
    meta.supercategory_name = spec.supercategory;
    meta.num_classes = spec.num_classes;
    for (std::int64_t c = 0; c < spec.num_classes; ++c)
        meta.class_names.push_back(spec.supercategory + "_" + std::to_string(c));
    meta.n_train_per_class = spec.n_train_per_class;
    meta.n_test_per_class = spec.n_test_per_class;
    meta.image_side = spec.image_side;
    meta.channels = spec.channels;
    meta.patch_side = spec.patch_side;
    meta.signal_patches = spec.signal_patches;
    meta.noise_sigma = spec.noise_sigma;
    meta.seed = spec.seed;

    Rng bg_rng(mix64(spec.seed, 0xb46ULL));
    const auto background = make_background(spec, bg_rng);
    std::vector<std::vector<double>> textures;
    for (std::int64_t c = 0; c < spec.num_classes; ++c)
        textures.push_back(make_class_texture(spec, c));

    const auto side = spec.image_side;
    const auto ch = spec.channels;
    for (const std::string split : {"train", "test"}) {
        const std::int64_t per_class =
            split == "train" ? spec.n_train_per_class : spec.n_test_per_class;
        const std::uint64_t split_tag = split == "train" ? 1 : 2;
        for (std::int64_t cls = 0; cls < spec.num_classes; ++cls) {
            const fs::path dir = root / split / ("class_" + std::to_string(cls));
            fs::create_directories(dir);
            for (std::int64_t idx = 0; idx < per_class; ++idx) {
                Rng rng(mix64(spec.seed, mix64(split_tag, mix64(static_cast<std::uint64_t>(cls),
                                                                static_cast<std::uint64_t>(idx)))));
                auto cells = rng.sample_without_replacement(n_cells, spec.signal_patches);
                std::vector<double> pix = background;
                for (auto cell : cells) {
                    const std::int64_t cy = cell / grid, cx = cell % grid;
                    for (std::int64_t y = cy * spec.patch_side; y < (cy + 1) * spec.patch_side; ++y)
                        for (std::int64_t x = cx * spec.patch_side; x < (cx + 1) * spec.patch_side; ++x)
                            for (std::int64_t c = 0; c < ch; ++c)
                                pix[static_cast<std::size_t>((y * side + x) * ch + c)] =
                                    textures[static_cast<std::size_t>(cls)]
                                            [static_cast<std::size_t>((y * side + x) * ch + c)];
                }
                PnmImage img;
                img.height = side;
                img.width = side;
                img.channels = ch;
                img.pixels.resize(pix.size());
                for (std::size_t i = 0; i < pix.size(); ++i) {
                    double v = pix[i];
                    if (spec.noise_sigma > 0.0) v += rng.normal() * spec.noise_sigma;
                    v = std::clamp(v, 0.0, 1.0);
                    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
                }
                const std::string rel = image_relpath(split, cls, idx, ch);
                write_pnm(root / rel, img);
                meta.discriminative_patches[rel] =
                    std::vector<std::int64_t>(cells.begin(), cells.end());
            }
        }
    }

    json j;
    j["supercategory_name"] = meta.supercategory_name;
    j["num_classes"] = meta.num_classes;
    j["class_names"] = meta.class_names;
    j["n_train_per_class"] = meta.n_train_per_class;
    j["n_test_per_class"] = meta.n_test_per_class;
    j["image_side"] = meta.image_side;
    j["channels"] = meta.channels;
    j["patch_side"] = meta.patch_side;
    j["signal_patches"] = meta.signal_patches;
    j["noise_sigma"] = meta.noise_sigma;
    j["seed"] = meta.seed;
    j["discriminative_patches"] = meta.discriminative_patches;
    std::ofstream out(root / "meta.json");
    if (!out) throw IoError("cannot write " + (root / "meta.json").string());
    out << j.dump(2) << "\n";
    return meta;
}

namespace {

Example load_example(const fs::path& root, const DatasetMeta& meta, const std::string& rel,
                     std::int64_t label) {
    const fs::path full = root / rel;
    PnmImage img = read_pnm(full);
    if (img.height != meta.image_side || img.width != meta.image_side)
        throw FormatError(full.string() + ": expected side " + std::to_string(meta.image_side) +
                          ", got " + std::to_string(img.height) + "x" + std::to_string(img.width));
    if (img.channels != meta.channels)
        throw FormatError(full.string() + ": expected " + std::to_string(meta.channels) +
                          " channels, got " + std::to_string(img.channels));
    std::vector<double> v(img.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(img.pixels[i]) / 255.0;
    Example ex;
    ex.image = Tensor::from({meta.image_side, meta.image_side, meta.channels}, std::move(v));
    ex.label = label;
    ex.relpath = rel;
    if (auto it = meta.discriminative_patches.find(rel); it != meta.discriminative_patches.end())
        ex.truth_patches = it->second;
    return ex;
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
    const fs::path meta_path = root / "meta.json";
    std::ifstream in(meta_path);
    if (!in) throw FormatError("missing dataset metadata: " + meta_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    Dataset ds;
    DatasetMeta& meta = ds.meta;
    try {
        meta.supercategory_name = j.at("supercategory_name").get<std::string>();
        meta.num_classes = j.at("num_classes").get<std::int64_t>();
        meta.class_names = j.at("class_names").get<std::vector<std::string>>();
        meta.n_train_per_class = j.at("n_train_per_class").get<std::int64_t>();
        meta.n_test_per_class = j.at("n_test_per_class").get<std::int64_t>();
        meta.image_side = j.at("image_side").get<std::int64_t>();
        meta.channels = j.at("channels").get<std::int64_t>();
        meta.patch_side = j.at("patch_side").get<std::int64_t>();
        meta.signal_patches = j.at("signal_patches").get<std::int64_t>();
        meta.noise_sigma = j.at("noise_sigma").get<double>();
        meta.seed = j.at("seed").get<std::uint64_t>();
        meta.discriminative_patches =
            j.at("discriminative_patches")
                .get<std::map<std::string, std::vector<std::int64_t>>>();
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    for (const std::string split : {"train", "test"}) {
        const std::int64_t per_class =
            split == "train" ? meta.n_train_per_class : meta.n_test_per_class;
        auto& out = split == "train" ? ds.train : ds.test;
        for (std::int64_t cls = 0; cls < meta.num_classes; ++cls)
            for (std::int64_t idx = 0; idx < per_class; ++idx) {
                const std::string rel = image_relpath(split, cls, idx, meta.channels);
                out.push_back(load_example(root, meta, rel, cls));
            }
    }
    return ds;
}

std::vector<std::int64_t> shuffled_indices(std::int64_t n, std::uint64_t seed) {
    Rng rng(mix64(seed, 0x5e11ULL));
    return rng.permutation(n);
}

}  // namespace mpfgvc
