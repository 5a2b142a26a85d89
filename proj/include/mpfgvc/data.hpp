#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mpfgvc/tensor.hpp"

namespace mpfgvc {

// 8-bit PGM (P5) / PPM (P6) image.
struct PnmImage {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t channels = 1;
    std::vector<std::uint8_t> pixels;  // row-major, channel innermost
};

void write_pnm(const std::filesystem::path& path, const PnmImage& img);
PnmImage read_pnm(const std::filesystem::path& path);

struct DatasetMeta {
    std::string supercategory_name;
    std::int64_t num_classes = 0;
    std::vector<std::string> class_names;
    std::int64_t n_train_per_class = 0;
    std::int64_t n_test_per_class = 0;
    std::int64_t image_side = 0;
    std::int64_t channels = 0;
    std::int64_t patch_side = 0;
    std::int64_t signal_patches = 0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    // relative path ("train/class_0/img_0.ppm") -> planted patch cell indices
    std::map<std::string, std::vector<std::int64_t>> discriminative_patches;

    std::int64_t patches_per_side() const { return image_side / patch_side; }
    std::int64_t patch_count() const { return patches_per_side() * patches_per_side(); }
};

struct GenSpec {
    std::int64_t num_classes = 8;
    std::int64_t n_train_per_class = 25;
    std::int64_t n_test_per_class = 10;
    std::int64_t image_side = 64;
    std::int64_t patch_side = 8;
    std::int64_t channels = 3;
    std::int64_t signal_patches = 6;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;
    std::string supercategory = "glyph";
};

struct Example {
    Tensor image;  // [H x W x ch] in [0, 1], no grad
    std::int64_t label = 0;
    std::string relpath;
    std::vector<std::int64_t> truth_patches;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Example> train;
    std::vector<Example> test;
};

// Writes root/{train,test}/class_<i>/img_<j>.{ppm,pgm} plus root/meta.json.
// Every image is one shared background texture with the class texture stamped
// into signal_patches randomly placed cells, plus Gaussian pixel noise.
DatasetMeta generate_dataset(const GenSpec& spec, const std::filesystem::path& root);

Dataset load_dataset(const std::filesystem::path& root);

// The fixed, reproducible iteration permutation for a given seed.
std::vector<std::int64_t> shuffled_indices(std::int64_t n, std::uint64_t seed);

}  // namespace mpfgvc
