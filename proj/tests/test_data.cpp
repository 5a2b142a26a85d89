#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mpfgvc/data.hpp"
#include "test_support.hpp"

using namespace mpfgvc;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mpfgvc_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Nearest-class-mean classifier on raw pixels; the Bayes-separability oracle.
double nearest_mean_accuracy(const Dataset& ds) {
    const auto dim = ds.train.front().image.numel();
    std::vector<std::vector<double>> means(
        static_cast<std::size_t>(ds.meta.num_classes),
        std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.meta.num_classes), 0);
    for (const auto& ex : ds.train) {
        auto& m = means[static_cast<std::size_t>(ex.label)];
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += ex.image.values()[i];
        counts[static_cast<std::size_t>(ex.label)]++;
    }
    for (std::size_t c = 0; c < means.size(); ++c)
        for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
    std::int64_t correct = 0;
    for (const auto& ex : ds.test) {
        double best = 1e300;
        std::int64_t best_c = -1;
        for (std::size_t c = 0; c < means.size(); ++c) {
            double d = 0.0;
            for (std::size_t i = 0; i < means[c].size(); ++i) {
                const double diff = ex.image.values()[i] - means[c][i];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_c = static_cast<std::int64_t>(c);
            }
        }
        if (best_c == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.test.size());
}

}  // namespace

TEST_CASE("generate_dataset arity and metadata") {
    const auto root = fresh_dir("arity");
    GenSpec spec;
    spec.num_classes = 8;
    spec.n_train_per_class = 50;
    spec.n_test_per_class = 5;
    spec.seed = 11;
    generate_dataset(spec, root);
    Dataset ds = load_dataset(root);
    CHECK(ds.train.size() == 400);
    CHECK(ds.test.size() == 40);
    CHECK(ds.meta.class_names.size() == 8);
    CHECK(ds.meta.supercategory_name == "glyph");
    for (const auto& ex : ds.train) {
        CHECK(ex.truth_patches.size() == static_cast<std::size_t>(spec.signal_patches));
        for (auto cell : ex.truth_patches) {
            CHECK(cell >= 0);
            CHECK(cell < ds.meta.patch_count());
        }
    }
    fs::remove_all(root);
}

TEST_CASE("zero noise and full stamping make same-class images identical") {
    const auto root = fresh_dir("degenerate");
    GenSpec spec;
    spec.num_classes = 2;
    spec.n_train_per_class = 3;
    spec.n_test_per_class = 1;
    spec.image_side = 32;
    spec.patch_side = 8;
    spec.noise_sigma = 0.0;
    spec.signal_patches = 16;  // s = N: every cell stamped
    spec.seed = 7;
    generate_dataset(spec, root);
    Dataset ds = load_dataset(root);
    CHECK(ds.train[0].image.values() == ds.train[1].image.values());
    CHECK(ds.train[0].image.values() == ds.train[2].image.values());
    CHECK(ds.train[0].image.values() != ds.train[3].image.values());  // other class
    fs::remove_all(root);
}

TEST_CASE("pinned desk dataset is separable by nearest class mean") {
    const auto root = fresh_dir("bayes");
    GenSpec spec;  // pinned defaults: C=8, 25/10 per class, sigma=0.05, s=6
    spec.seed = 2024;
    generate_dataset(spec, root);
    Dataset ds = load_dataset(root);
    CHECK(nearest_mean_accuracy(ds) > 0.90);
    fs::remove_all(root);
}

TEST_CASE("round-trip: generated pixels reload bit-identically") {
    const auto root = fresh_dir("roundtrip");
    GenSpec spec;
    spec.num_classes = 2;
    spec.n_train_per_class = 2;
    spec.n_test_per_class = 1;
    spec.image_side = 16;
    spec.patch_side = 8;
    spec.signal_patches = 2;
    spec.seed = 3;
    generate_dataset(spec, root);
    Dataset a = load_dataset(root);
    Dataset b = load_dataset(root);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i)
        CHECK(a.train[i].image.values() == b.train[i].image.values());

    // PNM round-trip at byte level.
    PnmImage img = read_pnm(root / "train/class_0/img_0.ppm");
    write_pnm(root / "copy.ppm", img);
    PnmImage img2 = read_pnm(root / "copy.ppm");
    CHECK(img.pixels == img2.pixels);
    fs::remove_all(root);
}

TEST_CASE("loader rejects wrong-sized image naming the file") {
    const auto root = fresh_dir("badsize");
    GenSpec spec;
    spec.num_classes = 2;
    spec.n_train_per_class = 1;
    spec.n_test_per_class = 1;
    spec.image_side = 16;
    spec.patch_side = 8;
    spec.signal_patches = 1;
    generate_dataset(spec, root);
    // Overwrite one image with a smaller one.
    PnmImage small;
    small.height = 8;
    small.width = 8;
    small.channels = 3;
    small.pixels.assign(8 * 8 * 3, 0);
    write_pnm(root / "train/class_1/img_0.ppm", small);
    try {
        load_dataset(root);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("img_0.ppm") != std::string::npos);
    }
    // Missing meta is a format error too.
    fs::remove(root / "meta.json");
    CHECK_THROWS_AS(load_dataset(root), FormatError);
    fs::remove_all(root);
}

TEST_CASE("seeded iteration order is a fixed permutation") {
    auto a = shuffled_indices(100, 9);
    auto b = shuffled_indices(100, 9);
    auto c = shuffled_indices(100, 10);
    CHECK(a == b);
    CHECK(a != c);
    std::vector<std::int64_t> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::int64_t i = 0; i < 100; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("generation is pure in (spec, seed)") {
    const auto r1 = fresh_dir("pure1");
    const auto r2 = fresh_dir("pure2");
    GenSpec spec;
    spec.num_classes = 3;
    spec.n_train_per_class = 2;
    spec.n_test_per_class = 1;
    spec.image_side = 16;
    spec.patch_side = 8;
    spec.signal_patches = 2;
    spec.seed = 99;
    generate_dataset(spec, r1);
    generate_dataset(spec, r2);
    Dataset a = load_dataset(r1), b = load_dataset(r2);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].image.values() == b.train[i].image.values());
        CHECK(a.train[i].truth_patches == b.train[i].truth_patches);
    }
    fs::remove_all(r1);
    fs::remove_all(r2);
}
