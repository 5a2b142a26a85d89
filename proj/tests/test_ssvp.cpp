#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "mpfgvc/ops.hpp"
#include "mpfgvc/ssvp.hpp"
#include "test_support.hpp"

using namespace mpfgvc;
using testsup::PrecisionGuard;
using testsup::random_tensor;

namespace {

// Full-sort oracle: sort (score desc, index asc), take the first k.
std::vector<std::int64_t> full_sort_topk(const std::vector<double>& scores, std::int64_t k) {
    std::vector<std::int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        return a < b;
    });
    order.resize(static_cast<std::size_t>(k));
    return order;
}

}  // namespace

TEST_CASE("aggregate_head_attention sums heads") {
    PrecisionGuard p(Precision::f64);
    AttentionRecord rec{Tensor::matrix(2, 2, {0.1, 0.9, 0.7, 0.3}), 1};
    Tensor agg = aggregate_head_attention(rec);
    CHECK(agg.values()[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(agg.values()[1] == doctest::Approx(1.2).epsilon(1e-12));

    AttentionRecord single{Tensor::matrix(1, 3, {0.2, 0.5, 0.3}), 1};
    CHECK(aggregate_head_attention(single).values() == std::vector<double>{0.2, 0.5, 0.3});

    // Random case against an independently ordered accumulation.
    Rng rng(2);
    Tensor a = random_tensor({4, 16}, rng);
    AttentionRecord rnd{a, 1};
    Tensor agg2 = aggregate_head_attention(rnd);
    for (std::int64_t j = 0; j < 16; ++j) {
        double want = 0.0;
        for (std::int64_t m = 0; m < 4; ++m) want += a.at({m, j});
        CHECK(agg2.values()[static_cast<std::size_t>(j)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("topk_indices ordering and tie rule") {
    PrecisionGuard p(Precision::f64);
    CHECK(topk_indices(Tensor::row({3, 1, 2}), 2).ids == std::vector<std::int64_t>{0, 2});
    CHECK(topk_indices(Tensor::row({0.3, 0.9, 0.1, 0.9}), 2).ids ==
          std::vector<std::int64_t>{1, 3});
    CHECK_THROWS_AS(topk_indices(Tensor::row({1, 2}), 3), ConfigError);
    CHECK_THROWS_AS(topk_indices(Tensor::row({1, 2}), 0), ConfigError);
}

TEST_CASE("topk_indices agrees with a full-sort oracle") {
    PrecisionGuard p(Precision::f64);
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> scores(64);
        for (auto& s : scores) s = rng.uniform();
        // Force some ties.
        if (trial % 3 == 0) scores[5] = scores[40] = scores[13];
        Tensor t = Tensor::row(scores);
        auto got = topk_indices(t, 14).ids;
        auto want = full_sort_topk(t.values(), 14);
        CHECK(got == want);
    }
}

TEST_CASE("selection invariants: scale invariance and permutation equivariance") {
    PrecisionGuard p(Precision::f64);
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> scores(32);
        for (auto& s : scores) s = rng.uniform();
        Tensor t = Tensor::row(scores);
        auto base = topk_indices(t, 7).ids;
        for (double c : {0.5, 3.0, 1e-3}) {
            std::vector<double> scaled(scores);
            for (auto& s : scaled) s *= c;
            CHECK(topk_indices(Tensor::row(scaled), 7).ids == base);
        }

        // Permute scores; selected ids must follow the permutation.
        auto perm = rng.permutation(32);  // position -> original index
        std::vector<double> permuted(32);
        for (std::size_t pos = 0; pos < 32; ++pos)
            permuted[pos] = scores[static_cast<std::size_t>(perm[pos])];
        std::vector<std::int64_t> inverse(32);
        for (std::size_t pos = 0; pos < 32; ++pos)
            inverse[static_cast<std::size_t>(perm[pos])] = static_cast<std::int64_t>(pos);
        auto permuted_ids = topk_indices(Tensor::row(permuted), 7).ids;
        std::vector<std::int64_t> mapped;
        for (auto id : base) mapped.push_back(inverse[static_cast<std::size_t>(id)]);
        // With distinct scores the sets match position-wise.
        CHECK(permuted_ids == mapped);
    }
}

TEST_CASE("reassemble_sequence layout and bit-exact copies") {
    PrecisionGuard p(Precision::f64);
    Rng rng(5);
    Tensor tokens = random_tensor({5, 3}, rng);  // class + 4 patches
    TokenSequence seq{tokens, 2, true};
    SelectionResult sel{{2, 0}, Tensor::row({0.1, 0.2, 0.9, 0.3})};
    TokenSequence out = reassemble_sequence(seq, sel);
    CHECK(out.tokens.dim(0) == 3);
    for (std::int64_t j = 0; j < 3; ++j) {
        CHECK(out.tokens.at({0, j}) == tokens.at({0, j}));
        CHECK(out.tokens.at({1, j}) == tokens.at({3, j}));  // patch 2
        CHECK(out.tokens.at({2, j}) == tokens.at({1, j}));  // patch 0
    }

    SelectionResult bad{{9}, Tensor::row({0, 0, 0, 0})};
    CHECK_THROWS_AS(reassemble_sequence(seq, bad), ContractError);

    // k = N with distinct scores: a permutation of the full sequence, class first.
    SelectionResult all = topk_indices(Tensor::row({0.4, 0.1, 0.9, 0.6}), 4);
    TokenSequence full = reassemble_sequence(seq, all);
    CHECK(full.tokens.dim(0) == 5);
    CHECK(full.tokens.at({0, 0}) == tokens.at({0, 0}));
    CHECK(all.ids == std::vector<std::int64_t>{2, 3, 0, 1});
}

TEST_CASE("output sequence length is always k + 1") {
    PrecisionGuard p(Precision::f64);
    Rng rng(6);
    for (std::int64_t k = 1; k <= 8; ++k) {
        Tensor tokens = random_tensor({9, 4}, rng);
        Tensor scores = random_tensor({8}, rng);
        auto sel = topk_indices(scores, k);
        auto out = reassemble_sequence({tokens, 1, true}, sel);
        CHECK(out.tokens.dim(0) == k + 1);
    }
}

TEST_CASE("unselected tokens receive zero gradient") {
    PrecisionGuard p(Precision::f64);
    Rng rng(7);
    Tensor tokens = random_tensor({5, 3}, rng, 1.0, true);
    const Tensor w = random_tensor({3, 3}, rng);
    SelectionResult sel{{3, 1}, Tensor::row({0.1, 0.5, 0.2, 0.9})};

    Tape tape;
    {
        TapeScope scope(tape);
        TokenSequence out = reassemble_sequence({tokens, 1, true}, sel);
        Tensor loss = ops::sum(ops::mul(out.tokens, w));
        tape.backward(loss);
    }
    // Patch ids 0 and 2 (rows 1 and 3 of the full sequence) were discarded.
    for (std::int64_t j = 0; j < 3; ++j) {
        CHECK(tokens.grad()[static_cast<std::size_t>(1 * 3 + j)] == 0.0);
        CHECK(tokens.grad()[static_cast<std::size_t>(3 * 3 + j)] == 0.0);
    }

    // Finite differences agree the loss is flat in a discarded token.
    auto loss_fn = [&](const Tensor& probe) {
        TokenSequence out = reassemble_sequence({probe, 1, true}, sel);
        return ops::sum(ops::mul(out.tokens, w)).item();
    };
    Tensor fd = ops::finite_diff_grad(loss_fn, tokens);
    for (std::int64_t j = 0; j < 3; ++j)
        CHECK(std::fabs(fd.values()[static_cast<std::size_t>(1 * 3 + j)]) < 1e-9);
}
