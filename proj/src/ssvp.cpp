#include "mpfgvc/ssvp.hpp"

#include <algorithm>
#include <numeric>

#include "mpfgvc/errors.hpp"
#include "mpfgvc/ops.hpp"

namespace mpfgvc {

Tensor aggregate_head_attention(const AttentionRecord& record) {
    const Tensor& a = record.head_scores;
    if (a.rank() != 2) throw ShapeError("aggregate_head_attention: expected [M x N]");
    const std::int64_t M = a.dim(0), N = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(N), 0.0);
    for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t j = 0; j < N; ++j)
            out[static_cast<std::size_t>(j)] += a.at({m, j});
    return Tensor::from({N}, std::move(out));
}

SelectionResult topk_indices(const Tensor& scores, std::int64_t k) {
    if (scores.rank() != 1) throw ShapeError("topk_indices: expected a score vector");
    const std::int64_t n = scores.dim(0);
    if (k < 1 || k > n)
        throw ConfigError("topk_indices: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(n) + "]");
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const auto& v = scores.values();
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        if (v[static_cast<std::size_t>(a)] != v[static_cast<std::size_t>(b)])
            return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)];
        return a < b;  // tie: smaller index first
    });
    order.resize(static_cast<std::size_t>(k));
    return SelectionResult{std::move(order), scores};
}

TokenSequence reassemble_sequence(const TokenSequence& seq, const SelectionResult& sel) {
    if (!seq.includes_class)
        throw ContractError("reassemble_sequence: sequence must carry the class token");
    const std::int64_t n_patches = seq.tokens.dim(0) - 1;
    std::vector<std::int64_t> rows;
    rows.reserve(sel.ids.size() + 1);
    rows.push_back(0);  // class token stays first
    for (auto id : sel.ids) {
        if (id < 0 || id >= n_patches)
            throw ContractError("reassemble_sequence: patch index " + std::to_string(id) +
                                " out of " + std::to_string(n_patches));
        rows.push_back(id + 1);  // shift past the class token
    }
    Tensor reduced = ops::gather_rows(seq.tokens, rows);
    return TokenSequence{reduced, seq.layer_index, true};
}

}  // namespace mpfgvc
