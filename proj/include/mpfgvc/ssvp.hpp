#pragma once

#include <cstdint>
#include <vector>

#include "mpfgvc/tensor.hpp"
#include "mpfgvc/vit.hpp"

namespace mpfgvc {

// Top-k selection outcome: indices in descending aggregated-score order,
// ties broken toward the smaller index.
struct SelectionResult {
    std::vector<std::int64_t> ids;
    Tensor scores;  // [N] aggregated attention
};

// Element-wise sum of the per-head class-token attention rows -> [N].
Tensor aggregate_head_attention(const AttentionRecord& record);

SelectionResult topk_indices(const Tensor& scores, std::int64_t k);

// [class, patch id(1), ..., patch id(k)] built from a class-bearing sequence;
// selected token values are carried over bit-exactly and stay differentiable.
TokenSequence reassemble_sequence(const TokenSequence& seq, const SelectionResult& sel);

}  // namespace mpfgvc
