#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mpfgvc/tensor.hpp"

namespace mpfgvc {
namespace ops {

// Elementwise (same shape unless noted).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& a);

// x: [n x d], bias: [d]; adds bias to every row.
Tensor add_rowvec(const Tensor& x, const Tensor& bias);

// Matrix algebra (rank-2 operands).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& a, const Tensor& x);  // [m x n] * [n] -> [m]
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Row / column surgery.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor stack_rows(const std::vector<Tensor>& rows);  // k vectors [d] -> [k x d]
Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& indices);
Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t count);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& u, const Tensor& v);

// Normalization & classification primitives.
// axis must address the last dimension's direction: for rank-1 only axis 0 (or
// -1) is valid; for rank-2, axis 1 (-1) normalizes rows and axis 0 columns.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels);
Tensor cross_entropy_onehot(const Tensor& logits, const Tensor& onehot);
Tensor cosine_similarity(const Tensor& u, const Tensor& v);
Tensor row_normalize(const Tensor& x);  // rows scaled to unit L2 norm

std::vector<std::int64_t> argmax_rows(const Tensor& x);

// Central-difference gradient of a scalar-valued function at x.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

}  // namespace ops
}  // namespace mpfgvc
