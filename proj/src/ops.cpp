#include "mpfgvc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mpfgvc {
namespace ops {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void check_finite(const Tensor& x, const char* op) {
    for (double v : x.values())
        if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
}

Tensor make_result(Shape shape, std::vector<double> v, bool requires_grad) {
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Records the node when a tape is active and any input needs gradients.
void maybe_record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
    Tape* tape = Tape::current();
    if (!tape) return;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return;
    output.set_requires_grad(true);
    tape->record(TapeNode{std::move(inputs), std::move(output), std::move(backward)});
}

// Rows/cols view of a rank-1 or rank-2 tensor, treating a vector as one row.
std::pair<std::int64_t, std::int64_t> as_rows_cols(const Tensor& x, const char* op) {
    if (x.rank() == 1) return {1, x.dim(0)};
    if (x.rank() == 2) return {x.dim(0), x.dim(1)};
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(x.shape()));
}

void softmax_row(const double* in, double* out, std::int64_t n) {
    double mx = in[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double denom = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        denom += out[i];
    }
    for (std::int64_t i = 0; i < n; ++i) out[i] /= denom;
}

double norm2(const double* p, std::int64_t n) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += p[i] * p[i];
    return std::sqrt(s);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Tensor r = make_result(a.shape(), std::move(out), false);
    maybe_record({a, b}, r, [a, b, r]() mutable {
        const auto& g = r.grad();
        if (a.requires_grad()) grad_accumulate(a.grad(), g);
        if (b.requires_grad()) grad_accumulate(b.grad(), g);
    });
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    Tensor r = make_result(a.shape(), std::move(out), false);
    maybe_record({a, b}, r, [a, b, r]() mutable {
        const auto& g = r.grad();
        if (a.requires_grad()) grad_accumulate(a.grad(), g);
        if (b.requires_grad()) {
            std::vector<double> neg(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
            grad_accumulate(b.grad(), neg);
        }
    });
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    Tensor r = make_result(a.shape(), std::move(out), false);
    maybe_record({a, b}, r, [a, b, r]() mutable {
        const auto& g = r.grad();
        if (a.requires_grad()) {
            std::vector<double> da(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * b.values()[i];
            grad_accumulate(a.grad(), da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * a.values()[i];
            grad_accumulate(b.grad(), db);
        }
    });
    return r;
}

Tensor scale(const Tensor& a, double c) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    Tensor r = make_result(a.shape(), std::move(out), false);
    maybe_record({a}, r, [a, r, c]() mutable {
        const auto& g = r.grad();
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * c;
        grad_accumulate(a.grad(), da);
    });
    return r;
}

Tensor gelu(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double x = av[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    Tensor r = make_result(a.shape(), std::move(out), false);
    maybe_record({a}, r, [a, r]() mutable {
        const auto& g = r.grad();
        std::vector<double> da(g.size());
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = a.values()[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            da[i] = g[i] * (cdf + x * pdf);
        }
        grad_accumulate(a.grad(), da);
    });
    return r;
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
    auto [rows, cols] = as_rows_cols(x, "add_rowvec");
    if (bias.rank() != 1 || bias.dim(0) != cols)
        throw ShapeError("add_rowvec: bias " + shape_str(bias.shape()) + " vs cols " +
                         std::to_string(cols));
    const auto& xv = x.values();
    const auto& bv = bias.values();
    std::vector<double> out(xv.size());
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            out[static_cast<std::size_t>(i * cols + j)] =
                xv[static_cast<std::size_t>(i * cols + j)] + bv[static_cast<std::size_t>(j)];
    Tensor r = make_result(x.shape(), std::move(out), false);
    maybe_record({x, bias}, r, [x, bias, r, rows = rows, cols = cols]() mutable {
        const auto& g = r.grad();
        if (x.requires_grad()) grad_accumulate(x.grad(), g);
        if (bias.requires_grad()) {
            std::vector<double> db(static_cast<std::size_t>(cols), 0.0);
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < cols; ++j)
                    db[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * cols + j)];
            grad_accumulate(bias.grad(), db);
        }
    });
    return r;
}

namespace {

// C[m x n] += or = A[m x k] * B[k x n]; ikj order for cache locality.
void matmul_kernel(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            if (a == 0.0) continue;
            const double* brow = B + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m x k] += A[m x n] * B^T where B is [k x n].
void matmul_nt_kernel(const double* A, const double* B, double* C, std::int64_t m, std::int64_t n,
                      std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = A + i * n;
        for (std::int64_t j = 0; j < k; ++j) {
            const double* brow = B + j * n;
            double s = 0.0;
            for (std::int64_t p = 0; p < n; ++p) s += arow[p] * brow[p];
            C[i * k + j] += s;
        }
    }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n].
void matmul_tn_kernel(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                      std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* brow = B + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            double* crow = C + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    matmul_kernel(a.values().data(), b.values().data(), out.data(), m, k, n);
    Tensor r = make_result({m, n}, std::move(out), false);
    maybe_record({a, b}, r, [a, b, r, m, k, n]() mutable {
        const auto& g = r.grad();
        if (a.requires_grad()) {
            std::vector<double> da(static_cast<std::size_t>(m * k), 0.0);
            matmul_nt_kernel(g.data(), b.values().data(), da.data(), m, n, k);
            grad_accumulate(a.grad(), da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(static_cast<std::size_t>(k * n), 0.0);
            matmul_tn_kernel(a.values().data(), g.data(), db.data(), m, k, n);
            grad_accumulate(b.grad(), db);
        }
    });
    return r;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    if (a.rank() != 2 || x.rank() != 1)
        throw ShapeError("matvec: got " + shape_str(a.shape()) + " and " + shape_str(x.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    if (x.dim(0) != n)
        throw ShapeError("matvec: inner dims " + shape_str(a.shape()) + " vs " +
                         shape_str(x.shape()));
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
    const auto& av = a.values();
    const auto& xv = x.values();
    for (std::int64_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < n; ++j) s += av[static_cast<std::size_t>(i * n + j)] * xv[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s;
    }
    Tensor r = make_result({m}, std::move(out), false);
    maybe_record({a, x}, r, [a, x, r, m, n]() mutable {
        const auto& g = r.grad();
        if (a.requires_grad()) {
            std::vector<double> da(static_cast<std::size_t>(m * n));
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    da[static_cast<std::size_t>(i * n + j)] =
                        g[static_cast<std::size_t>(i)] * x.values()[static_cast<std::size_t>(j)];
            grad_accumulate(a.grad(), da);
        }
        if (x.requires_grad()) {
            std::vector<double> dx(static_cast<std::size_t>(n), 0.0);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    dx[static_cast<std::size_t>(j)] +=
                        g[static_cast<std::size_t>(i)] * a.values()[static_cast<std::size_t>(i * n + j)];
            grad_accumulate(x.grad(), dx);
        }
    });
    return r;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    const auto& av = a.values();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j * m + i)] = av[static_cast<std::size_t>(i * n + j)];
    Tensor r = make_result({n, m}, std::move(out), false);
    maybe_record({a}, r, [a, r, m, n]() mutable {
        const auto& g = r.grad();
        std::vector<double> da(static_cast<std::size_t>(m * n));
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                da[static_cast<std::size_t>(i * n + j)] = g[static_cast<std::size_t>(j * m + i)];
        grad_accumulate(a.grad(), da);
    });
    return r;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor r = make_result(std::move(shape), a.values(), false);
    maybe_record({a}, r, [a, r]() mutable { grad_accumulate(a.grad(), r.grad()); });
    return r;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input");
    std::int64_t cols = -1, rows = 0;
    for (const auto& p : parts) {
        auto [r, c] = as_rows_cols(p, "concat_rows");
        if (cols < 0) cols = c;
        if (c != cols) throw ShapeError("concat_rows: column mismatch");
        rows += r;
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows * cols));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor r = make_result({rows, cols}, std::move(out), false);
    maybe_record(parts, r, [parts, r]() mutable {
        const auto& g = r.grad();
        std::size_t offset = 0;
        for (auto& p : parts) {
            const std::size_t n = p.values().size();
            if (p.requires_grad()) {
                std::vector<double> dp(g.begin() + static_cast<std::ptrdiff_t>(offset),
                                       g.begin() + static_cast<std::ptrdiff_t>(offset + n));
                grad_accumulate(p.grad(), dp);
            }
            offset += n;
        }
    });
    return r;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: empty input");
    const std::int64_t d = rows.front().numel();
    for (const auto& v : rows) {
        if (v.rank() != 1 || v.dim(0) != d)
            throw ShapeError("stack_rows: expected vectors of length " + std::to_string(d));
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(static_cast<std::int64_t>(rows.size()) * d));
    for (const auto& v : rows) out.insert(out.end(), v.values().begin(), v.values().end());
    Tensor r = make_result({static_cast<std::int64_t>(rows.size()), d}, std::move(out), false);
    maybe_record(rows, r, [rows, r, d]() mutable {
        const auto& g = r.grad();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i].requires_grad()) continue;
            std::vector<double> dr(g.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(d)),
                                   g.begin() + static_cast<std::ptrdiff_t>((i + 1) * static_cast<std::size_t>(d)));
            grad_accumulate(rows[i].grad(), dr);
        }
    });
    return r;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& indices) {
    if (x.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + shape_str(x.shape()));
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    for (auto i : indices)
        if (i < 0 || i >= rows)
            throw ContractError("gather_rows: index " + std::to_string(i) + " out of " +
                                std::to_string(rows));
    std::vector<double> out(indices.size() * static_cast<std::size_t>(cols));
    const auto& xv = x.values();
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(indices[r] * cols), cols,
                    out.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(cols)));
    Tensor r = make_result({static_cast<std::int64_t>(indices.size()), cols}, std::move(out), false);
    maybe_record({x}, r, [x, r, indices, rows, cols]() mutable {
        const auto& g = r.grad();
        std::vector<double> dx(static_cast<std::size_t>(rows * cols), 0.0);
        for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::int64_t j = 0; j < cols; ++j)
                dx[static_cast<std::size_t>(indices[i] * cols + j)] +=
                    g[i * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j)];
        grad_accumulate(x.grad(), dx);
    });
    return r;
}

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t count) {
    if (x.rank() != 2) throw ShapeError("slice_cols: expected rank 2, got " + shape_str(x.shape()));
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    if (start < 0 || count <= 0 || start + count > cols)
        throw IndexError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + std::to_string(cols));
    std::vector<double> out(static_cast<std::size_t>(rows * count));
    const auto& xv = x.values();
    for (std::int64_t i = 0; i < rows; ++i)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(i * cols + start), count,
                    out.begin() + static_cast<std::ptrdiff_t>(i * count));
    Tensor r = make_result({rows, count}, std::move(out), false);
    maybe_record({x}, r, [x, r, start, count, rows, cols]() mutable {
        const auto& g = r.grad();
        std::vector<double> dx(static_cast<std::size_t>(rows * cols), 0.0);
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < count; ++j)
                dx[static_cast<std::size_t>(i * cols + start + j)] =
                    g[static_cast<std::size_t>(i * count + j)];
        grad_accumulate(x.grad(), dx);
    });
    return r;
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor r = Tensor::scalar(s);
    maybe_record({a}, r, [a, r]() mutable {
        const double g = r.grad()[0];
        std::vector<double> da(a.values().size(), g);
        grad_accumulate(a.grad(), da);
    });
    return r;
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    if (n == 0) throw ContractError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor r = Tensor::scalar(s / n);
    maybe_record({a}, r, [a, r, n]() mutable {
        const double g = r.grad()[0] / n;
        std::vector<double> da(a.values().size(), g);
        grad_accumulate(a.grad(), da);
    });
    return r;
}

Tensor dot(const Tensor& u, const Tensor& v) {
    if (u.rank() != 1 || v.rank() != 1 || u.dim(0) != v.dim(0))
        throw ShapeError("dot: " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < u.values().size(); ++i) s += u.values()[i] * v.values()[i];
    Tensor r = Tensor::scalar(s);
    maybe_record({u, v}, r, [u, v, r]() mutable {
        const double g = r.grad()[0];
        if (u.requires_grad()) {
            std::vector<double> du(u.values().size());
            for (std::size_t i = 0; i < du.size(); ++i) du[i] = g * v.values()[i];
            grad_accumulate(u.grad(), du);
        }
        if (v.requires_grad()) {
            std::vector<double> dv(v.values().size());
            for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = g * u.values()[i];
            grad_accumulate(v.grad(), dv);
        }
    });
    return r;
}

Tensor softmax(const Tensor& x, int axis) {
    check_finite(x, "softmax");
    const int rk = x.rank();
    if (rk != 1 && rk != 2)
        throw ShapeError("softmax: expected rank 1 or 2, got " + shape_str(x.shape()));
    int ax = axis < 0 ? axis + rk : axis;
    if (ax < 0 || ax >= rk) throw ShapeError("softmax: bad axis " + std::to_string(axis));
    if (rk == 2 && ax == 0) return transpose(softmax(transpose(x), 1));

    auto [rows, cols] = as_rows_cols(x, "softmax");
    std::vector<double> out(x.values().size());
    for (std::int64_t i = 0; i < rows; ++i)
        softmax_row(x.values().data() + i * cols, out.data() + i * cols, cols);
    Tensor r = make_result(x.shape(), std::move(out), false);
    maybe_record({x}, r, [x, r, rows = rows, cols = cols]() mutable {
        const auto& g = r.grad();
        const auto& y = r.values();
        std::vector<double> dx(g.size());
        for (std::int64_t i = 0; i < rows; ++i) {
            double inner = 0.0;
            for (std::int64_t j = 0; j < cols; ++j)
                inner += g[static_cast<std::size_t>(i * cols + j)] * y[static_cast<std::size_t>(i * cols + j)];
            for (std::int64_t j = 0; j < cols; ++j) {
                const auto k = static_cast<std::size_t>(i * cols + j);
                dx[k] = y[k] * (g[k] - inner);
            }
        }
        grad_accumulate(x.grad(), dx);
    });
    return r;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    auto [rows, cols] = as_rows_cols(x, "layer_norm");
    if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.rank() != 1 || beta.dim(0) != cols)
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(cols) + "]");
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* row = xv.data() + i * cols;
        double mu = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) mu += row[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < cols; ++j) {
            const auto k = static_cast<std::size_t>(i * cols + j);
            xhat[k] = (row[j] - mu) * is;
            out[k] = xhat[k] * gamma.values()[static_cast<std::size_t>(j)] +
                     beta.values()[static_cast<std::size_t>(j)];
        }
    }
    Tensor r = make_result(x.shape(), std::move(out), false);
    maybe_record({x, gamma, beta}, r,
                 [x, gamma, beta, r, rows = rows, cols = cols, xhat = std::move(xhat),
                  inv_sigma = std::move(inv_sigma)]() mutable {
        const auto& g = r.grad();
        if (gamma.requires_grad()) {
            std::vector<double> dg(static_cast<std::size_t>(cols), 0.0);
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < cols; ++j)
                    dg[static_cast<std::size_t>(j)] +=
                        g[static_cast<std::size_t>(i * cols + j)] * xhat[static_cast<std::size_t>(i * cols + j)];
            grad_accumulate(gamma.grad(), dg);
        }
        if (beta.requires_grad()) {
            std::vector<double> db(static_cast<std::size_t>(cols), 0.0);
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < cols; ++j)
                    db[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * cols + j)];
            grad_accumulate(beta.grad(), db);
        }
        if (x.requires_grad()) {
            std::vector<double> dx(g.size());
            const double inv_n = 1.0 / static_cast<double>(cols);
            for (std::int64_t i = 0; i < rows; ++i) {
                double mean_gg = 0.0, mean_ggx = 0.0;
                for (std::int64_t j = 0; j < cols; ++j) {
                    const auto k = static_cast<std::size_t>(i * cols + j);
                    const double gg = g[k] * gamma.values()[static_cast<std::size_t>(j)];
                    mean_gg += gg;
                    mean_ggx += gg * xhat[k];
                }
                mean_gg *= inv_n;
                mean_ggx *= inv_n;
                const double is = inv_sigma[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < cols; ++j) {
                    const auto k = static_cast<std::size_t>(i * cols + j);
                    const double gg = g[k] * gamma.values()[static_cast<std::size_t>(j)];
                    dx[k] = (gg - mean_gg - xhat[k] * mean_ggx) * is;
                }
            }
            grad_accumulate(x.grad(), dx);
        }
    });
    return r;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy: expected [B x C], got " + shape_str(logits.shape()));
    const std::int64_t B = logits.dim(0), C = logits.dim(1);
    if (C < 2) throw ContractError("cross_entropy: needs at least 2 classes");
    if (static_cast<std::int64_t>(labels.size()) != B)
        throw ShapeError("cross_entropy: label count " + std::to_string(labels.size()) + " vs B=" +
                         std::to_string(B));
    for (auto y : labels)
        if (y < 0 || y >= C) throw IndexError("cross_entropy: label " + std::to_string(y));
    const auto& lv = logits.values();
    std::vector<double> probs(lv.size());
    double loss = 0.0;
    for (std::int64_t i = 0; i < B; ++i) {
        softmax_row(lv.data() + i * C, probs.data() + i * C, C);
        const double* row = lv.data() + i * C;
        double mx = row[0];
        for (std::int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < C; ++j) denom += std::exp(row[j] - mx);
        loss += std::log(denom) + mx - row[labels[static_cast<std::size_t>(i)]];
    }
    loss /= static_cast<double>(B);
    Tensor r = Tensor::scalar(loss);
    maybe_record({logits}, r, [logits, r, labels, B, C, probs = std::move(probs)]() mutable {
        const double g = r.grad()[0] / static_cast<double>(B);
        std::vector<double> dl(probs.size());
        for (std::int64_t i = 0; i < B; ++i)
            for (std::int64_t j = 0; j < C; ++j) {
                const auto k = static_cast<std::size_t>(i * C + j);
                dl[k] = g * (probs[k] - (labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0));
            }
        grad_accumulate(logits.grad(), dl);
    });
    return r;
}

Tensor cross_entropy_onehot(const Tensor& logits, const Tensor& onehot) {
    if (onehot.shape() != logits.shape())
        throw ShapeError("cross_entropy_onehot: " + shape_str(onehot.shape()) + " vs " +
                         shape_str(logits.shape()));
    const std::int64_t B = logits.dim(0), C = logits.dim(1);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(B));
    for (std::int64_t i = 0; i < B; ++i) {
        std::int64_t hit = -1;
        for (std::int64_t j = 0; j < C; ++j) {
            const double v = onehot.at({i, j});
            if (v == 1.0) {
                if (hit >= 0) throw ContractError("cross_entropy_onehot: multiple ones in row");
                hit = j;
            } else if (v != 0.0) {
                throw ContractError("cross_entropy_onehot: entries must be 0 or 1");
            }
        }
        if (hit < 0) throw ContractError("cross_entropy_onehot: row without a 1");
        labels[static_cast<std::size_t>(i)] = hit;
    }
    return cross_entropy(logits, labels);
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
    if (u.rank() != 1 || v.rank() != 1 || u.dim(0) != v.dim(0))
        throw ShapeError("cosine_similarity: " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
    const double nu = norm2(u.values().data(), u.dim(0));
    const double nv = norm2(v.values().data(), v.dim(0));
    if (nu == 0.0 || nv == 0.0) throw DegenerateInputError("cosine_similarity: zero vector");
    double d = 0.0;
    for (std::size_t i = 0; i < u.values().size(); ++i) d += u.values()[i] * v.values()[i];
    const double cosv = d / (nu * nv);
    Tensor r = Tensor::scalar(cosv);
    maybe_record({u, v}, r, [u, v, r, nu, nv, cosv]() mutable {
        const double g = r.grad()[0];
        if (u.requires_grad()) {
            std::vector<double> du(u.values().size());
            for (std::size_t i = 0; i < du.size(); ++i)
                du[i] = g * (v.values()[i] / (nu * nv) - cosv * u.values()[i] / (nu * nu));
            grad_accumulate(u.grad(), du);
        }
        if (v.requires_grad()) {
            std::vector<double> dv(v.values().size());
            for (std::size_t i = 0; i < dv.size(); ++i)
                dv[i] = g * (u.values()[i] / (nu * nv) - cosv * v.values()[i] / (nv * nv));
            grad_accumulate(v.grad(), dv);
        }
    });
    return r;
}

Tensor row_normalize(const Tensor& x) {
    auto [rows, cols] = as_rows_cols(x, "row_normalize");
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    std::vector<double> norms(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
        const double n = norm2(xv.data() + i * cols, cols);
        if (n == 0.0)
            throw DegenerateInputError("row_normalize: zero row " + std::to_string(i));
        norms[static_cast<std::size_t>(i)] = n;
        for (std::int64_t j = 0; j < cols; ++j)
            out[static_cast<std::size_t>(i * cols + j)] = xv[static_cast<std::size_t>(i * cols + j)] / n;
    }
    Tensor r = make_result(x.shape(), std::move(out), false);
    maybe_record({x}, r, [x, r, rows = rows, cols = cols, norms = std::move(norms)]() mutable {
        const auto& g = r.grad();
        const auto& y = r.values();
        std::vector<double> dx(g.size());
        for (std::int64_t i = 0; i < rows; ++i) {
            double gy = 0.0;
            for (std::int64_t j = 0; j < cols; ++j)
                gy += g[static_cast<std::size_t>(i * cols + j)] * y[static_cast<std::size_t>(i * cols + j)];
            const double inv_n = 1.0 / norms[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < cols; ++j) {
                const auto k = static_cast<std::size_t>(i * cols + j);
                dx[k] = (g[k] - gy * y[k]) * inv_n;
            }
        }
        grad_accumulate(x.grad(), dx);
    });
    return r;
}

std::vector<std::int64_t> argmax_rows(const Tensor& x) {
    auto [rows, cols] = as_rows_cols(x, "argmax_rows");
    std::vector<std::int64_t> out(static_cast<std::size_t>(rows));
    const auto& xv = x.values();
    for (std::int64_t i = 0; i < rows; ++i) {
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < cols; ++j)
            if (xv[static_cast<std::size_t>(i * cols + j)] > xv[static_cast<std::size_t>(i * cols + best)])
                best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor probe = x.clone();
    std::vector<double> g(probe.values().size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double saved = probe.values()[i];
        probe.values()[i] = saved + h;
        const double fp = f(probe);
        probe.values()[i] = saved - h;
        const double fm = f(probe);
        probe.values()[i] = saved;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor::from(x.shape(), std::move(g), false);
}

}  // namespace ops
}  // namespace mpfgvc
