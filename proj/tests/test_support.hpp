#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mpfgvc/ops.hpp"
#include "mpfgvc/rng.hpp"
#include "mpfgvc/tensor.hpp"

namespace testsup {

// Relative error with an absolute floor so near-zero gradients compare on the
// absolute scale where central differences bottom out.
inline double rel_err(double got, double want) {
    const double denom = std::max({1e-6, std::fabs(got), std::fabs(want)});
    return std::fabs(got - want) / denom;
}

inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
    double m = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) m = std::max(m, rel_err(got[i], want[i]));
    return m;
}

inline mpfgvc::Tensor random_tensor(mpfgvc::Shape shape, mpfgvc::Rng& rng, double scale = 1.0,
                                    bool requires_grad = false) {
    std::vector<double> v(static_cast<std::size_t>(mpfgvc::shape_numel(shape)));
    for (auto& x : v) x = rng.normal() * scale;
    return mpfgvc::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Autodiff-vs-central-differences check of a scalar function of one tensor.
// Returns the max relative error across coordinates.
inline double gradcheck(const std::function<mpfgvc::Tensor(const mpfgvc::Tensor&)>& f,
                        const mpfgvc::Tensor& x0, double h = 1e-5) {
    mpfgvc::Tensor x = x0.clone();
    x.set_requires_grad(true);
    mpfgvc::Tape tape;
    {
        mpfgvc::TapeScope scope(tape);
        mpfgvc::Tensor loss = f(x);
        tape.backward(loss);
    }
    const auto got = x.grad();
    mpfgvc::Tensor fd = mpfgvc::ops::finite_diff_grad(
        [&](const mpfgvc::Tensor& probe) { return f(probe).item(); }, x, h);
    return max_rel_err(got, fd.values());
}

// RAII precision override for the scope of a test case.
struct PrecisionGuard {
    explicit PrecisionGuard(mpfgvc::Precision p) : saved(mpfgvc::default_precision()) {
        mpfgvc::set_default_precision(p);
    }
    ~PrecisionGuard() { mpfgvc::set_default_precision(saved); }
    mpfgvc::Precision saved;
};

}  // namespace testsup
