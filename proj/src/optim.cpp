#include "mpfgvc/optim.hpp"

#include <cmath>

#include "mpfgvc/errors.hpp"

namespace mpfgvc {

double CosineSchedule::at(std::int64_t step) const {
    if (total_steps <= 0) throw ConfigError("cosine schedule needs total_steps > 0");
    if (step < 0) throw ConfigError("negative schedule step");
    if (step >= total_steps) return lr_min;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * t));
}

void sgd_step(std::vector<Parameter>& params, double lr) {
    const Precision p = default_precision();
    for (auto& param : params) {
        if (param.frozen) continue;
        if (!param.tensor.has_grad())
            throw ContractError("sgd_step: trainable parameter '" + param.name +
                                "' has no gradient");
        auto& v = param.tensor.values();
        const auto& g = param.tensor.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = quantized(v[i] - lr * g[i], p);
    }
    for (auto& param : params) param.tensor.clear_grad();
}

Tensor init_weight(Shape shape, Rng& rng, double stddev) {
    const auto n = shape_numel(shape);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.truncated_normal(stddev);
    return Tensor::from(std::move(shape), std::move(v), false);
}

Tensor init_zeros(Shape shape) { return Tensor::zeros(std::move(shape)); }

Tensor init_ones(Shape shape) { return Tensor::full(std::move(shape), 1.0); }

}  // namespace mpfgvc
