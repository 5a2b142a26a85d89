#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpfgvc/rng.hpp"
#include "mpfgvc/tensor.hpp"

namespace mpfgvc {

// Named trainable (or frozen) tensor. A frozen parameter never moves under the
// optimizer but gradients still flow through the ops it participates in.
struct Parameter {
    Tensor tensor;
    bool frozen = false;
    std::string name;
};

// Cosine annealing from lr_max down to lr_min over total_steps, stepped per
// optimizer update.
struct CosineSchedule {
    double lr_max = 0.0;
    double lr_min = 0.0;
    std::int64_t total_steps = 1;

    double at(std::int64_t step) const;
};

// p <- p - lr * grad for non-frozen parameters; clears all grads afterwards.
void sgd_step(std::vector<Parameter>& params, double lr);

// Truncated normal (std 0.02, clipped at 2 std) for weights; zeros elsewhere.
Tensor init_weight(Shape shape, Rng& rng, double stddev = 0.02);
Tensor init_zeros(Shape shape);
Tensor init_ones(Shape shape);

}  // namespace mpfgvc
