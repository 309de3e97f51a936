#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "text2loc/engine/tensor.hpp"

namespace text2loc::engine {

struct AdamState
{
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    /* One buffer per parameter, shaped like the parameter; empty until the first step */
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

/*
 * One bias-corrected Adam update of every parameter from its accumulated
 * gradient (parameters without a gradient buffer count as zero gradient).
 */
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr);

/* base_lr * decay^floor(epoch / step) */
double lr_schedule(std::size_t epoch, double base_lr, double decay = 0.4, std::size_t step = 7);

} // namespace text2loc::engine
