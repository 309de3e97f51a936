#include "text2loc/engine/adam.hpp"

#include <cmath>
#include <string>

#include "text2loc/common/errors.hpp"

namespace text2loc::engine {

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr)
{
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw ValueError("adam_step: learning rate must be positive, got " + std::to_string(lr));

    if (state.first_moment.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), 0.0);
            state.second_moment.emplace_back(p.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
        throw ShapeError("adam_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " parameters, got " +
                         std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].size() != params[i].size() ||
            state.second_moment[i].size() != params[i].size())
            throw ShapeError("adam_step: moment buffer " + std::to_string(i) +
                             " does not match parameter shape " +
                             shape_string(params[i].shape()));
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad())
            continue;
        auto values = p.mutable_values();
        const auto grad = p.grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

double lr_schedule(std::size_t epoch, double base_lr, double decay, std::size_t step)
{
    if (step == 0)
        return base_lr;
    return base_lr * std::pow(decay, static_cast<double>(epoch / step));
}

} // namespace text2loc::engine
