#include "bal/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bal {

double cross_entropy(std::span<const double> probs, std::size_t target) {
    if (target >= probs.size())
        throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                                std::to_string(probs.size()) + " classes");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("cross_entropy: negative or NaN probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("cross_entropy: probabilities sum to " + std::to_string(sum));
    return -std::log(std::max(probs[target], kProbabilityFloor));
}

void softmax_cross_entropy_grad(std::span<const double> probs, std::size_t target, std::span<double> out) {
    if (target >= probs.size()) throw std::out_of_range("softmax_cross_entropy_grad: target out of range");
    std::copy(probs.begin(), probs.end(), out.begin());
    out[target] -= 1.0;
}

AdamState AdamState::for_params(std::span<const Tensor* const> params, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    for (const Tensor* p : params) {
        s.first_moment.emplace_back(p->shape(), 0.0);
        s.second_moment.emplace_back(p->shape(), 0.0);
    }
    return s;
}

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads,
               std::span<const std::string> names) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
        params.size() != state.second_moment.size())
        throw ShapeError("adam_step: parameter, gradient and moment counts differ");
    auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "tensor #" + std::to_string(i); };
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.first_moment[i].shape())
            throw ShapeError("adam_step: shape mismatch for " + label(i) + ": param " +
                             shape_str(params[i]->shape()) + ", grad " + shape_str(grads[i].shape()));
        if (!grads[i].all_finite()) throw NonFiniteGradient("adam_step: non-finite gradient in " + label(i));
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace bal
