#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bal/tensor.hpp"

namespace bal {

/// Probabilities are clamped to this floor inside every log().
inline constexpr double kProbabilityFloor = 1e-12;

/// -log(max(probs[target], floor)). Rejects out-of-range targets and
/// vectors that are not probability distributions (sum 1 +- 1e-6, >= 0).
double cross_entropy(std::span<const double> probs, std::size_t target);

/// Gradient of cross_entropy(softmax(z), target) with respect to the logits z,
/// written into `out`: softmax(z) - onehot(target), given probs = softmax(z).
void softmax_cross_entropy_grad(std::span<const double> probs, std::size_t target, std::span<double> out);

struct AdamState {
    std::uint64_t step = 0;
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;

    /// Zero moments shaped like `params`, step 0.
    static AdamState for_params(std::span<const Tensor* const> params, double learning_rate = 2e-4);

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update applied in place. `names` identifies each
/// parameter tensor in diagnostics. Nothing is modified when a gradient is
/// non-finite.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads,
               std::span<const std::string> names = {});

}  // namespace bal
