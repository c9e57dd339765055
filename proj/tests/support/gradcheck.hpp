#pragma once

// Central finite-difference oracle for layer gradients. Used by the unit
// tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bal/layers.hpp"

namespace bal::testing {

struct LayerCase {
    LayerSpec spec;
    std::vector<Tensor> params;
    std::vector<Tensor> buffers;
    Tensor input;
    Mode mode = Mode::train;
    std::vector<RngStream> rngs;
};

inline double norm_relative_error(const Tensor& analytic, const Tensor& numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-12);
    return std::sqrt(diff) / scale;
}

/// Scalar probe: sum(weights * forward(...)).
inline double probe(const LayerCase& c, const Tensor& weights) {
    const auto out = layer_forward(c.spec, c.params, c.buffers, c.input, c.mode, c.rngs).output;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    return s;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;
};

/// Compares layer_backward against central differences of layer_forward for
/// the input and every parameter tensor. Dense weight decay is folded into the
/// probe as 0.5 * lambda * |w|^2 so the analytic gradient is comparable.
inline GradCheck check_layer(LayerCase c, RngStream& rng, double step = 1e-5) {
    const auto fwd = layer_forward(c.spec, c.params, c.buffers, c.input, c.mode, c.rngs);
    Tensor weights(fwd.output.shape());
    for (auto& v : weights.data()) v = rng.uniform(-1.0, 1.0);
    const auto bwd = layer_backward(c.spec, c.params, fwd.cache, weights);

    const double lambda = c.spec.kind == LayerKind::dense ? c.spec.weight_decay : 0.0;
    auto objective = [&](const LayerCase& cc) {
        double s = probe(cc, weights);
        if (lambda != 0.0)
            for (double w : cc.params[0].data()) s += 0.5 * lambda * w * w;
        return s;
    };

    GradCheck result;
    auto record = [&](const Tensor& analytic, const Tensor& numeric, const std::string& what) {
        const double e = norm_relative_error(analytic, numeric);
        if (e > result.max_rel_error || result.worst.empty()) {
            result.max_rel_error = std::max(result.max_rel_error, e);
            result.worst = what;
        }
    };

    Tensor num_in(c.input.shape());
    for (std::size_t i = 0; i < c.input.size(); ++i) {
        LayerCase p = c, m = c;
        p.input[i] += step;
        m.input[i] -= step;
        num_in[i] = (objective(p) - objective(m)) / (2 * step);
    }
    record(bwd.grad_input, num_in, std::string(to_string(c.spec.kind)) + " input");

    for (std::size_t k = 0; k < c.params.size(); ++k) {
        Tensor num(c.params[k].shape());
        for (std::size_t i = 0; i < c.params[k].size(); ++i) {
            LayerCase p = c, m = c;
            p.params[k][i] += step;
            m.params[k][i] -= step;
            num[i] = (objective(p) - objective(m)) / (2 * step);
        }
        record(bwd.grad_params[k], num,
               std::string(to_string(c.spec.kind)) + " " + c.spec.param_names()[k]);
    }
    return result;
}

inline Tensor random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline std::size_t pick(RngStream& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

/// A random small configuration of the given layer kind, in train mode.
inline LayerCase random_case(LayerKind kind, RngStream& rng) {
    LayerCase c;
    std::size_t B = pick(rng, 1, 3);
    Shape in;
    switch (kind) {
        case LayerKind::conv1d: {
            const std::size_t groups = pick(rng, 1, 3);
            c.spec = LayerSpec::conv1d(pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3), groups);
            in = {B * groups, c.spec.in_channels, pick(rng, c.spec.kernel_w, 7)};
            break;
        }
        case LayerKind::conv2d:
            c.spec = LayerSpec::conv2d(pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3));
            in = {B, c.spec.in_channels, pick(rng, c.spec.kernel_h, 4), pick(rng, c.spec.kernel_w, 5)};
            break;
        case LayerKind::batchnorm:
            B = pick(rng, 2, 4);
            c.spec = LayerSpec::batchnorm(pick(rng, 1, 3));
            in = rng.below(2) ? Shape{B, c.spec.in_channels, pick(rng, 1, 5)}
                              : Shape{B, c.spec.in_channels, pick(rng, 1, 3), pick(rng, 1, 3)};
            break;
        case LayerKind::maxpool1d:
            c.spec = LayerSpec::maxpool1d(pick(rng, 1, 3));
            in = {B, pick(rng, 1, 3), pick(rng, c.spec.pool_w, 8)};
            break;
        case LayerKind::maxpool2d:
            c.spec = LayerSpec::maxpool2d(pick(rng, 1, 3), pick(rng, 1, 2));
            in = {B, pick(rng, 1, 2), pick(rng, c.spec.pool_h, 6), pick(rng, c.spec.pool_w, 5)};
            break;
        case LayerKind::dense: {
            const std::size_t features = pick(rng, 1, 6);
            c.spec = LayerSpec::dense(features, pick(rng, 1, 4), rng.below(2) ? 1e-4 : 0.0);
            in = {B, features};
            break;
        }
        case LayerKind::dropout:
            c.spec = LayerSpec::dropout(rng.uniform(0.0, 0.6));
            in = {B, pick(rng, 1, 8)};
            break;
        case LayerKind::relu:
            c.spec = LayerSpec::relu();
            in = {B, pick(rng, 1, 8)};
            break;
        case LayerKind::softmax:
            c.spec = LayerSpec::softmax();
            in = {B, pick(rng, 2, 6)};
            break;
        case LayerKind::concat_axes: {
            const std::size_t axes = pick(rng, 1, 3);
            c.spec = LayerSpec::concat_axes(axes);
            in = {B * axes, pick(rng, 1, 3), pick(rng, 1, 5)};
            break;
        }
    }
    c.input = random_tensor(in, rng, -2.0, 2.0);
    c.params = init_params(c.spec, rng);
    for (auto& p : c.params)
        for (auto& v : p.data()) v = rng.uniform(-1.0, 1.0);
    c.buffers = init_buffers(c.spec);
    for (std::size_t b = 0; b < c.input.dim(0); ++b) c.rngs.push_back(rng.derive(1000 + b));
    return c;
}

inline constexpr LayerKind kAllKinds[] = {
    LayerKind::conv1d,  LayerKind::conv2d,  LayerKind::batchnorm, LayerKind::maxpool1d, LayerKind::maxpool2d,
    LayerKind::dense,   LayerKind::dropout, LayerKind::relu,      LayerKind::softmax,   LayerKind::concat_axes,
};

}  // namespace bal::testing
