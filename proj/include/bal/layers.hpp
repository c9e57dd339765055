#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bal/rng.hpp"
#include "bal/tensor.hpp"

namespace bal {

enum class LayerKind {
    conv1d,
    conv2d,
    batchnorm,
    maxpool1d,
    maxpool2d,
    dense,
    dropout,
    relu,
    softmax,
    concat_axes,
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// train: dropout active, batchnorm uses batch statistics.
/// stochastic_eval: dropout active, batchnorm uses running statistics.
/// deterministic_eval: dropout is the identity, batchnorm uses running statistics.
enum class Mode { train, stochastic_eval, deterministic_eval };

/// Kind plus hyperparameters. Layouts (batch first):
///   conv1d      [B, Cin, L] -> [B, F, L]          'same' padding, stride 1
///   conv2d      [B, Cin, H, W] -> [B, F, H, W]    'same' padding, stride 1
///   batchnorm   [B, C, ...] -> same
///   maxpool1d   [B, C, L] -> [B, C, L / p]        remainder truncated
///   maxpool2d   [B, C, H, W] -> [B, C, H / ph, W / pw]
///   dense       [B, ...] -> [B, units]            trailing dims flattened
///   concat_axes [B * A, C, L] -> [B, C, A, L]
/// conv1d with axis_groups = G > 1 keeps G weight sets; batch row b uses set b % G.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_channels = 0;
    std::size_t filters = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t pool_h = 1;
    std::size_t pool_w = 1;
    std::size_t in_features = 0;
    std::size_t units = 0;
    std::size_t axis_groups = 1;
    double dropout_p = 0.0;
    double weight_decay = 0.0;
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;

    static LayerSpec conv1d(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                            std::size_t axis_groups = 1);
    static LayerSpec conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel_h,
                            std::size_t kernel_w);
    static LayerSpec batchnorm(std::size_t channels, double momentum = 0.9, double epsilon = 1e-5);
    static LayerSpec maxpool1d(std::size_t size);
    static LayerSpec maxpool2d(std::size_t size_h, std::size_t size_w);
    static LayerSpec dense(std::size_t in_features, std::size_t units, double weight_decay = 0.0);
    static LayerSpec dropout(double p);
    static LayerSpec relu();
    static LayerSpec softmax();
    static LayerSpec concat_axes(std::size_t axes);

    /// Hyperparameter sanity (dropout range, positive extents, ...).
    void validate() const;

    std::vector<Shape> param_shapes() const;
    std::vector<std::string> param_names() const;
    std::vector<Shape> buffer_shapes() const;
    std::vector<std::string> buffer_names() const;

    /// Throws ShapeError naming the layer and both shapes on mismatch.
    Shape output_shape(const Shape& input) const;

    std::size_t param_count() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Everything backward needs from a forward call.
struct LayerCache {
    LayerKind kind = LayerKind::relu;
    Mode mode = Mode::deterministic_eval;
    Tensor input;
    Tensor output;
    Tensor normalized;
    std::vector<double> aux;
    std::vector<std::size_t> argmax;
};

struct ForwardResult {
    Tensor output;
    LayerCache cache;
};

struct BackwardResult {
    Tensor grad_input;
    std::vector<Tensor> grad_params;
};

/// Pure function of its arguments. `sample_rngs` supplies one stream per
/// batch row and is only consulted by dropout outside deterministic_eval.
ForwardResult layer_forward(const LayerSpec& spec, std::span<const Tensor> params,
                            std::span<const Tensor> buffers, const Tensor& input, Mode mode,
                            std::span<const RngStream> sample_rngs = {});

BackwardResult layer_backward(const LayerSpec& spec, std::span<const Tensor> params,
                              const LayerCache& cache, const Tensor& grad_output);

/// Glorot-uniform weights, zero biases, unit batchnorm scale.
std::vector<Tensor> init_params(const LayerSpec& spec, RngStream& rng);

/// Running mean 0 and running variance 1 for batchnorm; empty otherwise.
std::vector<Tensor> init_buffers(const LayerSpec& spec);

/// Exponential moving average of the batch statistics captured in a
/// train-mode batchnorm cache. No-op for other kinds.
void update_running_stats(const LayerSpec& spec, std::span<Tensor> buffers, const LayerCache& cache);

}  // namespace bal
