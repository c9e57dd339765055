#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bal/layers.hpp"
#include "bal/optim.hpp"

namespace bal {

struct Layer {
    LayerSpec spec;
    std::vector<Tensor> params;
    std::vector<Tensor> buffers;
};

/// Caches of a forward pass over a contiguous layer range.
struct ForwardTrace {
    std::size_t begin = 0;
    std::vector<LayerCache> caches;
    Tensor output;
};

/// Linear stack of layers. Dropout layer i draws its mask for batch row n
/// from sample_rngs[n].derive(i), so masks depend only on (row stream, layer).
class Sequential {
public:
    Sequential() = default;
    explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

    std::size_t size() const noexcept { return layers_.size(); }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }
    Layer& layer(std::size_t i) { return layers_.at(i); }
    std::span<const Layer> layers() const noexcept { return layers_; }
    std::span<Layer> layers() noexcept { return layers_; }

    /// Runs layers [begin, end).
    Tensor forward(const Tensor& x, Mode mode, std::span<const RngStream> sample_rngs, std::size_t begin,
                   std::size_t end) const;
    ForwardTrace forward_trace(const Tensor& x, Mode mode, std::span<const RngStream> sample_rngs,
                               std::size_t begin, std::size_t end) const;

    /// Backpropagates through the traced range. Returns one gradient per
    /// parameter tensor in parameter_tensors() order (zero for layers outside
    /// the range).
    std::vector<Tensor> backward(const ForwardTrace& trace, const Tensor& grad_output) const;

    /// Applies batchnorm running-statistic updates recorded in a train trace.
    void commit_running_stats(const ForwardTrace& trace);

    std::vector<Tensor*> parameter_tensors();
    std::vector<const Tensor*> parameter_tensors() const;
    std::vector<std::string> parameter_names() const;
    std::size_t param_count() const;

    /// Index of the first dropout layer (size() if none): everything before
    /// it is deterministic in stochastic_eval mode.
    std::size_t first_stochastic_layer() const;

    friend bool operator==(const Sequential& a, const Sequential& b);

private:
    std::vector<Layer> layers_;
};

bool operator==(const Layer& a, const Layer& b);

}  // namespace bal
