#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "json.hpp"

#include "bal/network.hpp"
#include "bal/optim.hpp"

namespace bal {

/// Architecture hyperparameters. Defaults are the reference configuration.
struct HarnetConfig {
    std::size_t input_length = 100;
    std::size_t num_axes = 3;
    std::size_t num_classes = 6;
    std::array<std::size_t, 2> conv1d_filters{8, 16};
    std::size_t conv1d_kernel = 2;
    std::size_t pool1d = 2;
    std::array<std::size_t, 2> conv2d_filters{8, 16};
    std::array<std::size_t, 2> conv2d_kernel{3, 3};
    std::array<std::size_t, 2> pool2d{3, 2};
    std::array<std::size_t, 2> dense_units{16, 8};
    double dropout_p = 0.3;
    double weight_decay = 1e-4;
    double learning_rate = 2e-4;
    double bn_momentum = 0.9;
    /// One conv1d weight set for all axes (false: one set per axis).
    bool shared_axis_weights = true;

    void validate() const;

    friend bool operator==(const HarnetConfig&, const HarnetConfig&) = default;
};

void to_json(nlohmann::json& j, const HarnetConfig& c);
void from_json(const nlohmann::json& j, HarnetConfig& c);

/// Per-axis affine input standardization, off unless fitted.
struct InputScaler {
    std::vector<double> mean;
    std::vector<double> inv_std;

    friend bool operator==(const InputScaler&, const InputScaler&) = default;
};

/// Builds the layer stack for a configuration. Layer order:
///   conv1d, conv1d, batchnorm, maxpool1d, concat-axes,
///   conv2d, conv2d, batchnorm, maxpool2d,
///   dropout, dense, relu, dropout, dense, relu, dropout, dense, softmax.
/// Throws std::invalid_argument naming the first stage that cannot accept
/// the configured input length.
Sequential build_harnet(const HarnetConfig& config, std::uint64_t seed);

/// Trained or freshly built model: topology, parameters, batchnorm running
/// statistics and (optionally) optimizer state.
class ModelBundle {
public:
    static constexpr std::string_view kMagic = "EBALNET1";
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelBundle() = default;
    static ModelBundle build(const HarnetConfig& config, std::uint64_t seed);

    const HarnetConfig& config() const noexcept { return config_; }
    const Sequential& network() const noexcept { return net_; }
    Sequential& network() noexcept { return net_; }

    std::optional<AdamState>& optimizer() noexcept { return optimizer_; }
    const std::optional<AdamState>& optimizer() const noexcept { return optimizer_; }
    std::optional<InputScaler>& scaler() noexcept { return scaler_; }
    const std::optional<InputScaler>& scaler() const noexcept { return scaler_; }

    /// Learnable scalars (batchnorm scale/shift included, running stats not).
    std::size_t param_count() const { return net_.param_count(); }

    /// x: [N, axes, input_length] -> class probabilities [N, C].
    Tensor predict(const Tensor& x, Mode mode, std::span<const RngStream> sample_rngs = {}) const;

    /// Deterministic part of the network (everything before the first
    /// dropout). trunk() followed by head() equals predict() bit for bit.
    Tensor trunk(const Tensor& x) const;
    Tensor head(const Tensor& features, Mode mode, std::span<const RngStream> sample_rngs) const;

    /// One optimizer step on a mini-batch with the fused softmax/cross-entropy
    /// gradient. Creates Adam state on first use. Returns the mean batch loss.
    double train_batch(const Tensor& x, std::span<const std::size_t> labels, std::span<const RngStream> sample_rngs);

    /// Rounds parameters, buffers and optimizer moments to float32, the
    /// precision of saved bundles, so that load(save(m)) == m.
    void round_to_storage();

    std::string serialize() const;
    static ModelBundle deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static ModelBundle load(const std::filesystem::path& path);

    friend bool operator==(const ModelBundle& a, const ModelBundle& b);

private:
    Tensor prepare_input(const Tensor& x) const;

    HarnetConfig config_;
    Sequential net_;
    std::optional<AdamState> optimizer_;
    std::optional<InputScaler> scaler_;
};

}  // namespace bal
