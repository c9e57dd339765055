#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bal/tensor.hpp"

namespace bal {

/// One timestamped accelerometer reading.
struct Sample {
    double t = 0.0;
    double x = 0.0, y = 0.0, z = 0.0;
    std::optional<std::size_t> label;
};

/// Fixed-rate 3-axis segment.
struct SensorWindow {
    std::array<std::vector<double>, 3> axes;
    double rate_hz = 0.0;
    std::string user_id;
    std::string device_id;
    std::optional<std::size_t> label;

    std::size_t length() const noexcept { return axes[0].size(); }
};

/// Approximate DWT coefficients per axis, plus source metadata.
struct FeatureWindow {
    std::array<std::vector<double>, 3> coefficients;
    double source_rate_hz = 0.0;
    std::string user_id;
    std::string device_id;
    std::optional<std::size_t> label;

    std::size_t length() const noexcept { return coefficients[0].size(); }
};

/// Samples per window: round(window_seconds * rate_hz).
std::size_t window_samples(double window_seconds, double rate_hz);

/// Cuts a time-sorted stream into consecutive non-overlapping windows of
/// window_samples(window_seconds, rate_hz). The trailing partial window is
/// dropped. Windows whose samples do not all share one label are dropped;
/// an unlabeled window is kept only if every sample is unlabeled.
std::vector<SensorWindow> segment(std::span<const Sample> stream, double window_seconds, double rate_hz,
                                  const std::string& user_id = {}, const std::string& device_id = {});

/// Down-samples to target_hz. Integer ratios k average blocks of k samples
/// (moving average of width k, then every k-th sample); other ratios use
/// linear interpolation onto the target grid. Output length is
/// floor(length * target / rate). Throws std::invalid_argument on upsampling.
SensorWindow decimate(const SensorWindow& window, double target_hz);

/// Single-level orthonormal Haar approximation: a_k = (x_2k + x_2k+1) / sqrt 2.
/// An odd final sample is dropped. Throws std::invalid_argument below 2 samples.
std::vector<double> haar_approx(std::span<const double> x);

FeatureWindow dwt_approx(const SensorWindow& window);

/// Stacks windows into a model input tensor [N, 3, L]. All windows must have
/// the same length.
Tensor to_tensor(std::span<const FeatureWindow> windows);

/// Per-axis mean and 1/std over a feature tensor [N, 3, L].
struct AxisStats {
    std::vector<double> mean;
    std::vector<double> inv_std;
};
AxisStats fit_axis_stats(const Tensor& features);

}  // namespace bal
