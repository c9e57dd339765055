#include "bal/signal.hpp"

#include <cmath>
#include <stdexcept>

namespace bal {

std::size_t window_samples(double window_seconds, double rate_hz) {
    if (!(rate_hz > 0.0) || !(window_seconds > 0.0))
        throw std::invalid_argument("window_samples: rate and duration must be positive");
    return static_cast<std::size_t>(std::llround(window_seconds * rate_hz));
}

std::vector<SensorWindow> segment(std::span<const Sample> stream, double window_seconds, double rate_hz,
                                  const std::string& user_id, const std::string& device_id) {
    const std::size_t len = window_samples(window_seconds, rate_hz);
    std::vector<SensorWindow> out;
    if (len == 0) return out;
    for (std::size_t start = 0; start + len <= stream.size(); start += len) {
        const auto label = stream[start].label;
        bool pure = true;
        for (std::size_t i = start; i < start + len && pure; ++i) pure = stream[i].label == label;
        if (!pure) continue;
        SensorWindow w;
        w.rate_hz = rate_hz;
        w.user_id = user_id;
        w.device_id = device_id;
        w.label = label;
        for (auto& a : w.axes) a.reserve(len);
        for (std::size_t i = start; i < start + len; ++i) {
            w.axes[0].push_back(stream[i].x);
            w.axes[1].push_back(stream[i].y);
            w.axes[2].push_back(stream[i].z);
        }
        out.push_back(std::move(w));
    }
    return out;
}

namespace {

std::vector<double> block_average(const std::vector<double>& x, std::size_t k) {
    std::vector<double> y(x.size() / k);
    for (std::size_t j = 0; j < y.size(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += x[j * k + i];
        y[j] = s / static_cast<double>(k);
    }
    return y;
}

std::vector<double> interpolate(const std::vector<double>& x, double ratio, std::size_t n) {
    std::vector<double> y(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double pos = static_cast<double>(j) * ratio;
        const auto i = static_cast<std::size_t>(pos);
        const double f = pos - static_cast<double>(i);
        y[j] = i + 1 < x.size() ? x[i] + f * (x[i + 1] - x[i]) : x[i];
    }
    return y;
}

}  // namespace

SensorWindow decimate(const SensorWindow& window, double target_hz) {
    if (!(target_hz > 0.0)) throw std::invalid_argument("decimate: target rate must be positive");
    if (target_hz > window.rate_hz * (1.0 + 1e-12))
        throw std::invalid_argument("decimate: upsampling from " + std::to_string(window.rate_hz) + " Hz to " +
                                    std::to_string(target_hz) + " Hz is not supported");
    const double ratio = window.rate_hz / target_hz;
    const double k = std::round(ratio);
    SensorWindow out = window;
    out.rate_hz = target_hz;
    if (std::abs(ratio - k) < 1e-9) {
        if (k == 1.0) return out;
        for (std::size_t a = 0; a < 3; ++a) out.axes[a] = block_average(window.axes[a], static_cast<std::size_t>(k));
    } else {
        const auto n = static_cast<std::size_t>(
            std::floor(static_cast<double>(window.length()) * target_hz / window.rate_hz + 1e-9));
        for (std::size_t a = 0; a < 3; ++a) out.axes[a] = interpolate(window.axes[a], ratio, n);
    }
    return out;
}

std::vector<double> haar_approx(std::span<const double> x) {
    if (x.size() < 2) throw std::invalid_argument("dwt_approx: window needs at least 2 samples");
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    std::vector<double> a(x.size() / 2);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = (x[2 * k] + x[2 * k + 1]) * inv_sqrt2;
    return a;
}

FeatureWindow dwt_approx(const SensorWindow& window) {
    FeatureWindow f;
    for (std::size_t a = 0; a < 3; ++a) f.coefficients[a] = haar_approx(window.axes[a]);
    f.source_rate_hz = window.rate_hz;
    f.user_id = window.user_id;
    f.device_id = window.device_id;
    f.label = window.label;
    return f;
}

Tensor to_tensor(std::span<const FeatureWindow> windows) {
    if (windows.empty()) throw std::invalid_argument("to_tensor: no windows");
    const std::size_t len = windows[0].length();
    Tensor t({windows.size(), 3, len});
    for (std::size_t n = 0; n < windows.size(); ++n)
        for (std::size_t a = 0; a < 3; ++a) {
            const auto& c = windows[n].coefficients[a];
            if (c.size() != len)
                throw ShapeError("to_tensor: window " + std::to_string(n) + " has length " +
                                 std::to_string(c.size()) + ", expected " + std::to_string(len));
            std::copy(c.begin(), c.end(), &t[(n * 3 + a) * len]);
        }
    return t;
}

AxisStats fit_axis_stats(const Tensor& features) {
    if (features.rank() != 3) throw ShapeError("fit_axis_stats: expected [N, axes, L], got " + shape_str(features.shape()));
    const std::size_t N = features.dim(0), A = features.dim(1), L = features.dim(2);
    AxisStats s{std::vector<double>(A, 0.0), std::vector<double>(A, 1.0)};
    const double count = static_cast<double>(N * L);
    for (std::size_t a = 0; a < A; ++a) {
        double sum = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t l = 0; l < L; ++l) sum += features[(n * A + a) * L + l];
        const double mean = sum / count;
        double var = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t l = 0; l < L; ++l) {
                const double d = features[(n * A + a) * L + l] - mean;
                var += d * d;
            }
        var /= count;
        s.mean[a] = mean;
        s.inv_std[a] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return s;
}

}  // namespace bal
