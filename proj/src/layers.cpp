#include "bal/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bal {

namespace {

constexpr std::string_view kKindNames[] = {
    "conv1d", "conv2d", "batchnorm", "maxpool1d", "maxpool2d",
    "dense",  "dropout", "relu",     "softmax",   "concat-axes",
};

[[noreturn]] void shape_mismatch(const LayerSpec& spec, const Shape& expected, const Shape& got) {
    throw ShapeError(std::string(to_string(spec.kind)) + ": expected input " + shape_str(expected) +
                     ", got " + shape_str(got));
}

[[noreturn]] void shape_mismatch(const LayerSpec& spec, const std::string& expected, const Shape& got) {
    throw ShapeError(std::string(to_string(spec.kind)) + ": expected input " + expected + ", got " +
                     shape_str(got));
}

void require_rank(const LayerSpec& spec, const Shape& in, std::size_t rank, const char* layout) {
    if (in.size() != rank) shape_mismatch(spec, layout, in);
}

void check_params(const LayerSpec& spec, std::span<const Tensor> params) {
    const auto shapes = spec.param_shapes();
    if (params.size() != shapes.size())
        throw ShapeError(std::string(to_string(spec.kind)) + ": expected " + std::to_string(shapes.size()) +
                         " parameter tensors, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < shapes.size(); ++i)
        if (params[i].shape() != shapes[i])
            throw ShapeError(std::string(to_string(spec.kind)) + ": parameter " + spec.param_names()[i] +
                             " expected " + shape_str(shapes[i]) + ", got " + shape_str(params[i].shape()));
}

std::size_t pad_before(std::size_t k) { return (k - 1) / 2; }

// ---- conv1d ---------------------------------------------------------------

ForwardResult conv1d_forward(const LayerSpec& s, std::span<const Tensor> p, const Tensor& x) {
    const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const std::size_t F = s.filters, K = s.kernel_w, G = s.axis_groups;
    const std::size_t pb = pad_before(K);
    Tensor y({B, F, L});
    const auto& w = p[0];
    const auto& bias = p[1];
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t g = b % G;
        const double* xb = &x[b * Cin * L];
        for (std::size_t f = 0; f < F; ++f) {
            double* yo = &y[(b * F + f) * L];
            std::fill(yo, yo + L, bias[g * F + f]);
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* xi = xb + ci * L;
                for (std::size_t k = 0; k < K; ++k) {
                    const double wv = w[((g * F + f) * Cin + ci) * K + k];
                    // y[l] += w * x[l + k - pb] for 0 <= l + k - pb < L
                    const std::size_t lo = pb > k ? pb - k : 0;
                    const std::size_t hi = std::min(L, L + pb - k);
                    for (std::size_t l = lo; l < hi; ++l) yo[l] += wv * xi[l + k - pb];
                }
            }
        }
    }
    ForwardResult r{std::move(y), {}};
    r.cache.input = x;
    return r;
}

BackwardResult conv1d_backward(const LayerSpec& s, std::span<const Tensor> p, const LayerCache& c,
                               const Tensor& gy) {
    const Tensor& x = c.input;
    const std::size_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const std::size_t F = s.filters, K = s.kernel_w, G = s.axis_groups;
    const std::size_t pb = pad_before(K);
    const auto& w = p[0];
    Tensor gx(x.shape());
    Tensor gw(w.shape());
    Tensor gb(p[1].shape());
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t g = b % G;
        const double* xb = &x[b * Cin * L];
        double* gxb = &gx[b * Cin * L];
        for (std::size_t f = 0; f < F; ++f) {
            const double* go = &gy[(b * F + f) * L];
            double acc = 0.0;
            for (std::size_t l = 0; l < L; ++l) acc += go[l];
            gb[g * F + f] += acc;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* xi = xb + ci * L;
                double* gxi = gxb + ci * L;
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t widx = ((g * F + f) * Cin + ci) * K + k;
                    const double wv = w[widx];
                    const std::size_t lo = pb > k ? pb - k : 0;
                    const std::size_t hi = std::min(L, L + pb - k);
                    double dw = 0.0;
                    for (std::size_t l = lo; l < hi; ++l) {
                        dw += go[l] * xi[l + k - pb];
                        gxi[l + k - pb] += wv * go[l];
                    }
                    gw[widx] += dw;
                }
            }
        }
    }
    BackwardResult r;
    r.grad_input = std::move(gx);
    r.grad_params.push_back(std::move(gw));
    r.grad_params.push_back(std::move(gb));
    return r;
}

// ---- conv2d ---------------------------------------------------------------

ForwardResult conv2d_forward(const LayerSpec& s, std::span<const Tensor> p, const Tensor& x) {
    const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = s.filters, KH = s.kernel_h, KW = s.kernel_w;
    const std::size_t ph = pad_before(KH), pw = pad_before(KW);
    const auto& w = p[0];
    const auto& bias = p[1];
    Tensor y({B, F, H, W});
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = &x[b * Cin * H * W];
        for (std::size_t f = 0; f < F; ++f) {
            double* yo = &y[(b * F + f) * H * W];
            std::fill(yo, yo + H * W, bias[f]);
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* xi = xb + ci * H * W;
                for (std::size_t kh = 0; kh < KH; ++kh) {
                    const std::size_t hlo = ph > kh ? ph - kh : 0;
                    const std::size_t hhi = std::min(H, H + ph - kh);
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        const double wv = w[((f * Cin + ci) * KH + kh) * KW + kw];
                        const std::size_t wlo = pw > kw ? pw - kw : 0;
                        const std::size_t whi = std::min(W, W + pw - kw);
                        for (std::size_t h = hlo; h < hhi; ++h) {
                            double* yr = yo + h * W;
                            const double* xr = xi + (h + kh - ph) * W;
                            for (std::size_t c = wlo; c < whi; ++c) yr[c] += wv * xr[c + kw - pw];
                        }
                    }
                }
            }
        }
    }
    ForwardResult r{std::move(y), {}};
    r.cache.input = x;
    return r;
}

BackwardResult conv2d_backward(const LayerSpec& s, std::span<const Tensor> p, const LayerCache& c,
                               const Tensor& gy) {
    const Tensor& x = c.input;
    const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = s.filters, KH = s.kernel_h, KW = s.kernel_w;
    const std::size_t ph = pad_before(KH), pw = pad_before(KW);
    const auto& w = p[0];
    Tensor gx(x.shape());
    Tensor gw(w.shape());
    Tensor gb(p[1].shape());
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = &x[b * Cin * H * W];
        double* gxb = &gx[b * Cin * H * W];
        for (std::size_t f = 0; f < F; ++f) {
            const double* go = &gy[(b * F + f) * H * W];
            double acc = 0.0;
            for (std::size_t i = 0; i < H * W; ++i) acc += go[i];
            gb[f] += acc;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* xi = xb + ci * H * W;
                double* gxi = gxb + ci * H * W;
                for (std::size_t kh = 0; kh < KH; ++kh) {
                    const std::size_t hlo = ph > kh ? ph - kh : 0;
                    const std::size_t hhi = std::min(H, H + ph - kh);
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        const std::size_t widx = ((f * Cin + ci) * KH + kh) * KW + kw;
                        const double wv = w[widx];
                        const std::size_t wlo = pw > kw ? pw - kw : 0;
                        const std::size_t whi = std::min(W, W + pw - kw);
                        double dw = 0.0;
                        for (std::size_t h = hlo; h < hhi; ++h) {
                            const double* gr = go + h * W;
                            const double* xr = xi + (h + kh - ph) * W;
                            double* gxr = gxi + (h + kh - ph) * W;
                            for (std::size_t col = wlo; col < whi; ++col) {
                                dw += gr[col] * xr[col + kw - pw];
                                gxr[col + kw - pw] += wv * gr[col];
                            }
                        }
                        gw[widx] += dw;
                    }
                }
            }
        }
    }
    BackwardResult r;
    r.grad_input = std::move(gx);
    r.grad_params.push_back(std::move(gw));
    r.grad_params.push_back(std::move(gb));
    return r;
}

// ---- batchnorm ------------------------------------------------------------

ForwardResult batchnorm_forward(const LayerSpec& s, std::span<const Tensor> p, std::span<const Tensor> buf,
                                const Tensor& x, Mode mode) {
    const std::size_t B = x.dim(0), C = x.dim(1);
    const std::size_t S = x.size() / (B * C);
    const auto& gamma = p[0];
    const auto& beta = p[1];
    Tensor y(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> aux(3 * C);  // batch mean, batch variance, inverse std used
    for (std::size_t c = 0; c < C; ++c) {
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* xc = &x[(b * C + c) * S];
                for (std::size_t i = 0; i < S; ++i) sum += xc[i];
            }
            mean = sum / static_cast<double>(B * S);
            double sq = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* xc = &x[(b * C + c) * S];
                for (std::size_t i = 0; i < S; ++i) {
                    const double d = xc[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(B * S);
        } else {
            mean = buf[0][c];
            var = buf[1][c];
        }
        const double inv_std = 1.0 / std::sqrt(var + s.bn_epsilon);
        aux[c] = mean;
        aux[C + c] = var;
        aux[2 * C + c] = inv_std;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
                const double n = (x[off + i] - mean) * inv_std;
                xhat[off + i] = n;
                y[off + i] = gamma[c] * n + beta[c];
            }
        }
    }
    ForwardResult r{std::move(y), {}};
    r.cache.normalized = std::move(xhat);
    r.cache.aux = std::move(aux);
    return r;
}

BackwardResult batchnorm_backward(const LayerSpec&, std::span<const Tensor> p, const LayerCache& c,
                                  const Tensor& gy) {
    const Tensor& xhat = c.normalized;
    const std::size_t B = xhat.dim(0), C = xhat.dim(1);
    const std::size_t S = xhat.size() / (B * C);
    const double M = static_cast<double>(B * S);
    const auto& gamma = p[0];
    Tensor gx(xhat.shape());
    Tensor ggamma({C});
    Tensor gbeta({C});
    for (std::size_t ch = 0; ch < C; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + ch) * S;
            for (std::size_t i = 0; i < S; ++i) {
                sum_g += gy[off + i];
                sum_gx += gy[off + i] * xhat[off + i];
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        const double inv_std = c.aux[2 * C + ch];
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + ch) * S;
            for (std::size_t i = 0; i < S; ++i) {
                if (c.mode == Mode::train) {
                    gx[off + i] = gamma[ch] * inv_std / M * (M * gy[off + i] - sum_g - xhat[off + i] * sum_gx);
                } else {
                    gx[off + i] = gamma[ch] * inv_std * gy[off + i];
                }
            }
        }
    }
    BackwardResult r;
    r.grad_input = std::move(gx);
    r.grad_params.push_back(std::move(ggamma));
    r.grad_params.push_back(std::move(gbeta));
    return r;
}

// ---- pooling --------------------------------------------------------------

ForwardResult maxpool2d_forward(std::size_t ph, std::size_t pw, const Tensor& x, const Shape& out_shape) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = out_shape[2], OW = out_shape[3];
    Tensor y(out_shape);
    std::vector<std::size_t> arg(y.size());
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const std::size_t base = bc * H * W;
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
                std::size_t best = base + oh * ph * W + ow * pw;
                for (std::size_t i = 0; i < ph; ++i)
                    for (std::size_t j = 0; j < pw; ++j) {
                        const std::size_t idx = base + (oh * ph + i) * W + ow * pw + j;
                        if (x[idx] > x[best]) best = idx;
                    }
                const std::size_t o = (bc * OH + oh) * OW + ow;
                y[o] = x[best];
                arg[o] = best;
            }
    }
    ForwardResult r{std::move(y), {}};
    r.cache.argmax = std::move(arg);
    r.cache.input = Tensor(x.shape());  // shape carrier for backward
    return r;
}

BackwardResult maxpool_backward(const LayerCache& c, const Tensor& gy) {
    Tensor gx(c.input.shape());
    for (std::size_t o = 0; o < gy.size(); ++o) gx[c.argmax[o]] += gy[o];
    return {std::move(gx), {}};
}

// ---- dense ----------------------------------------------------------------

ForwardResult dense_forward(const LayerSpec& s, std::span<const Tensor> p, const Tensor& x) {
    const std::size_t B = x.dim(0), In = s.in_features, U = s.units;
    const auto& w = p[0];
    const auto& bias = p[1];
    Tensor y({B, U});
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = &x[b * In];
        for (std::size_t u = 0; u < U; ++u) {
            const double* wu = &w[u * In];
            double acc = bias[u];
            for (std::size_t i = 0; i < In; ++i) acc += wu[i] * xb[i];
            y[b * U + u] = acc;
        }
    }
    ForwardResult r{std::move(y), {}};
    r.cache.input = x;
    return r;
}

BackwardResult dense_backward(const LayerSpec& s, std::span<const Tensor> p, const LayerCache& c,
                              const Tensor& gy) {
    const Tensor& x = c.input;
    const std::size_t B = x.dim(0), In = s.in_features, U = s.units;
    const auto& w = p[0];
    Tensor gx(x.shape());
    Tensor gw(w.shape());
    Tensor gb({U});
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = &x[b * In];
        double* gxb = &gx[b * In];
        for (std::size_t u = 0; u < U; ++u) {
            const double g = gy[b * U + u];
            gb[u] += g;
            double* gwu = &gw[u * In];
            const double* wu = &w[u * In];
            for (std::size_t i = 0; i < In; ++i) {
                gwu[i] += g * xb[i];
                gxb[i] += g * wu[i];
            }
        }
    }
    if (s.weight_decay != 0.0)
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += s.weight_decay * w[i];
    BackwardResult r;
    r.grad_input = std::move(gx);
    r.grad_params.push_back(std::move(gw));
    r.grad_params.push_back(std::move(gb));
    return r;
}

// ---- elementwise ----------------------------------------------------------

ForwardResult dropout_forward(const LayerSpec& s, const Tensor& x, Mode mode, std::span<const RngStream> rngs) {
    ForwardResult r{x, {}};
    if (mode == Mode::deterministic_eval) return r;
    const std::size_t B = x.dim(0);
    if (rngs.size() != B)
        throw std::invalid_argument("dropout: need one rng stream per batch row (" + std::to_string(B) +
                                    "), got " + std::to_string(rngs.size()));
    const std::size_t per = x.size() / B;
    const double keep_scale = 1.0 / (1.0 - s.dropout_p);
    std::vector<double> mask(x.size());
    for (std::size_t b = 0; b < B; ++b) {
        RngStream rng = rngs[b];
        for (std::size_t i = 0; i < per; ++i) {
            const double m = rng.uniform() >= s.dropout_p ? keep_scale : 0.0;
            mask[b * per + i] = m;
            r.output[b * per + i] *= m;
        }
    }
    r.cache.aux = std::move(mask);
    return r;
}

ForwardResult relu_forward(const Tensor& x) {
    ForwardResult r{x, {}};
    for (auto& v : r.output.data()) v = v > 0.0 ? v : 0.0;
    r.cache.input = x;
    return r;
}

ForwardResult softmax_forward(const Tensor& x) {
    const std::size_t B = x.dim(0), C = x.dim(1);
    Tensor y(x.shape());
    for (std::size_t b = 0; b < B; ++b) {
        const double* z = &x[b * C];
        const double m = *std::max_element(z, z + C);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double e = std::exp(z[c] - m);
            y[b * C + c] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < C; ++c) y[b * C + c] /= sum;
    }
    ForwardResult r{y, {}};
    r.cache.output = std::move(y);
    return r;
}

BackwardResult softmax_backward(const LayerCache& c, const Tensor& gy) {
    const Tensor& y = c.output;
    const std::size_t B = y.dim(0), C = y.dim(1);
    Tensor gx(y.shape());
    for (std::size_t b = 0; b < B; ++b) {
        double dot = 0.0;
        for (std::size_t k = 0; k < C; ++k) dot += gy[b * C + k] * y[b * C + k];
        for (std::size_t k = 0; k < C; ++k) gx[b * C + k] = y[b * C + k] * (gy[b * C + k] - dot);
    }
    return {std::move(gx), {}};
}

// [B*A, C, L] <-> [B, C, A, L]
Tensor axes_to_map(const Tensor& x, std::size_t A) {
    const std::size_t BA = x.dim(0), C = x.dim(1), L = x.dim(2), B = BA / A;
    Tensor y({B, C, A, L});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t c = 0; c < C; ++c)
                std::copy_n(&x[((b * A + a) * C + c) * L], L, &y[((b * C + c) * A + a) * L]);
    return y;
}

Tensor map_to_axes(const Tensor& g, const Shape& in_shape, std::size_t A) {
    const std::size_t C = in_shape[1], L = in_shape[2], B = in_shape[0] / A;
    Tensor gx(in_shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t c = 0; c < C; ++c)
                std::copy_n(&g[((b * C + c) * A + a) * L], L, &gx[((b * A + a) * C + c) * L]);
    return gx;
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

std::string_view to_string(LayerKind kind) { return kKindNames[static_cast<int>(kind)]; }

LayerKind parse_layer_kind(std::string_view name) {
    for (std::size_t i = 0; i < std::size(kKindNames); ++i)
        if (kKindNames[i] == name) return static_cast<LayerKind>(i);
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv1d(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                            std::size_t axis_groups) {
    LayerSpec s;
    s.kind = LayerKind::conv1d;
    s.in_channels = in_channels;
    s.filters = filters;
    s.kernel_w = kernel;
    s.axis_groups = axis_groups;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel_h,
                            std::size_t kernel_w) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_channels;
    s.filters = filters;
    s.kernel_h = kernel_h;
    s.kernel_w = kernel_w;
    return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels, double momentum, double epsilon) {
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    s.in_channels = channels;
    s.bn_momentum = momentum;
    s.bn_epsilon = epsilon;
    return s;
}

LayerSpec LayerSpec::maxpool1d(std::size_t size) {
    LayerSpec s;
    s.kind = LayerKind::maxpool1d;
    s.pool_w = size;
    return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t size_h, std::size_t size_w) {
    LayerSpec s;
    s.kind = LayerKind::maxpool2d;
    s.pool_h = size_h;
    s.pool_w = size_w;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t in_features, std::size_t units, double weight_decay) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_features = in_features;
    s.units = units;
    s.weight_decay = weight_decay;
    return s;
}

LayerSpec LayerSpec::dropout(double p) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.dropout_p = p;
    return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::softmax() {
    LayerSpec s;
    s.kind = LayerKind::softmax;
    return s;
}

LayerSpec LayerSpec::concat_axes(std::size_t axes) {
    LayerSpec s;
    s.kind = LayerKind::concat_axes;
    s.axis_groups = axes;
    return s;
}

void LayerSpec::validate() const {
    const std::string name(to_string(kind));
    auto positive = [&](std::size_t v, const char* what) {
        if (v == 0) throw std::invalid_argument(name + ": " + what + " must be >= 1");
    };
    switch (kind) {
        case LayerKind::conv1d:
            positive(in_channels, "in_channels");
            positive(filters, "filters");
            positive(kernel_w, "kernel");
            positive(axis_groups, "axis_groups");
            break;
        case LayerKind::conv2d:
            positive(in_channels, "in_channels");
            positive(filters, "filters");
            positive(kernel_h, "kernel height");
            positive(kernel_w, "kernel width");
            break;
        case LayerKind::batchnorm:
            positive(in_channels, "channels");
            if (!(bn_momentum >= 0.0 && bn_momentum < 1.0))
                throw std::invalid_argument(name + ": momentum must lie in [0, 1)");
            if (!(bn_epsilon > 0.0)) throw std::invalid_argument(name + ": epsilon must be positive");
            break;
        case LayerKind::maxpool1d:
            positive(pool_w, "pool size");
            break;
        case LayerKind::maxpool2d:
            positive(pool_h, "pool height");
            positive(pool_w, "pool width");
            break;
        case LayerKind::dense:
            positive(in_features, "in_features");
            positive(units, "units");
            if (!(weight_decay >= 0.0)) throw std::invalid_argument(name + ": weight decay must be >= 0");
            break;
        case LayerKind::dropout:
            if (!(dropout_p >= 0.0 && dropout_p < 1.0))
                throw std::invalid_argument(name + ": probability must lie in [0, 1), got " +
                                            std::to_string(dropout_p));
            break;
        case LayerKind::concat_axes:
            positive(axis_groups, "axes");
            break;
        case LayerKind::relu:
        case LayerKind::softmax:
            break;
    }
}

std::vector<Shape> LayerSpec::param_shapes() const {
    switch (kind) {
        case LayerKind::conv1d:
            return {{axis_groups, filters, in_channels, kernel_w}, {axis_groups, filters}};
        case LayerKind::conv2d:
            return {{filters, in_channels, kernel_h, kernel_w}, {filters}};
        case LayerKind::batchnorm:
            return {{in_channels}, {in_channels}};
        case LayerKind::dense:
            return {{units, in_features}, {units}};
        default:
            return {};
    }
}

std::vector<std::string> LayerSpec::param_names() const {
    switch (kind) {
        case LayerKind::conv1d:
        case LayerKind::conv2d:
        case LayerKind::dense:
            return {"weight", "bias"};
        case LayerKind::batchnorm:
            return {"gamma", "beta"};
        default:
            return {};
    }
}

std::vector<Shape> LayerSpec::buffer_shapes() const {
    if (kind == LayerKind::batchnorm) return {{in_channels}, {in_channels}};
    return {};
}

std::vector<std::string> LayerSpec::buffer_names() const {
    if (kind == LayerKind::batchnorm) return {"running_mean", "running_var"};
    return {};
}

std::size_t LayerSpec::param_count() const {
    std::size_t n = 0;
    for (const auto& s : param_shapes()) n += shape_size(s);
    return n;
}

Shape LayerSpec::output_shape(const Shape& in) const {
    if (in.empty() || in[0] == 0) shape_mismatch(*this, "with a non-empty batch dimension", in);
    switch (kind) {
        case LayerKind::conv1d:
            require_rank(*this, in, 3, "[B, Cin, L]");
            if (in[1] != in_channels) shape_mismatch(*this, Shape{in[0], in_channels, in[2]}, in);
            if (in[0] % axis_groups != 0)
                shape_mismatch(*this, "with batch divisible by " + std::to_string(axis_groups), in);
            if (kernel_w > in[2])
                shape_mismatch(*this, "with length >= kernel " + std::to_string(kernel_w), in);
            return {in[0], filters, in[2]};
        case LayerKind::conv2d:
            require_rank(*this, in, 4, "[B, Cin, H, W]");
            if (in[1] != in_channels) shape_mismatch(*this, Shape{in[0], in_channels, in[2], in[3]}, in);
            if (kernel_h > in[2] || kernel_w > in[3])
                shape_mismatch(*this,
                               "with spatial extents >= kernel " + std::to_string(kernel_h) + "x" +
                                   std::to_string(kernel_w),
                               in);
            return {in[0], filters, in[2], in[3]};
        case LayerKind::batchnorm:
            if (in.size() < 2 || in[1] != in_channels)
                shape_mismatch(*this, "[B, " + std::to_string(in_channels) + ", ...]", in);
            return in;
        case LayerKind::maxpool1d:
            require_rank(*this, in, 3, "[B, C, L]");
            if (pool_w > in[2]) shape_mismatch(*this, "with length >= pool " + std::to_string(pool_w), in);
            return {in[0], in[1], in[2] / pool_w};
        case LayerKind::maxpool2d:
            require_rank(*this, in, 4, "[B, C, H, W]");
            if (pool_h > in[2] || pool_w > in[3])
                shape_mismatch(*this,
                               "with spatial extents >= pool " + std::to_string(pool_h) + "x" +
                                   std::to_string(pool_w),
                               in);
            return {in[0], in[1], in[2] / pool_h, in[3] / pool_w};
        case LayerKind::dense: {
            const std::size_t features = shape_size(in) / in[0];
            if (features != in_features) shape_mismatch(*this, Shape{in[0], in_features}, in);
            return {in[0], units};
        }
        case LayerKind::dropout:
        case LayerKind::relu:
            return in;
        case LayerKind::softmax:
            require_rank(*this, in, 2, "[B, C]");
            return in;
        case LayerKind::concat_axes:
            require_rank(*this, in, 3, "[B * A, C, L]");
            if (in[0] % axis_groups != 0)
                shape_mismatch(*this, "with batch divisible by " + std::to_string(axis_groups), in);
            return {in[0] / axis_groups, in[1], axis_groups, in[2]};
    }
    return in;
}

ForwardResult layer_forward(const LayerSpec& spec, std::span<const Tensor> params,
                            std::span<const Tensor> buffers, const Tensor& input, Mode mode,
                            std::span<const RngStream> sample_rngs) {
    const Shape out_shape = spec.output_shape(input.shape());
    check_params(spec, params);
    ForwardResult r;
    switch (spec.kind) {
        case LayerKind::conv1d:
            r = conv1d_forward(spec, params, input);
            break;
        case LayerKind::conv2d:
            r = conv2d_forward(spec, params, input);
            break;
        case LayerKind::batchnorm:
            if (buffers.size() != 2) throw ShapeError("batchnorm: running statistics missing");
            r = batchnorm_forward(spec, params, buffers, input, mode);
            break;
        case LayerKind::maxpool1d: {
            Tensor as2d = input.reshaped({input.dim(0), input.dim(1), 1, input.dim(2)});
            r = maxpool2d_forward(1, spec.pool_w, as2d, {out_shape[0], out_shape[1], 1, out_shape[2]});
            r.output = std::move(r.output).reshaped(out_shape);
            r.cache.input = Tensor(input.shape());
            break;
        }
        case LayerKind::maxpool2d:
            r = maxpool2d_forward(spec.pool_h, spec.pool_w, input, out_shape);
            break;
        case LayerKind::dense:
            r = dense_forward(spec, params, input);
            break;
        case LayerKind::dropout:
            r = dropout_forward(spec, input, mode, sample_rngs);
            break;
        case LayerKind::relu:
            r = relu_forward(input);
            break;
        case LayerKind::softmax:
            r = softmax_forward(input);
            break;
        case LayerKind::concat_axes:
            r.output = axes_to_map(input, spec.axis_groups);
            r.cache.input = Tensor(input.shape());
            break;
    }
    r.cache.kind = spec.kind;
    r.cache.mode = mode;
    return r;
}

BackwardResult layer_backward(const LayerSpec& spec, std::span<const Tensor> params, const LayerCache& cache,
                              const Tensor& grad_output) {
    if (cache.kind != spec.kind)
        throw std::invalid_argument("backward: cache from a " + std::string(to_string(cache.kind)) +
                                    " layer passed to a " + std::string(to_string(spec.kind)) + " layer");
    check_params(spec, params);
    switch (spec.kind) {
        case LayerKind::conv1d:
            return conv1d_backward(spec, params, cache, grad_output);
        case LayerKind::conv2d:
            return conv2d_backward(spec, params, cache, grad_output);
        case LayerKind::batchnorm:
            return batchnorm_backward(spec, params, cache, grad_output);
        case LayerKind::maxpool1d:
        case LayerKind::maxpool2d:
            return maxpool_backward(cache, grad_output);
        case LayerKind::dense:
            return dense_backward(spec, params, cache, grad_output);
        case LayerKind::dropout: {
            BackwardResult r{grad_output, {}};
            if (!cache.aux.empty())
                for (std::size_t i = 0; i < r.grad_input.size(); ++i) r.grad_input[i] *= cache.aux[i];
            return r;
        }
        case LayerKind::relu: {
            BackwardResult r{grad_output, {}};
            for (std::size_t i = 0; i < r.grad_input.size(); ++i)
                if (!(cache.input[i] > 0.0)) r.grad_input[i] = 0.0;
            return r;
        }
        case LayerKind::softmax:
            return softmax_backward(cache, grad_output);
        case LayerKind::concat_axes:
            return {map_to_axes(grad_output, cache.input.shape(), spec.axis_groups), {}};
    }
    return {};
}

std::vector<Tensor> init_params(const LayerSpec& spec, RngStream& rng) {
    std::vector<Tensor> out;
    for (const auto& s : spec.param_shapes()) out.emplace_back(s);
    auto glorot = [&](Tensor& w, std::size_t fan_in, std::size_t fan_out) {
        const double lim = glorot_limit(fan_in, fan_out);
        for (auto& v : w.data()) v = rng.uniform(-lim, lim);
    };
    switch (spec.kind) {
        case LayerKind::conv1d:
            glorot(out[0], spec.in_channels * spec.kernel_w, spec.filters * spec.kernel_w);
            break;
        case LayerKind::conv2d: {
            const std::size_t area = spec.kernel_h * spec.kernel_w;
            glorot(out[0], spec.in_channels * area, spec.filters * area);
            break;
        }
        case LayerKind::dense:
            glorot(out[0], spec.in_features, spec.units);
            break;
        case LayerKind::batchnorm:
            out[0].fill(1.0);
            break;
        default:
            break;
    }
    return out;
}

std::vector<Tensor> init_buffers(const LayerSpec& spec) {
    if (spec.kind != LayerKind::batchnorm) return {};
    return {Tensor({spec.in_channels}, 0.0), Tensor({spec.in_channels}, 1.0)};
}

void update_running_stats(const LayerSpec& spec, std::span<Tensor> buffers, const LayerCache& cache) {
    if (spec.kind != LayerKind::batchnorm || cache.mode != Mode::train) return;
    const std::size_t C = spec.in_channels;
    const double m = spec.bn_momentum;
    for (std::size_t c = 0; c < C; ++c) {
        buffers[0][c] = m * buffers[0][c] + (1.0 - m) * cache.aux[c];
        buffers[1][c] = m * buffers[1][c] + (1.0 - m) * cache.aux[C + c];
    }
}

}  // namespace bal
