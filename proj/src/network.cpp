#include "bal/network.hpp"

#include <stdexcept>

namespace bal {

namespace {

std::vector<RngStream> layer_streams(std::span<const RngStream> sample_rngs, std::size_t layer_index) {
    std::vector<RngStream> out;
    out.reserve(sample_rngs.size());
    for (const auto& r : sample_rngs) out.push_back(r.derive(layer_index));
    return out;
}

void check_range(const Sequential& net, std::size_t begin, std::size_t end) {
    if (begin > end || end > net.size())
        throw std::out_of_range("layer range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside a network of " + std::to_string(net.size()) + " layers");
}

}  // namespace

bool operator==(const Layer& a, const Layer& b) {
    return a.spec == b.spec && a.params == b.params && a.buffers == b.buffers;
}

bool operator==(const Sequential& a, const Sequential& b) { return a.layers_ == b.layers_; }

Tensor Sequential::forward(const Tensor& x, Mode mode, std::span<const RngStream> sample_rngs, std::size_t begin,
                           std::size_t end) const {
    check_range(*this, begin, end);
    Tensor h = x;
    for (std::size_t i = begin; i < end; ++i) {
        const Layer& l = layers_[i];
        std::vector<RngStream> rngs;
        if (l.spec.kind == LayerKind::dropout && mode != Mode::deterministic_eval)
            rngs = layer_streams(sample_rngs, i);
        h = layer_forward(l.spec, l.params, l.buffers, h, mode, rngs).output;
    }
    return h;
}

ForwardTrace Sequential::forward_trace(const Tensor& x, Mode mode, std::span<const RngStream> sample_rngs,
                                       std::size_t begin, std::size_t end) const {
    check_range(*this, begin, end);
    ForwardTrace t;
    t.begin = begin;
    t.caches.reserve(end - begin);
    Tensor h = x;
    for (std::size_t i = begin; i < end; ++i) {
        const Layer& l = layers_[i];
        std::vector<RngStream> rngs;
        if (l.spec.kind == LayerKind::dropout && mode != Mode::deterministic_eval)
            rngs = layer_streams(sample_rngs, i);
        auto r = layer_forward(l.spec, l.params, l.buffers, h, mode, rngs);
        t.caches.push_back(std::move(r.cache));
        h = std::move(r.output);
    }
    t.output = std::move(h);
    return t;
}

std::vector<Tensor> Sequential::backward(const ForwardTrace& trace, const Tensor& grad_output) const {
    std::vector<std::vector<Tensor>> per_layer(layers_.size());
    Tensor g = grad_output;
    for (std::size_t k = trace.caches.size(); k-- > 0;) {
        const std::size_t i = trace.begin + k;
        auto r = layer_backward(layers_[i].spec, layers_[i].params, trace.caches[k], g);
        per_layer[i] = std::move(r.grad_params);
        g = std::move(r.grad_input);
    }
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (per_layer[i].empty()) {
            for (const auto& p : layers_[i].params) grads.emplace_back(p.shape(), 0.0);
        } else {
            for (auto& gp : per_layer[i]) grads.push_back(std::move(gp));
        }
    }
    return grads;
}

void Sequential::commit_running_stats(const ForwardTrace& trace) {
    for (std::size_t k = 0; k < trace.caches.size(); ++k) {
        Layer& l = layers_[trace.begin + k];
        update_running_stats(l.spec, l.buffers, trace.caches[k]);
    }
}

std::vector<Tensor*> Sequential::parameter_tensors() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (auto& p : l.params) out.push_back(&p);
    return out;
}

std::vector<const Tensor*> Sequential::parameter_tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers_)
        for (const auto& p : l.params) out.push_back(&p);
    return out;
}

std::vector<std::string> Sequential::parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        for (const auto& n : layers_[i].spec.param_names())
            out.push_back("layers." + std::to_string(i) + "." + std::string(to_string(layers_[i].spec.kind)) +
                          "." + n);
    return out;
}

std::size_t Sequential::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.spec.param_count();
    return n;
}

std::size_t Sequential::first_stochastic_layer() const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].spec.kind == LayerKind::dropout) return i;
    return layers_.size();
}

}  // namespace bal
