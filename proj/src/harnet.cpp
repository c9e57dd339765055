#include "bal/harnet.hpp"

#include <cmath>
#include <stdexcept>

#include "bal/binio.hpp"

namespace bal {

void HarnetConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw std::invalid_argument(std::string("model config: ") + what + " must be >= 1");
    };
    positive(input_length, "input_length");
    positive(num_axes, "num_axes");
    if (num_classes < 2) throw std::invalid_argument("model config: num_classes must be >= 2");
    for (auto f : conv1d_filters) positive(f, "conv1d_filters");
    for (auto f : conv2d_filters) positive(f, "conv2d_filters");
    for (auto u : dense_units) positive(u, "dense_units");
    positive(conv1d_kernel, "conv1d_kernel");
    positive(pool1d, "pool1d");
    positive(conv2d_kernel[0], "conv2d_kernel");
    positive(conv2d_kernel[1], "conv2d_kernel");
    positive(pool2d[0], "pool2d");
    positive(pool2d[1], "pool2d");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("model config: dropout_p must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("model config: weight_decay must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("model config: learning_rate must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0))
        throw std::invalid_argument("model config: bn_momentum must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const HarnetConfig& c) {
    j = nlohmann::json{
        {"input_length", c.input_length},
        {"num_axes", c.num_axes},
        {"num_classes", c.num_classes},
        {"conv1d_filters", c.conv1d_filters},
        {"conv1d_kernel", c.conv1d_kernel},
        {"pool1d", c.pool1d},
        {"conv2d_filters", c.conv2d_filters},
        {"conv2d_kernel", c.conv2d_kernel},
        {"pool2d", c.pool2d},
        {"dense_units", c.dense_units},
        {"dropout_p", c.dropout_p},
        {"weight_decay", c.weight_decay},
        {"learning_rate", c.learning_rate},
        {"bn_momentum", c.bn_momentum},
        {"shared_axis_weights", c.shared_axis_weights},
    };
}

void from_json(const nlohmann::json& j, HarnetConfig& c) {
    HarnetConfig d;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("input_length", d.input_length);
    get("num_axes", d.num_axes);
    get("num_classes", d.num_classes);
    get("conv1d_filters", d.conv1d_filters);
    get("conv1d_kernel", d.conv1d_kernel);
    get("pool1d", d.pool1d);
    get("conv2d_filters", d.conv2d_filters);
    get("conv2d_kernel", d.conv2d_kernel);
    get("pool2d", d.pool2d);
    get("dense_units", d.dense_units);
    get("dropout_p", d.dropout_p);
    get("weight_decay", d.weight_decay);
    get("learning_rate", d.learning_rate);
    get("bn_momentum", d.bn_momentum);
    get("shared_axis_weights", d.shared_axis_weights);
    c = d;
}

Sequential build_harnet(const HarnetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t groups = cfg.shared_axis_weights ? 1 : cfg.num_axes;
    std::vector<LayerSpec> specs = {
        LayerSpec::conv1d(1, cfg.conv1d_filters[0], cfg.conv1d_kernel, groups),
        LayerSpec::conv1d(cfg.conv1d_filters[0], cfg.conv1d_filters[1], cfg.conv1d_kernel, groups),
        LayerSpec::batchnorm(cfg.conv1d_filters[1], cfg.bn_momentum),
        LayerSpec::maxpool1d(cfg.pool1d),
        LayerSpec::concat_axes(cfg.num_axes),
        LayerSpec::conv2d(cfg.conv1d_filters[1], cfg.conv2d_filters[0], cfg.conv2d_kernel[0], cfg.conv2d_kernel[1]),
        LayerSpec::conv2d(cfg.conv2d_filters[0], cfg.conv2d_filters[1], cfg.conv2d_kernel[0], cfg.conv2d_kernel[1]),
        LayerSpec::batchnorm(cfg.conv2d_filters[1], cfg.bn_momentum),
        LayerSpec::maxpool2d(cfg.pool2d[0], cfg.pool2d[1]),
    };

    // Walk a single-sample shape through the convolutional stages to size the
    // first dense layer and to report the stage that rejects the input length.
    Shape shape{cfg.num_axes, 1, cfg.input_length};
    for (std::size_t i = 0; i < specs.size(); ++i) {
        try {
            shape = specs[i].output_shape(shape);
        } catch (const ShapeError& e) {
            throw std::invalid_argument("input_length " + std::to_string(cfg.input_length) +
                                        " too small for the pooling chain at stage " + std::to_string(i) + " (" +
                                        std::string(to_string(specs[i].kind)) + "): " + e.what());
        }
    }
    const std::size_t flat = shape_size(shape);
    if (flat == 0) throw std::invalid_argument("model config: flatten dimension is zero");

    const double p = cfg.dropout_p;
    const double wd = cfg.weight_decay;
    specs.push_back(LayerSpec::dropout(p));
    specs.push_back(LayerSpec::dense(flat, cfg.dense_units[0], wd));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::dropout(p));
    specs.push_back(LayerSpec::dense(cfg.dense_units[0], cfg.dense_units[1], wd));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::dropout(p));
    specs.push_back(LayerSpec::dense(cfg.dense_units[1], cfg.num_classes, wd));
    specs.push_back(LayerSpec::softmax());

    RngStream root(seed, hash_name("harnet.init"));
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        specs[i].validate();
        RngStream rng = root.derive(i);
        layers.push_back(Layer{specs[i], init_params(specs[i], rng), init_buffers(specs[i])});
    }
    return Sequential(std::move(layers));
}

ModelBundle ModelBundle::build(const HarnetConfig& config, std::uint64_t seed) {
    ModelBundle b;
    b.config_ = config;
    b.net_ = build_harnet(config, seed);
    return b;
}

Tensor ModelBundle::prepare_input(const Tensor& x) const {
    const std::size_t A = config_.num_axes, L = config_.input_length;
    if (x.rank() != 3 || x.dim(1) != A || x.dim(2) != L)
        throw ShapeError("model input: expected [N, " + std::to_string(A) + ", " + std::to_string(L) + "], got " +
                         shape_str(x.shape()));
    Tensor in = x;
    if (scaler_) {
        for (std::size_t n = 0; n < x.dim(0); ++n)
            for (std::size_t a = 0; a < A; ++a) {
                double* row = &in[(n * A + a) * L];
                for (std::size_t l = 0; l < L; ++l) row[l] = (row[l] - scaler_->mean[a]) * scaler_->inv_std[a];
            }
    }
    return std::move(in).reshaped({x.dim(0) * A, 1, L});
}

Tensor ModelBundle::predict(const Tensor& x, Mode mode, std::span<const RngStream> sample_rngs) const {
    return net_.forward(prepare_input(x), mode, sample_rngs, 0, net_.size());
}

Tensor ModelBundle::trunk(const Tensor& x) const {
    return net_.forward(prepare_input(x), Mode::deterministic_eval, {}, 0, net_.first_stochastic_layer());
}

Tensor ModelBundle::head(const Tensor& features, Mode mode, std::span<const RngStream> sample_rngs) const {
    if (mode == Mode::train) throw std::invalid_argument("head: train mode is not supported on a split forward");
    return net_.forward(features, mode, sample_rngs, net_.first_stochastic_layer(), net_.size());
}

double ModelBundle::train_batch(const Tensor& x, std::span<const std::size_t> labels,
                                std::span<const RngStream> sample_rngs) {
    const std::size_t N = x.dim(0), C = config_.num_classes;
    if (labels.size() != N) throw std::invalid_argument("train_batch: label count does not match batch size");
    const std::size_t softmax_index = net_.size() - 1;
    auto trace = net_.forward_trace(prepare_input(x), Mode::train, sample_rngs, 0, softmax_index);
    const Tensor probs = layer_forward(net_.layer(softmax_index).spec, {}, {}, trace.output, Mode::train).output;

    Tensor grad(probs.shape());
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n) {
        if (labels[n] >= C) throw std::out_of_range("train_batch: label outside class range");
        std::span<const double> row(&probs[n * C], C);
        loss += cross_entropy(row, labels[n]);
        std::span<double> g(&grad[n * C], C);
        softmax_cross_entropy_grad(row, labels[n], g);
        for (auto& v : g) v *= scale;
    }
    auto grads = net_.backward(trace, grad);
    net_.commit_running_stats(trace);

    auto params = net_.parameter_tensors();
    if (!optimizer_) {
        std::vector<const Tensor*> cp(params.begin(), params.end());
        optimizer_ = AdamState::for_params(cp, config_.learning_rate);
    }
    const auto names = net_.parameter_names();
    adam_step(*optimizer_, params, grads, names);
    return loss * scale;
}

namespace {

std::string layer_prefix(const Sequential& net, std::size_t i) {
    return "layers." + std::to_string(i) + "." + std::string(to_string(net.layer(i).spec.kind)) + ".";
}

}  // namespace

std::string ModelBundle::serialize() const {
    nlohmann::json header;
    header["config"] = config_;
    if (optimizer_) {
        header["optimizer"] = {{"kind", "adam"},
                               {"step", optimizer_->step},
                               {"learning_rate", optimizer_->learning_rate},
                               {"beta1", optimizer_->beta1},
                               {"beta2", optimizer_->beta2},
                               {"epsilon", optimizer_->epsilon}};
    } else {
        header["optimizer"] = nullptr;
    }
    if (scaler_) {
        header["input_scaler"] = {{"mean", scaler_->mean}, {"inv_std", scaler_->inv_std}};
    } else {
        header["input_scaler"] = nullptr;
    }

    BinaryWriter w(kMagic, kFormatVersion, header.dump());
    const auto names = net_.parameter_names();
    const auto params = net_.parameter_tensors();
    for (std::size_t i = 0; i < params.size(); ++i) w.tensor(names[i], *params[i]);
    for (std::size_t i = 0; i < net_.size(); ++i) {
        const auto bnames = net_.layer(i).spec.buffer_names();
        for (std::size_t k = 0; k < bnames.size(); ++k)
            w.tensor(layer_prefix(net_, i) + bnames[k], net_.layer(i).buffers[k]);
    }
    if (optimizer_) {
        for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.m." + names[i], optimizer_->first_moment[i]);
        for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.v." + names[i], optimizer_->second_moment[i]);
    }
    return std::move(w).finish();
}

ModelBundle ModelBundle::deserialize(std::string_view bytes) {
    const Container c = Container::parse(bytes, kMagic, kFormatVersion);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(c.header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorCode::malformed, std::string("model header: ") + e.what());
    }

    ModelBundle b;
    try {
        b.config_ = header.at("config").get<HarnetConfig>();
        b.net_ = build_harnet(b.config_, 0);
    } catch (const std::exception& e) {
        throw FormatError(FormatErrorCode::malformed, std::string("model config: ") + e.what());
    }

    auto assign = [&](Tensor& dst, const std::string& name) {
        const Tensor& src = c.get(name);
        if (src.shape() != dst.shape())
            throw FormatError(FormatErrorCode::malformed, "tensor '" + name + "' has shape " + shape_str(src.shape()) +
                                                              ", expected " + shape_str(dst.shape()));
        dst = src;
    };

    const auto names = b.net_.parameter_names();
    auto params = b.net_.parameter_tensors();
    for (std::size_t i = 0; i < params.size(); ++i) assign(*params[i], names[i]);
    for (std::size_t i = 0; i < b.net_.size(); ++i) {
        auto& layer = b.net_.layer(i);
        const auto bnames = layer.spec.buffer_names();
        for (std::size_t k = 0; k < bnames.size(); ++k) assign(layer.buffers[k], layer_prefix(b.net_, i) + bnames[k]);
    }

    const auto& opt = header.at("optimizer");
    if (!opt.is_null()) {
        std::vector<const Tensor*> cp(params.begin(), params.end());
        AdamState s = AdamState::for_params(cp);
        s.step = opt.at("step").get<std::uint64_t>();
        s.learning_rate = opt.at("learning_rate").get<double>();
        s.beta1 = opt.at("beta1").get<double>();
        s.beta2 = opt.at("beta2").get<double>();
        s.epsilon = opt.at("epsilon").get<double>();
        for (std::size_t i = 0; i < params.size(); ++i) {
            assign(s.first_moment[i], "adam.m." + names[i]);
            assign(s.second_moment[i], "adam.v." + names[i]);
        }
        b.optimizer_ = std::move(s);
    }
    const auto& sc = header.at("input_scaler");
    if (!sc.is_null()) {
        InputScaler scaler{sc.at("mean").get<std::vector<double>>(), sc.at("inv_std").get<std::vector<double>>()};
        if (scaler.mean.size() != b.config_.num_axes || scaler.inv_std.size() != b.config_.num_axes)
            throw FormatError(FormatErrorCode::malformed, "input scaler does not match the axis count");
        b.scaler_ = std::move(scaler);
    }
    return b;
}

void ModelBundle::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

ModelBundle ModelBundle::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

void ModelBundle::round_to_storage() {
    auto round = [](Tensor& t) {
        for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    };
    for (auto& layer : net_.layers()) {
        for (auto& t : layer.params) round(t);
        for (auto& t : layer.buffers) round(t);
    }
    if (optimizer_) {
        for (auto& t : optimizer_->first_moment) round(t);
        for (auto& t : optimizer_->second_moment) round(t);
    }
}

bool operator==(const ModelBundle& a, const ModelBundle& b) {
    return a.config_ == b.config_ && a.net_ == b.net_ && a.optimizer_ == b.optimizer_ && a.scaler_ == b.scaler_;
}

}  // namespace bal
