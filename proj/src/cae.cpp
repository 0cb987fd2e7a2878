#include "tempo/cae.hpp"

#include "tempo/binary_io.hpp"
#include "tempo/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace tempo {

namespace {

constexpr std::string_view model_magic = "CAE1";
constexpr std::uint16_t model_version = 1;

template <typename Derived>
Eigen::MatrixXd activate(const Eigen::MatrixBase<Derived>& a, Activation act) {
    switch (act) {
    case Activation::identity: return a;
    case Activation::sigmoid: return (1.0 / (1.0 + (-a.array()).exp())).matrix();
    case Activation::tanh: return a.array().tanh().matrix();
    }
    return a;
}

// First derivative expressed through the activation output h.
template <typename Derived>
Eigen::MatrixXd slope(const Eigen::MatrixBase<Derived>& h, Activation act) {
    switch (act) {
    case Activation::identity: return Eigen::MatrixXd::Ones(h.rows(), h.cols());
    case Activation::sigmoid: return (h.array() * (1.0 - h.array())).matrix();
    case Activation::tanh: return (1.0 - h.array().square()).matrix();
    }
    return Eigen::MatrixXd::Ones(h.rows(), h.cols());
}

// Second derivative expressed through the activation output h.
template <typename Derived>
Eigen::MatrixXd curvature(const Eigen::MatrixBase<Derived>& h, Activation act) {
    switch (act) {
    case Activation::identity: return Eigen::MatrixXd::Zero(h.rows(), h.cols());
    case Activation::sigmoid: return (h.array() * (1.0 - h.array()) * (1.0 - 2.0 * h.array())).matrix();
    case Activation::tanh: return (-2.0 * h.array() * (1.0 - h.array().square())).matrix();
    }
    return Eigen::MatrixXd::Zero(h.rows(), h.cols());
}

Eigen::MatrixXd forward_layer(const DenseLayer& layer, const Eigen::MatrixXd& in) {
    Eigen::MatrixXd a = layer.weight * in;
    a.colwise() += layer.bias;
    return activate(a, layer.activation);
}

// Activations h_0 (input) .. h_n for a stack of layers.
std::vector<Eigen::MatrixXd> forward_stack(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& in) {
    std::vector<Eigen::MatrixXd> hs;
    hs.reserve(layers.size() + 1);
    hs.push_back(in);
    for (const auto& layer : layers) {
        hs.push_back(forward_layer(layer, hs.back()));
    }
    return hs;
}

void check_input(const CaeModel& m, Eigen::Index rows) {
    if (rows != m.input_dim()) {
        throw InputError("input has " + std::to_string(rows) + " entries, model expects " +
                         std::to_string(m.input_dim()));
    }
}

bool all_finite(const CaeModel& m) {
    auto finite = [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); };
    return std::all_of(m.encoder.begin(), m.encoder.end(), finite) &&
           std::all_of(m.decoder.begin(), m.decoder.end(), finite);
}

CaeGradient zero_gradient(const CaeModel& m) {
    CaeGradient g;
    for (const auto& l : m.encoder) {
        g.encoder_weight.push_back(Eigen::MatrixXd::Zero(l.out(), l.in()));
        g.encoder_bias.push_back(Eigen::VectorXd::Zero(l.out()));
    }
    for (const auto& l : m.decoder) {
        g.decoder_weight.push_back(Eigen::MatrixXd::Zero(l.out(), l.in()));
        g.decoder_bias.push_back(Eigen::VectorXd::Zero(l.out()));
    }
    return g;
}

void write_layer(binary::Writer& w, const DenseLayer& l) {
    w.put(static_cast<std::uint32_t>(l.in()));
    w.put(static_cast<std::uint32_t>(l.out()));
    w.put(static_cast<std::uint8_t>(l.activation));
    for (Eigen::Index r = 0; r < l.out(); ++r) {
        for (Eigen::Index c = 0; c < l.in(); ++c) {
            w.put(l.weight(r, c));
        }
    }
    for (Eigen::Index r = 0; r < l.out(); ++r) {
        w.put(l.bias(r));
    }
}

DenseLayer read_layer(binary::Reader& rd) {
    const auto at = rd.offset();
    const auto in = rd.get<std::uint32_t>();
    const auto out = rd.get<std::uint32_t>();
    const auto act = rd.get<std::uint8_t>();
    if (in == 0 || out == 0) {
        throw FormatError("layer with a zero dimension", at);
    }
    if (act > static_cast<std::uint8_t>(Activation::tanh)) {
        throw FormatError("unknown activation code " + std::to_string(act), at + 8);
    }
    rd.need((std::size_t{in} * out + out) * sizeof(double));
    DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd(out), static_cast<Activation>(act)};
    for (std::uint32_t r = 0; r < out; ++r) {
        for (std::uint32_t c = 0; c < in; ++c) {
            l.weight(r, c) = rd.get<double>();
        }
    }
    for (std::uint32_t r = 0; r < out; ++r) {
        l.bias(r) = rd.get<double>();
    }
    return l;
}

} // namespace

std::string_view to_string(Activation a) noexcept {
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    }
    return "identity";
}

void validate(const CaeModel& m) {
    if (m.encoder.empty() || m.decoder.empty()) {
        throw InputError("model needs at least one encoder and one decoder layer");
    }
    auto check_chain = [](const std::vector<DenseLayer>& layers, const char* part) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.in() < 1 || l.out() < 1 || l.bias.size() != l.out()) {
                throw InputError(std::string(part) + " layer " + std::to_string(i) + " is malformed");
            }
            if (i > 0 && layers[i - 1].out() != l.in()) {
                throw InputError(std::string(part) + " layer " + std::to_string(i) + " does not chain");
            }
        }
    };
    check_chain(m.encoder, "encoder");
    check_chain(m.decoder, "decoder");
    if (m.decoder.front().in() != m.bottleneck_dim() || m.decoder.back().out() != m.input_dim()) {
        throw InputError("decoder does not mirror the encoder dimensions");
    }
    if (!all_finite(m)) {
        throw InputError("model has non-finite parameters");
    }
}

CaeModel init_model(Eigen::Index input_dim, const CaeArchitecture& arch, std::uint64_t seed) {
    if (input_dim < 1 || arch.bottleneck_dim < 1 ||
        std::any_of(arch.hidden_dims.begin(), arch.hidden_dims.end(), [](auto d) { return d < 1; })) {
        throw InputError("autoencoder dimensions must be at least 1");
    }
    std::vector<Eigen::Index> dims{input_dim};
    dims.insert(dims.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
    dims.push_back(arch.bottleneck_dim);

    std::mt19937_64 rng(seed);
    auto make = [&](Eigen::Index in, Eigen::Index out, Activation act) {
        const double range = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-range, range);
        DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out), act};
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < in; ++c) {
                l.weight(r, c) = dist(rng);
            }
        }
        return l;
    };

    CaeModel m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        m.encoder.push_back(make(dims[i], dims[i + 1], arch.hidden_activation));
    }
    for (std::size_t i = dims.size() - 1; i > 0; --i) {
        const auto act = i == 1 ? arch.output_activation : arch.hidden_activation;
        m.decoder.push_back(make(dims[i], dims[i - 1], act));
    }
    return m;
}

Eigen::VectorXd encode(const CaeModel& m, const Eigen::VectorXd& x) {
    return encode_batch(m, x);
}

Eigen::MatrixXd encode_batch(const CaeModel& m, const Eigen::MatrixXd& x) {
    check_input(m, x.rows());
    Eigen::MatrixXd h = x;
    for (const auto& l : m.encoder) {
        h = forward_layer(l, h);
    }
    return h;
}

Eigen::VectorXd decode(const CaeModel& m, const Eigen::VectorXd& z) {
    if (z.size() != m.bottleneck_dim()) {
        throw InputError("code has " + std::to_string(z.size()) + " entries, model bottleneck is " +
                         std::to_string(m.bottleneck_dim()));
    }
    Eigen::MatrixXd h = z;
    for (const auto& l : m.decoder) {
        h = forward_layer(l, h);
    }
    return h;
}

Eigen::MatrixXd encoder_jacobian(const CaeModel& m, const Eigen::VectorXd& x) {
    check_input(m, x.size());
    Eigen::VectorXd h = x;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(x.size(), x.size());
    for (const auto& l : m.encoder) {
        h = forward_layer(l, h);
        const Eigen::VectorXd d = slope(h, l.activation);
        jac = d.asDiagonal() * (l.weight * jac);
    }
    return jac;
}

double contractive_penalty(const CaeModel& m, const Eigen::VectorXd& x) {
    return encoder_jacobian(m, x).squaredNorm();
}

LossTerms loss(const CaeModel& m, const Eigen::MatrixXd& batch, double lambda) {
    if (batch.cols() == 0) {
        throw InputError("loss of an empty batch");
    }
    check_input(m, batch.rows());
    const Eigen::MatrixXd code = encode_batch(m, batch);
    Eigen::MatrixXd recon = code;
    for (const auto& l : m.decoder) {
        recon = forward_layer(l, recon);
    }
    LossTerms t;
    t.reconstruction = (recon - batch).colwise().squaredNorm().mean();
    double pen = 0.0;
    for (Eigen::Index s = 0; s < batch.cols(); ++s) {
        pen += contractive_penalty(m, batch.col(s));
    }
    t.penalty = pen / static_cast<double>(batch.cols());
    t.total = t.reconstruction + lambda * t.penalty;
    return t;
}

LossAndGradient loss_and_grad(const CaeModel& m, const Eigen::MatrixXd& batch, double lambda) {
    if (batch.cols() == 0) {
        throw InputError("gradient of an empty batch");
    }
    check_input(m, batch.rows());
    const auto n_enc = m.encoder.size();
    const auto n_dec = m.decoder.size();
    const auto batch_size = batch.cols();
    const double inv_b = 1.0 / static_cast<double>(batch_size);

    const auto enc = forward_stack(m.encoder, batch);
    const auto dec = forward_stack(m.decoder, enc.back());

    LossAndGradient out{{}, zero_gradient(m)};
    auto& g = out.grad;

    const Eigen::MatrixXd diff = dec.back() - batch;
    out.loss.reconstruction = diff.colwise().squaredNorm().sum() * inv_b;

    // Penalty: J = D_n W_n ... D_1 W_1 = A W_1 with A = Q_1, ||J||^2 = tr(A G A^T), G = W_1 W_1^T.
    std::vector<Eigen::MatrixXd> slopes(n_enc);
    std::vector<Eigen::MatrixXd> pen_delta(n_enc);
    for (std::size_t l = 0; l < n_enc; ++l) {
        slopes[l] = slope(enc[l + 1], m.encoder[l].activation);
        pen_delta[l] = Eigen::MatrixXd::Zero(m.encoder[l].out(), batch_size);
    }
    const Eigen::MatrixXd& w1 = m.encoder.front().weight;
    const Eigen::MatrixXd gram = w1 * w1.transpose();
    Eigen::MatrixXd ata_sum = Eigen::MatrixXd::Zero(w1.rows(), w1.rows());
    const double coeff = lambda * inv_b;

    std::vector<Eigen::MatrixXd> q(n_enc);
    std::vector<Eigen::MatrixXd> r(n_enc);
    double penalty_sum = 0.0;
    for (Eigen::Index s = 0; s < batch_size; ++s) {
        q[n_enc - 1] = slopes[n_enc - 1].col(s).asDiagonal();
        for (std::size_t l = n_enc - 1; l-- > 0;) {
            r[l] = q[l + 1] * m.encoder[l + 1].weight;
            q[l] = r[l] * slopes[l].col(s).asDiagonal();
        }
        const Eigen::MatrixXd& a = q[0];
        const Eigen::MatrixXd ag = a * gram;
        penalty_sum += a.cwiseProduct(ag).sum();
        if (lambda == 0.0) {
            continue;
        }
        ata_sum.noalias() += a.transpose() * a;

        Eigen::MatrixXd gq = 2.0 * ag;
        for (std::size_t l = 0; l + 1 < n_enc; ++l) {
            const Eigen::VectorXd gd = gq.cwiseProduct(r[l]).colwise().sum().transpose();
            const Eigen::MatrixXd gr = gq * slopes[l].col(s).asDiagonal();
            g.encoder_weight[l + 1].noalias() += coeff * (q[l + 1].transpose() * gr);
            gq = gr * m.encoder[l + 1].weight.transpose();
            pen_delta[l].col(s) = gd.cwiseProduct(curvature(enc[l + 1].col(s), m.encoder[l].activation));
        }
        const Eigen::VectorXd gd_last = gq.diagonal();
        pen_delta[n_enc - 1].col(s) =
            gd_last.cwiseProduct(curvature(enc[n_enc].col(s), m.encoder[n_enc - 1].activation));
    }
    out.loss.penalty = penalty_sum * inv_b;
    out.loss.total = out.loss.reconstruction + lambda * out.loss.penalty;
    if (lambda != 0.0) {
        g.encoder_weight[0].noalias() += (2.0 * coeff) * (ata_sum * w1);
    }

    // Reverse pass through decoder then encoder.
    Eigen::MatrixXd grad_h = 2.0 * inv_b * diff;
    for (std::size_t l = n_dec; l-- > 0;) {
        const auto& layer = m.decoder[l];
        const Eigen::MatrixXd delta = grad_h.cwiseProduct(slope(dec[l + 1], layer.activation));
        g.decoder_weight[l].noalias() += delta * dec[l].transpose();
        g.decoder_bias[l] += delta.rowwise().sum();
        grad_h = layer.weight.transpose() * delta;
    }
    for (std::size_t l = n_enc; l-- > 0;) {
        const auto& layer = m.encoder[l];
        Eigen::MatrixXd delta = grad_h.cwiseProduct(slopes[l]);
        if (lambda != 0.0) {
            delta += coeff * pen_delta[l];
        }
        g.encoder_weight[l].noalias() += delta * enc[l].transpose();
        g.encoder_bias[l] += delta.rowwise().sum();
        if (l > 0) {
            grad_h = layer.weight.transpose() * delta;
        }
    }
    return out;
}

std::vector<ParamView> param_views(CaeModel& m, const CaeGradient& g) {
    std::vector<ParamView> views;
    auto add = [&](auto& value, const auto& grad) {
        views.push_back({std::span<double>(value.data(), static_cast<std::size_t>(value.size())),
                         std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size()))});
    };
    for (std::size_t i = 0; i < m.encoder.size(); ++i) {
        add(m.encoder[i].weight, g.encoder_weight[i]);
        add(m.encoder[i].bias, g.encoder_bias[i]);
    }
    for (std::size_t i = 0; i < m.decoder.size(); ++i) {
        add(m.decoder[i].weight, g.decoder_weight[i]);
        add(m.decoder[i].bias, g.decoder_bias[i]);
    }
    return views;
}

void validate(const TrainConfig& c) {
    if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) {
        throw InputError("contractive coefficient must be a finite non-negative number");
    }
    if (!(c.learning_rate > 0.0)) {
        throw InputError("learning rate must be positive");
    }
    if (c.epochs < 1 || c.batch_size < 1) {
        throw InputError("epochs and batch size must be at least 1");
    }
}

TrainResult train(const Eigen::MatrixXd& data, const CaeArchitecture& arch, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    validate(config);
    if (data.cols() == 0) {
        throw InputError("training set is empty");
    }
    return train(init_model(data.rows(), arch, config.seed), data, config, on_epoch);
}

TrainResult train(CaeModel model, const Eigen::MatrixXd& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    validate(config);
    validate(model);
    if (data.cols() == 0) {
        throw InputError("training set is empty");
    }
    check_input(model, data.rows());

    // Shuffle stream is kept separate from the initialisation stream.
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    Optimizer opt({config.optimizer, config.learning_rate});
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.cols()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    TrainResult result{std::move(model), {}};
    for (std::uint32_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossTerms sum;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto count = std::min<std::size_t>(config.batch_size, order.size() - start);
            Eigen::MatrixXd batch(data.rows(), static_cast<Eigen::Index>(count));
            for (std::size_t i = 0; i < count; ++i) {
                batch.col(static_cast<Eigen::Index>(i)) = data.col(order[start + i]);
            }
            auto step = loss_and_grad(result.model, batch, config.lambda);
            if (!std::isfinite(step.loss.total)) {
                throw DivergenceError("autoencoder loss became non-finite in epoch " + std::to_string(epoch) +
                                      " at learning rate " + std::to_string(config.learning_rate));
            }
            const auto w = static_cast<double>(count);
            sum.total += w * step.loss.total;
            sum.reconstruction += w * step.loss.reconstruction;
            sum.penalty += w * step.loss.penalty;
            const auto views = param_views(result.model, step.grad);
            opt.step(views);
        }
        const double n = static_cast<double>(order.size());
        EpochStats stats{epoch, {sum.total / n, sum.reconstruction / n, sum.penalty / n}};
        if (!all_finite(result.model)) {
            throw DivergenceError("autoencoder parameters became non-finite in epoch " + std::to_string(epoch) +
                                  " at learning rate " + std::to_string(config.learning_rate));
        }
        spdlog::debug("epoch {} loss {:.6g} (recon {:.6g}, penalty {:.6g})", epoch, stats.mean.total,
                      stats.mean.reconstruction, stats.mean.penalty);
        result.history.push_back(stats);
        if (on_epoch) {
            on_epoch(stats);
        }
    }
    return result;
}

std::string serialize_model(const CaeModel& m) {
    validate(m);
    binary::Writer w;
    w.bytes(model_magic);
    w.put(model_version);
    w.put(static_cast<std::uint32_t>(m.encoder.size()));
    w.put(static_cast<std::uint32_t>(m.decoder.size()));
    for (const auto& l : m.encoder) {
        write_layer(w, l);
    }
    for (const auto& l : m.decoder) {
        write_layer(w, l);
    }
    return w.release();
}

CaeModel deserialize_model(std::string_view bytes) {
    binary::Reader rd(bytes);
    rd.expect(model_magic, "model");
    const auto version_at = rd.offset();
    const auto version = rd.get<std::uint16_t>();
    if (version != model_version) {
        throw FormatError("unsupported model version " + std::to_string(version), version_at);
    }
    const auto n_enc = rd.get<std::uint32_t>();
    const auto n_dec = rd.get<std::uint32_t>();
    if (n_enc == 0 || n_dec == 0 || n_enc > 64 || n_dec > 64) {
        throw FormatError("implausible layer counts", version_at + 2);
    }
    CaeModel m;
    for (std::uint32_t i = 0; i < n_enc; ++i) {
        m.encoder.push_back(read_layer(rd));
    }
    for (std::uint32_t i = 0; i < n_dec; ++i) {
        m.decoder.push_back(read_layer(rd));
    }
    if (rd.remaining() != 0) {
        throw FormatError("trailing bytes after model", rd.offset());
    }
    try {
        validate(m);
    } catch (const InputError& e) {
        throw FormatError(e.what(), 0);
    }
    return m;
}

void save_model(const CaeModel& m, const std::filesystem::path& path) {
    binary::write_file(path, serialize_model(m));
}

CaeModel load_model(const std::filesystem::path& path) {
    return deserialize_model(binary::read_file(path));
}

} // namespace tempo
