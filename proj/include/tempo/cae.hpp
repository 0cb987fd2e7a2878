#pragma once

#include "tempo/geo_tiles.hpp"
#include "tempo/optim.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace tempo {

enum class Activation : std::uint8_t { identity = 0, sigmoid = 1, tanh = 2 };

std::string_view to_string(Activation a) noexcept;

struct DenseLayer {
    Eigen::MatrixXd weight; ///< out x in
    Eigen::VectorXd bias;   ///< out
    Activation activation = Activation::sigmoid;

    [[nodiscard]] Eigen::Index in() const noexcept { return weight.cols(); }
    [[nodiscard]] Eigen::Index out() const noexcept { return weight.rows(); }
};

/**
 * Dense autoencoder. The encoder maps an input vector to the bottleneck
 * (the temporal embedding); the decoder maps it back to input space.
 */
struct CaeModel {
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;

    [[nodiscard]] Eigen::Index input_dim() const { return encoder.front().in(); }
    [[nodiscard]] Eigen::Index bottleneck_dim() const { return encoder.back().out(); }
};

/// Throws InputError if layer shapes do not chain or parameters are not finite.
void validate(const CaeModel& m);

struct CaeArchitecture {
    std::vector<Eigen::Index> hidden_dims{128, 64};
    Eigen::Index bottleneck_dim = 16;
    Activation hidden_activation = Activation::sigmoid;
    Activation output_activation = Activation::identity;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; decoder mirrors the encoder.
CaeModel init_model(Eigen::Index input_dim, const CaeArchitecture& arch, std::uint64_t seed);

Eigen::VectorXd encode(const CaeModel& m, const Eigen::VectorXd& x);
Eigen::VectorXd decode(const CaeModel& m, const Eigen::VectorXd& z);

/// Column-wise encode of a D x B batch.
Eigen::MatrixXd encode_batch(const CaeModel& m, const Eigen::MatrixXd& x);

/// d encode(x) / dx, bottleneck_dim x input_dim.
Eigen::MatrixXd encoder_jacobian(const CaeModel& m, const Eigen::VectorXd& x);

/// Squared Frobenius norm of encoder_jacobian(m, x).
double contractive_penalty(const CaeModel& m, const Eigen::VectorXd& x);

struct LossTerms {
    double total = 0.0;
    double reconstruction = 0.0; ///< batch mean of ||x - decode(encode(x))||^2
    double penalty = 0.0;        ///< batch mean of the contractive penalty
};

/// Batch columns are samples.
LossTerms loss(const CaeModel& m, const Eigen::MatrixXd& batch, double lambda);

/// Gradient with the same layer layout as the model.
struct CaeGradient {
    std::vector<Eigen::MatrixXd> encoder_weight;
    std::vector<Eigen::VectorXd> encoder_bias;
    std::vector<Eigen::MatrixXd> decoder_weight;
    std::vector<Eigen::VectorXd> decoder_bias;
};

struct LossAndGradient {
    LossTerms loss;
    CaeGradient grad;
};

/**
 * Analytic gradient of loss(m, batch, lambda). The reconstruction term is
 * back-propagated; the penalty term is differentiated in closed form through
 * the chained layer Jacobians, with ||J||^2 = tr(A W1 W1^T A^T) so the
 * input-sized first-layer product is formed once per batch.
 */
LossAndGradient loss_and_grad(const CaeModel& m, const Eigen::MatrixXd& batch, double lambda);

/// Parameter blocks in a fixed order: encoder layers then decoder layers, weight before bias.
std::vector<ParamView> param_views(CaeModel& m, const CaeGradient& g);

struct TrainConfig {
    double lambda = 1e-3;
    double learning_rate = 1e-3;
    std::uint32_t epochs = 30;
    std::uint32_t batch_size = 64;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
};

void validate(const TrainConfig& c);

struct EpochStats {
    std::uint32_t epoch = 0;
    LossTerms mean; ///< averaged over the epoch's minibatches, weighted by batch size
};

struct TrainResult {
    CaeModel model;
    std::vector<EpochStats> history;
};

/// Called after every epoch.
using EpochCallback = std::function<void(const EpochStats&)>;

/**
 * Minibatch training on the columns of `data`. Deterministic for a given
 * seed: the shuffle sequence and reduction order are fixed. Throws
 * DivergenceError when the loss stops being finite.
 */
TrainResult train(const Eigen::MatrixXd& data, const CaeArchitecture& arch, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Continues training an existing model.
TrainResult train(CaeModel model, const Eigen::MatrixXd& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct TemporalEmbedding {
    TileId tile;
    Eigen::VectorXd values;
};

void save_model(const CaeModel& m, const std::filesystem::path& path);
CaeModel load_model(const std::filesystem::path& path);

std::string serialize_model(const CaeModel& m);
CaeModel deserialize_model(std::string_view bytes);

} // namespace tempo
