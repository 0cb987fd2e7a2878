#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace tempo {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind k) noexcept;
OptimizerKind parse_optimizer(std::string_view s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One parameter block and its gradient, both contiguous.
struct ParamView {
    std::span<double> value;
    std::span<const double> grad;
};

/**
 * First-order update over a fixed list of parameter blocks. The block list
 * must keep the same shapes and order on every call; Adam moments are kept
 * per element in that order.
 */
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    void step(std::span<const ParamView> params);

    [[nodiscard]] const OptimizerConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::uint64_t steps() const noexcept { return t_; }

private:
    OptimizerConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t t_ = 0;
};

} // namespace tempo
