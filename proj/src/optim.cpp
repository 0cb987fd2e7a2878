#include "tempo/optim.hpp"

#include "tempo/error.hpp"

#include <cmath>
#include <string>

namespace tempo {

std::string_view to_string(OptimizerKind k) noexcept {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw InputError("unknown optimizer '" + std::string(s) + "'");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
    if (!(config_.learning_rate > 0.0)) {
        throw InputError("learning rate must be positive");
    }
}

void Optimizer::step(std::span<const ParamView> params) {
    ++t_;
    const double lr = config_.learning_rate;
    if (config_.kind == OptimizerKind::sgd) {
        for (const auto& p : params) {
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                p.value[i] -= lr * p.grad[i];
            }
        }
        return;
    }

    std::size_t total = 0;
    for (const auto& p : params) {
        total += p.value.size();
    }
    if (m_.empty()) {
        m_.assign(total, 0.0);
        v_.assign(total, 0.0);
    } else if (m_.size() != total) {
        throw InputError("optimizer parameter layout changed between steps");
    }

    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    std::size_t k = 0;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.value.size(); ++i, ++k) {
            const double g = p.grad[i];
            m_[k] = b1 * m_[k] + (1.0 - b1) * g;
            v_[k] = b2 * v_[k] + (1.0 - b2) * g * g;
            p.value[i] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + config_.epsilon);
        }
    }
}

} // namespace tempo
