#pragma once

#include <cstdint>
#include <vector>

#include "saze/mat.hpp"

namespace saze {

struct AdamConfig {
    double lr = 1e-3;
    double weight_decay = 1e-3; // decoupled, applied to the updated block only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moments for one parameter block. Encoder and classifier each own one; the
// encoder's is reset whenever its parameters are restored to a snapshot, the
// classifier's runs uninterrupted.
class AdamBlock {
public:
    AdamBlock() = default;
    explicit AdamBlock(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    void reset() {
        std::fill(m_.begin(), m_.end(), 0.0);
        std::fill(v_.begin(), v_.end(), 0.0);
        t_ = 0;
    }

    // One update in place. If `applied` is non-null it receives the exact
    // per-coordinate increments, so callers can replay the step bit for bit.
    void step(std::vector<double>& params, const std::vector<double>& grad,
              const AdamConfig& cfg, std::vector<double>* applied = nullptr);

    std::int64_t steps_taken() const { return t_; }

private:
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

struct OptimizerState {
    AdamConfig config;
    AdamBlock encoder;
    AdamBlock classifier;
};

OptimizerState make_optimizer(std::size_t encoder_len, std::size_t classifier_len,
                              const AdamConfig& cfg);

} // namespace saze
