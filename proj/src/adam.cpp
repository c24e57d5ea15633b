#include "saze/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace saze {

void AdamBlock::step(std::vector<double>& params, const std::vector<double>& grad,
                     const AdamConfig& cfg, std::vector<double>* applied) {
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("AdamBlock::step: length mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    if (applied) applied->resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
        v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        const double u = -cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps)) -
                         cfg.lr * cfg.weight_decay * params[i];
        params[i] += u;
        if (applied) (*applied)[i] = u;
    }
}

OptimizerState make_optimizer(std::size_t encoder_len, std::size_t classifier_len,
                              const AdamConfig& cfg) {
    OptimizerState s;
    s.config = cfg;
    s.encoder = AdamBlock(encoder_len);
    s.classifier = AdamBlock(classifier_len);
    return s;
}

} // namespace saze
