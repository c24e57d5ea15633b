#pragma once

#include <span>

#include "saze/dataset.hpp"
#include "saze/mat.hpp"

namespace saze {

struct LossWeights {
    double lambda_adv = 5.0;
    double lambda_idc = 1.0;

    void validate() const {
        if (lambda_adv < 0.0 || lambda_idc < 0.0)
            throw ConfigError("loss weights must be >= 0");
    }
};

// Probabilities below this are clamped before the log in the identity loss.
inline constexpr double kLogClamp = 1e-12;

// Mean cross-entropy -log p[label] over a batch of identity distributions
// (rows of `probs`).
double identity_loss(std::span<const int> labels, const Matrix& probs);

// Cosine similarity between one distribution and the uniform distribution
// over its support. In (0, 1] for valid distributions; 1 exactly at uniform.
double uniform_similarity(std::span<const double> probs);

// Mean of (1 - uniform_similarity) over the batch. Zero iff every row is
// uniform; at most 1 - 1/sqrt(K) (one-hot rows).
double adversarial_loss(const Matrix& probs);

// Mean over the batch of |dyaw| + |dpitch| (L1 over the two components).
double gaze_loss(std::span<const GazeDirection> truth, std::span<const GazeDirection> pred);

inline double total_encoder_loss(double l_adv, double l_g, const LossWeights& w) {
    return w.lambda_adv * l_adv + l_g;
}

} // namespace saze
