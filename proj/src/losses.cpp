#include "saze/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace saze {

double identity_loss(std::span<const int> labels, const Matrix& probs) {
    if (static_cast<int>(labels.size()) != probs.rows)
        throw std::invalid_argument("identity_loss: label/prediction count mismatch");
    if (probs.rows == 0) throw std::invalid_argument("identity_loss: empty batch");

    double sum = 0.0;
    for (int n = 0; n < probs.rows; ++n) {
        const int label = labels[n];
        if (label < 0 || label >= probs.cols)
            throw std::invalid_argument("identity_loss: label out of range");
        sum += -std::log(std::max(probs(n, label), kLogClamp));
    }
    return sum / probs.rows;
}

double uniform_similarity(std::span<const double> probs) {
    const std::size_t k = probs.size();
    if (k < 2) throw std::invalid_argument("uniform_similarity: need at least 2 classes");

    const double e = 1.0 / static_cast<double>(k);
    double dot = 0.0, norm_p2 = 0.0;
    for (double p : probs) {
        dot += e * p;
        norm_p2 += p * p;
    }
    const double norm_e = std::sqrt(static_cast<double>(k)) * e; // = 1/sqrt(k)
    const double norm_p = std::sqrt(norm_p2);
    if (norm_p == 0.0) throw std::invalid_argument("uniform_similarity: zero vector");
    return dot / (norm_e * norm_p);
}

double adversarial_loss(const Matrix& probs) {
    if (probs.rows == 0) throw std::invalid_argument("adversarial_loss: empty batch");
    double sum = 0.0;
    for (int n = 0; n < probs.rows; ++n) {
        sum += 1.0 - uniform_similarity(std::span<const double>(probs.row(n), probs.cols));
    }
    return sum / probs.rows;
}

double gaze_loss(std::span<const GazeDirection> truth, std::span<const GazeDirection> pred) {
    if (truth.size() != pred.size())
        throw std::invalid_argument("gaze_loss: batch length mismatch");
    if (truth.empty()) throw std::invalid_argument("gaze_loss: empty batch");

    double sum = 0.0;
    for (std::size_t n = 0; n < truth.size(); ++n) {
        sum += std::abs(truth[n].yaw - pred[n].yaw) + std::abs(truth[n].pitch - pred[n].pitch);
    }
    return sum / static_cast<double>(truth.size());
}

} // namespace saze
