#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saze/dataset.hpp"
#include "saze/losses.hpp"
#include "saze/mat.hpp"

namespace saze {

struct ConvSpec {
    int out_channels = 0;
    int kernel = 3;
    int stride = 2;
};

// Conv stack -> global average pool -> linear feature layer (the gaze
// representation h) -> 2-unit gaze head, with the identity classifier MLP
// branching off the feature layer. Rectified-linear after every layer except
// the two output heads. Conv padding is kernel/2.
struct ArchConfig {
    ImageShape image_shape{1, 32, 32};
    std::vector<ConvSpec> conv_blocks{{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
    int feature_dim = 256;
    std::vector<int> classifier_hidden{64};
    int identity_count = 0;

    void validate() const;
};

// Flat parameter vectors for the two halves of the network. Keeping them as
// plain vectors is what makes the meta-update algebra (interpolation,
// averaging, snapshots) and the freeze contracts exact.
struct ModelState {
    std::vector<double> encoder_params;
    std::vector<double> classifier_params;
    ArchConfig arch;
};

std::size_t encoder_param_count(const ArchConfig& arch);
std::size_t classifier_param_count(const ArchConfig& arch);

// Fan-in-scaled uniform weights, zero biases, deterministic in seed.
ModelState init_model(const ArchConfig& arch, std::uint64_t seed);

enum class ParamBlock { encoder, classifier };

const std::vector<double>& get_params(const ModelState& state, ParamBlock which);
void set_params(ModelState& state, ParamBlock which, const std::vector<double>& values);

struct EncoderOut {
    std::vector<GazeDirection> gaze;
    Matrix features; // N x feature_dim
};

EncoderOut encoder_forward(const ModelState& state, const Matrix& images);

// Softmax identity distributions, one row per feature row.
Matrix classifier_forward(const ModelState& state, const Matrix& features);

// Which scalar the gradients are taken of:
//   identity: lambda_idc * L_idc      (classifier update path)
//   encoder:  lambda_adv * L_adv + L_g (encoder update path)
enum class LossPath { identity, encoder };

struct GradResult {
    std::vector<double> encoder_grad;
    std::vector<double> classifier_grad;
    double l_idc = 0.0;
    double l_adv = 0.0;
    double l_g = 0.0;
    double loss = 0.0; // the selected path scalar
};

// Exact reverse-mode gradients of the selected scalar with respect to both
// parameter vectors. The caller applies whichever block its path updates.
GradResult gradients(const ModelState& state, const Batch& batch, LossPath path,
                     const LossWeights& w);

// Forward-only evaluation of the selected path scalar. This is the function
// the finite-difference checks probe.
double loss_value(const ModelState& state, const Batch& batch, LossPath path,
                  const LossWeights& w);

// Checkpoint directory: manifest.json + encoder.f32 + classifier.f32 (raw
// float32, little endian). Reload is bit-exact with respect to the stored
// float32 values.
struct CheckpointMeta {
    int epoch = 0;
    std::string config_hash;
};

void save_checkpoint(const ModelState& state, const std::filesystem::path& dir,
                     const CheckpointMeta& meta);
ModelState load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr);

} // namespace saze
