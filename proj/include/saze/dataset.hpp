#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "saze/mat.hpp"
#include "saze/rng.hpp"

namespace saze {

// Gaze angles in radians. Frontal regime: both components stay within
// [-pi/2, pi/2] for generated data.
struct GazeDirection {
    double yaw = 0.0;
    double pitch = 0.0;
};

struct ImageShape {
    int channels = 1;
    int height = 0;
    int width = 0;

    int pixels() const { return channels * height * width; }
    bool operator==(const ImageShape&) const = default;
};

// One labeled face image. Pixels are float32 in [0, 1] so that in-memory
// samples round-trip bit-exactly through the on-disk format. `style` and
// `noise_seed` are populated for synthetic samples only; together with the
// gaze they let the pure renderer reproduce `image` exactly.
struct Sample {
    std::vector<float> image;
    GazeDirection gaze;
    int subject = 0;
    std::vector<double> style;
    std::uint64_t noise_seed = 0;
};

// Synthetic generator settings. Each subject gets a fixed appearance latent;
// the rendered background (a low-frequency field plus a fixed per-subject
// distractor blob, both derived from the latent and scaled by
// confound_strength) makes subject identity decodable from pixel statistics,
// which is exactly the leakage the adversarial loss must remove.
struct SynthConfig {
    int subject_count = 10;
    int samples_per_subject = 200;
    ImageShape image_shape{1, 32, 32};
    int appearance_dim = 8;
    double gaze_range = 0.5;       // yaw, pitch ~ U[-gaze_range, gaze_range]
    double confound_strength = 0.5;
    double noise_std = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Dataset {
    std::vector<Sample> samples;
    int subject_count = 0;
    ImageShape image_shape;

    // Provenance: either a synthetic config or an external source path.
    bool is_synthetic = false;
    SynthConfig synth;
    std::string source_path;

    int size() const { return static_cast<int>(samples.size()); }
};

// Sorted, duplicate-free set of subject ids.
struct SubjectSet {
    std::vector<int> ids;

    bool contains(int s) const;
    int size() const { return static_cast<int>(ids.size()); }
    bool operator==(const SubjectSet&) const = default;
};

// Non-owning view of a subset of a Dataset's samples. Keeps dataset order.
// Subjects present in the view get dense labels 0..subject_count()-1 in
// ascending subject-id order; the identity classifier and probes work in that
// label space.
class DatasetView {
public:
    DatasetView() = default;
    explicit DatasetView(const Dataset& d);
    DatasetView(const Dataset& d, std::vector<int> indices);

    const Dataset& dataset() const { return *data_; }
    const std::vector<int>& indices() const { return indices_; }
    const std::vector<int>& subjects() const { return subjects_; }
    int size() const { return static_cast<int>(indices_.size()); }
    int subject_count() const { return static_cast<int>(subjects_.size()); }

    const Sample& sample(int i) const { return data_->samples[indices_[i]]; }

    // Dense label of a subject within this view. Throws on foreign subjects.
    int label_of(int subject) const;

private:
    const Dataset* data_ = nullptr;
    std::vector<int> indices_;
    std::vector<int> subjects_;
};

// Mini-batch with images widened to double for the numeric core.
struct Batch {
    Matrix images;                     // N x (C*H*W)
    std::vector<GazeDirection> gazes;
    std::vector<int> subjects;         // raw subject ids
    std::vector<int> labels;           // dense labels in the source view

    int size() const { return images.rows; }
};

// Shuffled batch stream over the samples owned by `subjects` within a view.
// Each pass is a fresh shuffle partitioned into consecutive batches; the last
// batch of a pass may be short. Single consumer.
class BatchStream {
public:
    BatchStream(const DatasetView& view, const SubjectSet& subjects, int batch_size,
                std::uint64_t seed);

    Batch next();
    int pool_size() const { return static_cast<int>(pool_.size()); }
    int batches_per_pass() const;

private:
    const DatasetView* view_;
    std::vector<int> pool_;   // positions into the view
    int batch_size_;
    Rng rng_;
    std::size_t cursor_ = 0;

    void reshuffle();
};

// Pure renderer: pupil-like blob whose offset is affine in (yaw, pitch), on
// top of a style-derived background scaled by confound_strength, plus seeded
// pixel noise. Every stored synthetic image equals
// render_image(sample.style, sample.gaze, sample.noise_seed, cfg) bit for bit.
std::vector<float> render_image(const std::vector<double>& style, GazeDirection gaze,
                                std::uint64_t noise_seed, const SynthConfig& cfg);

std::vector<double> make_subject_style(const SynthConfig& cfg, int subject);

Dataset generate_synthetic_dataset(const SynthConfig& cfg);

std::pair<DatasetView, DatasetView> split_leave_one_subject_out(const Dataset& d,
                                                                int held_out);

SubjectSet sample_meta_train_subjects(const DatasetView& train, int k, Rng& rng);

SubjectSet sample_meta_adapt_subjects(const DatasetView& train, const SubjectSet& exclude,
                                      int p, Rng& rng);

// n_styles fresh appearance latents rendered with the identical base gaze.
std::vector<Sample> generate_style_cluster(GazeDirection base_gaze, int n_styles,
                                           const SynthConfig& cfg, std::uint64_t seed);

// Assembles a batch from explicit view positions (evaluation, probes).
Batch gather_batch(const DatasetView& view, const std::vector<int>& positions);

// Directory layout: manifest.json + images/NNNNNN.bin (row-major float32,
// little endian). External loaders must emit the same layout; the manifest's
// pixel_format field declares the encoding ("float32_raw" is what this
// implementation reads and writes).
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace saze
