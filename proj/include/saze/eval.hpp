#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saze/dataset.hpp"
#include "saze/model.hpp"
#include "saze/trainer.hpp"

namespace saze {

// Unit gaze vector; (0,0) looks along -z.
std::array<double, 3> gaze_to_vector(GazeDirection g);

// Angle between the two gaze vectors, in degrees. Symmetric, >= 0, zero iff
// the directions coincide.
double angular_error_deg(GazeDirection a, GazeDirection b);

double population_variance(std::span<const double> values);

struct SubjectError {
    int subject = 0;
    double mean_error_deg = 0.0;
    int samples = 0;
};

struct ProbeResult {
    double accuracy = 0.0;
    double chance = 0.0;
    bool degenerate = false;
};

struct StyleVariance {
    int cluster = 0;
    double var_yaw = 0.0;
    double var_pitch = 0.0;
};

struct Heatmap {
    int yaw_bins = 0, pitch_bins = 0;
    double yaw_min = 0.0, yaw_max = 0.0, pitch_min = 0.0, pitch_max = 0.0;
    std::vector<int> counts;        // yaw-major, yaw_bins * pitch_bins
    std::vector<double> mean_error; // NaN where count == 0

    int count_at(int iy, int ip) const { return counts[iy * pitch_bins + ip]; }
    double error_at(int iy, int ip) const { return mean_error[iy * pitch_bins + ip]; }
};

struct MetricsReport {
    std::vector<SubjectError> per_subject; // ascending subject id
    double overall_mean_deg = 0.0;
    double subject_std_deg = 0.0; // population std over per-subject means
    int total_samples = 0;
    std::optional<ProbeResult> probe;
    std::vector<StyleVariance> style_variances;
    std::optional<Heatmap> heatmap;
    std::string config_hash;
    std::uint64_t seed = 0;
};

// Forward pass over a whole view.
struct ViewPredictions {
    std::vector<GazeDirection> gaze;
    Matrix features; // N x feature_dim
};
ViewPredictions forward_view(const ModelState& state, const DatasetView& view);

// Per-subject and overall mean angle error on a view.
MetricsReport evaluate(const ModelState& state, const DatasetView& view);

// One training run and holdout evaluation per subject; aggregates the
// per-subject means. `fold_sink`, when set, receives each fold's trained
// state. max_threads <= 1 runs folds sequentially; results are identical
// either way.
MetricsReport run_loso(const Dataset& data, const ArchConfig& arch, const MetaConfig& cfg,
                       const LossWeights& w, std::uint64_t seed, const RunOptions& run_opts = {},
                       int max_threads = 1,
                       const std::function<void(int subject, const ModelState&,
                                                const TrainTrace&)>& fold_sink = nullptr);

struct ProbeConfig {
    double train_fraction = 0.8;
    int iterations = 300;
    double lr = 0.1;
    double weight_decay = 1e-4;
};

// Multinomial logistic probe on fixed features, fit on a seeded 80/20 split;
// returns held-out accuracy. Degenerate (constant) features short-circuit to
// chance with the flag set.
ProbeResult linear_probe(const Matrix& features, const std::vector<int>& labels, int n_classes,
                         std::uint64_t seed, const ProbeConfig& cfg = {});

// Probe on the frozen encoder's features; lower accuracy means less subject
// identity linearly decodable from the gaze representation.
ProbeResult identity_probe(const ModelState& state, const DatasetView& view, std::uint64_t seed,
                           const ProbeConfig& cfg = {});

// Per-channel pixel means; the raw-pixel confound baseline probes these.
Matrix pixel_mean_features(const DatasetView& view);
std::vector<int> view_labels(const DatasetView& view);

// Population variance of predicted yaw and pitch per style cluster.
std::vector<StyleVariance> style_variance(const ModelState& state,
                                          const std::vector<std::vector<Sample>>& clusters);

std::vector<double> per_sample_errors(const ModelState& state, const DatasetView& view);

// Bins precomputed errors over an explicit (yaw, pitch) range.
Heatmap heatmap_from_errors(std::span<const GazeDirection> truths,
                            std::span<const double> errors, int yaw_bins, int pitch_bins,
                            double yaw_min, double yaw_max, double pitch_min, double pitch_max);

Heatmap error_heatmap(const ModelState& state, const DatasetView& view, int yaw_bins,
                      int pitch_bins);

// Feature dump: <prefix>.bin holds count x feature_dim float32 rows,
// <prefix>.json the shape plus (index, subject) per row. Indices are
// dataset-level sample indices.
void export_features(const ModelState& state, const DatasetView& view,
                     const std::filesystem::path& prefix);

struct FeatureDump {
    int feature_dim = 0;
    std::vector<int> indices;
    std::vector<int> subjects;
    std::vector<float> values; // count x feature_dim
};
FeatureDump import_features(const std::filesystem::path& prefix);

// report.json plus per_subject.csv, and heatmap.csv / style_variance.csv when
// those sections are present.
void save_metrics_report(const MetricsReport& report, const std::filesystem::path& dir);

} // namespace saze
