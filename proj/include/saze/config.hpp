#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saze/dataset.hpp"
#include "saze/eval.hpp"
#include "saze/losses.hpp"
#include "saze/model.hpp"
#include "saze/trainer.hpp"

namespace saze {

struct ClusterSpec {
    int n_styles = 70;
    std::vector<GazeDirection> base_gazes; // empty: derived from gaze_range
    std::uint64_t seed = 11;
};

struct EvalConfig {
    int heatmap_yaw_bins = 6;
    int heatmap_pitch_bins = 6;
    ProbeConfig probe;
    std::uint64_t probe_seed = 101;
    ClusterSpec clusters;
};

// Everything one experiment needs, loaded from a single JSON file. The
// architecture's image shape always follows the synthetic generator's;
// identity_count is bound to the training view at run time.
struct ExperimentConfig {
    SynthConfig synth;
    ArchConfig arch;
    MetaConfig meta;
    LossWeights weights;
    EvalConfig eval;
    std::string out_dir = "runs/default";
    std::uint64_t seed = 1;

    void validate(bool loso) const;
};

// Seven gaze targets spanning the generator's range: center, the four
// half-range axis points and two diagonals.
std::vector<GazeDirection> default_base_gazes(double gaze_range);
std::vector<GazeDirection> cluster_base_gazes(const ClusterSpec& spec, double gaze_range);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_to_json_string(const ExperimentConfig& cfg);

// FNV-1a over the canonical JSON dump; embedded in artifacts for provenance.
std::string config_hash(const ExperimentConfig& cfg);
std::string fnv1a_hex(const std::string& bytes);

} // namespace saze
