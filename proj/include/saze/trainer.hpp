#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "saze/adam.hpp"
#include "saze/dataset.hpp"
#include "saze/losses.hpp"
#include "saze/model.hpp"

namespace saze {

enum class EpsilonSchedule { multiplicative, linear };

// Meta-loop shape. Per epoch: sample k meta-train subjects, run m two-path
// iterations, interpolate (theta_n = theta_o + eps*(phi - theta_o)), then T
// adapt branches of j iterations on p fresh subjects each, disjoint from the
// meta-train set, combined as theta_{n+1} = theta_n + eps*mean(phi*_i - theta_n).
struct MetaConfig {
    int k = 8;
    int p = 2;
    int T = 5;
    int m = 20;
    int j = 10;
    int epochs = 30;
    double epsilon0 = 1.0;
    // Unset means the multiplicative factor (1 - 1/epochs).
    std::optional<double> epsilon_decay;
    EpsilonSchedule schedule = EpsilonSchedule::multiplicative;
    int batch_size = 32;
    AdamConfig optimizer;

    void validate(int training_subjects, bool meta_enabled) const;
    double decay_factor() const { return epsilon_decay ? *epsilon_decay : 1.0 - 1.0 / epochs; }
};

enum class Phase { meta_train, meta_adapt, plain };
enum class Path { classifier, encoder };

struct TraceRow {
    int epoch = 0;
    Phase phase = Phase::meta_train;
    int branch = -1; // adapt branch index, -1 elsewhere
    int step = 0;    // iteration index within the phase
    Path path = Path::classifier;
    double l_idc = 0.0;
    double l_adv = 0.0;
    double l_g = 0.0;
    double l_total = 0.0;
};

struct TrainTrace {
    std::vector<TraceRow> rows;

    void write_csv(const std::filesystem::path& path) const;
};

const char* phase_name(Phase p);
const char* path_name(Path p);

// Observer invoked after every optimizer step. `update` is the exact
// per-coordinate increment the optimizer applied to the active block, so
// before + update replays to after bit for bit.
struct StepInfo {
    Phase phase;
    Path path;
    int epoch;
    int branch;
    int step;
    const ModelState& before;
    const ModelState& after;
    const std::vector<double>& update;
    const Batch& batch;
    double l_idc, l_adv, l_g, l_total;
};
using StepHook = std::function<void(const StepInfo&)>;

// First adversarial path: one Adam step on lambda_idc * L_idc for the
// classifier block. Encoder bits are untouched.
struct StepLosses {
    double l_idc = 0.0;
    double l_adv = 0.0;
    double l_g = 0.0;
    double l_total = 0.0;
};

StepLosses classifier_step(ModelState& state, OptimizerState& opt, const Batch& batch,
                           const LossWeights& w, std::vector<double>* applied = nullptr);

// Second adversarial path: one Adam step on lambda_adv * L_adv + L_g for the
// encoder block, with the adversarial gradient flowing through the frozen
// classifier. Classifier bits are untouched.
StepLosses encoder_step(ModelState& state, OptimizerState& opt, const Batch& batch,
                        const LossWeights& w, std::vector<double>* applied = nullptr);

// theta + eps * (phi - theta), elementwise.
std::vector<double> reptile_interpolate(const std::vector<double>& theta,
                                        const std::vector<double>& phi, double eps);

// theta_n + eps * mean_i(phi_i - theta_n). With one phi this performs the
// exact arithmetic of reptile_interpolate.
std::vector<double> reptile_average(const std::vector<double>& theta_n,
                                    const std::vector<std::vector<double>>& phis, double eps);

struct PhaseContext {
    TrainTrace* trace = nullptr;
    const StepHook* hook = nullptr;
    int epoch = 0;
    bool adversarial = true;
};

// Runs m two-path iterations on batches drawn from `subjects` and returns the
// encoder endpoint phi. Classifier parameters and moments evolve in place.
// Does not reset encoder moments; the caller decides restore points.
std::vector<double> meta_train_phase(ModelState& state, OptimizerState& opt,
                                     const DatasetView& train, const SubjectSet& subjects,
                                     const MetaConfig& cfg, const LossWeights& w, Rng& rng,
                                     const PhaseContext& ctx = {});

// T adapt branches: each samples p subjects disjoint from `exclude`, resets
// the encoder to theta_n (with fresh encoder moments), runs j iterations and
// records the endpoint. Ends by installing the averaged update into `state`
// and returning it. Classifier state is never reset across branches. epsilon
// is the same step size used for the epoch's interpolation.
std::vector<double> meta_adapt_phase(ModelState& state, OptimizerState& opt,
                                     const DatasetView& train, const SubjectSet& exclude,
                                     const MetaConfig& cfg, const LossWeights& w,
                                     double epsilon, Rng& rng, const PhaseContext& ctx = {});

struct RunOptions {
    bool adversarial = true; // false: lambda_adv forced to 0, no classifier path
    bool meta = true;        // false: plain two-path iterations over all subjects
    StepHook hook;
    std::function<void(int epoch, const ModelState&)> on_epoch_end;
};

struct RunResult {
    ModelState state;
    TrainTrace trace;
};

// Full training loop. Deterministic in (data view, configs, seed): the root
// rng is consumed in a fixed order (model init seed, then per epoch the
// subject draws and one batch-stream seed per phase/branch).
RunResult run_training(const DatasetView& train, const ArchConfig& arch, const MetaConfig& cfg,
                       const LossWeights& w, std::uint64_t seed, const RunOptions& opts = {});

} // namespace saze
