#pragma once

#include <cmath>
#include <vector>

#include "saze/config.hpp"
#include "saze/dataset.hpp"
#include "saze/eval.hpp"
#include "saze/model.hpp"
#include "saze/trainer.hpp"

namespace saze::testing {

// Small fixtures shared across the suites; big enough to exercise every code
// path, small enough to keep the unit tests fast.

inline SynthConfig tiny_synth(int subjects = 4, int per_subject = 12) {
    SynthConfig c;
    c.subject_count = subjects;
    c.samples_per_subject = per_subject;
    c.image_shape = {1, 16, 16};
    c.appearance_dim = 4;
    c.gaze_range = 0.5;
    c.confound_strength = 0.5;
    c.noise_std = 0.02;
    c.seed = 99;
    return c;
}

inline ArchConfig tiny_arch(int identity_count) {
    ArchConfig a;
    a.image_shape = {1, 16, 16};
    a.conv_blocks = {{4, 3, 2}};
    a.feature_dim = 8;
    a.classifier_hidden = {6};
    a.identity_count = identity_count;
    return a;
}

inline MetaConfig tiny_meta() {
    MetaConfig m;
    m.k = 2;
    m.p = 1;
    m.T = 2;
    m.m = 3;
    m.j = 2;
    m.epochs = 2;
    m.batch_size = 8;
    return m;
}

inline Batch seeded_batch(const DatasetView& view, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> positions(n);
    for (int i = 0; i < n; ++i)
        positions[i] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(view.size())));
    return gather_batch(view, positions);
}

// Central finite difference of the selected loss along one parameter
// coordinate; the oracle the analytic gradients are checked against.
inline double finite_difference(const ModelState& state, const Batch& batch, LossPath path,
                                const LossWeights& w, ParamBlock block, std::size_t coord,
                                double step) {
    ModelState probe = state;
    std::vector<double> params = get_params(state, block);
    const double original = params[coord];

    params[coord] = original + step;
    set_params(probe, block, params);
    const double up = loss_value(probe, batch, path, w);

    params[coord] = original - step;
    set_params(probe, block, params);
    const double down = loss_value(probe, batch, path, w);

    return (up - down) / (2.0 * step);
}

// Relative agreement used by the gradient checks: tiny values on both sides
// must agree absolutely, everything else to the given relative tolerance.
inline bool grad_close(double analytic, double numeric, double rel_tol) {
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    if (denom < 1e-6) return std::abs(analytic - numeric) < 1e-10;
    return std::abs(analytic - numeric) / denom < rel_tol;
}

} // namespace saze::testing
