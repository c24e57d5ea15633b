#include "saze/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace saze {

void MetaConfig::validate(int training_subjects, bool meta_enabled) const {
    if (k < 1 || p < 1 || T < 1 || epochs < 1 || batch_size < 1)
        throw ConfigError("meta: k, p, T, epochs and batch_size must be >= 1");
    if (m < 0 || j < 0) throw ConfigError("meta: m and j must be >= 0");
    if (epsilon0 <= 0.0 || epsilon0 > 1.0)
        throw ConfigError("meta: epsilon0 must be in (0, 1]");
    const double f = decay_factor();
    if (f < 0.0 || f > 1.0) throw ConfigError("meta: epsilon decay factor must be in [0, 1]");
    if (meta_enabled && k + p > training_subjects)
        throw ConfigError("meta: k + p exceeds training subject count");
}

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::meta_train: return "meta_train";
        case Phase::meta_adapt: return "meta_adapt";
        case Phase::plain: return "plain";
    }
    return "?";
}

const char* path_name(Path p) {
    return p == Path::classifier ? "classifier" : "encoder";
}

void TrainTrace::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("trace: cannot open " + path.string());
    out << "epoch,phase,branch,step,path,l_idc,l_adv,l_g,l_total\n";
    char buf[256];
    for (const TraceRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%d,%d,%s,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                      phase_name(r.phase), r.branch, r.step, path_name(r.path), r.l_idc,
                      r.l_adv, r.l_g, r.l_total);
        out << buf;
    }
    if (!out) throw std::runtime_error("trace: failed writing " + path.string());
}

StepLosses classifier_step(ModelState& state, OptimizerState& opt, const Batch& batch,
                           const LossWeights& w, std::vector<double>* applied) {
    GradResult g = gradients(state, batch, LossPath::identity, w);
    opt.classifier.step(state.classifier_params, g.classifier_grad, opt.config, applied);
    return {g.l_idc, g.l_adv, g.l_g, total_encoder_loss(g.l_adv, g.l_g, w)};
}

StepLosses encoder_step(ModelState& state, OptimizerState& opt, const Batch& batch,
                        const LossWeights& w, std::vector<double>* applied) {
    GradResult g = gradients(state, batch, LossPath::encoder, w);
    opt.encoder.step(state.encoder_params, g.encoder_grad, opt.config, applied);
    return {g.l_idc, g.l_adv, g.l_g, total_encoder_loss(g.l_adv, g.l_g, w)};
}

std::vector<double> reptile_interpolate(const std::vector<double>& theta,
                                        const std::vector<double>& phi, double eps) {
    if (theta.size() != phi.size())
        throw std::invalid_argument("reptile_interpolate: length mismatch");
    if (eps < 0.0 || eps > 1.0)
        throw std::invalid_argument("reptile_interpolate: eps must be in [0, 1]");
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        out[i] = theta[i] + eps * (phi[i] - theta[i]);
    }
    return out;
}

std::vector<double> reptile_average(const std::vector<double>& theta_n,
                                    const std::vector<std::vector<double>>& phis, double eps) {
    if (phis.empty()) throw std::invalid_argument("reptile_average: no endpoints");
    if (eps < 0.0 || eps > 1.0)
        throw std::invalid_argument("reptile_average: eps must be in [0, 1]");
    for (const auto& phi : phis) {
        if (phi.size() != theta_n.size())
            throw std::invalid_argument("reptile_average: length mismatch");
    }
    const double t = static_cast<double>(phis.size());
    std::vector<double> acc(theta_n.size(), 0.0);
    for (const auto& phi : phis) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += phi[i] - theta_n[i];
    }
    std::vector<double> out(theta_n.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = theta_n[i] + eps * (acc[i] / t);
    }
    return out;
}

namespace {

void record(const PhaseContext& ctx, Phase phase, int branch, int step, Path path,
            const StepLosses& sl) {
    if (!ctx.trace) return;
    ctx.trace->rows.push_back(
        {ctx.epoch, phase, branch, step, path, sl.l_idc, sl.l_adv, sl.l_g, sl.l_total});
}

// One inner iteration: classifier path (when adversarial) then encoder path,
// both on the same batch.
void run_iteration(ModelState& state, OptimizerState& opt, const Batch& batch,
                   const LossWeights& w, Phase phase, int branch, int step,
                   const PhaseContext& ctx) {
    const bool hooked = ctx.hook && *ctx.hook;
    std::vector<double> applied;
    ModelState before;

    auto run_path = [&](Path path) {
        if (hooked) before = state;
        StepLosses sl = path == Path::classifier
                            ? classifier_step(state, opt, batch, w, hooked ? &applied : nullptr)
                            : encoder_step(state, opt, batch, w, hooked ? &applied : nullptr);
        record(ctx, phase, branch, step, path, sl);
        if (hooked) {
            (*ctx.hook)({phase, path, ctx.epoch, branch, step, before, state, applied, batch,
                         sl.l_idc, sl.l_adv, sl.l_g, sl.l_total});
        }
    };

    if (ctx.adversarial) run_path(Path::classifier);
    run_path(Path::encoder);
}

} // namespace

std::vector<double> meta_train_phase(ModelState& state, OptimizerState& opt,
                                     const DatasetView& train, const SubjectSet& subjects,
                                     const MetaConfig& cfg, const LossWeights& w, Rng& rng,
                                     const PhaseContext& ctx) {
    if (subjects.size() == 0)
        throw std::invalid_argument("meta_train_phase: empty subject set");
    BatchStream stream(train, subjects, cfg.batch_size, rng.next_u64());
    for (int it = 0; it < cfg.m; ++it) {
        const Batch batch = stream.next();
        run_iteration(state, opt, batch, w, Phase::meta_train, -1, it, ctx);
    }
    return state.encoder_params;
}

std::vector<double> meta_adapt_phase(ModelState& state, OptimizerState& opt,
                                     const DatasetView& train, const SubjectSet& exclude,
                                     const MetaConfig& cfg, const LossWeights& w,
                                     double epsilon, Rng& rng, const PhaseContext& ctx) {
    const std::vector<double> theta_n = state.encoder_params;
    std::vector<std::vector<double>> endpoints;
    endpoints.reserve(cfg.T);

    for (int i = 0; i < cfg.T; ++i) {
        const SubjectSet adapt = sample_meta_adapt_subjects(train, exclude, cfg.p, rng);
        state.encoder_params = theta_n;
        opt.encoder.reset();
        BatchStream stream(train, adapt, cfg.batch_size, rng.next_u64());
        for (int it = 0; it < cfg.j; ++it) {
            const Batch batch = stream.next();
            run_iteration(state, opt, batch, w, Phase::meta_adapt, i, it, ctx);
        }
        endpoints.push_back(state.encoder_params);
    }

    std::vector<double> theta_next = reptile_average(theta_n, endpoints, epsilon);
    state.encoder_params = theta_next;
    return theta_next;
}

RunResult run_training(const DatasetView& train, const ArchConfig& arch, const MetaConfig& cfg,
                       const LossWeights& w, std::uint64_t seed, const RunOptions& opts) {
    ArchConfig a = arch;
    if (a.identity_count == 0) a.identity_count = train.subject_count();
    if (a.identity_count != train.subject_count())
        throw ConfigError("run_training: identity_count must equal training subject count");
    LossWeights eff = w;
    if (!opts.adversarial) eff.lambda_adv = 0.0;
    eff.validate();
    cfg.validate(train.subject_count(), opts.meta);

    Rng root(seed);
    ModelState model = init_model(a, root.next_u64());
    OptimizerState opt =
        make_optimizer(model.encoder_params.size(), model.classifier_params.size(), cfg.optimizer);

    RunResult result;
    PhaseContext ctx;
    ctx.trace = &result.trace;
    ctx.hook = opts.hook ? &opts.hook : nullptr;
    ctx.adversarial = opts.adversarial;

    double eps = cfg.epsilon0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        ctx.epoch = epoch;
        if (opts.meta) {
            const SubjectSet meta_train = sample_meta_train_subjects(train, cfg.k, root);
            const std::vector<double> theta_o = model.encoder_params;
            opt.encoder.reset();
            const std::vector<double> phi =
                meta_train_phase(model, opt, train, meta_train, cfg, eff, root, ctx);
            model.encoder_params = reptile_interpolate(theta_o, phi, eps);
            meta_adapt_phase(model, opt, train, meta_train, cfg, eff, eps, root, ctx);
        } else {
            SubjectSet all{train.subjects()};
            BatchStream stream(train, all, cfg.batch_size, root.next_u64());
            const int iterations = cfg.m + cfg.T * cfg.j;
            for (int it = 0; it < iterations; ++it) {
                const Batch batch = stream.next();
                run_iteration(model, opt, batch, eff, Phase::plain, -1, it, ctx);
            }
        }

        if (cfg.schedule == EpsilonSchedule::multiplicative) {
            eps *= cfg.decay_factor();
        } else {
            eps = std::max(0.0, eps - cfg.epsilon0 * (1.0 - cfg.decay_factor()));
        }
        if (opts.on_epoch_end) opts.on_epoch_end(epoch, model);
    }

    result.state = std::move(model);
    return result;
}

} // namespace saze
