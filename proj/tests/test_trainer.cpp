#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "saze/trainer.hpp"

using namespace saze;

namespace {

struct Fixture {
    Dataset data = generate_synthetic_dataset(testing::tiny_synth(5, 12));
    DatasetView view{data};
    ArchConfig arch = testing::tiny_arch(5);
    LossWeights weights;

    ModelState fresh_model(std::uint64_t seed = 7) const { return init_model(arch, seed); }
    OptimizerState fresh_opt(const ModelState& m) const {
        return make_optimizer(m.encoder_params.size(), m.classifier_params.size(), {});
    }
};

} // namespace

TEST_CASE("paper defaults are wired into the config types") {
    const MetaConfig cfg;
    CHECK(cfg.k == 8);
    CHECK(cfg.p == 2);
    CHECK(cfg.T == 5);
    CHECK(cfg.m == 20);
    CHECK(cfg.j == 10);
    CHECK(cfg.epochs == 30);
    CHECK(cfg.epsilon0 == 1.0);
    CHECK(cfg.decay_factor() == doctest::Approx(1.0 - 1.0 / 30.0));
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.optimizer.lr == 1e-3);
    CHECK(cfg.optimizer.weight_decay == 1e-3);
    CHECK(LossWeights{}.lambda_adv == 5.0);
}

TEST_CASE("classifier step freezes the encoder bit-exactly") {
    Fixture f;
    ModelState state = f.fresh_model();
    OptimizerState opt = f.fresh_opt(state);
    const Batch batch = testing::seeded_batch(f.view, 8, 3);

    const std::vector<double> encoder_before = state.encoder_params;
    const std::vector<double> classifier_before = state.classifier_params;
    classifier_step(state, opt, batch, f.weights);
    CHECK(state.encoder_params == encoder_before);
    CHECK(state.classifier_params != classifier_before);
}

TEST_CASE("encoder step freezes the classifier bit-exactly") {
    Fixture f;
    ModelState state = f.fresh_model();
    OptimizerState opt = f.fresh_opt(state);
    const Batch batch = testing::seeded_batch(f.view, 8, 3);

    const std::vector<double> classifier_before = state.classifier_params;
    const std::vector<double> encoder_before = state.encoder_params;
    encoder_step(state, opt, batch, f.weights);
    CHECK(state.classifier_params == classifier_before);
    CHECK(state.encoder_params != encoder_before);
}

TEST_CASE("identity loss is non-increasing over repeated steps on a fixed batch") {
    Fixture f;
    ModelState state = f.fresh_model(11);
    OptimizerState opt = f.fresh_opt(state);
    const Batch batch = testing::seeded_batch(f.view, 8, 5);

    double prev = classifier_step(state, opt, batch, f.weights).l_idc;
    for (int i = 0; i < 19; ++i) {
        const double cur = classifier_step(state, opt, batch, f.weights).l_idc;
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("zero identity weight and zero decay leave the classifier bit-identical") {
    Fixture f;
    ModelState state = f.fresh_model();
    OptimizerState opt = f.fresh_opt(state);
    opt.config.weight_decay = 0.0;
    LossWeights w;
    w.lambda_idc = 0.0;
    const Batch batch = testing::seeded_batch(f.view, 8, 3);

    const std::vector<double> before = state.classifier_params;
    classifier_step(state, opt, batch, w);
    CHECK(state.classifier_params == before);
}

TEST_CASE("with lambda_adv = 0 the encoder step is pure gaze regression") {
    Fixture f;
    LossWeights w;
    w.lambda_adv = 0.0;
    const Batch batch = testing::seeded_batch(f.view, 8, 9);

    // Two states that differ only in classifier parameters must produce the
    // identical encoder update.
    ModelState s1 = f.fresh_model(21);
    ModelState s2 = s1;
    Rng rng(99);
    for (double& v : s2.classifier_params) v += rng.normal();

    OptimizerState o1 = f.fresh_opt(s1);
    OptimizerState o2 = f.fresh_opt(s2);
    std::vector<double> u1, u2;
    encoder_step(s1, o1, batch, w, &u1);
    encoder_step(s2, o2, batch, w, &u2);
    CHECK(u1 == u2);
    CHECK(s1.encoder_params == s2.encoder_params);
}

TEST_CASE("the adversarial term reaches the encoder through the frozen classifier") {
    Fixture f;
    const ModelState state = f.fresh_model(33);
    const Batch batch = testing::seeded_batch(f.view, 8, 7);

    LossWeights gaze_only;
    gaze_only.lambda_adv = 0.0;
    const GradResult with_adv = gradients(state, batch, LossPath::encoder, f.weights);
    const GradResult without = gradients(state, batch, LossPath::encoder, gaze_only);
    double diff = 0.0;
    for (std::size_t i = 0; i < with_adv.encoder_grad.size(); ++i)
        diff += std::abs(with_adv.encoder_grad[i] - without.encoder_grad[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("meta-train phase with m = 0 returns theta_o") {
    Fixture f;
    ModelState state = f.fresh_model();
    OptimizerState opt = f.fresh_opt(state);
    MetaConfig cfg = testing::tiny_meta();
    cfg.m = 0;
    Rng rng(1);
    const std::vector<double> theta_o = state.encoder_params;
    const SubjectSet subjects{{0, 1}};
    const std::vector<double> phi =
        meta_train_phase(state, opt, f.view, subjects, cfg, f.weights, rng);
    CHECK(phi == theta_o);
}

TEST_CASE("meta-train phase records m iterations of each path") {
    Fixture f;
    ModelState state = f.fresh_model();
    OptimizerState opt = f.fresh_opt(state);
    const MetaConfig cfg = testing::tiny_meta();
    Rng rng(2);
    TrainTrace trace;
    PhaseContext ctx;
    ctx.trace = &trace;
    meta_train_phase(state, opt, f.view, SubjectSet{{0, 1}}, cfg, f.weights, rng, ctx);

    int classifier_rows = 0, encoder_rows = 0;
    for (const TraceRow& r : trace.rows) {
        CHECK(r.phase == Phase::meta_train);
        (r.path == Path::classifier ? classifier_rows : encoder_rows) += 1;
    }
    CHECK(classifier_rows == cfg.m);
    CHECK(encoder_rows == cfg.m);
}

TEST_CASE("reptile interpolation endpoints and arithmetic") {
    const std::vector<double> theta{0.0, 2.0};
    const std::vector<double> phi{4.0, 2.0};
    CHECK(reptile_interpolate(theta, phi, 0.0) == theta);
    CHECK(reptile_interpolate(theta, phi, 1.0) == phi);
    CHECK(reptile_interpolate(theta, phi, 0.25) == std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(reptile_interpolate(theta, {1.0}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(reptile_interpolate(theta, phi, 1.5), std::invalid_argument);
}

TEST_CASE("reptile averaging: single endpoint equals interpolation") {
    Rng rng(8);
    std::vector<double> theta(257), phi(257);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] = rng.normal();
        phi[i] = rng.normal();
    }
    for (double eps : {0.0, 0.3, 0.7, 1.0}) {
        CHECK(reptile_average(theta, {phi}, eps) == reptile_interpolate(theta, phi, eps));
    }
}

TEST_CASE("reptile averaging arithmetic and linearity") {
    const std::vector<double> theta{0.0, 0.0};
    const std::vector<std::vector<double>> phis{{1.0, 1.0}, {3.0, -1.0}};
    CHECK(reptile_average(theta, phis, 0.5) == std::vector<double>{1.0, 0.0});

    // Constant offset: all endpoints at theta + c move theta by eps * c.
    Rng rng(4);
    std::vector<double> base(64), offset(64);
    for (std::size_t i = 0; i < base.size(); ++i) {
        base[i] = 1.0 + rng.uniform();          // in [1, 2)
        offset[i] = 0.125 * (1.0 + rng.uniform()); // small versus base
    }
    std::vector<double> endpoint(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) endpoint[i] = base[i] + offset[i];
    const std::vector<std::vector<double>> same{endpoint, endpoint, endpoint};
    const std::vector<double> next = reptile_average(base, same, 0.5);
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double c = endpoint[i] - base[i];
        CHECK(next[i] == base[i] + 0.5 * c);
    }

    // All endpoints equal to theta leave it unchanged.
    CHECK(reptile_average(base, {base, base}, 0.7) == base);
}

TEST_CASE("meta-adapt with zero learning rate returns theta_n exactly") {
    Fixture f;
    ModelState state = f.fresh_model();
    OptimizerState opt = f.fresh_opt(state);
    opt.config.lr = 0.0;
    const MetaConfig cfg = testing::tiny_meta();
    Rng rng(6);
    const std::vector<double> theta_n = state.encoder_params;
    const std::vector<double> next =
        meta_adapt_phase(state, opt, f.view, SubjectSet{{0, 1}}, cfg, f.weights, 0.5, rng);
    CHECK(next == theta_n);
    CHECK(state.encoder_params == theta_n);
}

TEST_CASE("meta-adapt runs T branches of j iterations, disjoint from the exclude set") {
    Fixture f;
    ModelState state = f.fresh_model();
    OptimizerState opt = f.fresh_opt(state);
    const MetaConfig cfg = testing::tiny_meta();
    Rng rng(12);
    TrainTrace trace;
    PhaseContext ctx;
    ctx.trace = &trace;
    const SubjectSet exclude{{0, 1}};

    std::vector<int> branch_steps(cfg.T, 0);
    const StepHook hook = [&](const StepInfo& info) {
        CHECK(info.phase == Phase::meta_adapt);
        for (int s : info.batch.subjects) CHECK_FALSE(exclude.contains(s));
        if (info.path == Path::encoder) branch_steps[info.branch] += 1;
    };
    ctx.hook = &hook;
    meta_adapt_phase(state, opt, f.view, exclude, cfg, f.weights, 0.5, rng, ctx);
    for (int i = 0; i < cfg.T; ++i) CHECK(branch_steps[i] == cfg.j);
}

TEST_CASE("the inner-loop endpoint decomposes into the recorded update sum") {
    Fixture f;
    ModelState state = f.fresh_model(51);
    OptimizerState opt = f.fresh_opt(state);
    const MetaConfig cfg = testing::tiny_meta();
    Rng rng(3);

    std::vector<double> replay = state.encoder_params; // theta_o
    const StepHook hook = [&](const StepInfo& info) {
        if (info.path != Path::encoder) return;
        for (std::size_t i = 0; i < replay.size(); ++i) replay[i] += info.update[i];
    };
    PhaseContext ctx;
    ctx.hook = &hook;
    const std::vector<double> phi =
        meta_train_phase(state, opt, f.view, SubjectSet{{0, 1, 2}}, cfg, f.weights, rng, ctx);
    CHECK(replay == phi);
}

TEST_CASE("freeze exactness holds across a whole training run") {
    Fixture f;
    MetaConfig cfg = testing::tiny_meta();

    RunOptions opts;
    std::vector<double> prev_encoder, prev_classifier;
    int steps = 0;
    opts.hook = [&](const StepInfo& info) {
        if (info.path == Path::classifier) {
            CHECK(info.before.encoder_params == info.after.encoder_params);
        } else {
            CHECK(info.before.classifier_params == info.after.classifier_params);
        }
        ++steps;
    };
    run_training(f.view, f.arch, cfg, f.weights, 97, opts);
    CHECK(steps == cfg.epochs * (cfg.m + cfg.T * cfg.j) * 2);
}

TEST_CASE("training runs are bit-deterministic in the seed") {
    Fixture f;
    const MetaConfig cfg = testing::tiny_meta();
    const RunResult a = run_training(f.view, f.arch, cfg, f.weights, 123);
    const RunResult b = run_training(f.view, f.arch, cfg, f.weights, 123);
    const RunResult c = run_training(f.view, f.arch, cfg, f.weights, 124);

    CHECK(a.state.encoder_params == b.state.encoder_params);
    CHECK(a.state.classifier_params == b.state.classifier_params);
    CHECK(a.state.encoder_params != c.state.encoder_params);

    REQUIRE(a.trace.rows.size() == b.trace.rows.size());
    for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
        CHECK(a.trace.rows[i].l_total == b.trace.rows[i].l_total);
        CHECK(a.trace.rows[i].l_idc == b.trace.rows[i].l_idc);
    }
}

TEST_CASE("ablation switches change the trace shape") {
    Fixture f;
    const MetaConfig cfg = testing::tiny_meta();
    const int iterations = cfg.epochs * (cfg.m + cfg.T * cfg.j);

    RunOptions full;
    CHECK(run_training(f.view, f.arch, cfg, f.weights, 5, full).trace.rows.size() ==
          static_cast<std::size_t>(iterations * 2));

    RunOptions no_adv;
    no_adv.adversarial = false;
    const RunResult na = run_training(f.view, f.arch, cfg, f.weights, 5, no_adv);
    CHECK(na.trace.rows.size() == static_cast<std::size_t>(iterations));
    for (const TraceRow& r : na.trace.rows) {
        CHECK(r.path == Path::encoder);
        CHECK(r.l_total == r.l_g); // lambda_adv forced to zero
    }

    RunOptions plain;
    plain.adversarial = false;
    plain.meta = false;
    const RunResult pl = run_training(f.view, f.arch, cfg, f.weights, 5, plain);
    CHECK(pl.trace.rows.size() == static_cast<std::size_t>(iterations));
    for (const TraceRow& r : pl.trace.rows) CHECK(r.phase == Phase::plain);
}

TEST_CASE("meta config validation") {
    MetaConfig cfg = testing::tiny_meta();
    CHECK_NOTHROW(cfg.validate(5, true));
    cfg.k = 5;
    cfg.p = 1;
    CHECK_THROWS_AS(cfg.validate(5, true), ConfigError);
    CHECK_NOTHROW(cfg.validate(5, false)); // plain mode has no k+p bound
    cfg = testing::tiny_meta();
    cfg.epsilon0 = 0.0;
    CHECK_THROWS_AS(cfg.validate(5, true), ConfigError);
    cfg = testing::tiny_meta();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(5, true), ConfigError);
}
