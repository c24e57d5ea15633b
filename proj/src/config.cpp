#include "saze/config.hpp"

#include <fstream>

#include "json.hpp"

namespace saze {

namespace {

using nlohmann::json;

SynthConfig parse_synth(const json& j) {
    SynthConfig c;
    c.subject_count = j.value("subject_count", c.subject_count);
    c.samples_per_subject = j.value("samples_per_subject", c.samples_per_subject);
    if (j.contains("image_shape")) {
        const auto& sh = j.at("image_shape");
        c.image_shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
    }
    c.appearance_dim = j.value("appearance_dim", c.appearance_dim);
    c.gaze_range = j.value("gaze_range", c.gaze_range);
    c.confound_strength = j.value("confound_strength", c.confound_strength);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.seed = j.value("seed", c.seed);
    return c;
}

ArchConfig parse_arch(const json& j) {
    ArchConfig a;
    if (j.contains("conv_blocks")) {
        a.conv_blocks.clear();
        for (const auto& b : j.at("conv_blocks"))
            a.conv_blocks.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>()});
    }
    a.feature_dim = j.value("feature_dim", a.feature_dim);
    if (j.contains("classifier_hidden"))
        a.classifier_hidden = j.at("classifier_hidden").get<std::vector<int>>();
    return a;
}

MetaConfig parse_meta(const json& j) {
    MetaConfig m;
    m.k = j.value("k", m.k);
    m.p = j.value("p", m.p);
    m.T = j.value("T", m.T);
    m.m = j.value("m", m.m);
    m.j = j.value("j", m.j);
    m.epochs = j.value("epochs", m.epochs);
    m.epsilon0 = j.value("epsilon0", m.epsilon0);
    if (j.contains("epsilon_decay")) m.epsilon_decay = j.at("epsilon_decay").get<double>();
    const std::string sched = j.value("schedule", std::string("multiplicative"));
    if (sched == "multiplicative") {
        m.schedule = EpsilonSchedule::multiplicative;
    } else if (sched == "linear") {
        m.schedule = EpsilonSchedule::linear;
    } else {
        throw ConfigError("meta.schedule must be 'multiplicative' or 'linear'");
    }
    m.batch_size = j.value("batch_size", m.batch_size);
    m.optimizer.lr = j.value("lr", m.optimizer.lr);
    m.optimizer.weight_decay = j.value("weight_decay", m.optimizer.weight_decay);
    return m;
}

json synth_json(const SynthConfig& c) {
    return json{{"subject_count", c.subject_count},
                {"samples_per_subject", c.samples_per_subject},
                {"image_shape", {c.image_shape.channels, c.image_shape.height, c.image_shape.width}},
                {"appearance_dim", c.appearance_dim},
                {"gaze_range", c.gaze_range},
                {"confound_strength", c.confound_strength},
                {"noise_std", c.noise_std},
                {"seed", c.seed}};
}

json arch_json(const ArchConfig& a) {
    json blocks = json::array();
    for (const ConvSpec& c : a.conv_blocks)
        blocks.push_back({c.out_channels, c.kernel, c.stride});
    return json{{"conv_blocks", blocks},
                {"feature_dim", a.feature_dim},
                {"classifier_hidden", a.classifier_hidden}};
}

json meta_json(const MetaConfig& m) {
    json j{{"k", m.k},
           {"p", m.p},
           {"T", m.T},
           {"m", m.m},
           {"j", m.j},
           {"epochs", m.epochs},
           {"epsilon0", m.epsilon0},
           {"schedule", m.schedule == EpsilonSchedule::multiplicative ? "multiplicative" : "linear"},
           {"batch_size", m.batch_size},
           {"lr", m.optimizer.lr},
           {"weight_decay", m.optimizer.weight_decay}};
    if (m.epsilon_decay) j["epsilon_decay"] = *m.epsilon_decay;
    return j;
}

} // namespace

std::vector<GazeDirection> default_base_gazes(double gaze_range) {
    const double r = 0.5 * gaze_range;
    return {{0.0, 0.0}, {r, 0.0}, {-r, 0.0}, {0.0, r}, {0.0, -r}, {r, r}, {-r, -r}};
}

std::vector<GazeDirection> cluster_base_gazes(const ClusterSpec& spec, double gaze_range) {
    return spec.base_gazes.empty() ? default_base_gazes(gaze_range) : spec.base_gazes;
}

void ExperimentConfig::validate(bool loso) const {
    synth.validate();
    arch.validate();
    weights.validate();
    const int train_subjects = loso ? synth.subject_count - 1 : synth.subject_count;
    if (train_subjects < 1) throw ConfigError("config: not enough subjects for this protocol");
    meta.validate(train_subjects, true);
    if (eval.heatmap_yaw_bins < 1 || eval.heatmap_pitch_bins < 1)
        throw ConfigError("config: heatmap bins must be >= 1");
    if (eval.clusters.n_styles < 2) throw ConfigError("config: clusters.n_styles must be >= 2");
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }

    ExperimentConfig cfg;
    try {
        if (j.contains("synth")) cfg.synth = parse_synth(j.at("synth"));
        if (j.contains("arch")) cfg.arch = parse_arch(j.at("arch"));
        if (j.contains("meta")) cfg.meta = parse_meta(j.at("meta"));
        if (j.contains("weights")) {
            cfg.weights.lambda_adv = j.at("weights").value("lambda_adv", cfg.weights.lambda_adv);
            cfg.weights.lambda_idc = j.at("weights").value("lambda_idc", cfg.weights.lambda_idc);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            if (e.contains("heatmap_bins")) {
                cfg.eval.heatmap_yaw_bins = e.at("heatmap_bins").at(0).get<int>();
                cfg.eval.heatmap_pitch_bins = e.at("heatmap_bins").at(1).get<int>();
            }
            if (e.contains("probe")) {
                const auto& p = e.at("probe");
                cfg.eval.probe.train_fraction = p.value("train_fraction", cfg.eval.probe.train_fraction);
                cfg.eval.probe.iterations = p.value("iterations", cfg.eval.probe.iterations);
                cfg.eval.probe.lr = p.value("lr", cfg.eval.probe.lr);
                cfg.eval.probe.weight_decay = p.value("weight_decay", cfg.eval.probe.weight_decay);
                cfg.eval.probe_seed = p.value("seed", cfg.eval.probe_seed);
            }
            if (e.contains("clusters")) {
                const auto& c = e.at("clusters");
                cfg.eval.clusters.n_styles = c.value("n_styles", cfg.eval.clusters.n_styles);
                cfg.eval.clusters.seed = c.value("seed", cfg.eval.clusters.seed);
                if (c.contains("base_gazes")) {
                    for (const auto& g : c.at("base_gazes"))
                        cfg.eval.clusters.base_gazes.push_back(
                            {g.at(0).get<double>(), g.at(1).get<double>()});
                }
            }
        }
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }

    cfg.arch.image_shape = cfg.synth.image_shape;
    return cfg;
}

std::string experiment_to_json_string(const ExperimentConfig& cfg) {
    json eval_j{{"heatmap_bins", {cfg.eval.heatmap_yaw_bins, cfg.eval.heatmap_pitch_bins}},
                {"probe",
                 {{"train_fraction", cfg.eval.probe.train_fraction},
                  {"iterations", cfg.eval.probe.iterations},
                  {"lr", cfg.eval.probe.lr},
                  {"weight_decay", cfg.eval.probe.weight_decay},
                  {"seed", cfg.eval.probe_seed}}}};
    json clusters{{"n_styles", cfg.eval.clusters.n_styles}, {"seed", cfg.eval.clusters.seed}};
    if (!cfg.eval.clusters.base_gazes.empty()) {
        json gazes = json::array();
        for (const GazeDirection& g : cfg.eval.clusters.base_gazes)
            gazes.push_back({g.yaw, g.pitch});
        clusters["base_gazes"] = std::move(gazes);
    }
    eval_j["clusters"] = std::move(clusters);

    json j{{"synth", synth_json(cfg.synth)}, {"arch", arch_json(cfg.arch)},
           {"meta", meta_json(cfg.meta)},
           {"weights", {{"lambda_adv", cfg.weights.lambda_adv}, {"lambda_idc", cfg.weights.lambda_idc}}},
           {"eval", std::move(eval_j)},
           {"out_dir", cfg.out_dir},
           {"seed", cfg.seed}};
    return j.dump();
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const ExperimentConfig& cfg) {
    return fnv1a_hex(experiment_to_json_string(cfg));
}

} // namespace saze
