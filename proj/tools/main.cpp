#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "saze/config.hpp"
#include "saze/dataset.hpp"
#include "saze/eval.hpp"
#include "saze/model.hpp"
#include "saze/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct AblationMode {
    std::string name = "full";
    bool adversarial = true;
    bool meta = true;
};

AblationMode parse_ablation(const std::string& s) {
    if (s == "full") return {s, true, true};
    if (s == "no-adv") return {s, false, true};
    if (s == "no-meta") return {s, true, false};
    if (s == "plain") return {s, false, false};
    throw saze::ConfigError("unknown ablation mode '" + s + "' (full|no-adv|no-meta|plain)");
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
    if (!out) throw std::runtime_error("failed to write " + p.string());
}

// Replace-on-success directory write.
void atomic_dir_write(const fs::path& target, const std::function<void(const fs::path&)>& fill) {
    fs::path tmp = target;
    tmp += ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp.parent_path().empty() ? "." : tmp.parent_path());
    fill(tmp);
    fs::remove_all(target);
    fs::rename(tmp, target);
}

void write_run_meta(const fs::path& dir, const std::string& command, const std::string& ablation,
                    std::uint64_t seed, const std::string& hash) {
    json meta{{"command", command},
              {"ablation", ablation},
              {"seed", seed},
              {"config_hash", hash}};
    write_text(dir / "meta.json", meta.dump(2) + "\n");
}

struct CommonArgs {
    std::string config_path;
    std::string data_path;
    std::string out_dir;
    std::string ablation = "full";
    std::optional<std::uint64_t> seed;
};

saze::ExperimentConfig load_config(const CommonArgs& args, bool loso) {
    saze::ExperimentConfig cfg = saze::load_experiment_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    cfg.validate(loso);
    return cfg;
}

int cmd_generate(const CommonArgs& args) {
    saze::ExperimentConfig cfg = saze::load_experiment_config(args.config_path);
    if (args.seed) cfg.synth.seed = *args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    cfg.synth.validate();

    const fs::path out = args.out_dir.empty() ? fs::path(cfg.out_dir) / "dataset"
                                              : fs::path(args.out_dir);
    const saze::Dataset d = saze::generate_synthetic_dataset(cfg.synth);
    atomic_dir_write(out, [&](const fs::path& tmp) { saze::save_dataset(d, tmp); });

    std::printf("dataset: %s\n", out.string().c_str());
    std::printf("subjects: %d  samples: %d  shape: %dx%dx%d\n", d.subject_count, d.size(),
                d.image_shape.channels, d.image_shape.height, d.image_shape.width);
    return 0;
}

int cmd_train(const CommonArgs& args) {
    saze::ExperimentConfig cfg = load_config(args, /*loso=*/false);
    const AblationMode mode = parse_ablation(args.ablation);
    const std::string hash = saze::config_hash(cfg);

    const saze::Dataset data = saze::load_dataset(args.data_path);
    const saze::DatasetView view(data);
    saze::ArchConfig arch = cfg.arch;
    arch.image_shape = data.image_shape;

    const fs::path out = args.out_dir.empty()
                             ? fs::path(cfg.out_dir) / ("train-" + mode.name)
                             : fs::path(args.out_dir);
    fs::create_directories(out / "checkpoints");

    saze::RunOptions opts;
    opts.adversarial = mode.adversarial;
    opts.meta = mode.meta;
    opts.on_epoch_end = [&](int epoch, const saze::ModelState& state) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d", epoch);
        saze::save_checkpoint(state, out / "checkpoints" / name, {epoch, hash});
    };

    saze::RunResult result;
    try {
        result = saze::run_training(view, arch, cfg.meta, cfg.weights, cfg.seed, opts);
    } catch (...) {
        // Preserve whatever was traced before the failure.
        std::error_code ec;
        fs::create_directories(out, ec);
        throw;
    }

    result.trace.write_csv(out / "trace.csv");
    saze::save_checkpoint(result.state, out / "final", {cfg.meta.epochs, hash});
    write_run_meta(out, "train", mode.name, cfg.seed, hash);
    std::printf("run: %s\n", out.string().c_str());
    std::printf("trace rows: %zu  final checkpoint: %s\n", result.trace.rows.size(),
                (out / "final").string().c_str());
    return 0;
}

int cmd_loso(const CommonArgs& args) {
    saze::ExperimentConfig cfg = load_config(args, /*loso=*/true);
    const AblationMode mode = parse_ablation(args.ablation);
    const std::string hash = saze::config_hash(cfg);

    const saze::Dataset data = saze::load_dataset(args.data_path);
    saze::ArchConfig arch = cfg.arch;
    arch.image_shape = data.image_shape;

    const fs::path out = args.out_dir.empty() ? fs::path(cfg.out_dir) / ("loso-" + mode.name)
                                              : fs::path(args.out_dir);
    fs::create_directories(out);

    saze::RunOptions opts;
    opts.adversarial = mode.adversarial;
    opts.meta = mode.meta;

    std::map<int, saze::ModelState> fold_states;
    saze::MetricsReport report =
        saze::run_loso(data, arch, cfg.meta, cfg.weights, cfg.seed, opts, /*max_threads=*/1,
                       [&](int subject, const saze::ModelState& state, const saze::TrainTrace&) {
                           fold_states.emplace(subject, state);
                       });
    report.config_hash = hash;
    report.seed = cfg.seed;

    // Aggregate holdout heatmap over the dataset-wide gaze range, plus the
    // mean identity-probe accuracy over the folds' training views.
    double ymin = data.samples[0].gaze.yaw, ymax = ymin;
    double pmin = data.samples[0].gaze.pitch, pmax = pmin;
    for (const saze::Sample& s : data.samples) {
        ymin = std::min(ymin, s.gaze.yaw);
        ymax = std::max(ymax, s.gaze.yaw);
        pmin = std::min(pmin, s.gaze.pitch);
        pmax = std::max(pmax, s.gaze.pitch);
    }
    std::vector<saze::GazeDirection> truths;
    std::vector<double> errors;
    double probe_sum = 0.0;
    for (const auto& [subject, state] : fold_states) {
        auto [train, test] = saze::split_leave_one_subject_out(data, subject);
        const std::vector<double> fold_errors = saze::per_sample_errors(state, test);
        for (int i = 0; i < test.size(); ++i) {
            truths.push_back(test.sample(i).gaze);
            errors.push_back(fold_errors[i]);
        }
        probe_sum +=
            saze::identity_probe(state, train, cfg.eval.probe_seed, cfg.eval.probe).accuracy;
    }
    report.heatmap =
        saze::heatmap_from_errors(truths, errors, cfg.eval.heatmap_yaw_bins,
                                  cfg.eval.heatmap_pitch_bins, ymin, ymax, pmin, pmax);
    saze::ProbeResult probe;
    probe.accuracy = probe_sum / static_cast<double>(fold_states.size());
    probe.chance = 1.0 / (data.subject_count - 1);
    report.probe = probe;

    saze::save_metrics_report(report, out);
    write_run_meta(out, "loso", mode.name, cfg.seed, hash);
    std::printf("loso report: %s\n", (out / "report.json").string().c_str());
    std::printf("overall mean angle error: %.4f deg  subject std: %.4f deg\n",
                report.overall_mean_deg, report.subject_std_deg);
    return 0;
}

int cmd_genvar(const CommonArgs& args, const std::string& checkpoint,
               const std::string& baseline) {
    saze::ExperimentConfig cfg = load_config(args, /*loso=*/false);

    saze::CheckpointMeta meta;
    const saze::ModelState state = saze::load_checkpoint(checkpoint, &meta);
    if (!(state.arch.image_shape == cfg.synth.image_shape))
        throw saze::ConfigError("genvar: checkpoint image shape does not match generator config");

    const std::vector<saze::GazeDirection> gazes =
        saze::cluster_base_gazes(cfg.eval.clusters, cfg.synth.gaze_range);
    std::vector<std::vector<saze::Sample>> clusters;
    for (std::size_t c = 0; c < gazes.size(); ++c) {
        clusters.push_back(saze::generate_style_cluster(
            gazes[c], cfg.eval.clusters.n_styles, cfg.synth,
            saze::mix_seed(cfg.eval.clusters.seed, 0x434c5553ull, c)));
    }
    const std::vector<saze::StyleVariance> ours = saze::style_variance(state, clusters);

    std::vector<saze::StyleVariance> base;
    if (!baseline.empty()) {
        const saze::ModelState base_state = saze::load_checkpoint(baseline);
        if (!(base_state.arch.image_shape == cfg.synth.image_shape))
            throw saze::ConfigError("genvar: baseline image shape does not match generator config");
        base = saze::style_variance(base_state, clusters);
    }

    const fs::path out =
        args.out_dir.empty() ? fs::path(cfg.out_dir) / "genvar" : fs::path(args.out_dir);
    fs::create_directories(out);

    json rows = json::array();
    std::ostringstream csv;
    csv << (base.empty() ? "cluster,base_yaw,base_pitch,var_yaw,var_pitch\n"
                         : "cluster,base_yaw,base_pitch,var_yaw,var_pitch,baseline_var_yaw,"
                           "baseline_var_pitch,ratio_yaw,ratio_pitch\n");
    for (std::size_t c = 0; c < ours.size(); ++c) {
        json row{{"cluster", static_cast<int>(c)},
                 {"base_yaw", gazes[c].yaw},
                 {"base_pitch", gazes[c].pitch},
                 {"var_yaw", ours[c].var_yaw},
                 {"var_pitch", ours[c].var_pitch}};
        char buf[320];
        if (base.empty()) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", c, gazes[c].yaw,
                          gazes[c].pitch, ours[c].var_yaw, ours[c].var_pitch);
        } else {
            const double ry = ours[c].var_yaw / base[c].var_yaw;
            const double rp = ours[c].var_pitch / base[c].var_pitch;
            row["baseline_var_yaw"] = base[c].var_yaw;
            row["baseline_var_pitch"] = base[c].var_pitch;
            row["ratio_yaw"] = ry;
            row["ratio_pitch"] = rp;
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          c, gazes[c].yaw, gazes[c].pitch, ours[c].var_yaw, ours[c].var_pitch,
                          base[c].var_yaw, base[c].var_pitch, ry, rp);
        }
        csv << buf;
        rows.push_back(std::move(row));
    }

    json j{{"config_hash", saze::config_hash(cfg)},
           {"checkpoint", checkpoint},
           {"n_styles", cfg.eval.clusters.n_styles},
           {"clusters", std::move(rows)}};
    if (!baseline.empty()) j["baseline"] = baseline;
    write_text(out / "genvar.json", j.dump(2) + "\n");
    write_text(out / "genvar.csv", csv.str());
    std::printf("genvar report: %s (%zu clusters)\n", (out / "genvar.json").string().c_str(),
                ours.size());
    return 0;
}

// Collects completed runs under `run_dir` (meta.json markers, depth <= 2) and
// emits the plot-data bundle.
int cmd_report(const std::string& run_dir_arg, const std::string& out_override) {
    const fs::path run_dir(run_dir_arg);
    if (!fs::is_directory(run_dir))
        throw std::runtime_error("report: no such run directory: " + run_dir.string());

    struct Run {
        fs::path dir;
        std::string name;
        std::string command;
        std::string ablation;
        std::string config_hash;
    };
    std::vector<Run> runs;
    auto consider = [&](const fs::path& dir) {
        const fs::path meta_path = dir / "meta.json";
        if (!fs::is_regular_file(meta_path)) return;
        std::ifstream in(meta_path);
        json meta = json::parse(in);
        runs.push_back({dir, dir.filename().string(), meta.value("command", ""),
                        meta.value("ablation", ""), meta.value("config_hash", "")});
    };
    consider(run_dir);
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        if (entry.is_directory()) consider(entry.path());
    }
    if (runs.empty())
        throw std::runtime_error("report: no completed runs (meta.json) under " +
                                 run_dir.string());

    for (const Run& r : runs) {
        if (r.config_hash != runs.front().config_hash)
            throw std::runtime_error("report: config hash mismatch between runs '" +
                                     runs.front().name + "' and '" + r.name + "'");
    }

    const fs::path out = out_override.empty() ? run_dir / "report_bundle" : fs::path(out_override);
    fs::create_directories(out);

    std::vector<std::string> emitted;
    std::vector<std::string> missing;
    auto emit_copy = [&](const fs::path& src, const std::string& dst_name) {
        if (!fs::is_regular_file(src)) {
            missing.push_back(src.string());
            return false;
        }
        fs::copy_file(src, out / dst_name, fs::copy_options::overwrite_existing);
        emitted.push_back(dst_name);
        return true;
    };

    // Per-run loss curves, per-subject tables and heatmap grids.
    std::map<std::string, std::map<int, double>> loso_errors; // ablation -> subject -> error
    for (const Run& r : runs) {
        emit_copy(r.dir / "trace.csv", "loss_curves_" + r.name + ".csv");
        if (r.command == "loso") {
            emit_copy(r.dir / "per_subject.csv", "per_subject_" + r.name + ".csv");
            emit_copy(r.dir / "heatmap.csv", "heatmap_" + r.name + ".csv");
            const fs::path report_path = r.dir / "report.json";
            if (fs::is_regular_file(report_path)) {
                std::ifstream in(report_path);
                json rep = json::parse(in);
                if (rep.value("config_hash", "") != r.config_hash)
                    throw std::runtime_error("report: config hash mismatch inside " +
                                             report_path.string());
                for (const auto& row : rep.at("per_subject")) {
                    loso_errors[r.ablation][row.at("subject").get<int>()] =
                        row.at("mean_error_deg").get<double>();
                }
            } else {
                missing.push_back(report_path.string());
            }
        }
    }

    // Ablation deltas: baseline error minus variant error, per subject.
    if (loso_errors.size() >= 2) {
        std::string baseline;
        for (const char* cand : {"plain", "no-adv", "no-meta", "full"}) {
            if (loso_errors.count(cand)) {
                baseline = cand;
                break;
            }
        }
        std::vector<std::string> variants;
        for (const auto& [name, _] : loso_errors) {
            if (name != baseline) variants.push_back(name);
        }
        std::ostringstream csv;
        csv << "subject";
        for (const std::string& v : variants) csv << ",delta_" << baseline << "_minus_" << v;
        csv << "\n";
        for (const auto& [subject, base_err] : loso_errors[baseline]) {
            csv << subject;
            for (const std::string& v : variants) {
                csv << "," << (loso_errors[v].count(subject)
                                   ? std::to_string(base_err - loso_errors[v][subject])
                                   : std::string());
            }
            csv << "\n";
        }
        write_text(out / "ablation_delta.csv", csv.str());
        emitted.push_back("ablation_delta.csv");
    }

    json manifest{{"run_dir", run_dir.string()},
                  {"config_hash", runs.front().config_hash},
                  {"files", json::array()}};
    for (const std::string& name : emitted) {
        manifest["files"].push_back(
            {{"name", name}, {"fnv1a64", saze::fnv1a_hex(read_file(out / name))}});
    }
    write_text(out / "bundle.json", manifest.dump(2) + "\n");

    std::printf("bundle: %s (%zu files)\n", out.string().c_str(), emitted.size());
    for (const std::string& m : missing) std::printf("missing: %s\n", m.c_str());
    if (emitted.empty()) throw std::runtime_error("report: nothing to emit");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAZE: adversarially debiased gaze estimation lab"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string checkpoint, baseline, run_dir;

    auto add_common = [&](CLI::App* cmd, bool with_data, bool with_ablation) {
        cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
        if (with_data)
            cmd->add_option("--data", args.data_path, "dataset directory")->required();
        if (with_ablation)
            cmd->add_option("--ablation", args.ablation, "full|no-adv|no-meta|plain");
        cmd->add_option("--seed", args.seed, "seed override");
        cmd->add_option("--out", args.out_dir, "output directory override");
    };

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
    add_common(generate, false, false);

    CLI::App* train = app.add_subcommand("train", "train on a dataset");
    add_common(train, true, true);

    CLI::App* loso = app.add_subcommand("loso", "leave-one-subject-out protocol");
    add_common(loso, true, true);

    CLI::App* genvar = app.add_subcommand("genvar", "style-cluster gaze variance");
    genvar->add_option("--config", args.config_path, "experiment config (JSON)")->required();
    genvar->add_option("--checkpoint", checkpoint, "trained checkpoint directory")->required();
    genvar->add_option("--baseline", baseline, "baseline checkpoint for comparison mode");
    genvar->add_option("--out", args.out_dir, "output directory override");

    CLI::App* report = app.add_subcommand("report", "emit plot-data bundle for a run directory");
    report->add_option("run_dir", run_dir, "directory containing completed runs")->required();
    report->add_option("--out", args.out_dir, "bundle output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) return cmd_generate(args);
        if (train->parsed()) return cmd_train(args);
        if (loso->parsed()) return cmd_loso(args);
        if (genvar->parsed()) return cmd_genvar(args, checkpoint, baseline);
        if (report->parsed()) return cmd_report(run_dir, args.out_dir);
    } catch (const saze::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
