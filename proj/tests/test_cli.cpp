#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "saze_cli_tests";

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(SAZE_BIN_PATH) + " " + args + " >> " + (kWork / "cli.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json tiny_config() {
    return json{
        {"seed", 5},
        {"out_dir", (kWork / "runs").string()},
        {"synth",
         {{"subject_count", 4},
          {"samples_per_subject", 10},
          {"image_shape", {1, 16, 16}},
          {"appearance_dim", 4},
          {"gaze_range", 0.5},
          {"confound_strength", 0.5},
          {"noise_std", 0.02},
          {"seed", 7}}},
        {"arch", {{"conv_blocks", {{4, 3, 2}}}, {"feature_dim", 8}, {"classifier_hidden", {4}}}},
        {"meta",
         {{"k", 2}, {"p", 1}, {"T", 2}, {"m", 2}, {"j", 1}, {"epochs", 2}, {"batch_size", 8}}},
        {"weights", {{"lambda_adv", 5.0}, {"lambda_idc", 1.0}}},
        {"eval",
         {{"heatmap_bins", {2, 2}},
          {"probe", {{"iterations", 60}}},
          {"clusters", {{"n_styles", 4}, {"seed", 3}}}}}};
}

fs::path write_config(const json& j, const std::string& name) {
    fs::create_directories(kWork);
    const fs::path p = kWork / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    int n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

struct Workspace {
    Workspace() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
    }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

// The full pipeline is expensive enough that test cases share one generated
// dataset and a handful of runs; each helper is idempotent so the cases stay
// independent of execution order.
const fs::path& dataset_dir() {
    workspace();
    static fs::path dir = [] {
        const fs::path cfg = write_config(tiny_config(), "config.json");
        const fs::path out = kWork / "dataset";
        REQUIRE(run_cli("generate --config " + cfg.string() + " --out " + out.string()) == 0);
        return out;
    }();
    return dir;
}

fs::path ensure_run(const std::string& command, const std::string& ablation,
                    const fs::path& out, const std::string& extra = "") {
    const fs::path cfg = write_config(tiny_config(), "config.json");
    if (!fs::exists(out / "meta.json")) {
        REQUIRE(run_cli(command + " --config " + cfg.string() + " --data " +
                        dataset_dir().string() + " --ablation " + ablation + " --out " +
                        out.string() + extra) == 0);
    }
    return out;
}

} // namespace

TEST_CASE("generate is deterministic and honors the config") {
    const fs::path cfg = write_config(tiny_config(), "config.json");
    const fs::path out2 = kWork / "dataset_again";
    REQUIRE(run_cli("generate --config " + cfg.string() + " --out " + out2.string()) == 0);

    CHECK(slurp(dataset_dir() / "manifest.json") == slurp(out2 / "manifest.json"));

    const json manifest = json::parse(slurp(dataset_dir() / "manifest.json"));
    CHECK(manifest.at("subject_count").get<int>() == 4);
    CHECK(manifest.at("samples").size() == 40);
    CHECK(manifest.at("pixel_format").get<std::string>() == "float32_raw");
}

TEST_CASE("generate with a corrupt config exits 2 and leaves no partial directory") {
    json bad = tiny_config();
    bad["synth"]["subject_count"] = -3;
    const fs::path cfg = write_config(bad, "bad_config.json");
    const fs::path out = kWork / "bad_dataset";
    CHECK(run_cli("generate --config " + cfg.string() + " --out " + out.string()) == 2);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("train writes a trace, checkpoints and run metadata") {
    const fs::path cfg = write_config(tiny_config(), "config.json");
    const fs::path out = ensure_run("train", "full", kWork / "train-full");

    // header + E*(m + T*j) iterations * 2 path records
    const int iterations = 2 * (2 + 2 * 1);
    CHECK(count_lines(out / "trace.csv") == 1 + iterations * 2);
    CHECK(fs::exists(out / "checkpoints/epoch_000/manifest.json"));
    CHECK(fs::exists(out / "checkpoints/epoch_001/encoder.f32"));
    CHECK(fs::exists(out / "final/classifier.f32"));

    const json meta = json::parse(slurp(out / "meta.json"));
    CHECK(meta.at("ablation").get<std::string>() == "full");
    CHECK_FALSE(meta.at("config_hash").get<std::string>().empty());

    // Same seed, same bytes.
    const fs::path out2 = kWork / "train-full-repeat";
    REQUIRE(run_cli("train --config " + cfg.string() + " --data " + dataset_dir().string() +
                    " --ablation full --out " + out2.string()) == 0);
    CHECK(slurp(out / "final/encoder.f32") == slurp(out2 / "final/encoder.f32"));
    CHECK(slurp(out / "trace.csv") == slurp(out2 / "trace.csv"));
}

TEST_CASE("plain ablation trains encoder-only steps") {
    const fs::path cfg = write_config(tiny_config(), "config.json");
    const fs::path out = kWork / "train-plain";
    REQUIRE(run_cli("train --config " + cfg.string() + " --data " + dataset_dir().string() +
                    " --ablation plain --out " + out.string()) == 0);
    const int iterations = 2 * (2 + 2 * 1);
    CHECK(count_lines(out / "trace.csv") == 1 + iterations); // one record per iteration

    std::ifstream in(out / "trace.csv");
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        CHECK(line.find("plain") != std::string::npos);
        CHECK(line.find("encoder") != std::string::npos);
    }

    CHECK(run_cli("train --config " + cfg.string() + " --data " + dataset_dir().string() +
                  " --ablation bogus --out " + (kWork / "x").string()) == 2);
}

TEST_CASE("loso emits a per-subject report with provenance") {
    const fs::path out = ensure_run("loso", "full", kWork / "runroot/loso-full");

    const json report = json::parse(slurp(out / "report.json"));
    REQUIRE(report.at("per_subject").size() == 4);
    double weighted = 0.0;
    int samples = 0;
    for (const auto& row : report.at("per_subject")) {
        weighted += row.at("mean_error_deg").get<double>() * row.at("samples").get<int>();
        samples += row.at("samples").get<int>();
    }
    CHECK(report.at("overall_mean_deg").get<double>() ==
          doctest::Approx(weighted / samples).epsilon(1e-9));
    CHECK_FALSE(report.at("config_hash").get<std::string>().empty());
    CHECK(fs::exists(out / "per_subject.csv"));
    CHECK(fs::exists(out / "heatmap.csv"));
    CHECK(report.contains("probe"));
}

TEST_CASE("genvar emits one row per cluster and unit ratios against itself") {
    const fs::path cfg = write_config(tiny_config(), "config.json");
    const fs::path ckpt = ensure_run("train", "full", kWork / "train-full") / "final";
    REQUIRE(fs::exists(ckpt / "encoder.f32"));

    const fs::path out = kWork / "genvar";
    REQUIRE(run_cli("genvar --config " + cfg.string() + " --checkpoint " + ckpt.string() +
                    " --baseline " + ckpt.string() + " --out " + out.string()) == 0);

    CHECK(count_lines(out / "genvar.csv") == 1 + 7); // default seven gaze targets
    const json report = json::parse(slurp(out / "genvar.json"));
    REQUIRE(report.at("clusters").size() == 7);
    for (const auto& row : report.at("clusters")) {
        CHECK(row.at("ratio_yaw").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(row.at("ratio_pitch").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("report bundles plot data with checksums and deltas") {
    const fs::path root = kWork / "runroot";
    ensure_run("loso", "full", root / "loso-full");
    ensure_run("loso", "plain", root / "loso-plain");

    REQUIRE(run_cli("report " + root.string()) == 0);
    const fs::path bundle = root / "report_bundle";
    const json manifest = json::parse(slurp(bundle / "bundle.json"));
    CHECK(manifest.at("files").size() >= 3);
    for (const auto& f : manifest.at("files")) {
        CHECK(fs::exists(bundle / f.at("name").get<std::string>()));
        CHECK(f.at("fnv1a64").get<std::string>().size() == 16);
    }

    // delta = error(plain baseline) - error(full variant), per subject
    const json full = json::parse(slurp(root / "loso-full/report.json"));
    const json plain = json::parse(slurp(root / "loso-plain/report.json"));
    std::ifstream delta(bundle / "ablation_delta.csv");
    std::string header, line;
    REQUIRE(std::getline(delta, header));
    CHECK(header == "subject,delta_plain_minus_full");
    int rows = 0;
    while (std::getline(delta, line)) {
        const auto comma = line.find(',');
        const int subject = std::stoi(line.substr(0, comma));
        const double value = std::stod(line.substr(comma + 1));
        const double expect =
            plain.at("per_subject")[subject].at("mean_error_deg").get<double>() -
            full.at("per_subject")[subject].at("mean_error_deg").get<double>();
        CHECK(value == doctest::Approx(expect).epsilon(1e-9));
        ++rows;
    }
    CHECK(rows == 4);
}

TEST_CASE("report refuses empty directories and mismatched hashes") {
    const fs::path empty = kWork / "empty_run";
    fs::create_directories(empty);
    CHECK(run_cli("report " + empty.string()) == 3);

    // A run with a different seed has a different config hash.
    const fs::path cfg = write_config(tiny_config(), "config.json");
    const fs::path root = kWork / "runroot_mismatch";
    fs::create_directories(root);
    fs::copy(ensure_run("loso", "full", kWork / "runroot/loso-full"), root / "loso-full",
             fs::copy_options::recursive | fs::copy_options::skip_existing);
    REQUIRE(run_cli("loso --config " + cfg.string() + " --data " + dataset_dir().string() +
                    " --seed 1234 --out " + (root / "loso-other-seed").string()) == 0);
    CHECK(run_cli("report " + root.string()) == 3);
}
