#include "saze/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace saze {

std::array<double, 3> gaze_to_vector(GazeDirection g) {
    const double cp = std::cos(g.pitch);
    return {-cp * std::sin(g.yaw), -std::sin(g.pitch), -cp * std::cos(g.yaw)};
}

double angular_error_deg(GazeDirection a, GazeDirection b) {
    const auto va = gaze_to_vector(a);
    const auto vb = gaze_to_vector(b);
    double dot = va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2];
    dot = std::clamp(dot, -1.0, 1.0);
    return std::acos(dot) * (180.0 / 3.14159265358979323846);
}

double population_variance(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("population_variance: empty input");
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                        static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(values.size());
}

ViewPredictions forward_view(const ModelState& state, const DatasetView& view) {
    constexpr int kChunk = 256;
    ViewPredictions out;
    out.gaze.reserve(view.size());
    out.features = Matrix(view.size(), state.arch.feature_dim);

    std::vector<int> positions;
    for (int start = 0; start < view.size(); start += kChunk) {
        const int n = std::min(kChunk, view.size() - start);
        positions.resize(n);
        std::iota(positions.begin(), positions.end(), start);
        const Batch batch = gather_batch(view, positions);
        EncoderOut enc = encoder_forward(state, batch.images);
        for (int r = 0; r < n; ++r) {
            out.gaze.push_back(enc.gaze[r]);
            std::copy(enc.features.row(r), enc.features.row(r) + enc.features.cols,
                      out.features.row(start + r));
        }
    }
    return out;
}

MetricsReport evaluate(const ModelState& state, const DatasetView& view) {
    if (view.size() == 0) throw std::invalid_argument("evaluate: empty view");
    const ViewPredictions preds = forward_view(state, view);

    std::map<int, std::pair<double, int>> by_subject; // subject -> (error sum, count)
    double total = 0.0;
    for (int i = 0; i < view.size(); ++i) {
        const double err = angular_error_deg(view.sample(i).gaze, preds.gaze[i]);
        auto& slot = by_subject[view.sample(i).subject];
        slot.first += err;
        slot.second += 1;
        total += err;
    }

    MetricsReport report;
    report.total_samples = view.size();
    report.overall_mean_deg = total / view.size();
    std::vector<double> means;
    for (const auto& [subject, agg] : by_subject) {
        report.per_subject.push_back({subject, agg.first / agg.second, agg.second});
        means.push_back(agg.first / agg.second);
    }
    report.subject_std_deg = std::sqrt(population_variance(means));
    return report;
}

MetricsReport run_loso(const Dataset& data, const ArchConfig& arch, const MetaConfig& cfg,
                       const LossWeights& w, std::uint64_t seed, const RunOptions& run_opts,
                       int max_threads,
                       const std::function<void(int subject, const ModelState&,
                                                const TrainTrace&)>& fold_sink) {
    if (data.subject_count < 2)
        throw std::invalid_argument("run_loso: need at least 2 subjects");

    struct FoldOut {
        SubjectError subject_error;
        double error_sum = 0.0;
    };
    std::vector<FoldOut> folds(data.subject_count);

    auto run_fold = [&](int held_out) {
        auto [train, test] = split_leave_one_subject_out(data, held_out);
        ArchConfig fold_arch = arch;
        fold_arch.identity_count = train.subject_count();
        RunOptions opts = run_opts;
        opts.hook = nullptr; // hooks and sinks are per-process observers, not per fold
        opts.on_epoch_end = nullptr;
        RunResult run = run_training(train, fold_arch, cfg, w,
                                     mix_seed(seed, 0x4c4f534full, held_out), opts);
        const MetricsReport fold_report = evaluate(run.state, test);
        folds[held_out].subject_error = {held_out, fold_report.overall_mean_deg,
                                         fold_report.total_samples};
        folds[held_out].error_sum = fold_report.overall_mean_deg * fold_report.total_samples;
        if (fold_sink) fold_sink(held_out, run.state, run.trace);
    };

    if (max_threads > 1) {
        std::atomic<int> next{0};
        auto worker = [&] {
            for (int i = next.fetch_add(1); i < data.subject_count; i = next.fetch_add(1))
                run_fold(i);
        };
        std::vector<std::thread> pool;
        const int n = std::min(max_threads, data.subject_count);
        pool.reserve(n);
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    } else {
        for (int s = 0; s < data.subject_count; ++s) run_fold(s);
    }

    MetricsReport report;
    report.seed = seed;
    double total_err = 0.0;
    std::vector<double> means;
    for (const FoldOut& f : folds) {
        report.per_subject.push_back(f.subject_error);
        report.total_samples += f.subject_error.samples;
        total_err += f.error_sum;
        means.push_back(f.subject_error.mean_error_deg);
    }
    report.overall_mean_deg = total_err / report.total_samples;
    report.subject_std_deg = std::sqrt(population_variance(means));
    return report;
}

std::vector<int> view_labels(const DatasetView& view) {
    std::vector<int> labels(view.size());
    for (int i = 0; i < view.size(); ++i) labels[i] = view.label_of(view.sample(i).subject);
    return labels;
}

Matrix pixel_mean_features(const DatasetView& view) {
    const ImageShape shape = view.dataset().image_shape;
    const int plane = shape.height * shape.width;
    Matrix out(view.size(), shape.channels);
    for (int i = 0; i < view.size(); ++i) {
        const Sample& s = view.sample(i);
        for (int c = 0; c < shape.channels; ++c) {
            double acc = 0.0;
            for (int p = 0; p < plane; ++p)
                acc += static_cast<double>(s.image[static_cast<std::size_t>(c) * plane + p]);
            out(i, c) = acc / plane;
        }
    }
    return out;
}

ProbeResult linear_probe(const Matrix& features, const std::vector<int>& labels, int n_classes,
                         std::uint64_t seed, const ProbeConfig& cfg) {
    const int n = features.rows;
    const int dim = features.cols;
    if (n < 2) throw std::invalid_argument("linear_probe: need at least 2 samples");
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("linear_probe: label count mismatch");
    if (n_classes < 2) throw std::invalid_argument("linear_probe: need at least 2 classes");

    ProbeResult result;
    result.chance = 1.0 / n_classes;

    Rng rng(mix_seed(seed, 0x50524f42ull));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i + 1 < n; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
        std::swap(order[i], order[j]);
    }
    const int n_train = std::clamp(static_cast<int>(std::lround(cfg.train_fraction * n)), 1, n - 1);
    const int n_test = n - n_train;

    // Standardize with train-split statistics; dead dimensions scale to zero.
    std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
    for (int i = 0; i < n_train; ++i) {
        const double* row = features.row(order[i]);
        for (int d = 0; d < dim; ++d) mean[d] += row[d];
    }
    for (int d = 0; d < dim; ++d) mean[d] /= n_train;
    for (int i = 0; i < n_train; ++i) {
        const double* row = features.row(order[i]);
        for (int d = 0; d < dim; ++d) scale[d] += (row[d] - mean[d]) * (row[d] - mean[d]);
    }
    bool any_alive = false;
    for (int d = 0; d < dim; ++d) {
        const double var = scale[d] / n_train;
        if (var > 1e-18) {
            scale[d] = 1.0 / std::sqrt(var);
            any_alive = true;
        } else {
            scale[d] = 0.0;
        }
    }
    if (!any_alive) {
        result.accuracy = result.chance;
        result.degenerate = true;
        return result;
    }

    auto standardized = [&](int sample, std::vector<double>& buf) {
        const double* row = features.row(sample);
        for (int d = 0; d < dim; ++d) buf[d] = (row[d] - mean[d]) * scale[d];
    };

    // Full-batch multinomial logistic regression with Adam.
    std::vector<double> wts(static_cast<std::size_t>(n_classes) * dim, 0.0);
    std::vector<double> bias(n_classes, 0.0);
    std::vector<double> mw(wts.size(), 0.0), vw(wts.size(), 0.0);
    std::vector<double> mb(n_classes, 0.0), vb(n_classes, 0.0);
    std::vector<double> x(dim), logits(n_classes), probs(n_classes);
    std::vector<double> gw(wts.size()), gb(n_classes);

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (int i = 0; i < n_train; ++i) {
            standardized(order[i], x);
            double zmax = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < n_classes; ++k) {
                const double* wr = wts.data() + static_cast<std::size_t>(k) * dim;
                double acc = bias[k];
                for (int d = 0; d < dim; ++d) acc += wr[d] * x[d];
                logits[k] = acc;
                zmax = std::max(zmax, acc);
            }
            double sum = 0.0;
            for (int k = 0; k < n_classes; ++k) {
                probs[k] = std::exp(logits[k] - zmax);
                sum += probs[k];
            }
            for (int k = 0; k < n_classes; ++k) {
                const double g = probs[k] / sum - (labels[order[i]] == k ? 1.0 : 0.0);
                double* gwr = gw.data() + static_cast<std::size_t>(k) * dim;
                for (int d = 0; d < dim; ++d) gwr[d] += g * x[d];
                gb[k] += g;
            }
        }
        const double inv = 1.0 / n_train;
        const double bc1 = 1.0 - std::pow(0.9, iter);
        const double bc2 = 1.0 - std::pow(0.999, iter);
        auto adam = [&](std::vector<double>& p, std::vector<double>& g, std::vector<double>& m,
                        std::vector<double>& v, bool decay) {
            for (std::size_t idx = 0; idx < p.size(); ++idx) {
                const double grad = g[idx] * inv + (decay ? cfg.weight_decay * p[idx] : 0.0);
                m[idx] = 0.9 * m[idx] + 0.1 * grad;
                v[idx] = 0.999 * v[idx] + 0.001 * grad * grad;
                p[idx] -= cfg.lr * (m[idx] / bc1) / (std::sqrt(v[idx] / bc2) + 1e-8);
            }
        };
        adam(wts, gw, mw, vw, true);
        adam(bias, gb, mb, vb, false);
    }

    int correct = 0;
    for (int i = n_train; i < n; ++i) {
        standardized(order[i], x);
        int best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < n_classes; ++k) {
            const double* wr = wts.data() + static_cast<std::size_t>(k) * dim;
            double acc = bias[k];
            for (int d = 0; d < dim; ++d) acc += wr[d] * x[d];
            if (acc > best_v) {
                best_v = acc;
                best = k;
            }
        }
        if (best == labels[order[i]]) ++correct;
    }
    result.accuracy = static_cast<double>(correct) / n_test;
    return result;
}

ProbeResult identity_probe(const ModelState& state, const DatasetView& view, std::uint64_t seed,
                           const ProbeConfig& cfg) {
    if (view.subject_count() < 2)
        throw std::invalid_argument("identity_probe: need at least 2 subjects");
    const ViewPredictions preds = forward_view(state, view);
    return linear_probe(preds.features, view_labels(view), view.subject_count(), seed, cfg);
}

std::vector<StyleVariance> style_variance(const ModelState& state,
                                          const std::vector<std::vector<Sample>>& clusters) {
    const int pixels = state.arch.image_shape.pixels();
    std::vector<StyleVariance> out;
    out.reserve(clusters.size());
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        const auto& cluster = clusters[c];
        if (cluster.size() < 2)
            throw std::invalid_argument("style_variance: cluster needs >= 2 samples");
        Matrix images(static_cast<int>(cluster.size()), pixels);
        for (std::size_t i = 0; i < cluster.size(); ++i) {
            if (static_cast<int>(cluster[i].image.size()) != pixels)
                throw std::invalid_argument("style_variance: image shape mismatch");
            double* dst = images.row(static_cast<int>(i));
            for (int p = 0; p < pixels; ++p) dst[p] = cluster[i].image[p];
        }
        const EncoderOut enc = encoder_forward(state, images);
        std::vector<double> yaws, pitches;
        yaws.reserve(cluster.size());
        pitches.reserve(cluster.size());
        for (const GazeDirection& g : enc.gaze) {
            yaws.push_back(g.yaw);
            pitches.push_back(g.pitch);
        }
        out.push_back({static_cast<int>(c), population_variance(yaws),
                       population_variance(pitches)});
    }
    return out;
}

std::vector<double> per_sample_errors(const ModelState& state, const DatasetView& view) {
    const ViewPredictions preds = forward_view(state, view);
    std::vector<double> errors(view.size());
    for (int i = 0; i < view.size(); ++i)
        errors[i] = angular_error_deg(view.sample(i).gaze, preds.gaze[i]);
    return errors;
}

Heatmap heatmap_from_errors(std::span<const GazeDirection> truths,
                            std::span<const double> errors, int yaw_bins, int pitch_bins,
                            double yaw_min, double yaw_max, double pitch_min, double pitch_max) {
    if (yaw_bins < 1 || pitch_bins < 1)
        throw std::invalid_argument("heatmap: bins must be >= 1");
    if (truths.size() != errors.size() || truths.empty())
        throw std::invalid_argument("heatmap: bad input lengths");

    Heatmap hm;
    hm.yaw_bins = yaw_bins;
    hm.pitch_bins = pitch_bins;
    hm.yaw_min = yaw_min;
    hm.yaw_max = yaw_max;
    hm.pitch_min = pitch_min;
    hm.pitch_max = pitch_max;

    auto bin_of = [](double v, double lo, double hi, int bins) {
        if (hi <= lo) return 0;
        const int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        return std::clamp(b, 0, bins - 1);
    };

    hm.counts.assign(static_cast<std::size_t>(yaw_bins) * pitch_bins, 0);
    std::vector<double> sums(hm.counts.size(), 0.0);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const int iy = bin_of(truths[i].yaw, yaw_min, yaw_max, yaw_bins);
        const int ip = bin_of(truths[i].pitch, pitch_min, pitch_max, pitch_bins);
        const std::size_t cell = static_cast<std::size_t>(iy) * pitch_bins + ip;
        hm.counts[cell] += 1;
        sums[cell] += errors[i];
    }
    hm.mean_error.assign(hm.counts.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < hm.counts.size(); ++i) {
        if (hm.counts[i] > 0) hm.mean_error[i] = sums[i] / hm.counts[i];
    }
    return hm;
}

Heatmap error_heatmap(const ModelState& state, const DatasetView& view, int yaw_bins,
                      int pitch_bins) {
    if (view.size() == 0) throw std::invalid_argument("error_heatmap: empty view");

    std::vector<GazeDirection> truths(view.size());
    double ymin = view.sample(0).gaze.yaw, ymax = ymin;
    double pmin = view.sample(0).gaze.pitch, pmax = pmin;
    for (int i = 0; i < view.size(); ++i) {
        truths[i] = view.sample(i).gaze;
        ymin = std::min(ymin, truths[i].yaw);
        ymax = std::max(ymax, truths[i].yaw);
        pmin = std::min(pmin, truths[i].pitch);
        pmax = std::max(pmax, truths[i].pitch);
    }
    const std::vector<double> errors = per_sample_errors(state, view);
    return heatmap_from_errors(truths, errors, yaw_bins, pitch_bins, ymin, ymax, pmin, pmax);
}

// ---------------------------------------------------------------------------
// Feature export / report serialization
// ---------------------------------------------------------------------------

namespace {
using nlohmann::json;
}

void export_features(const ModelState& state, const DatasetView& view,
                     const std::filesystem::path& prefix) {
    const ViewPredictions preds = forward_view(state, view);
    const int d = preds.features.cols;

    std::filesystem::path bin = prefix;
    bin += ".bin";
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw std::runtime_error("export_features: cannot open " + bin.string());
    std::vector<float> row(d);
    json records = json::array();
    for (int i = 0; i < view.size(); ++i) {
        for (int c = 0; c < d; ++c) row[c] = static_cast<float>(preds.features(i, c));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
        records.push_back({{"index", view.indices()[i]}, {"subject", view.sample(i).subject}});
    }
    if (!out) throw std::runtime_error("export_features: write failed");

    json header{{"format", "saze-features-v1"},
                {"count", view.size()},
                {"feature_dim", d},
                {"dtype", "float32"},
                {"byte_order", "little"},
                {"records", std::move(records)}};
    std::filesystem::path sidecar = prefix;
    sidecar += ".json";
    std::ofstream hs(sidecar);
    hs << header.dump(2) << "\n";
    if (!hs) throw std::runtime_error("export_features: sidecar write failed");
}

FeatureDump import_features(const std::filesystem::path& prefix) {
    std::filesystem::path sidecar = prefix;
    sidecar += ".json";
    std::ifstream hs(sidecar);
    if (!hs) throw std::runtime_error("import_features: cannot open " + sidecar.string());
    json header = json::parse(hs);
    if (header.at("format").get<std::string>() != "saze-features-v1")
        throw ConfigError("import_features: unknown format");

    FeatureDump dump;
    dump.feature_dim = header.at("feature_dim").get<int>();
    const int count = header.at("count").get<int>();
    for (const auto& rec : header.at("records")) {
        dump.indices.push_back(rec.at("index").get<int>());
        dump.subjects.push_back(rec.at("subject").get<int>());
    }

    std::filesystem::path bin = prefix;
    bin += ".bin";
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw std::runtime_error("import_features: cannot open " + bin.string());
    dump.values.resize(static_cast<std::size_t>(count) * dump.feature_dim);
    in.read(reinterpret_cast<char*>(dump.values.data()),
            static_cast<std::streamsize>(dump.values.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(dump.values.size() * sizeof(float)))
        throw std::runtime_error("import_features: short read");
    return dump;
}

void save_metrics_report(const MetricsReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    json j;
    j["config_hash"] = report.config_hash;
    j["seed"] = report.seed;
    j["overall_mean_deg"] = report.overall_mean_deg;
    j["subject_std_deg"] = report.subject_std_deg;
    j["total_samples"] = report.total_samples;
    json per_subject = json::array();
    for (const SubjectError& s : report.per_subject) {
        per_subject.push_back({{"subject", s.subject},
                               {"mean_error_deg", s.mean_error_deg},
                               {"samples", s.samples}});
    }
    j["per_subject"] = std::move(per_subject);
    if (report.probe) {
        j["probe"] = {{"accuracy", report.probe->accuracy},
                      {"chance", report.probe->chance},
                      {"degenerate", report.probe->degenerate}};
    }
    if (!report.style_variances.empty()) {
        json sv = json::array();
        for (const StyleVariance& s : report.style_variances)
            sv.push_back({{"cluster", s.cluster}, {"var_yaw", s.var_yaw}, {"var_pitch", s.var_pitch}});
        j["style_variances"] = std::move(sv);
    }
    if (report.heatmap) {
        const Heatmap& hm = *report.heatmap;
        json cells = json::array();
        for (int iy = 0; iy < hm.yaw_bins; ++iy) {
            for (int ip = 0; ip < hm.pitch_bins; ++ip) {
                const int count = hm.counts[iy * hm.pitch_bins + ip];
                json cell{{"yaw_bin", iy}, {"pitch_bin", ip}, {"count", count}};
                if (count > 0) cell["mean_error_deg"] = hm.mean_error[iy * hm.pitch_bins + ip];
                cells.push_back(std::move(cell));
            }
        }
        j["heatmap"] = {{"yaw_bins", hm.yaw_bins},     {"pitch_bins", hm.pitch_bins},
                        {"yaw_min", hm.yaw_min},       {"yaw_max", hm.yaw_max},
                        {"pitch_min", hm.pitch_min},   {"pitch_max", hm.pitch_max},
                        {"cells", std::move(cells)}};
    }

    std::ofstream out(dir / "report.json");
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("save_metrics_report: write failed");

    {
        std::ofstream csv(dir / "per_subject.csv");
        csv << "subject,mean_error_deg,samples\n";
        char buf[128];
        for (const SubjectError& s : report.per_subject) {
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%d\n", s.subject, s.mean_error_deg,
                          s.samples);
            csv << buf;
        }
    }
    if (report.heatmap) {
        const Heatmap& hm = *report.heatmap;
        std::ofstream csv(dir / "heatmap.csv");
        csv << "yaw_bin,pitch_bin,count,mean_error_deg\n";
        char buf[160];
        for (int iy = 0; iy < hm.yaw_bins; ++iy) {
            for (int ip = 0; ip < hm.pitch_bins; ++ip) {
                const int count = hm.counts[iy * hm.pitch_bins + ip];
                if (count > 0) {
                    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g\n", iy, ip, count,
                                  hm.mean_error[iy * hm.pitch_bins + ip]);
                } else {
                    std::snprintf(buf, sizeof(buf), "%d,%d,0,\n", iy, ip);
                }
                csv << buf;
            }
        }
    }
    if (!report.style_variances.empty()) {
        std::ofstream csv(dir / "style_variance.csv");
        csv << "cluster,var_yaw,var_pitch\n";
        char buf[128];
        for (const StyleVariance& s : report.style_variances) {
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", s.cluster, s.var_yaw, s.var_pitch);
            csv << buf;
        }
    }
}

} // namespace saze
