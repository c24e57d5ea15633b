#include "saze/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace saze {

namespace {

constexpr std::uint64_t kTagSubject = 0x53544c59ull; // style latents
constexpr std::uint64_t kTagGaze = 0x47415a45ull;    // gaze draws
constexpr std::uint64_t kTagNoise = 0x4e4f4953ull;   // per-sample pixel noise

static_assert(std::endian::native == std::endian::little,
              "raw float32 files are little endian");

// Low-frequency cosine basis, enumerated in a fixed order so the renderer is
// a pure function of (style, gaze, noise_seed, cfg).
void basis_frequencies(int count, std::vector<std::pair<int, int>>& out) {
    out.clear();
    for (int total = 1; static_cast<int>(out.size()) < count; ++total) {
        for (int fx = total; fx >= 0 && static_cast<int>(out.size()) < count; --fx) {
            out.emplace_back(fx, total - fx);
        }
    }
}

} // namespace

void SynthConfig::validate() const {
    if (subject_count <= 0 || samples_per_subject <= 0)
        throw ConfigError("synth: subject_count and samples_per_subject must be positive");
    if (image_shape.channels <= 0 || image_shape.height < 4 || image_shape.width < 4)
        throw ConfigError("synth: image shape must be at least 1x4x4");
    if (appearance_dim < 3)
        throw ConfigError("synth: appearance_dim must be >= 3");
    if (gaze_range <= 0.0 || gaze_range > 1.5707963267948966)
        throw ConfigError("synth: gaze_range must be in (0, pi/2]");
    if (confound_strength < 0.0)
        throw ConfigError("synth: confound_strength must be >= 0");
    if (noise_std < 0.0)
        throw ConfigError("synth: noise_std must be >= 0");
}

std::vector<double> make_subject_style(const SynthConfig& cfg, int subject) {
    Rng rng(mix_seed(cfg.seed, kTagSubject, static_cast<std::uint64_t>(subject)));
    std::vector<double> style(cfg.appearance_dim);
    for (double& v : style) v = rng.normal();
    return style;
}

std::vector<float> render_image(const std::vector<double>& style, GazeDirection gaze,
                                std::uint64_t noise_seed, const SynthConfig& cfg) {
    if (static_cast<int>(style.size()) != cfg.appearance_dim)
        throw ConfigError("render_image: style length does not match appearance_dim");

    const int c = cfg.image_shape.channels;
    const int h = cfg.image_shape.height;
    const int w = cfg.image_shape.width;
    const double pi = 3.14159265358979323846;

    // Pupil blob: center offset is affine in (yaw, pitch).
    const double cx = 0.5 * (w - 1) + (gaze.yaw / cfg.gaze_range) * 0.22 * w;
    const double cy = 0.5 * (h - 1) + (gaze.pitch / cfg.gaze_range) * 0.22 * h;
    const double sigma = std::max(1.5, w / 16.0);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    // Subject-fixed distractor blob: position derived from the latent, so the
    // strongest identity cue sits in the same visual vocabulary as the gaze
    // signal. Broader and dimmer than the pupil.
    const double dx = 0.5 * (w - 1) + std::tanh(style[1]) * 0.33 * w;
    const double dy = 0.5 * (h - 1) + std::tanh(style[2]) * 0.33 * h;
    const double dsigma = 1.8 * sigma;
    const double dinv2s2 = 1.0 / (2.0 * dsigma * dsigma);

    std::vector<std::pair<int, int>> freqs;
    basis_frequencies(cfg.appearance_dim - 1, freqs);
    const double field_norm = 1.0 / std::sqrt(static_cast<double>(cfg.appearance_dim));

    std::vector<double> plane(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = x - cx;
            const double gy = y - cy;
            const double blob = 0.6 * std::exp(-(gx * gx + gy * gy) * inv2s2);

            double field = style[0];
            for (std::size_t i = 0; i < freqs.size(); ++i) {
                const double bx = std::cos(pi * freqs[i].first * (x + 0.5) / w);
                const double by = std::cos(pi * freqs[i].second * (y + 0.5) / h);
                field += style[i + 1] * bx * by;
            }

            const double ddx = x - dx;
            const double ddy = y - dy;
            const double distractor = std::exp(-(ddx * ddx + ddy * ddy) * dinv2s2);

            plane[static_cast<std::size_t>(y) * w + x] =
                0.35 + blob +
                cfg.confound_strength * (0.4 * field * field_norm + 0.6 * distractor);
        }
    }

    Rng noise(noise_seed);
    std::vector<float> image(static_cast<std::size_t>(c) * h * w);
    for (int ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < plane.size(); ++p) {
            double v = plane[p] + cfg.noise_std * noise.normal();
            image[static_cast<std::size_t>(ch) * plane.size() + p] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return image;
}

Dataset generate_synthetic_dataset(const SynthConfig& cfg) {
    cfg.validate();

    Dataset d;
    d.subject_count = cfg.subject_count;
    d.image_shape = cfg.image_shape;
    d.is_synthetic = true;
    d.synth = cfg;
    d.samples.reserve(static_cast<std::size_t>(cfg.subject_count) * cfg.samples_per_subject);

    for (int s = 0; s < cfg.subject_count; ++s) {
        const std::vector<double> style = make_subject_style(cfg, s);
        for (int q = 0; q < cfg.samples_per_subject; ++q) {
            const std::uint64_t index =
                static_cast<std::uint64_t>(s) * cfg.samples_per_subject + q;
            Rng gaze_rng(mix_seed(cfg.seed, kTagGaze, index));
            Sample sample;
            sample.subject = s;
            sample.style = style;
            sample.gaze.yaw = gaze_rng.uniform(-cfg.gaze_range, cfg.gaze_range);
            sample.gaze.pitch = gaze_rng.uniform(-cfg.gaze_range, cfg.gaze_range);
            sample.noise_seed = mix_seed(cfg.seed, kTagNoise, index);
            sample.image = render_image(style, sample.gaze, sample.noise_seed, cfg);
            d.samples.push_back(std::move(sample));
        }
    }
    return d;
}

std::vector<Sample> generate_style_cluster(GazeDirection base_gaze, int n_styles,
                                           const SynthConfig& cfg, std::uint64_t seed) {
    if (n_styles < 2) throw ConfigError("generate_style_cluster: n_styles must be >= 2");
    cfg.validate();

    std::vector<Sample> out;
    out.reserve(n_styles);
    for (int i = 0; i < n_styles; ++i) {
        Rng rng(mix_seed(seed, kTagSubject, static_cast<std::uint64_t>(i)));
        Sample s;
        s.subject = i;
        s.gaze = base_gaze;
        s.style.resize(cfg.appearance_dim);
        for (double& v : s.style) v = rng.normal();
        s.noise_seed = mix_seed(seed, kTagNoise, static_cast<std::uint64_t>(i));
        s.image = render_image(s.style, base_gaze, s.noise_seed, cfg);
        out.push_back(std::move(s));
    }
    return out;
}

bool SubjectSet::contains(int s) const {
    return std::binary_search(ids.begin(), ids.end(), s);
}

DatasetView::DatasetView(const Dataset& d) : data_(&d) {
    indices_.resize(d.samples.size());
    std::iota(indices_.begin(), indices_.end(), 0);
    std::set<int> subj;
    for (const Sample& s : d.samples) subj.insert(s.subject);
    subjects_.assign(subj.begin(), subj.end());
}

DatasetView::DatasetView(const Dataset& d, std::vector<int> indices)
    : data_(&d), indices_(std::move(indices)) {
    std::set<int> subj;
    for (int i : indices_) {
        if (i < 0 || i >= d.size()) throw std::out_of_range("DatasetView: bad sample index");
        subj.insert(d.samples[i].subject);
    }
    subjects_.assign(subj.begin(), subj.end());
}

int DatasetView::label_of(int subject) const {
    auto it = std::lower_bound(subjects_.begin(), subjects_.end(), subject);
    if (it == subjects_.end() || *it != subject)
        throw std::out_of_range("label_of: subject not in view");
    return static_cast<int>(it - subjects_.begin());
}

std::pair<DatasetView, DatasetView> split_leave_one_subject_out(const Dataset& d,
                                                                int held_out) {
    if (held_out < 0 || held_out >= d.subject_count)
        throw std::out_of_range("split_leave_one_subject_out: invalid subject");

    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < d.size(); ++i) {
        (d.samples[i].subject == held_out ? test_idx : train_idx).push_back(i);
    }
    return {DatasetView(d, std::move(train_idx)), DatasetView(d, std::move(test_idx))};
}

namespace {

SubjectSet pick_without_replacement(std::vector<int> candidates, int count, Rng& rng) {
    const int n = static_cast<int>(candidates.size());
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
        std::swap(candidates[i], candidates[j]);
    }
    SubjectSet out;
    out.ids.assign(candidates.begin(), candidates.begin() + count);
    std::sort(out.ids.begin(), out.ids.end());
    return out;
}

} // namespace

SubjectSet sample_meta_train_subjects(const DatasetView& train, int k, Rng& rng) {
    if (k < 1 || k > train.subject_count())
        throw std::invalid_argument("sample_meta_train_subjects: k out of range");
    return pick_without_replacement(train.subjects(), k, rng);
}

SubjectSet sample_meta_adapt_subjects(const DatasetView& train, const SubjectSet& exclude,
                                      int p, Rng& rng) {
    if (p < 1) throw std::invalid_argument("sample_meta_adapt_subjects: p must be >= 1");
    std::vector<int> candidates;
    for (int s : train.subjects()) {
        if (!exclude.contains(s)) candidates.push_back(s);
    }
    if (static_cast<int>(candidates.size()) < p)
        throw std::invalid_argument("sample_meta_adapt_subjects: not enough subjects left");
    return pick_without_replacement(std::move(candidates), p, rng);
}

Batch gather_batch(const DatasetView& view, const std::vector<int>& positions) {
    const int pixels = view.dataset().image_shape.pixels();
    Batch b;
    b.images = Matrix(static_cast<int>(positions.size()), pixels);
    b.gazes.reserve(positions.size());
    b.subjects.reserve(positions.size());
    b.labels.reserve(positions.size());
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const Sample& s = view.sample(positions[r]);
        double* dst = b.images.row(static_cast<int>(r));
        for (int p = 0; p < pixels; ++p) dst[p] = static_cast<double>(s.image[p]);
        b.gazes.push_back(s.gaze);
        b.subjects.push_back(s.subject);
        b.labels.push_back(view.label_of(s.subject));
    }
    return b;
}

BatchStream::BatchStream(const DatasetView& view, const SubjectSet& subjects, int batch_size,
                         std::uint64_t seed)
    : view_(&view), batch_size_(batch_size), rng_(seed) {
    if (batch_size < 1) throw std::invalid_argument("BatchStream: batch_size must be >= 1");
    for (int i = 0; i < view.size(); ++i) {
        if (subjects.contains(view.sample(i).subject)) pool_.push_back(i);
    }
    if (pool_.empty()) throw std::invalid_argument("BatchStream: empty subject pool");
    reshuffle();
}

int BatchStream::batches_per_pass() const {
    return static_cast<int>((pool_.size() + batch_size_ - 1) / batch_size_);
}

void BatchStream::reshuffle() {
    const std::size_t n = pool_.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + rng_.uniform_int(n - i);
        std::swap(pool_[i], pool_[j]);
    }
    cursor_ = 0;
}

Batch BatchStream::next() {
    if (cursor_ >= pool_.size()) reshuffle();
    const std::size_t take = std::min<std::size_t>(batch_size_, pool_.size() - cursor_);
    std::vector<int> positions(pool_.begin() + cursor_, pool_.begin() + cursor_ + take);
    cursor_ += take;
    return gather_batch(*view_, positions);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

std::string image_file_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "images/%06d.bin", index);
    return buf;
}

json synth_to_json(const SynthConfig& c) {
    return json{{"subject_count", c.subject_count},
                {"samples_per_subject", c.samples_per_subject},
                {"image_shape", {c.image_shape.channels, c.image_shape.height, c.image_shape.width}},
                {"appearance_dim", c.appearance_dim},
                {"gaze_range", c.gaze_range},
                {"confound_strength", c.confound_strength},
                {"noise_std", c.noise_std},
                {"seed", c.seed}};
}

SynthConfig synth_from_json(const json& j) {
    SynthConfig c;
    c.subject_count = j.at("subject_count").get<int>();
    c.samples_per_subject = j.at("samples_per_subject").get<int>();
    const auto& sh = j.at("image_shape");
    c.image_shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
    c.appearance_dim = j.at("appearance_dim").get<int>();
    c.gaze_range = j.at("gaze_range").get<double>();
    c.confound_strength = j.at("confound_strength").get<double>();
    c.noise_std = j.at("noise_std").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

} // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");

    json manifest;
    manifest["format"] = "saze-dataset-v1";
    manifest["subject_count"] = d.subject_count;
    manifest["image_shape"] = {d.image_shape.channels, d.image_shape.height, d.image_shape.width};
    manifest["pixel_format"] = "float32_raw";
    if (d.is_synthetic) {
        manifest["provenance"] = {{"type", "synthetic"}, {"config", synth_to_json(d.synth)}};
    } else {
        manifest["provenance"] = {{"type", "external"}, {"path", d.source_path}};
    }

    json samples = json::array();
    for (int i = 0; i < d.size(); ++i) {
        const Sample& s = d.samples[i];
        json rec{{"index", i},
                 {"subject", s.subject},
                 {"yaw", s.gaze.yaw},
                 {"pitch", s.gaze.pitch},
                 {"file", image_file_name(i)}};
        if (d.is_synthetic) {
            rec["style"] = s.style;
            rec["noise_seed"] = s.noise_seed;
        }
        samples.push_back(std::move(rec));

        std::ofstream img(dir / image_file_name(i), std::ios::binary);
        img.write(reinterpret_cast<const char*>(s.image.data()),
                  static_cast<std::streamsize>(s.image.size() * sizeof(float)));
        if (!img) throw std::runtime_error("save_dataset: failed to write " + image_file_name(i));
    }
    manifest["samples"] = std::move(samples);

    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("save_dataset: failed to write manifest");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("load_dataset: cannot open " + (dir / "manifest.json").string());
    json manifest = json::parse(in);

    if (manifest.at("format").get<std::string>() != "saze-dataset-v1")
        throw ConfigError("load_dataset: unknown manifest format");
    const std::string pixel_format = manifest.at("pixel_format").get<std::string>();
    if (pixel_format != "float32_raw")
        throw ConfigError("load_dataset: pixel format '" + pixel_format +
                          "' is not supported by this build");

    Dataset d;
    d.subject_count = manifest.at("subject_count").get<int>();
    const auto& sh = manifest.at("image_shape");
    d.image_shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};

    const auto& prov = manifest.at("provenance");
    if (prov.at("type").get<std::string>() == "synthetic") {
        d.is_synthetic = true;
        d.synth = synth_from_json(prov.at("config"));
    } else {
        d.source_path = prov.value("path", "");
    }

    const std::size_t pixel_count = static_cast<std::size_t>(d.image_shape.pixels());
    for (const auto& rec : manifest.at("samples")) {
        Sample s;
        s.subject = rec.at("subject").get<int>();
        s.gaze.yaw = rec.at("yaw").get<double>();
        s.gaze.pitch = rec.at("pitch").get<double>();
        if (rec.contains("style")) s.style = rec.at("style").get<std::vector<double>>();
        if (rec.contains("noise_seed")) s.noise_seed = rec.at("noise_seed").get<std::uint64_t>();
        if (s.subject < 0 || s.subject >= d.subject_count)
            throw ConfigError("load_dataset: sample subject out of range");

        const fs::path img_path = dir / rec.at("file").get<std::string>();
        std::ifstream img(img_path, std::ios::binary);
        if (!img) throw std::runtime_error("load_dataset: cannot open " + img_path.string());
        s.image.resize(pixel_count);
        img.read(reinterpret_cast<char*>(s.image.data()),
                 static_cast<std::streamsize>(pixel_count * sizeof(float)));
        if (img.gcount() != static_cast<std::streamsize>(pixel_count * sizeof(float)))
            throw std::runtime_error("load_dataset: short image file " + img_path.string());
        d.samples.push_back(std::move(s));
    }

    std::vector<int> owned(d.subject_count, 0);
    for (const Sample& s : d.samples) owned[s.subject] = 1;
    for (int s = 0; s < d.subject_count; ++s) {
        if (!owned[s]) throw ConfigError("load_dataset: subject " + std::to_string(s) + " owns no samples");
    }
    return d;
}

} // namespace saze
