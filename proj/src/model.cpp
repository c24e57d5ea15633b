#include "saze/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace saze {

namespace {

struct ConvDims {
    int in_c, in_h, in_w;
    int oc, oh, ow;
    int k, s, p;
    std::size_t w_off, b_off;
};

struct LinDims {
    int in, out;
    std::size_t w_off, b_off;
};

struct Dims {
    std::vector<ConvDims> convs;
    int gap_c, gap_h, gap_w;
    LinDims feature;
    LinDims gaze;
    std::size_t encoder_count;
    std::vector<LinDims> cls; // hidden layers then the softmax output layer
    std::size_t classifier_count;
};

Dims make_dims(const ArchConfig& arch) {
    arch.validate();
    if (arch.identity_count < 2)
        throw ConfigError("arch: identity_count must be bound to the training subject count");
    Dims d;
    int c = arch.image_shape.channels;
    int h = arch.image_shape.height;
    int w = arch.image_shape.width;
    std::size_t off = 0;
    for (const ConvSpec& spec : arch.conv_blocks) {
        ConvDims cd;
        cd.in_c = c;
        cd.in_h = h;
        cd.in_w = w;
        cd.oc = spec.out_channels;
        cd.k = spec.kernel;
        cd.s = spec.stride;
        cd.p = spec.kernel / 2;
        cd.oh = (h + 2 * cd.p - cd.k) / cd.s + 1;
        cd.ow = (w + 2 * cd.p - cd.k) / cd.s + 1;
        if (cd.oh < 1 || cd.ow < 1)
            throw ConfigError("arch: conv output collapses below 1x1");
        cd.w_off = off;
        off += static_cast<std::size_t>(cd.oc) * cd.in_c * cd.k * cd.k;
        cd.b_off = off;
        off += cd.oc;
        d.convs.push_back(cd);
        c = cd.oc;
        h = cd.oh;
        w = cd.ow;
    }
    d.gap_c = c;
    d.gap_h = h;
    d.gap_w = w;

    d.feature = {d.gap_c, arch.feature_dim, off, off + static_cast<std::size_t>(arch.feature_dim) * d.gap_c};
    off = d.feature.b_off + arch.feature_dim;
    d.gaze = {arch.feature_dim, 2, off, off + static_cast<std::size_t>(2) * arch.feature_dim};
    off = d.gaze.b_off + 2;
    d.encoder_count = off;

    off = 0;
    int in = arch.feature_dim;
    for (int width : arch.classifier_hidden) {
        LinDims l{in, width, off, off + static_cast<std::size_t>(width) * in};
        off = l.b_off + width;
        d.cls.push_back(l);
        in = width;
    }
    LinDims out_layer{in, arch.identity_count, off,
                      off + static_cast<std::size_t>(arch.identity_count) * in};
    off = out_layer.b_off + arch.identity_count;
    d.cls.push_back(out_layer);
    d.classifier_count = off;
    return d;
}

void conv_forward(const Matrix& in, const ConvDims& cd, const double* w, Matrix& z) {
    const int plane_in = cd.in_h * cd.in_w;
    const int plane_out = cd.oh * cd.ow;
    const double* bias = w + cd.b_off - cd.w_off; // caller passes w at w_off
    const double* wts = w;
    for (int n = 0; n < in.rows; ++n) {
        const double* a = in.row(n);
        double* zr = z.row(n);
        for (int oc = 0; oc < cd.oc; ++oc) {
            double* zplane = zr + static_cast<std::size_t>(oc) * plane_out;
            std::fill(zplane, zplane + plane_out, bias[oc]);
            for (int ic = 0; ic < cd.in_c; ++ic) {
                const double* aplane = a + static_cast<std::size_t>(ic) * plane_in;
                const double* wk = wts + (static_cast<std::size_t>(oc) * cd.in_c + ic) * cd.k * cd.k;
                for (int ky = 0; ky < cd.k; ++ky) {
                    for (int oy = 0; oy < cd.oh; ++oy) {
                        const int iy = oy * cd.s + ky - cd.p;
                        if (iy < 0 || iy >= cd.in_h) continue;
                        double* zrow = zplane + static_cast<std::size_t>(oy) * cd.ow;
                        const double* arow = aplane + static_cast<std::size_t>(iy) * cd.in_w;
                        for (int kx = 0; kx < cd.k; ++kx) {
                            const double wv = wk[ky * cd.k + kx];
                            const int shift = kx - cd.p;
                            int ox_lo = 0;
                            while (ox_lo * cd.s + shift < 0) ++ox_lo;
                            int ox_hi = cd.ow - 1;
                            while (ox_hi >= 0 && ox_hi * cd.s + shift >= cd.in_w) --ox_hi;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                zrow[ox] += wv * arow[ox * cd.s + shift];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Accumulates weight/bias gradients and (optionally) the input gradient.
void conv_backward(const Matrix& dz, const Matrix& a_in, const ConvDims& cd, const double* w,
                   double* dw, Matrix* da_in) {
    const int plane_in = cd.in_h * cd.in_w;
    const int plane_out = cd.oh * cd.ow;
    double* db = dw + (cd.b_off - cd.w_off);
    for (int n = 0; n < dz.rows; ++n) {
        const double* dzr = dz.row(n);
        const double* a = a_in.row(n);
        double* da = da_in ? da_in->row(n) : nullptr;
        for (int oc = 0; oc < cd.oc; ++oc) {
            const double* dzplane = dzr + static_cast<std::size_t>(oc) * plane_out;
            double bacc = 0.0;
            for (int i = 0; i < plane_out; ++i) bacc += dzplane[i];
            db[oc] += bacc;
            for (int ic = 0; ic < cd.in_c; ++ic) {
                const double* aplane = a + static_cast<std::size_t>(ic) * plane_in;
                double* daplane = da ? da + static_cast<std::size_t>(ic) * plane_in : nullptr;
                const std::size_t wbase = (static_cast<std::size_t>(oc) * cd.in_c + ic) * cd.k * cd.k;
                const double* wk = w + wbase;
                double* dwk = dw + wbase;
                for (int ky = 0; ky < cd.k; ++ky) {
                    for (int oy = 0; oy < cd.oh; ++oy) {
                        const int iy = oy * cd.s + ky - cd.p;
                        if (iy < 0 || iy >= cd.in_h) continue;
                        const double* dzrow = dzplane + static_cast<std::size_t>(oy) * cd.ow;
                        const double* arow = aplane + static_cast<std::size_t>(iy) * cd.in_w;
                        double* darow = daplane ? daplane + static_cast<std::size_t>(iy) * cd.in_w : nullptr;
                        for (int kx = 0; kx < cd.k; ++kx) {
                            const double wv = wk[ky * cd.k + kx];
                            const int shift = kx - cd.p;
                            int ox_lo = 0;
                            while (ox_lo * cd.s + shift < 0) ++ox_lo;
                            int ox_hi = cd.ow - 1;
                            while (ox_hi >= 0 && ox_hi * cd.s + shift >= cd.in_w) --ox_hi;
                            double wacc = 0.0;
                            if (darow) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    const double g = dzrow[ox];
                                    wacc += g * arow[ox * cd.s + shift];
                                    darow[ox * cd.s + shift] += g * wv;
                                }
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    wacc += dzrow[ox] * arow[ox * cd.s + shift];
                                }
                            }
                            dwk[ky * cd.k + kx] += wacc;
                        }
                    }
                }
            }
        }
    }
}

void linear_forward(const Matrix& in, const LinDims& ld, const double* params, Matrix& z) {
    const double* w = params + ld.w_off;
    const double* b = params + ld.b_off;
    for (int n = 0; n < in.rows; ++n) {
        const double* a = in.row(n);
        double* zr = z.row(n);
        for (int o = 0; o < ld.out; ++o) {
            const double* wr = w + static_cast<std::size_t>(o) * ld.in;
            double acc = b[o];
            for (int i = 0; i < ld.in; ++i) acc += wr[i] * a[i];
            zr[o] = acc;
        }
    }
}

void linear_backward(const Matrix& dz, const Matrix& a_in, const LinDims& ld,
                     const double* params, double* dparams, Matrix* da_in) {
    const double* w = params + ld.w_off;
    double* dw = dparams + ld.w_off;
    double* db = dparams + ld.b_off;
    for (int n = 0; n < dz.rows; ++n) {
        const double* dzr = dz.row(n);
        const double* a = a_in.row(n);
        for (int o = 0; o < ld.out; ++o) {
            const double g = dzr[o];
            if (g == 0.0) continue;
            double* dwr = dw + static_cast<std::size_t>(o) * ld.in;
            for (int i = 0; i < ld.in; ++i) dwr[i] += g * a[i];
            db[o] += g;
        }
        if (da_in) {
            double* da = da_in->row(n);
            for (int o = 0; o < ld.out; ++o) {
                const double g = dzr[o];
                if (g == 0.0) continue;
                const double* wr = w + static_cast<std::size_t>(o) * ld.in;
                for (int i = 0; i < ld.in; ++i) da[i] += g * wr[i];
            }
        }
    }
}

void relu_inplace(Matrix& m) {
    for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

void relu_mask(const Matrix& z, Matrix& dz) {
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        if (z.data[i] <= 0.0) dz.data[i] = 0.0;
    }
}

struct EncCache {
    std::vector<Matrix> z; // conv pre-activations
    std::vector<Matrix> a; // conv activations
    Matrix gap;
    Matrix zf, f;
    Matrix gaze;
};

struct ClsCache {
    std::vector<Matrix> z, a; // hidden layers
    Matrix logits, probs;
};

void run_encoder(const ModelState& state, const Dims& d, const Matrix& images, EncCache& c) {
    if (images.cols != state.arch.image_shape.pixels())
        throw std::invalid_argument("encoder_forward: image size does not match architecture");
    const int n = images.rows;
    const double* params = state.encoder_params.data();

    const Matrix* cur = &images;
    c.z.resize(d.convs.size());
    c.a.resize(d.convs.size());
    for (std::size_t l = 0; l < d.convs.size(); ++l) {
        const ConvDims& cd = d.convs[l];
        c.z[l] = Matrix(n, cd.oc * cd.oh * cd.ow);
        conv_forward(*cur, cd, params + cd.w_off, c.z[l]);
        c.a[l] = c.z[l];
        relu_inplace(c.a[l]);
        cur = &c.a[l];
    }

    c.gap = Matrix(n, d.gap_c);
    const int plane = d.gap_h * d.gap_w;
    const double inv_plane = 1.0 / plane;
    for (int r = 0; r < n; ++r) {
        const double* a = cur->row(r);
        double* g = c.gap.row(r);
        for (int ch = 0; ch < d.gap_c; ++ch) {
            double acc = 0.0;
            const double* pl = a + static_cast<std::size_t>(ch) * plane;
            for (int i = 0; i < plane; ++i) acc += pl[i];
            g[ch] = acc * inv_plane;
        }
    }

    c.zf = Matrix(n, d.feature.out);
    linear_forward(c.gap, d.feature, params, c.zf);
    c.f = c.zf;
    relu_inplace(c.f);

    c.gaze = Matrix(n, 2);
    linear_forward(c.f, d.gaze, params, c.gaze);
}

void run_classifier(const ModelState& state, const Dims& d, const Matrix& features, ClsCache& c) {
    if (features.cols != state.arch.feature_dim)
        throw std::invalid_argument("classifier_forward: feature length mismatch");
    const int n = features.rows;
    const double* params = state.classifier_params.data();

    const Matrix* cur = &features;
    const std::size_t hidden = d.cls.size() - 1;
    c.z.resize(hidden);
    c.a.resize(hidden);
    for (std::size_t l = 0; l < hidden; ++l) {
        c.z[l] = Matrix(n, d.cls[l].out);
        linear_forward(*cur, d.cls[l], params, c.z[l]);
        c.a[l] = c.z[l];
        relu_inplace(c.a[l]);
        cur = &c.a[l];
    }

    c.logits = Matrix(n, d.cls.back().out);
    linear_forward(*cur, d.cls.back(), params, c.logits);

    c.probs = Matrix(n, c.logits.cols);
    for (int r = 0; r < n; ++r) {
        const double* z = c.logits.row(r);
        double* p = c.probs.row(r);
        double zmax = z[0];
        for (int j = 1; j < c.logits.cols; ++j) zmax = std::max(zmax, z[j]);
        double sum = 0.0;
        for (int j = 0; j < c.logits.cols; ++j) {
            p[j] = std::exp(z[j] - zmax);
            sum += p[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < c.logits.cols; ++j) p[j] *= inv;
    }
}

std::vector<GazeDirection> gaze_rows(const Matrix& m) {
    std::vector<GazeDirection> out(m.rows);
    for (int r = 0; r < m.rows; ++r) out[r] = {m(r, 0), m(r, 1)};
    return out;
}

void check_finite(const EncCache& enc, const ClsCache& cls) {
    for (int r = 0; r < enc.gaze.rows; ++r) {
        bool ok = std::isfinite(enc.gaze(r, 0)) && std::isfinite(enc.gaze(r, 1));
        for (int j = 0; ok && j < cls.probs.cols; ++j) ok = std::isfinite(cls.probs(r, j));
        if (!ok)
            throw std::runtime_error("gradients: non-finite network output at batch index " +
                                     std::to_string(r));
    }
}

// d(loss)/d(logits) for the adversarial term: cosine-to-uniform through the
// softmax Jacobian, scaled by lambda_adv / N.
void adv_logit_grad(const Matrix& probs, double lambda_adv, Matrix& dlogits) {
    const int n = probs.rows;
    const int k = probs.cols;
    const double norm_e = 1.0 / std::sqrt(static_cast<double>(k));
    const double e = 1.0 / static_cast<double>(k);
    const double scale = -lambda_adv / n; // d/dp of (1 - cos): minus the cosine gradient
    for (int r = 0; r < n; ++r) {
        const double* p = probs.row(r);
        double* dl = dlogits.row(r);
        double dot = 0.0, norm2 = 0.0;
        for (int j = 0; j < k; ++j) {
            dot += e * p[j];
            norm2 += p[j] * p[j];
        }
        const double norm_p = std::sqrt(norm2);
        const double denom = norm_e * norm_p;
        // dcos/dp_j = e_j/denom - dot * p_j / (norm_e * norm_p^3)
        const double c1 = e / denom;
        const double c2 = dot / (norm_e * norm2 * norm_p);
        double inner = 0.0; // sum_j dL/dp_j * p_j for the softmax Jacobian
        for (int j = 0; j < k; ++j) {
            const double dp = scale * (c1 - c2 * p[j]);
            dl[j] = dp; // reuse as scratch
            inner += dp * p[j];
        }
        for (int j = 0; j < k; ++j) {
            dl[j] = p[j] * (dl[j] - inner);
        }
    }
}

} // namespace

void ArchConfig::validate() const {
    if (image_shape.channels < 1 || image_shape.height < 1 || image_shape.width < 1)
        throw ConfigError("arch: invalid image shape");
    if (feature_dim < 2) throw ConfigError("arch: feature_dim must be >= 2");
    // identity_count == 0 means "bound to the training view at run time".
    if (identity_count != 0 && identity_count < 2)
        throw ConfigError("arch: identity_count must be >= 2");
    for (const ConvSpec& c : conv_blocks) {
        if (c.out_channels < 1 || c.kernel < 1 || c.stride < 1)
            throw ConfigError("arch: invalid conv block");
    }
    for (int h : classifier_hidden) {
        if (h < 1) throw ConfigError("arch: invalid classifier hidden width");
    }
}

std::size_t encoder_param_count(const ArchConfig& arch) {
    return make_dims(arch).encoder_count;
}

std::size_t classifier_param_count(const ArchConfig& arch) {
    return make_dims(arch).classifier_count;
}

ModelState init_model(const ArchConfig& arch, std::uint64_t seed) {
    const Dims d = make_dims(arch);
    ModelState state;
    state.arch = arch;
    state.encoder_params.assign(d.encoder_count, 0.0);
    state.classifier_params.assign(d.classifier_count, 0.0);

    Rng enc_rng(mix_seed(seed, 0x454e43ull));
    for (const ConvDims& cd : d.convs) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cd.in_c) * cd.k * cd.k);
        for (std::size_t i = cd.w_off; i < cd.b_off; ++i)
            state.encoder_params[i] = enc_rng.uniform(-bound, bound);
    }
    for (const LinDims* ld : {&d.feature, &d.gaze}) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(ld->in));
        for (std::size_t i = ld->w_off; i < ld->b_off; ++i)
            state.encoder_params[i] = enc_rng.uniform(-bound, bound);
    }

    Rng cls_rng(mix_seed(seed, 0x434c53ull));
    for (const LinDims& ld : d.cls) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(ld.in));
        for (std::size_t i = ld.w_off; i < ld.b_off; ++i)
            state.classifier_params[i] = cls_rng.uniform(-bound, bound);
    }
    return state;
}

const std::vector<double>& get_params(const ModelState& state, ParamBlock which) {
    return which == ParamBlock::encoder ? state.encoder_params : state.classifier_params;
}

void set_params(ModelState& state, ParamBlock which, const std::vector<double>& values) {
    std::vector<double>& dst =
        which == ParamBlock::encoder ? state.encoder_params : state.classifier_params;
    if (values.size() != dst.size())
        throw std::invalid_argument("set_params: length mismatch");
    dst = values;
}

EncoderOut encoder_forward(const ModelState& state, const Matrix& images) {
    const Dims d = make_dims(state.arch);
    EncCache c;
    run_encoder(state, d, images, c);
    return {gaze_rows(c.gaze), std::move(c.f)};
}

Matrix classifier_forward(const ModelState& state, const Matrix& features) {
    const Dims d = make_dims(state.arch);
    ClsCache c;
    run_classifier(state, d, features, c);
    return std::move(c.probs);
}

GradResult gradients(const ModelState& state, const Batch& batch, LossPath path,
                     const LossWeights& w) {
    if (batch.size() == 0) throw std::invalid_argument("gradients: empty batch");
    if (batch.labels.size() != static_cast<std::size_t>(batch.size()))
        throw std::invalid_argument("gradients: batch has no identity labels");
    const Dims d = make_dims(state.arch);
    const int n = batch.size();
    const int k = state.arch.identity_count;

    EncCache enc;
    run_encoder(state, d, batch.images, enc);
    ClsCache cls;
    run_classifier(state, d, enc.f, cls);
    check_finite(enc, cls);

    GradResult res;
    res.l_idc = identity_loss(batch.labels, cls.probs);
    res.l_adv = adversarial_loss(cls.probs);
    res.l_g = gaze_loss(batch.gazes, gaze_rows(enc.gaze));
    res.loss = path == LossPath::identity ? w.lambda_idc * res.l_idc
                                          : total_encoder_loss(res.l_adv, res.l_g, w);
    if (!std::isfinite(res.loss))
        throw std::runtime_error("gradients: non-finite loss");

    res.encoder_grad.assign(d.encoder_count, 0.0);
    res.classifier_grad.assign(d.classifier_count, 0.0);

    // Seed the logit and gaze-head gradients for the selected scalar.
    Matrix dlogits(n, k);
    Matrix dgaze(n, 2);
    if (path == LossPath::identity) {
        if (w.lambda_idc != 0.0) {
            const double scale = w.lambda_idc / n;
            for (int r = 0; r < n; ++r) {
                const double* p = cls.probs.row(r);
                double* dl = dlogits.row(r);
                // -log is clamped below kLogClamp, where the loss is flat.
                if (p[batch.labels[r]] < kLogClamp) continue;
                for (int j = 0; j < k; ++j) dl[j] = scale * p[j];
                dl[batch.labels[r]] -= scale;
            }
        }
    } else {
        if (w.lambda_adv != 0.0) adv_logit_grad(cls.probs, w.lambda_adv, dlogits);
        const double scale = 1.0 / n;
        for (int r = 0; r < n; ++r) {
            const double dy = enc.gaze(r, 0) - batch.gazes[r].yaw;
            const double dp = enc.gaze(r, 1) - batch.gazes[r].pitch;
            dgaze(r, 0) = dy > 0.0 ? scale : (dy < 0.0 ? -scale : 0.0);
            dgaze(r, 1) = dp > 0.0 ? scale : (dp < 0.0 ? -scale : 0.0);
        }
    }

    // Classifier backward (also yields the feature gradient for the encoder).
    Matrix dfeat(n, state.arch.feature_dim);
    {
        const double* cp = state.classifier_params.data();
        double* cg = res.classifier_grad.data();
        const std::size_t hidden = d.cls.size() - 1;
        Matrix dz = dlogits;
        for (std::size_t l = d.cls.size(); l-- > 0;) {
            const Matrix& a_in = l == 0 ? enc.f : cls.a[l - 1];
            Matrix* da = nullptr;
            Matrix da_store;
            if (l == 0) {
                da = &dfeat;
            } else {
                da_store = Matrix(n, d.cls[l].in);
                da = &da_store;
            }
            linear_backward(dz, a_in, d.cls[l], cp, cg, da);
            if (l == 0) break;
            relu_mask(cls.z[l - 1], da_store);
            dz = std::move(da_store);
            (void)hidden;
        }
    }

    // Encoder backward: gaze head + feature gradient from the classifier.
    {
        const double* ep = state.encoder_params.data();
        double* eg = res.encoder_grad.data();

        Matrix df = dfeat;
        linear_backward(dgaze, enc.f, d.gaze, ep, eg, &df);
        relu_mask(enc.zf, df);

        Matrix dgap(n, d.gap_c);
        linear_backward(df, enc.gap, d.feature, ep, eg, &dgap);

        const int plane = d.gap_h * d.gap_w;
        const double inv_plane = 1.0 / plane;
        Matrix dconv(n, d.gap_c * plane);
        for (int r = 0; r < n; ++r) {
            const double* dg = dgap.row(r);
            double* dc = dconv.row(r);
            for (int ch = 0; ch < d.gap_c; ++ch) {
                const double v = dg[ch] * inv_plane;
                double* pl = dc + static_cast<std::size_t>(ch) * plane;
                std::fill(pl, pl + plane, v);
            }
        }

        for (std::size_t l = d.convs.size(); l-- > 0;) {
            relu_mask(enc.z[l], dconv);
            const Matrix& a_in = l == 0 ? batch.images : enc.a[l - 1];
            if (l == 0) {
                conv_backward(dconv, a_in, d.convs[l], ep + d.convs[l].w_off,
                              eg + d.convs[l].w_off, nullptr);
            } else {
                Matrix da(n, d.convs[l].in_c * d.convs[l].in_h * d.convs[l].in_w);
                conv_backward(dconv, a_in, d.convs[l], ep + d.convs[l].w_off,
                              eg + d.convs[l].w_off, &da);
                dconv = std::move(da);
            }
        }
    }
    return res;
}

double loss_value(const ModelState& state, const Batch& batch, LossPath path,
                  const LossWeights& w) {
    const Dims d = make_dims(state.arch);
    EncCache enc;
    run_encoder(state, d, batch.images, enc);
    ClsCache cls;
    run_classifier(state, d, enc.f, cls);
    if (path == LossPath::identity) {
        return w.lambda_idc * identity_loss(batch.labels, cls.probs);
    }
    const double l_adv = adversarial_loss(cls.probs);
    const double l_g = gaze_loss(batch.gazes, gaze_rows(enc.gaze));
    return total_encoder_loss(l_adv, l_g, w);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint vectors are little-endian float32");

void write_f32(const std::filesystem::path& path, const std::vector<double>& v) {
    std::vector<float> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
    if (!out) throw std::runtime_error("checkpoint: failed to write " + path.string());
}

std::vector<double> read_f32(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::vector<float> f(count);
    in.read(reinterpret_cast<char*>(f.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
        throw std::runtime_error("checkpoint: short read from " + path.string());
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = static_cast<double>(f[i]);
    return v;
}

json arch_to_json(const ArchConfig& a) {
    json blocks = json::array();
    for (const ConvSpec& c : a.conv_blocks)
        blocks.push_back({c.out_channels, c.kernel, c.stride});
    return json{{"image_shape", {a.image_shape.channels, a.image_shape.height, a.image_shape.width}},
                {"conv_blocks", blocks},
                {"feature_dim", a.feature_dim},
                {"classifier_hidden", a.classifier_hidden},
                {"identity_count", a.identity_count}};
}

ArchConfig arch_from_json(const json& j) {
    ArchConfig a;
    const auto& sh = j.at("image_shape");
    a.image_shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
    a.conv_blocks.clear();
    for (const auto& b : j.at("conv_blocks"))
        a.conv_blocks.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>()});
    a.feature_dim = j.at("feature_dim").get<int>();
    a.classifier_hidden = j.at("classifier_hidden").get<std::vector<int>>();
    a.identity_count = j.at("identity_count").get<int>();
    return a;
}

} // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& dir,
                     const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);
    json manifest{{"format", "saze-checkpoint-v1"},
                  {"arch", arch_to_json(state.arch)},
                  {"encoder_len", state.encoder_params.size()},
                  {"classifier_len", state.classifier_params.size()},
                  {"epoch", meta.epoch},
                  {"config_hash", meta.config_hash}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("checkpoint: failed to write manifest");
    write_f32(dir / "encoder.f32", state.encoder_params);
    write_f32(dir / "classifier.f32", state.classifier_params);
}

ModelState load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("checkpoint: cannot open " + (dir / "manifest.json").string());
    json manifest = json::parse(in);
    if (manifest.at("format").get<std::string>() != "saze-checkpoint-v1")
        throw ConfigError("checkpoint: unknown format");

    ModelState state;
    state.arch = arch_from_json(manifest.at("arch"));
    const std::size_t enc_len = manifest.at("encoder_len").get<std::size_t>();
    const std::size_t cls_len = manifest.at("classifier_len").get<std::size_t>();
    if (enc_len != encoder_param_count(state.arch) ||
        cls_len != classifier_param_count(state.arch))
        throw ConfigError("checkpoint: vector lengths do not match architecture");
    state.encoder_params = read_f32(dir / "encoder.f32", enc_len);
    state.classifier_params = read_f32(dir / "classifier.f32", cls_len);
    if (meta) {
        meta->epoch = manifest.at("epoch").get<int>();
        meta->config_hash = manifest.at("config_hash").get<std::string>();
    }
    return state;
}

} // namespace saze
