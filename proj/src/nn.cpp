#include "dab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dab/bitkernel.hpp"
#include "dab/reference.hpp"
#include "dab/rng.hpp"

namespace dab {

namespace {

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.9f; // weight on the old running statistic

struct Geom {
    std::size_t c, h, w;
    std::size_t features() const { return c * h * w; }
};

Geom input_geom(const NetworkConfig& config) {
    const auto& s = config.input_shape;
    if (s.size() == 3) return {s[0], s[1], s[2]};
    if (s.size() == 1) return {s[0], 1, 1};
    fail(ErrorKind::Config, "input shape must be {c,h,w} or {features}");
}

bool is_weight_layer(LayerKind k) {
    return k == LayerKind::Conv2d || k == LayerKind::Dense;
}

bool is_binarized(const LayerSpec& spec) { return is_binarized_layer(spec); }

Geom layer_out_geom(const LayerSpec& spec, const Geom& in) {
    switch (spec.kind) {
        case LayerKind::Conv2d: {
            if (spec.units == 0 || spec.kernel < 1)
                fail(ErrorKind::Config, "conv layer needs units and a kernel");
            std::size_t oh = conv_out_dim(in.h, spec.kernel, spec.stride, spec.pad);
            std::size_t ow = conv_out_dim(in.w, spec.kernel, spec.stride, spec.pad);
            return {spec.units, oh, ow};
        }
        case LayerKind::Dense:
            if (spec.units == 0)
                fail(ErrorKind::Config, "dense layer needs units");
            return {spec.units, 1, 1};
        case LayerKind::MaxPool: {
            if (spec.kernel < 2)
                fail(ErrorKind::Config, "pool window must be at least 2");
            std::size_t oh = conv_out_dim(in.h, spec.kernel, spec.kernel, 0);
            std::size_t ow = conv_out_dim(in.w, spec.kernel, spec.kernel, 0);
            return {in.c, oh, ow};
        }
        case LayerKind::BatchNorm:
        case LayerKind::SignActivation:
        case LayerKind::Relu:
        case LayerKind::SoftmaxXent:
            return in;
    }
    fail(ErrorKind::Config, "unknown layer kind");
}

// w is interpreted as [filters, r]; cols as [r, p]; adds bias if present.
void gemm_filters_cols(const float* w, const float* cols, const float* bias,
                       float* out, std::size_t filters, std::size_t r,
                       std::size_t p) {
    for (std::size_t f = 0; f < filters; ++f) {
        float* o = out + f * p;
        float init = bias ? bias[f] : 0.0f;
        for (std::size_t j = 0; j < p; ++j) o[j] = init;
        const float* wr = w + f * r;
        for (std::size_t t = 0; t < r; ++t) {
            float a = wr[t];
            const float* c = cols + t * p;
            for (std::size_t j = 0; j < p; ++j) o[j] += a * c[j];
        }
    }
}

RealTensor conv_forward_float(const RealTensor& input, const RealTensor& w,
                              const float* bias, int stride, int pad,
                              float pad_value) {
    Shape4 in = as_shape4(input);
    std::size_t filters = w.shape[0];
    std::size_t r = w.numel() / filters;
    int k = int(w.shape[2]);
    std::size_t oh = conv_out_dim(in.h, k, stride, pad);
    std::size_t ow = conv_out_dim(in.w, k, stride, pad);
    std::size_t p = oh * ow;

    RealTensor out({in.n, filters, oh, ow});
    for (std::size_t item = 0; item < in.n; ++item) {
        RealTensor cols = im2col(input, item, k, k, stride, pad, pad_value);
        gemm_filters_cols(w.ptr(), cols.ptr(), bias,
                          out.ptr() + item * filters * p, filters, r, p);
    }
    return out;
}

void col2im_add(const RealTensor& dcols, std::size_t c, std::size_t h,
                std::size_t w, int kh, int kw, int stride, int pad,
                float* dinput) {
    std::size_t oh = conv_out_dim(h, kh, stride, pad);
    std::size_t ow = conv_out_dim(w, kw, stride, pad);
    std::size_t p = oh * ow;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                std::size_t row = (ch * kh + ky) * kw + kx;
                const float* src = dcols.ptr() + row * p;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    int iy = int(oy) * stride - pad + ky;
                    if (iy < 0 || iy >= int(h)) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        int ix = int(ox) * stride - pad + kx;
                        if (ix < 0 || ix >= int(w)) continue;
                        dinput[(ch * h + iy) * w + ix] += src[oy * ow + ox];
                    }
                }
            }
}

struct ConvGrads {
    RealTensor dinput, dw, db;
};

ConvGrads conv_backward_float(const RealTensor& input, const RealTensor& w,
                              bool has_bias, const RealTensor& dout,
                              int stride, int pad, float pad_value) {
    Shape4 in = as_shape4(input);
    std::size_t filters = w.shape[0];
    std::size_t r = w.numel() / filters;
    int k = int(w.shape[2]);
    Shape4 os = as_shape4(dout);
    std::size_t p = os.h * os.w;

    ConvGrads g;
    g.dinput = RealTensor(input.shape);
    g.dw = RealTensor(w.shape);
    if (has_bias) g.db = RealTensor({filters});

    RealTensor dcols({r, p});
    for (std::size_t item = 0; item < in.n; ++item) {
        RealTensor cols = im2col(input, item, k, k, stride, pad, pad_value);
        const float* dy = dout.ptr() + item * filters * p;

        for (std::size_t f = 0; f < filters; ++f) {
            const float* dyf = dy + f * p;
            float* dwf = g.dw.ptr() + f * r;
            for (std::size_t t = 0; t < r; ++t) {
                const float* c = cols.ptr() + t * p;
                float acc = 0.0f;
                for (std::size_t j = 0; j < p; ++j) acc += dyf[j] * c[j];
                dwf[t] += acc;
            }
            if (has_bias) {
                float acc = 0.0f;
                for (std::size_t j = 0; j < p; ++j) acc += dyf[j];
                g.db.data[f] += acc;
            }
        }

        std::fill(dcols.data.begin(), dcols.data.end(), 0.0f);
        for (std::size_t f = 0; f < filters; ++f) {
            const float* wf = w.ptr() + f * r;
            const float* dyf = dy + f * p;
            for (std::size_t t = 0; t < r; ++t) {
                float a = wf[t];
                float* dc = dcols.ptr() + t * p;
                for (std::size_t j = 0; j < p; ++j) dc[j] += a * dyf[j];
            }
        }
        col2im_add(dcols, in.c, in.h, in.w, k, k, stride, pad,
                   g.dinput.ptr() + item * in.c * in.h * in.w);
    }
    return g;
}

RealTensor dense_forward_float(const RealTensor& input, const RealTensor& w,
                               const float* bias) {
    std::size_t batch = input.shape[0];
    std::size_t in_f = input.numel() / batch;
    std::size_t out_f = w.shape[0];
    if (w.shape[1] != in_f)
        fail(ErrorKind::Shape, "dense weight width does not match input");

    RealTensor out({batch, out_f, 1, 1});
    for (std::size_t b = 0; b < batch; ++b) {
        const float* x = input.ptr() + b * in_f;
        float* o = out.ptr() + b * out_f;
        for (std::size_t u = 0; u < out_f; ++u) {
            const float* wr = w.ptr() + u * in_f;
            float acc = bias ? bias[u] : 0.0f;
            for (std::size_t i = 0; i < in_f; ++i) acc += x[i] * wr[i];
            o[u] = acc;
        }
    }
    return out;
}

struct DenseGrads {
    RealTensor dinput, dw, db;
};

DenseGrads dense_backward_float(const RealTensor& input, const RealTensor& w,
                                bool has_bias, const RealTensor& dout) {
    std::size_t batch = input.shape[0];
    std::size_t in_f = input.numel() / batch;
    std::size_t out_f = w.shape[0];

    DenseGrads g;
    g.dinput = RealTensor(input.shape);
    g.dw = RealTensor(w.shape);
    if (has_bias) g.db = RealTensor({out_f});

    for (std::size_t b = 0; b < batch; ++b) {
        const float* x = input.ptr() + b * in_f;
        const float* dy = dout.ptr() + b * out_f;
        float* dx = g.dinput.ptr() + b * in_f;
        for (std::size_t u = 0; u < out_f; ++u) {
            float gy = dy[u];
            const float* wr = w.ptr() + u * in_f;
            float* dwr = g.dw.ptr() + u * in_f;
            for (std::size_t i = 0; i < in_f; ++i) {
                dwr[i] += gy * x[i];
                dx[i] += gy * wr[i];
            }
            if (has_bias) g.db.data[u] += gy;
        }
    }
    return g;
}

RealTensor dense_forward_bits(const RealTensor& input,
                              const std::vector<BinarizedFilter>& filters,
                              int threads) {
    std::size_t batch = input.shape[0];
    std::size_t in_f = input.numel() / batch;
    PackedMatrix pm(batch, in_f);
    for (std::size_t b = 0; b < batch; ++b) {
        const float* x = input.ptr() + b * in_f;
        std::uint64_t* row = pm.row(b);
        for (std::size_t i = 0; i < in_f; ++i) {
            if (x[i] == 1.0f)
                row[i >> 6] |= std::uint64_t(1) << (i & 63);
            else if (x[i] != -1.0f)
                fail(ErrorKind::Encoding,
                     "binarized dense input must be exactly +1 or -1");
        }
    }
    RealTensor flat = dab_gemm(pm, filters, threads); // [batch, out]
    return RealTensor({batch, filters.size(), 1, 1}, std::move(flat.data));
}

RealTensor wtilde_tensor(const std::vector<BinarizedFilter>& filters,
                         const std::vector<std::size_t>& shape) {
    RealTensor w(shape);
    std::size_t n = filters.empty() ? 0 : filters[0].n;
    for (std::size_t f = 0; f < filters.size(); ++f) {
        std::vector<float> rec = reconstruct(filters[f]);
        std::copy(rec.begin(), rec.end(), w.ptr() + f * n);
    }
    return w;
}

void require_finite_activations(const RealTensor& t) {
    if (!all_finite(t))
        fail(ErrorKind::Numeric, "non-finite activation; aborting step");
}

std::uint32_t mix_seed(std::uint32_t seed, std::uint32_t salt) {
    std::uint32_t h = seed ^ 0x9E3779B9u;
    h ^= salt + 0x85EBCA6Bu + (h << 6) + (h >> 2);
    h *= 2654435761u;
    return h ^ (h >> 16);
}

} // namespace

void validate_config(const NetworkConfig& config) {
    if (config.layers.empty()) fail(ErrorKind::Config, "empty layer list");
    if (config.class_count < 2)
        fail(ErrorKind::Config, "need at least two classes");

    Geom g = input_geom(config);
    bool seen_weight_layer = false;
    int last_dense = -1;
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& spec = config.layers[i];
        if (spec.kind == LayerKind::SoftmaxXent) {
            if (i + 1 != config.layers.size())
                fail(ErrorKind::Config, "loss marker must be the last layer");
            continue;
        }
        if (is_weight_layer(spec.kind)) {
            if (!seen_weight_layer && spec.bin_mode != BinMode::FPrec)
                fail(ErrorKind::Config,
                     "the first conv/dense layer must stay full precision");
            seen_weight_layer = true;
            if (is_binarized(spec) && spec.bias)
                fail(ErrorKind::Config, "binarized layers cannot carry a bias");
            if (spec.bin_mode == BinMode::FBin) {
                if (i == 0 ||
                    config.layers[i - 1].kind != LayerKind::SignActivation)
                    fail(ErrorKind::Config,
                         "an FBin layer must directly follow a sign activation");
            }
            if (spec.kind == LayerKind::Dense) last_dense = int(i);
        }
        g = layer_out_geom(spec, g);
    }

    std::size_t end = config.layers.size();
    if (config.layers.back().kind == LayerKind::SoftmaxXent) --end;
    if (last_dense < 0 || std::size_t(last_dense) != end - 1)
        fail(ErrorKind::Config, "network must end with a dense layer");
    if (config.layers[last_dense].units != std::size_t(config.class_count))
        fail(ErrorKind::Config, "final dense width must equal the class count");
    if (g.features() != std::size_t(config.class_count))
        fail(ErrorKind::Config, "output features do not match the class count");
}

TrainState skeleton_state(const NetworkConfig& config) {
    validate_config(config);
    TrainState state;
    state.layers.resize(config.layers.size());

    Geom g = input_geom(config);
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& spec = config.layers[i];
        LayerState& L = state.layers[i];
        L.spec = spec;
        L.in_c = g.c;
        L.in_h = g.h;
        L.in_w = g.w;
        Geom out = layer_out_geom(spec, g);
        L.out_c = out.c;
        L.out_h = out.h;
        L.out_w = out.w;
        g = out;
    }
    return state;
}

TrainState init_state(const NetworkConfig& config, std::uint32_t seed) {
    TrainState state = skeleton_state(config);
    state.seed = seed;
    std::mt19937 gen(seed);

    Hyperparams defaults;
    state.lr = defaults.lr_max;

    for (LayerState& L : state.layers) {
        const LayerSpec& spec = L.spec;
        if (spec.kind == LayerKind::Conv2d) {
            std::size_t k = std::size_t(spec.kernel);
            L.w = RealTensor({spec.units, L.in_c, k, k});
            float stddev = std::sqrt(2.0f / float(L.in_c * k * k));
            for (float& v : L.w.data) v = normal_float(gen, 0.0f, stddev);
            if (spec.bias) L.b = RealTensor({spec.units});
        } else if (spec.kind == LayerKind::Dense) {
            std::size_t in_f = L.in_c * L.in_h * L.in_w;
            L.w = RealTensor({spec.units, in_f});
            float stddev = std::sqrt(2.0f / float(in_f));
            for (float& v : L.w.data) v = normal_float(gen, 0.0f, stddev);
            if (spec.bias) L.b = RealTensor({spec.units});
        } else if (spec.kind == LayerKind::BatchNorm) {
            std::size_t c = L.in_c;
            L.bn_gamma = RealTensor({c}, std::vector<float>(c, 1.0f));
            L.bn_beta = RealTensor({c});
            L.bn_mean = RealTensor({c});
            L.bn_var = RealTensor({c}, std::vector<float>(c, 1.0f));
        }

        auto zeros_like = [](const RealTensor& t) {
            return AdamMoments{RealTensor(t.shape), RealTensor(t.shape)};
        };
        if (L.w.numel()) L.mw = zeros_like(L.w);
        if (L.b.numel()) L.mb = zeros_like(L.b);
        if (L.bn_gamma.numel()) {
            L.mgamma = zeros_like(L.bn_gamma);
            L.mbeta = zeros_like(L.bn_beta);
        }
    }
    return state;
}

namespace {

RealTensor batchnorm_forward(LayerState& L, const RealTensor& x,
                             LayerCache& lc, bool training) {
    Shape4 s = as_shape4(x);
    std::size_t per_c = s.n * s.h * s.w;
    std::size_t spatial = s.h * s.w;
    RealTensor out(x.shape);
    lc.bn_xhat = RealTensor(x.shape);
    lc.bn_mean.assign(s.c, 0.0f);
    lc.bn_invstd.assign(s.c, 0.0f);

    for (std::size_t c = 0; c < s.c; ++c) {
        float mean, invstd;
        if (training) {
            double sum = 0.0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const float* p = x.ptr() + (n * s.c + c) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) sum += p[j];
            }
            mean = float(sum / double(per_c));
            double var_sum = 0.0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const float* p = x.ptr() + (n * s.c + c) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) {
                    double d = double(p[j]) - mean;
                    var_sum += d * d;
                }
            }
            float var = float(var_sum / double(per_c));
            invstd = 1.0f / std::sqrt(var + kBnEps);
            L.bn_mean.data[c] =
                kBnMomentum * L.bn_mean.data[c] + (1.0f - kBnMomentum) * mean;
            L.bn_var.data[c] =
                kBnMomentum * L.bn_var.data[c] + (1.0f - kBnMomentum) * var;
        } else {
            mean = L.bn_mean.data[c];
            invstd = 1.0f / std::sqrt(L.bn_var.data[c] + kBnEps);
        }
        lc.bn_mean[c] = mean;
        lc.bn_invstd[c] = invstd;
        float gamma = L.bn_gamma.data[c], beta = L.bn_beta.data[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const float* p = x.ptr() + (n * s.c + c) * spatial;
            float* xh = lc.bn_xhat.ptr() + (n * s.c + c) * spatial;
            float* o = out.ptr() + (n * s.c + c) * spatial;
            for (std::size_t j = 0; j < spatial; ++j) {
                xh[j] = (p[j] - mean) * invstd;
                o[j] = gamma * xh[j] + beta;
            }
        }
    }
    return out;
}

RealTensor batchnorm_inference(const LayerState& L, const RealTensor& x) {
    Shape4 s = as_shape4(x);
    std::size_t spatial = s.h * s.w;
    RealTensor out(x.shape);
    for (std::size_t c = 0; c < s.c; ++c) {
        float mean = L.bn_mean.data[c];
        float invstd = 1.0f / std::sqrt(L.bn_var.data[c] + kBnEps);
        float gamma = L.bn_gamma.data[c], beta = L.bn_beta.data[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const float* p = x.ptr() + (n * s.c + c) * spatial;
            float* o = out.ptr() + (n * s.c + c) * spatial;
            for (std::size_t j = 0; j < spatial; ++j)
                o[j] = gamma * (p[j] - mean) * invstd + beta;
        }
    }
    return out;
}

struct BnGrads {
    RealTensor dinput, dgamma, dbeta;
};

BnGrads batchnorm_backward(const LayerState& L, const LayerCache& lc,
                           const RealTensor& dout) {
    Shape4 s = as_shape4(dout);
    std::size_t per_c = s.n * s.h * s.w;
    std::size_t spatial = s.h * s.w;
    BnGrads g;
    g.dinput = RealTensor(dout.shape);
    g.dgamma = RealTensor({s.c});
    g.dbeta = RealTensor({s.c});

    for (std::size_t c = 0; c < s.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const float* dy = dout.ptr() + (n * s.c + c) * spatial;
            const float* xh = lc.bn_xhat.ptr() + (n * s.c + c) * spatial;
            for (std::size_t j = 0; j < spatial; ++j) {
                sum_dy += dy[j];
                sum_dy_xhat += double(dy[j]) * xh[j];
            }
        }
        g.dgamma.data[c] = float(sum_dy_xhat);
        g.dbeta.data[c] = float(sum_dy);

        float gamma = L.bn_gamma.data[c];
        float invstd = lc.bn_invstd[c];
        float mean_dy = float(sum_dy / double(per_c));
        float mean_dy_xhat = float(sum_dy_xhat / double(per_c));
        for (std::size_t n = 0; n < s.n; ++n) {
            const float* dy = dout.ptr() + (n * s.c + c) * spatial;
            const float* xh = lc.bn_xhat.ptr() + (n * s.c + c) * spatial;
            float* dx = g.dinput.ptr() + (n * s.c + c) * spatial;
            for (std::size_t j = 0; j < spatial; ++j)
                dx[j] = gamma * invstd *
                        (dy[j] - mean_dy - xh[j] * mean_dy_xhat);
        }
    }
    return g;
}

RealTensor maxpool_forward(const RealTensor& x, int window, LayerCache& lc) {
    Shape4 s = as_shape4(x);
    std::size_t oh = conv_out_dim(s.h, window, window, 0);
    std::size_t ow = conv_out_dim(s.w, window, window, 0);
    RealTensor out({s.n, s.c, oh, ow});
    lc.pool_argmax.assign(out.numel(), 0);

    std::size_t idx = 0;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c) {
            const float* p = x.ptr() + (n * s.c + c) * s.h * s.w;
            std::size_t base = (n * s.c + c) * s.h * s.w;
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox, ++idx) {
                    float best = p[(oy * window) * s.w + ox * window];
                    std::size_t best_at =
                        base + (oy * window) * s.w + ox * window;
                    for (int dy = 0; dy < window; ++dy)
                        for (int dx = 0; dx < window; ++dx) {
                            std::size_t iy = oy * window + dy;
                            std::size_t ix = ox * window + dx;
                            float v = p[iy * s.w + ix];
                            if (v > best) {
                                best = v;
                                best_at = base + iy * s.w + ix;
                            }
                        }
                    out.data[idx] = best;
                    lc.pool_argmax[idx] = best_at;
                }
        }
    return out;
}

RealTensor maxpool_backward(const LayerCache& lc, const RealTensor& dout,
                            const std::vector<std::size_t>& in_shape) {
    RealTensor dx(in_shape);
    for (std::size_t i = 0; i < dout.numel(); ++i)
        dx.data[lc.pool_argmax[i]] += dout.data[i];
    return dx;
}

// Applies GradMode through the binarization map of one layer and returns the
// gradient w.r.t. the (conditioned) real weights.
RealTensor map_weight_grad(const LayerState& L, const LayerCache& lc,
                           const RealTensor& dwtilde,
                           const Hyperparams& hyper) {
    std::size_t filters = L.w.shape[0];
    std::size_t n = L.w.numel() / filters;
    RealTensor dw(L.w.shape);

    for (std::size_t f = 0; f < filters; ++f) {
        std::span<const float> up(dwtilde.ptr() + f * n, n);
        std::vector<float> g;
        if (hyper.grad_mode == GradMode::Paper) {
            std::span<const float> w(L.w.ptr() + f * n, n);
            g = dab_backward_paper(w, L.filters[f], up, hyper.ste);
        } else {
            g = dab_backward_projection(L.filters[f], up);
            // Compose with the conditioning the forward pass applied: the
            // clamp gate on pre-clamp values, then the mean-center transpose.
            const float* centered = lc.centered.ptr() + f * n;
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (std::abs(centered[i]) > 1.0f) g[i] = 0.0f;
                sum += g[i];
            }
            float mean = float(sum / double(n));
            for (std::size_t i = 0; i < n; ++i) g[i] -= mean;
        }
        std::copy(g.begin(), g.end(), dw.ptr() + f * n);
    }
    return dw;
}

} // namespace

RealTensor binary_forward(const NetworkConfig& config, TrainState& state,
                          const RealTensor& batch, const Hyperparams& hyper,
                          ForwardCache& cache) {
    Geom in = input_geom(config);
    Shape4 bs = as_shape4(batch);
    if (bs.c != in.c || bs.h != in.h || bs.w != in.w)
        fail(ErrorKind::Shape, "batch shape does not match the network input");

    cache.layers.assign(config.layers.size(), {});
    RealTensor x = batch;

    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        LayerState& L = state.layers[i];
        LayerCache& lc = cache.layers[i];
        const LayerSpec& spec = L.spec;
        RealTensor out;

        switch (spec.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Dense: {
                if (is_binarized(spec)) {
                    mean_center(L.w);
                    lc.centered = L.w; // pre-clamp copy for the backward gate
                    clamp_unit(L.w);
                    L.filters = binarize_layer(L.w, spec.scheme, hyper.threads);
                    lc.wtilde = wtilde_tensor(L.filters, L.w.shape);
                }
                const float* bias = L.b.numel() ? L.b.ptr() : nullptr;
                if (spec.kind == LayerKind::Conv2d) {
                    if (spec.bin_mode == BinMode::FBin)
                        out = binary_conv2d(x, L.filters, spec.stride, spec.pad,
                                            hyper.threads);
                    else if (spec.bin_mode == BinMode::WBin)
                        out = conv_forward_float(x, lc.wtilde, nullptr,
                                                 spec.stride, spec.pad, 0.0f);
                    else
                        out = conv_forward_float(x, L.w, bias, spec.stride,
                                                 spec.pad, 0.0f);
                } else {
                    if (spec.bin_mode == BinMode::FBin)
                        out = dense_forward_bits(x, L.filters, hyper.threads);
                    else if (spec.bin_mode == BinMode::WBin)
                        out = dense_forward_float(x, lc.wtilde, nullptr);
                    else
                        out = dense_forward_float(x, L.w, bias);
                }
                break;
            }
            case LayerKind::BatchNorm:
                out = batchnorm_forward(L, x, lc, true);
                break;
            case LayerKind::MaxPool:
                out = maxpool_forward(x, spec.kernel, lc);
                break;
            case LayerKind::Relu: {
                out = RealTensor(x.shape);
                for (std::size_t j = 0; j < x.numel(); ++j)
                    out.data[j] = x.data[j] > 0.0f ? x.data[j] : 0.0f;
                break;
            }
            case LayerKind::SignActivation: {
                out = RealTensor(x.shape);
                for (std::size_t j = 0; j < x.numel(); ++j)
                    out.data[j] = x.data[j] >= 0.0f ? 1.0f : -1.0f;
                break;
            }
            case LayerKind::SoftmaxXent:
                out = x; // loss handled outside the layer walk
                break;
        }
        require_finite_activations(out);
        lc.input = std::move(x);
        x = std::move(out);
    }

    std::size_t b = batch.shape[0];
    RealTensor logits({b, std::size_t(config.class_count)}, x.data);
    cache.logits = logits;
    cache.valid = true;
    return logits;
}

namespace {

// One layer of the inference path; shared by forward_inference and the
// BatchNorm statistic re-estimation sweep.
RealTensor inference_layer(const LayerState& L, const RealTensor& x,
                           int threads) {
    const LayerSpec& spec = L.spec;
    switch (spec.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Dense: {
            const float* bias = L.b.numel() ? L.b.ptr() : nullptr;
            if (is_binarized(spec)) {
                if (L.filters.empty())
                    fail(ErrorKind::State,
                         "binarized layer has no filters; train or load first");
                if (spec.kind == LayerKind::Conv2d) {
                    if (spec.bin_mode == BinMode::FBin)
                        return binary_conv2d(x, L.filters, spec.stride,
                                             spec.pad, threads);
                    RealTensor wt = wtilde_tensor(
                        L.filters, {L.out_c, L.in_c, std::size_t(spec.kernel),
                                    std::size_t(spec.kernel)});
                    return conv_forward_float(x, wt, nullptr, spec.stride,
                                              spec.pad, 0.0f);
                }
                if (spec.bin_mode == BinMode::FBin)
                    return dense_forward_bits(x, L.filters, threads);
                RealTensor wt = wtilde_tensor(
                    L.filters, {L.out_c, L.in_c * L.in_h * L.in_w});
                return dense_forward_float(x, wt, nullptr);
            }
            if (spec.kind == LayerKind::Conv2d)
                return conv_forward_float(x, L.w, bias, spec.stride, spec.pad,
                                          0.0f);
            return dense_forward_float(x, L.w, bias);
        }
        case LayerKind::BatchNorm:
            return batchnorm_inference(L, x);
        case LayerKind::MaxPool: {
            LayerCache scratch;
            return maxpool_forward(x, spec.kernel, scratch);
        }
        case LayerKind::Relu: {
            RealTensor out(x.shape);
            for (std::size_t j = 0; j < x.numel(); ++j)
                out.data[j] = x.data[j] > 0.0f ? x.data[j] : 0.0f;
            return out;
        }
        case LayerKind::SignActivation: {
            RealTensor out(x.shape);
            for (std::size_t j = 0; j < x.numel(); ++j)
                out.data[j] = x.data[j] >= 0.0f ? 1.0f : -1.0f;
            return out;
        }
        case LayerKind::SoftmaxXent:
            return x;
    }
    fail(ErrorKind::Config, "unknown layer kind");
}

} // namespace

RealTensor forward_inference(const NetworkConfig& config,
                             const TrainState& state, const RealTensor& batch,
                             int threads) {
    Geom in = input_geom(config);
    Shape4 bs = as_shape4(batch);
    if (bs.c != in.c || bs.h != in.h || bs.w != in.w)
        fail(ErrorKind::Shape, "batch shape does not match the network input");

    RealTensor x = batch;
    for (const LayerState& L : state.layers) x = inference_layer(L, x, threads);
    return RealTensor({batch.shape[0], std::size_t(config.class_count)},
                      std::move(x.data));
}

void reestimate_bn_stats(const NetworkConfig& config, TrainState& state,
                         const RealTensor& images, int threads) {
    Geom in = input_geom(config);
    Shape4 s = as_shape4(images);
    if (s.c != in.c || s.h != in.h || s.w != in.w)
        fail(ErrorKind::Shape, "batch shape does not match the network input");
    std::size_t pix = s.c * s.h * s.w;
    const std::size_t chunk = 128;

    // Layers are swept in order so each BatchNorm is calibrated on inputs
    // produced with every earlier layer already in inference mode. With sign
    // activations downstream this consistency matters: statistics gathered
    // under training-mode (per-batch) upstream normalization describe a
    // slightly different distribution, and the thresholding turns that slight
    // difference into wholesale bit flips.
    for (std::size_t bi = 0; bi < state.layers.size(); ++bi) {
        LayerState& B = state.layers[bi];
        if (B.spec.kind != LayerKind::BatchNorm) continue;
        std::size_t channels = B.bn_mean.numel();
        std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
        double count = 0.0;
        for (std::size_t at = 0; at < s.n; at += chunk) {
            std::size_t take = std::min(chunk, s.n - at);
            RealTensor x({take, s.c, s.h, s.w});
            std::copy_n(images.ptr() + at * pix, take * pix, x.ptr());
            for (std::size_t li = 0; li < bi; ++li)
                x = inference_layer(state.layers[li], x, threads);
            Shape4 xs = as_shape4(x);
            if (xs.c != channels)
                fail(ErrorKind::Shape, "batchnorm input channels changed");
            std::size_t spatial = xs.h * xs.w;
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t n = 0; n < xs.n; ++n) {
                    const float* p = x.ptr() + (n * xs.c + c) * spatial;
                    for (std::size_t j = 0; j < spatial; ++j) {
                        sum[c] += p[j];
                        sumsq[c] += double(p[j]) * double(p[j]);
                    }
                }
            count += double(take * spatial);
        }
        for (std::size_t c = 0; c < channels; ++c) {
            double m = sum[c] / count;
            double v = sumsq[c] / count - m * m;
            B.bn_mean.data[c] = float(m);
            B.bn_var.data[c] = float(v > 0.0 ? v : 0.0);
        }
    }
}

std::vector<ParamGrads> binary_backward(const NetworkConfig& config,
                                        const TrainState& state,
                                        const ForwardCache& cache,
                                        const RealTensor& loss_grad,
                                        const Hyperparams& hyper) {
    if (!cache.valid)
        fail(ErrorKind::State, "backward called without a forward cache");
    std::size_t n_layers = config.layers.size();
    std::vector<ParamGrads> grads(n_layers);

    std::size_t b = loss_grad.shape[0];
    RealTensor g({b, std::size_t(config.class_count), 1, 1}, loss_grad.data);

    for (std::size_t ii = n_layers; ii-- > 0;) {
        const LayerState& L = state.layers[ii];
        const LayerCache& lc = cache.layers[ii];
        const LayerSpec& spec = L.spec;

        switch (spec.kind) {
            case LayerKind::Dense: {
                const RealTensor& w_used = is_binarized(spec) ? lc.wtilde : L.w;
                DenseGrads dg = dense_backward_float(
                    lc.input, w_used, L.b.numel() && !is_binarized(spec), g);
                if (is_binarized(spec))
                    grads[ii].w = map_weight_grad(L, lc, dg.dw, hyper);
                else
                    grads[ii].w = std::move(dg.dw);
                grads[ii].b = std::move(dg.db);
                g = std::move(dg.dinput);
                break;
            }
            case LayerKind::Conv2d: {
                const RealTensor& w_used = is_binarized(spec) ? lc.wtilde : L.w;
                float pad_value = spec.bin_mode == BinMode::FBin ? -1.0f : 0.0f;
                ConvGrads cg = conv_backward_float(
                    lc.input, w_used, L.b.numel() && !is_binarized(spec), g,
                    spec.stride, spec.pad, pad_value);
                if (is_binarized(spec))
                    grads[ii].w = map_weight_grad(L, lc, cg.dw, hyper);
                else
                    grads[ii].w = std::move(cg.dw);
                grads[ii].b = std::move(cg.db);
                g = std::move(cg.dinput);
                break;
            }
            case LayerKind::BatchNorm: {
                BnGrads bg = batchnorm_backward(L, lc, g);
                grads[ii].gamma = std::move(bg.dgamma);
                grads[ii].beta = std::move(bg.dbeta);
                g = std::move(bg.dinput);
                break;
            }
            case LayerKind::MaxPool:
                g = maxpool_backward(lc, g, lc.input.shape);
                break;
            case LayerKind::Relu: {
                RealTensor dx(lc.input.shape);
                for (std::size_t j = 0; j < dx.numel(); ++j)
                    dx.data[j] = lc.input.data[j] > 0.0f ? g.data[j] : 0.0f;
                g = std::move(dx);
                break;
            }
            case LayerKind::SignActivation: {
                RealTensor dx(lc.input.shape);
                for (std::size_t j = 0; j < dx.numel(); ++j)
                    dx.data[j] =
                        std::abs(lc.input.data[j]) <= 1.0f ? g.data[j] : 0.0f;
                g = std::move(dx);
                break;
            }
            case LayerKind::SoftmaxXent:
                break;
        }
    }
    return grads;
}

void adam_update(RealTensor& w, const RealTensor& grad, AdamMoments& moments,
                 std::uint64_t t, float lr, const Hyperparams& hyper) {
    if (!w.same_shape(grad))
        fail(ErrorKind::Shape, "gradient shape does not match parameter");
    if (!moments.m.same_shape(w)) {
        moments.m = RealTensor(w.shape);
        moments.v = RealTensor(w.shape);
    }
    float b1 = hyper.adam_beta1, b2 = hyper.adam_beta2;
    float bc1 = 1.0f - std::pow(b1, float(t));
    float bc2 = 1.0f - std::pow(b2, float(t));
    for (std::size_t i = 0; i < w.numel(); ++i) {
        float gi = grad.data[i];
        float m = moments.m.data[i] = b1 * moments.m.data[i] + (1.0f - b1) * gi;
        float v = moments.v.data[i] =
            b2 * moments.v.data[i] + (1.0f - b2) * gi * gi;
        float mhat = m / bc1;
        float vhat = v / bc2;
        w.data[i] -= lr * mhat / (std::sqrt(vhat) + hyper.adam_eps);
    }
}

double train_step(const NetworkConfig& config, TrainState& state,
                  const RealTensor& batch, const std::vector<int>& targets,
                  const Hyperparams& hyper) {
    if (batch.shape[0] != targets.size())
        fail(ErrorKind::Shape, "batch and target counts differ");

    ForwardCache cache;
    RealTensor logits = binary_forward(config, state, batch, hyper, cache);
    auto [loss, dlogits] = softmax_xent(logits, targets);
    std::vector<ParamGrads> grads =
        binary_backward(config, state, cache, dlogits, hyper);

    state.step += 1;
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        LayerState& L = state.layers[i];
        if (grads[i].w.numel())
            adam_update(L.w, grads[i].w, L.mw, state.step, state.lr, hyper);
        if (grads[i].b.numel())
            adam_update(L.b, grads[i].b, L.mb, state.step, state.lr, hyper);
        if (grads[i].gamma.numel()) {
            adam_update(L.bn_gamma, grads[i].gamma, L.mgamma, state.step,
                        state.lr, hyper);
            adam_update(L.bn_beta, grads[i].beta, L.mbeta, state.step,
                        state.lr, hyper);
        }
    }
    return loss;
}

void update_lr_on_epoch(TrainState& state, double epoch_loss,
                        const Hyperparams& hyper) {
    if (!state.plateau_initialized ||
        epoch_loss < state.best_plateau_loss - 1e-6) {
        state.best_plateau_loss = float(epoch_loss);
        state.epochs_since_improvement = 0;
        state.plateau_initialized = true;
        return;
    }
    if (++state.epochs_since_improvement >= hyper.plateau_patience) {
        state.lr = std::max(state.lr / hyper.lr_decay_factor, hyper.lr_min);
        state.epochs_since_improvement = 0;
    }
}

void refresh_binarization(const NetworkConfig& config, TrainState& state,
                          int threads) {
    (void)config;
    for (LayerState& L : state.layers) {
        if (!is_binarized(L.spec)) continue;
        RealTensor tmp = L.w;
        mean_center(tmp);
        clamp_unit(tmp);
        L.filters = binarize_layer(tmp, L.spec.scheme, threads);
    }
}

namespace {

// One inference sweep yielding {top-1 accuracy, mean cross-entropy}. Shared
// by evaluate() and the training loop, which wants the held-out loss as its
// plateau signal without paying for a second pass.
std::pair<double, double> inference_metrics(const NetworkConfig& config,
                                            const TrainState& state,
                                            const Dataset& dataset,
                                            int threads) {
    if (dataset.size() == 0) fail(ErrorKind::Input, "empty dataset");
    Shape4 s = as_shape4(dataset.images);
    std::size_t pix = s.c * s.h * s.w;
    const std::size_t chunk = 128;

    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t at = 0; at < s.n; at += chunk) {
        std::size_t count = std::min(chunk, s.n - at);
        RealTensor batch({count, s.c, s.h, s.w});
        std::copy_n(dataset.images.ptr() + at * pix, count * pix, batch.ptr());
        RealTensor logits = forward_inference(config, state, batch, threads);
        std::vector<int> targets(dataset.labels.begin() + long(at),
                                 dataset.labels.begin() + long(at + count));
        loss_sum += softmax_xent(logits, targets).first * double(count);
        std::size_t k = logits.shape[1];
        for (std::size_t i = 0; i < count; ++i) {
            const float* row = logits.ptr() + i * k;
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (row[j] > row[best]) best = j;
            if (int(best) == dataset.labels[at + i]) ++correct;
        }
    }
    return {double(correct) / double(s.n), loss_sum / double(s.n)};
}

} // namespace

double evaluate(const NetworkConfig& config, const TrainState& state,
                const Dataset& dataset, int threads) {
    return inference_metrics(config, state, dataset, threads).first;
}

std::pair<double, RealTensor> softmax_xent(const RealTensor& logits,
                                           const std::vector<int>& targets) {
    if (logits.rank() != 2 || logits.shape[0] != targets.size())
        fail(ErrorKind::Shape, "logit rows and target count differ");
    std::size_t b = logits.shape[0], k = logits.shape[1];
    RealTensor dlogits({b, k});
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        int t = targets[i];
        if (t < 0 || std::size_t(t) >= k)
            fail(ErrorKind::Input, "target class out of range");
        const float* row = logits.ptr() + i * k;
        float m = row[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(double(row[j]) - m);
        loss += std::log(z) - (double(row[t]) - m);
        for (std::size_t j = 0; j < k; ++j) {
            double p = std::exp(double(row[j]) - m) / z;
            dlogits.data[i * k + j] =
                float((p - (std::size_t(t) == j ? 1.0 : 0.0)) / double(b));
        }
    }
    return {loss / double(b), std::move(dlogits)};
}

namespace {

void hflip_item(float* img, std::size_t c, std::size_t h, std::size_t w) {
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y) {
            float* row = img + (ch * h + y) * w;
            std::reverse(row, row + w);
        }
}

} // namespace

std::vector<EpochMetrics> train_network(const NetworkConfig& config,
                                        TrainState& state,
                                        const Dataset& train,
                                        const Dataset& test,
                                        const Hyperparams& hyper,
                                        const EpochHook& hook) {
    validate_config(config);
    if (train.size() == 0 || test.size() == 0)
        fail(ErrorKind::Input, "empty dataset");
    if (state.step == 0) state.lr = hyper.lr_max; // fresh run; resume keeps lr

    Shape4 s = as_shape4(train.images);
    std::vector<EpochMetrics> metrics;
    metrics.reserve(hyper.epochs);

    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        BatchIterator it(train, hyper.batch,
                         mix_seed(hyper.seed, std::uint32_t(epoch)));
        std::mt19937 flip_rng(mix_seed(hyper.seed ^ 0x5bd1e995u,
                                       std::uint32_t(epoch)));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        Batch b;
        while (it.next(b)) {
            if (hyper.augment_hflip) {
                std::size_t count = b.images.shape[0];
                for (std::size_t i = 0; i < count; ++i)
                    if (flip_rng() & 1u)
                        hflip_item(b.images.ptr() + i * s.c * s.h * s.w, s.c,
                                   s.h, s.w);
            }
            loss_sum += train_step(config, state, b.images, b.labels, hyper);
            ++batches;
        }
        double train_loss = loss_sum / double(batches);

        refresh_binarization(config, state, hyper.threads);
        reestimate_bn_stats(config, state, train.images, hyper.threads);
        auto [acc, val_loss] = inference_metrics(config, state, test,
                                                 hyper.threads);
        metrics.push_back({epoch, train_loss, acc, state.lr});
        // Plateau detection watches the held-out loss: on fully binarized
        // nets the train loss keeps improving while test accuracy thrashes,
        // and the decay would never fire.
        update_lr_on_epoch(state, val_loss, hyper);
        if (hook) hook(state, epoch);
    }
    return metrics;
}

NetworkConfig make_convnet(BinMode mode, Scheme scheme, int class_count,
                           std::size_t input_hw) {
    NetworkConfig cfg;
    cfg.input_shape = {1, input_hw, input_hw};
    cfg.class_count = class_count;

    auto conv = [&](std::size_t ch, BinMode m) {
        LayerSpec s;
        s.kind = LayerKind::Conv2d;
        s.units = ch;
        s.kernel = 3;
        s.stride = 1;
        s.pad = 1;
        s.bin_mode = m;
        s.scheme = scheme;
        s.bias = m == BinMode::FPrec;
        return s;
    };
    auto plain = [&](LayerKind k) {
        LayerSpec s;
        s.kind = k;
        if (k == LayerKind::MaxPool) {
            s.kernel = 2;
            s.stride = 2;
        }
        return s;
    };

    cfg.layers.push_back(conv(8, BinMode::FPrec));
    cfg.layers.push_back(plain(LayerKind::BatchNorm));
    cfg.layers.push_back(plain(LayerKind::Relu));
    cfg.layers.push_back(plain(LayerKind::MaxPool));

    if (mode == BinMode::FBin) {
        for (std::size_t ch : {16u, 32u}) {
            cfg.layers.push_back(plain(LayerKind::BatchNorm));
            cfg.layers.push_back(plain(LayerKind::SignActivation));
            cfg.layers.push_back(conv(ch, BinMode::FBin));
            cfg.layers.push_back(plain(LayerKind::MaxPool));
        }
    } else {
        for (std::size_t ch : {16u, 32u}) {
            cfg.layers.push_back(conv(ch, mode));
            cfg.layers.push_back(plain(LayerKind::BatchNorm));
            cfg.layers.push_back(plain(LayerKind::Relu));
            cfg.layers.push_back(plain(LayerKind::MaxPool));
        }
    }

    LayerSpec head;
    head.kind = LayerKind::Dense;
    head.units = std::size_t(class_count);
    head.bin_mode = BinMode::FPrec;
    head.bias = true;
    cfg.layers.push_back(head);
    return cfg;
}

NetworkConfig make_mlp(BinMode mode, Scheme scheme, int class_count,
                       std::size_t input_hw) {
    NetworkConfig cfg;
    cfg.input_shape = {1, input_hw, input_hw};
    cfg.class_count = class_count;

    auto dense = [&](std::size_t units, BinMode m) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.units = units;
        s.bin_mode = m;
        s.scheme = scheme;
        s.bias = m == BinMode::FPrec;
        return s;
    };
    auto plain = [&](LayerKind k) {
        LayerSpec s;
        s.kind = k;
        return s;
    };

    cfg.layers.push_back(dense(128, BinMode::FPrec));
    cfg.layers.push_back(plain(LayerKind::BatchNorm));
    if (mode == BinMode::FBin) {
        cfg.layers.push_back(plain(LayerKind::SignActivation));
        cfg.layers.push_back(dense(64, BinMode::FBin));
    } else {
        cfg.layers.push_back(plain(LayerKind::Relu));
        cfg.layers.push_back(dense(64, mode));
    }
    cfg.layers.push_back(plain(LayerKind::BatchNorm));
    cfg.layers.push_back(plain(LayerKind::Relu));
    cfg.layers.push_back(dense(std::size_t(class_count), BinMode::FPrec));
    return cfg;
}

} // namespace dab
