#include "dab/grad.hpp"

#include <cmath>

namespace dab {

namespace {

float sgn0(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

float ste_term(float v, float w, SteKind ste) {
    if (std::abs(w) > 1.0f) return 0.0f;
    return ste == SteKind::ValueScaled ? v : (v != 0.0f ? 1.0f : 0.0f);
}

} // namespace

std::vector<float> dab_backward_paper(std::span<const float> w,
                                      const BinarizedFilter& f,
                                      std::span<const float> upstream,
                                      SteKind ste) {
    std::size_t n = w.size();
    if (n != f.n || upstream.size() != n)
        fail(ErrorKind::Shape, "weight, filter, and upstream lengths differ");

    double t_l1 = 0.0, r_l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (f.mask.get(i))
            t_l1 += std::abs(double(w[i]));
        else
            r_l1 += std::abs(double(w[i]));
    }
    float alpha_scale = f.k > 0 ? float(t_l1 / double(f.k)) : 0.0f;
    float beta_scale = f.k < n ? float(r_l1 / double(n - f.k)) : 0.0f;
    float inv_k = f.k > 0 ? 1.0f / float(f.k) : 0.0f;
    float inv_rest = f.k < n ? 1.0f / float(n - f.k) : 0.0f;

    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        bool in_alpha = f.mask.get(i);
        float t = in_alpha ? w[i] : 0.0f;
        float r = w[i] - t;
        float st = sgn0(t);
        float g1 = st * st * inv_k + alpha_scale * ste_term(t, w[i], ste);
        float g2 = sgn0(r) * (1.0f - st) * inv_rest +
                   beta_scale * ste_term(r, w[i], ste);
        out[i] = upstream[i] * (g1 + g2);
    }
    return out;
}

RealTensor dab_backward_paper(const RealTensor& w, const BinarizedFilter& f,
                              const RealTensor& upstream, SteKind ste) {
    if (!w.same_shape(upstream))
        fail(ErrorKind::Shape, "weight and upstream shapes differ");
    std::vector<float> g = dab_backward_paper(w.span(), f, upstream.span(), ste);
    return RealTensor(w.shape, std::move(g));
}

std::vector<float> dab_backward_projection(const BinarizedFilter& f,
                                           std::span<const float> upstream) {
    std::size_t n = upstream.size();
    if (n != f.n)
        fail(ErrorKind::Shape, "filter and upstream lengths differ");

    double alpha_dot = 0.0, beta_dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (f.mask.get(i))
            alpha_dot += upstream[i];
        else
            beta_dot += upstream[i];
    }
    float alpha_mean = f.k > 0 ? float(alpha_dot / double(f.k)) : 0.0f;
    float beta_mean = f.k < n ? float(beta_dot / double(n - f.k)) : 0.0f;

    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = f.mask.get(i) ? alpha_mean : beta_mean;
    return out;
}

RealTensor dab_backward_projection(const BinarizedFilter& f,
                                   const RealTensor& upstream) {
    std::vector<float> g = dab_backward_projection(f, upstream.span());
    return RealTensor(upstream.shape, std::move(g));
}

RealTensor sign_activation_forward(const RealTensor& x) {
    RealTensor out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i)
        out.data[i] = x.data[i] >= 0.0f ? 1.0f : -1.0f;
    return out;
}

RealTensor sign_activation_backward(const RealTensor& x,
                                    const RealTensor& upstream) {
    if (!x.same_shape(upstream))
        fail(ErrorKind::Shape, "activation and upstream shapes differ");
    RealTensor out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i)
        out.data[i] = std::abs(x.data[i]) <= 1.0f ? upstream.data[i] : 0.0f;
    return out;
}

} // namespace dab
