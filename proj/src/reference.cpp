#include "dab/reference.hpp"

#include <cstring>

namespace dab {

RealTensor flatten_filter(const RealTensor& weights, std::size_t filter_index) {
    if (weights.rank() < 2)
        fail(ErrorKind::Shape, "flatten_filter expects a rank >= 2 weight tensor");
    std::size_t out = weights.shape[0];
    if (filter_index >= out)
        fail(ErrorKind::Bounds, "filter index out of range");
    std::size_t n = weights.numel() / out;
    RealTensor flat({n});
    std::memcpy(flat.ptr(), weights.ptr() + filter_index * n, n * sizeof(float));
    return flat;
}

RealTensor reference_matmul(const RealTensor& a, const RealTensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        fail(ErrorKind::Shape, "reference_matmul expects rank-2 tensors");
    std::size_t m = a.shape[0], k = a.shape[1];
    if (b.shape[0] != k)
        fail(ErrorKind::Shape, "reference_matmul inner dimensions do not match");
    std::size_t p = b.shape[1];

    RealTensor c({m, p});
    const float* ap = a.ptr();
    const float* bp = b.ptr();
    float* cp = c.ptr();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            float acc = 0.0f;
            for (std::size_t t = 0; t < k; ++t)
                acc += ap[i * k + t] * bp[t * p + j];
            cp[i * p + j] = acc;
        }
    }
    return c;
}

std::size_t conv_out_dim(std::size_t in, int kernel, int stride, int pad) {
    long span = static_cast<long>(in) + 2L * pad - kernel;
    if (stride <= 0 || span < 0 || span % stride != 0)
        fail(ErrorKind::Shape, "conv output size is not a positive integer");
    return static_cast<std::size_t>(span / stride) + 1;
}

RealTensor im2col(const RealTensor& input, std::size_t item, int kh, int kw,
                  int stride, int pad, float pad_value) {
    Shape4 s = as_shape4(input);
    if (item >= s.n) fail(ErrorKind::Bounds, "im2col batch item out of range");
    std::size_t oh = conv_out_dim(s.h, kh, stride, pad);
    std::size_t ow = conv_out_dim(s.w, kw, stride, pad);

    std::size_t rows = s.c * static_cast<std::size_t>(kh) * kw;
    std::size_t cols = oh * ow;
    RealTensor out({rows, cols});
    const float* in = input.ptr() + item * s.c * s.h * s.w;
    float* op = out.ptr();

    for (std::size_t c = 0; c < s.c; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                std::size_t row = (c * kh + ky) * kw + kx;
                float* dst = op + row * cols;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    int iy = static_cast<int>(oy) * stride - pad + ky;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        int ix = static_cast<int>(ox) * stride - pad + kx;
                        bool inside = iy >= 0 && iy < static_cast<int>(s.h) &&
                                      ix >= 0 && ix < static_cast<int>(s.w);
                        dst[oy * ow + ox] =
                            inside ? in[(c * s.h + iy) * s.w + ix] : pad_value;
                    }
                }
            }
        }
    }
    return out;
}

RealTensor reference_conv2d(const RealTensor& input, const RealTensor& weights,
                            int stride, int pad) {
    Shape4 in = as_shape4(input);
    Shape4 wt = as_shape4(weights); // out, c, kh, kw
    if (wt.c != in.c)
        fail(ErrorKind::Shape, "reference_conv2d channel counts do not match");
    std::size_t oh = conv_out_dim(in.h, static_cast<int>(wt.h), stride, pad);
    std::size_t ow = conv_out_dim(in.w, static_cast<int>(wt.w), stride, pad);

    RealTensor out({in.n, wt.n, oh, ow});
    const float* ip = input.ptr();
    const float* wp = weights.ptr();
    float* op = out.ptr();

    for (std::size_t b = 0; b < in.n; ++b)
        for (std::size_t f = 0; f < wt.n; ++f)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    float acc = 0.0f;
                    for (std::size_t c = 0; c < in.c; ++c)
                        for (std::size_t ky = 0; ky < wt.h; ++ky)
                            for (std::size_t kx = 0; kx < wt.w; ++kx) {
                                int iy = static_cast<int>(oy) * stride - pad +
                                         static_cast<int>(ky);
                                int ix = static_cast<int>(ox) * stride - pad +
                                         static_cast<int>(kx);
                                if (iy < 0 || iy >= static_cast<int>(in.h) ||
                                    ix < 0 || ix >= static_cast<int>(in.w))
                                    continue;
                                float x = ip[((b * in.c + c) * in.h + iy) * in.w + ix];
                                float w = wp[((f * wt.c + c) * wt.h + ky) * wt.w + kx];
                                acc += x * w;
                            }
                    op[((b * wt.n + f) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

} // namespace dab
