#pragma once

#include "dab/tensor.hpp"

namespace dab {

// Unoptimized float kernels. These are the oracles the binary kernels are
// checked against and the full-precision fallback path; keep them boring.

// Row-major flattening of one output filter of a [out, c, h, w] weight
// tensor into a length c*h*w vector.
RealTensor flatten_filter(const RealTensor& weights, std::size_t filter_index);

// c[i][j] = sum_t a[i][t] * b[t][j], accumulated left-to-right in f32.
RealTensor reference_matmul(const RealTensor& a, const RealTensor& b);

// Lowers one batch item of an NCHW input to a [c*kh*kw, out_h*out_w]
// column matrix; column t is the receptive field of output position t in
// (c, kh, kw) row-major order. Out-of-range taps read pad_value (0 for the
// float path, -1 for the sign-encoded path).
RealTensor im2col(const RealTensor& input, std::size_t item, int kh, int kw,
                  int stride, int pad, float pad_value = 0.0f);

// Direct nested-loop cross-correlation (no kernel flip), zero padding.
// input [n, c, h, w], weights [out, c, kh, kw] -> [n, out, oh, ow].
RealTensor reference_conv2d(const RealTensor& input, const RealTensor& weights,
                            int stride, int pad);

// Output extent of a conv dimension; fails if it is not a positive integer.
std::size_t conv_out_dim(std::size_t in, int kernel, int stride, int pad);

} // namespace dab
