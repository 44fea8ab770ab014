#pragma once

#include <span>
#include <vector>

#include "dab/binarize.hpp"
#include "dab/bits.hpp"
#include "dab/tensor.hpp"

namespace dab {

// Packs exact ±1 activations: bit i = 1 iff x_i = +1. Anything else is an
// encoding error; this is the door through which all bit kernels get fed.
PackedBits pack_signs(std::span<const float> x);
PackedBits pack_signs(const RealTensor& x);

// Dot product of a ±1 input with a two-value filter, done with popcounts.
// With s_e = 2*masked_popcount(input, mask) - k counting the alpha-group
// contribution and s = 2*popcount(input) - n the total, the result is
// alpha*s_e + beta*(s - s_e); the integer parts are exact.
float dab_dot(const PackedBits& input, const BinarizedFilter& f);

// out[i][j] = dab_dot(row i, filter j). The per-row total popcount is hoisted
// out of the filter loop. Rows are split across `threads` when > 1; the
// result is identical to the sequential order either way.
RealTensor dab_gemm(const PackedMatrix& inputs,
                    const std::vector<BinarizedFilter>& filters,
                    int threads = 1);

// Convolution of a ±1 NCHW input with two-value filters, lowered to packed
// dot products. Padded positions contribute -1: a packed vector has no third
// symbol, so zero padding is unrepresentable here.
RealTensor binary_conv2d(const RealTensor& input,
                         const std::vector<BinarizedFilter>& filters,
                         int stride, int pad, int threads = 1);

} // namespace dab
