#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dab/bits.hpp"
#include "dab/tensor.hpp"

namespace dab {

enum class Scheme : std::uint8_t { Dab = 0, Xnor = 1, Bnn = 2 };

// Which end of the sorted filter the alpha group sits on: Ascending means the
// K smallest weights, Descending the K largest.
enum class Direction : std::uint8_t { Ascending = 0, Descending = 1 };

struct KSearchResult {
    std::size_t k = 0;
    Direction direction = Direction::Ascending;
    double objective = 0.0; // maximized split score; error = |W|^2 - objective
};

// Two-value approximation of one flattened filter. Mask bit i is 1 when
// weight i belongs to the alpha group, so k == mask.popcount().
struct BinarizedFilter {
    std::size_t n = 0;
    std::size_t k = 0;
    float alpha = 0.0f;
    float beta = 0.0f;
    PackedBits mask;
};

// Finds the split (k, direction) minimizing the two-value reconstruction
// error in O(n log n). Reported coordinates follow the relabel convention:
// alpha names the group whose mean is larger in magnitude.
KSearchResult find_optimal_k(std::span<const float> values);

BinarizedFilter binarize_dab(std::span<const float> values);

// Builds the two-value approximation for a caller-chosen split. No relabel
// is applied: the alpha group is exactly the k smallest (Ascending) or k
// largest (Descending) weights.
BinarizedFilter binarize_dab_fixed_k(std::span<const float> values,
                                     std::size_t k, Direction direction);

// alpha = mean absolute weight, beta = -alpha, alpha group = nonnegative
// weights. k may be 0 or n here; only the optimal search is restricted.
BinarizedFilter binarize_xnor(std::span<const float> values);

// alpha = +1, beta = -1, alpha group = nonnegative weights.
BinarizedFilter binarize_bnn(std::span<const float> values);

// Exhaustive search over every proper nonempty alpha group. Only for cross
// checking the fast path; rejects n > 20.
BinarizedFilter brute_force_binarize(std::span<const float> values);

std::vector<float> reconstruct(const BinarizedFilter& filter);

// Squared L2 distance between the filter's reconstruction and `values`,
// accumulated in double precision.
double approx_error(std::span<const float> values, const BinarizedFilter& filter);

// Subtracts each filter's mean in place (dim 0 indexes filters for rank >= 2;
// a rank-1 tensor is treated as one filter).
void mean_center(RealTensor& weights);

// Clamps every element to [-1, 1] in place.
void clamp_unit(RealTensor& weights);

// Binarizes every filter of a weight tensor (dim 0 indexes filters). Work is
// split across `threads` when it is > 1.
std::vector<BinarizedFilter> binarize_layer(const RealTensor& weights,
                                            Scheme scheme, int threads = 1);

} // namespace dab
