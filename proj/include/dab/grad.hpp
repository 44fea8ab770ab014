#pragma once

#include <span>
#include <vector>

#include "dab/binarize.hpp"
#include "dab/tensor.hpp"

namespace dab {

// How gradients flow through the weight binarization map during training.
// Paper mode uses the surrogate formulas below; Projection mode uses the
// exact Jacobian of w -> alpha*e + beta*(1-e) with the mask held fixed, which
// is the one that can pass finite-difference checks.
enum class GradMode { Paper, Projection };

// The surrogate's pass-through term, in two flavors. ValueScaled multiplies
// by the entry itself (the formulas as published); Indicator replaces the
// entry with a 0/1 gate on the same support, the convention most sign-based
// estimators use.
enum class SteKind { ValueScaled, Indicator };

// Surrogate gradient through binarization. With t = the alpha-group entries
// of w (others zeroed) and r = w - t:
//   g1 = sgn(t)^2/k + (|t|_l1/k)   * ste(t)
//   g2 = sgn(r)*(1 - sgn(t))/(n-k) + (|r|_l1/(n-k)) * ste(r)
// where ste(v)_i = v_i (or its 0/1 gate) when |w_i| <= 1, else 0, and
// sgn(0) = 0. Returns upstream * (g1 + g2) elementwise; the mask and k are
// constants of the backward pass.
std::vector<float> dab_backward_paper(std::span<const float> w,
                                      const BinarizedFilter& f,
                                      std::span<const float> upstream,
                                      SteKind ste = SteKind::ValueScaled);
RealTensor dab_backward_paper(const RealTensor& w, const BinarizedFilter& f,
                              const RealTensor& upstream,
                              SteKind ste = SteKind::ValueScaled);

// Exact Jacobian-vector product of the fixed-mask reconstruction: averages
// upstream within each group and broadcasts the averages back.
std::vector<float> dab_backward_projection(const BinarizedFilter& f,
                                           std::span<const float> upstream);
RealTensor dab_backward_projection(const BinarizedFilter& f,
                                   const RealTensor& upstream);

// Elementwise sign with sign(0) := +1, so outputs stay in {+1, -1}.
RealTensor sign_activation_forward(const RealTensor& x);

// Hard-tanh straight-through estimator: passes upstream where |x| <= 1.
RealTensor sign_activation_backward(const RealTensor& x,
                                    const RealTensor& upstream);

} // namespace dab
