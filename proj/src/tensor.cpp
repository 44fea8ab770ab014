#include "dab/tensor.hpp"

#include <cmath>

namespace dab {

std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

RealTensor::RealTensor(std::vector<std::size_t> s)
    : shape(std::move(s)), data(numel_of(shape), 0.0f) {}

RealTensor::RealTensor(std::vector<std::size_t> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
        fail(ErrorKind::Shape, "tensor data length does not match shape");
}

Shape4 as_shape4(const RealTensor& t) {
    if (t.rank() != 4) fail(ErrorKind::Shape, "expected a rank-4 NCHW tensor");
    for (std::size_t d : t.shape)
        if (d == 0) fail(ErrorKind::Shape, "NCHW tensor has an empty dimension");
    return {t.shape[0], t.shape[1], t.shape[2], t.shape[3]};
}

bool all_finite(std::span<const float> vals) {
    for (float v : vals)
        if (!std::isfinite(v)) return false;
    return true;
}

bool all_finite(const RealTensor& t) { return all_finite(t.span()); }

} // namespace dab
