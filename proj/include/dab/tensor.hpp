#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dab/errors.hpp"

namespace dab {

// Dense row-major float tensor. data.size() always equals the product of
// the shape dimensions.
struct RealTensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    RealTensor() = default;
    explicit RealTensor(std::vector<std::size_t> s);
    RealTensor(std::vector<std::size_t> s, std::vector<float> d);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    std::span<float> span() { return {data.data(), data.size()}; }
    std::span<const float> span() const { return {data.data(), data.size()}; }

    bool same_shape(const RealTensor& o) const { return shape == o.shape; }
};

// NCHW conv geometry carrier; every dimension >= 1.
struct Shape4 {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t numel() const { return n * c * h * w; }
};

std::size_t numel_of(const std::vector<std::size_t>& shape);

// Interprets a rank-4 tensor as NCHW.
Shape4 as_shape4(const RealTensor& t);

bool all_finite(std::span<const float> vals);
bool all_finite(const RealTensor& t);

} // namespace dab
