#pragma once

#include <bit>
#include <cstdint>
#include <cstddef>
#include <span>
#include <vector>

#include "dab/errors.hpp"

namespace dab {

// Bit-packed sign vector. Bit i of word i/64 (LSB first) is 1 for +1 and 0
// for -1. Padding bits past `size` stay zero so whole-word popcounts are safe.
class PackedBits {
public:
    PackedBits() = default;
    explicit PackedBits(std::size_t size)
        : size_(size), words_((size + 63) / 64, 0) {}

    std::size_t size() const noexcept { return size_; }
    std::size_t word_count() const noexcept { return words_.size(); }

    bool get(std::size_t i) const {
        if (i >= size_) fail(ErrorKind::Bounds, "bit index out of range");
        return (words_[i >> 6] >> (i & 63)) & 1u;
    }

    void set(std::size_t i, bool v) {
        if (i >= size_) fail(ErrorKind::Bounds, "bit index out of range");
        std::uint64_t mask = std::uint64_t(1) << (i & 63);
        if (v)
            words_[i >> 6] |= mask;
        else
            words_[i >> 6] &= ~mask;
    }

    std::size_t popcount() const noexcept {
        std::size_t total = 0;
        for (std::uint64_t w : words_) total += std::popcount(w);
        return total;
    }

    const std::uint64_t* words() const noexcept { return words_.data(); }
    std::uint64_t* words() noexcept { return words_.data(); }

    std::vector<std::uint64_t>& raw() noexcept { return words_; }
    const std::vector<std::uint64_t>& raw() const noexcept { return words_; }

    bool operator==(const PackedBits& other) const noexcept {
        return size_ == other.size_ && words_ == other.words_;
    }

private:
    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

// Row-major matrix of packed rows sharing one length. Rows start at word
// boundaries so per-row word spans can be handed to popcount kernels directly.
class PackedMatrix {
public:
    PackedMatrix() = default;
    PackedMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), words_per_row_((cols + 63) / 64),
          words_(rows * words_per_row_, 0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t words_per_row() const noexcept { return words_per_row_; }

    std::uint64_t* row(std::size_t r) {
        if (r >= rows_) fail(ErrorKind::Bounds, "row index out of range");
        return words_.data() + r * words_per_row_;
    }
    const std::uint64_t* row(std::size_t r) const {
        if (r >= rows_) fail(ErrorKind::Bounds, "row index out of range");
        return words_.data() + r * words_per_row_;
    }

    bool get(std::size_t r, std::size_t c) const {
        if (c >= cols_) fail(ErrorKind::Bounds, "column index out of range");
        return (row(r)[c >> 6] >> (c & 63)) & 1u;
    }
    void set(std::size_t r, std::size_t c, bool v) {
        if (c >= cols_) fail(ErrorKind::Bounds, "column index out of range");
        std::uint64_t mask = std::uint64_t(1) << (c & 63);
        if (v)
            row(r)[c >> 6] |= mask;
        else
            row(r)[c >> 6] &= ~mask;
    }

private:
    std::size_t rows_ = 0, cols_ = 0, words_per_row_ = 0;
    std::vector<std::uint64_t> words_;
};

// Packs a membership mask: bit = 1 when the value is >= 0. Used for the
// sign-split baselines, which treat 0 as positive.
PackedBits pack_nonnegative(std::span<const float> values);

// Number of positions where both `a` and `mask` have a 1 bit.
std::size_t masked_popcount(const PackedBits& a, const PackedBits& mask);

} // namespace dab
