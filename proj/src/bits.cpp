#include "dab/bits.hpp"

namespace dab {

PackedBits pack_nonnegative(std::span<const float> values) {
    PackedBits out(values.size());
    std::uint64_t* w = out.words();
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] >= 0.0f) w[i >> 6] |= std::uint64_t(1) << (i & 63);
    return out;
}

std::size_t masked_popcount(const PackedBits& a, const PackedBits& mask) {
    if (a.size() != mask.size())
        fail(ErrorKind::Shape, "masked_popcount operands differ in length");
    const std::uint64_t* aw = a.words();
    const std::uint64_t* mw = mask.words();
    std::size_t total = 0;
    for (std::size_t i = 0; i < a.word_count(); ++i)
        total += std::popcount(aw[i] & mw[i]);
    return total;
}

} // namespace dab
