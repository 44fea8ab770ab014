#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "dab/nn.hpp"

namespace dab {

// On-disk model container. Little-endian throughout:
//   "DABN" | version u16 | input rank u8, dims u32[] | class_count u32 |
//   layer_count u32 | per layer {kind u8, bin_mode u8, scheme u8, bias u8,
//   units u32, kernel u16, stride u16, pad u16, reserved u16} |
//   per-layer payload | crc32 u32 over everything before it
// Payloads: full-precision conv/dense store raw f32 weights then the bias;
// batch norm stores gamma, beta, running mean, running variance; binarized
// conv/dense store per filter {k u32, alpha f32, beta f32, mask bytes
// (LSB-first, padded to whole bytes with zero bits)} and never the real
// weights.
inline constexpr std::uint16_t kModelFormatVersion = 1;

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes);

struct LoadedModel {
    NetworkConfig config;
    TrainState state; // inference-ready; binarized layers carry only filters
};

// Writes the model file and returns its size in bytes. Binarized layers
// must have current filters (train or refresh first).
std::size_t save_model(const NetworkConfig& config, const TrainState& state,
                       const std::string& path);

LoadedModel load_model(const std::string& path);

} // namespace dab
