#pragma once

#include <cstdint>
#include <ostream>
#include <utility>
#include <vector>

#include "dab/nn.hpp"

namespace dab {

struct TrajectoryRecord {
    int epoch = 0;
    std::size_t layer = 0;
    std::size_t filter = 0;
    std::size_t n = 0;
    std::size_t k = 0;
    double k_norm = 0.0;
    float alpha = 0.0f;
    float beta = 0.0f;
};

// Append-only record of how each sampled filter's split moves over training.
// The sampled filter ids are drawn once at construction (deterministic per
// seed) and stay fixed; capture_epoch then reads the current filters of
// those ids. It never writes to the training state, so runs with and
// without a log attached produce bit-identical models.
class TrajectoryLog {
public:
    TrajectoryLog() = default;
    TrajectoryLog(const TrainState& state, std::uint32_t seed,
                  std::size_t per_layer = 8);

    // One record per sampled filter; call after the epoch's binarization.
    void capture_epoch(const TrainState& state, int epoch);

    // Adapter for train_network. The log must outlive the returned hook.
    EpochHook hook();

    const std::vector<TrajectoryRecord>& records() const { return records_; }
    const std::vector<std::pair<std::size_t, std::size_t>>& sampled() const {
        return sampled_;
    }

    // Schema: epoch,layer,filter,n,K,K_norm,alpha,beta
    void write_csv(std::ostream& out) const;

private:
    std::vector<std::pair<std::size_t, std::size_t>> sampled_; // (layer, filter)
    std::vector<TrajectoryRecord> records_;
};

} // namespace dab
