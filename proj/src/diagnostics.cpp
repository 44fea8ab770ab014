#include "dab/diagnostics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "dab/rng.hpp"

namespace dab {

TrajectoryLog::TrajectoryLog(const TrainState& state, std::uint32_t seed,
                             std::size_t per_layer) {
    std::mt19937 gen(seed);
    for (std::size_t li = 0; li < state.layers.size(); ++li) {
        const LayerState& L = state.layers[li];
        if (!is_binarized_layer(L.spec)) continue;

        std::size_t units = L.spec.units;
        std::size_t take = std::min(per_layer, units);
        std::vector<std::size_t> ids(units);
        std::iota(ids.begin(), ids.end(), 0);
        for (std::size_t j = 0; j < take; ++j) {
            std::size_t pick =
                j + uniform_u32(gen, std::uint32_t(units - j));
            std::swap(ids[j], ids[pick]);
        }
        std::sort(ids.begin(), ids.begin() + std::ptrdiff_t(take));
        for (std::size_t j = 0; j < take; ++j)
            sampled_.emplace_back(li, ids[j]);
    }
}

void TrajectoryLog::capture_epoch(const TrainState& state, int epoch) {
    for (auto [layer, filter] : sampled_) {
        const LayerState& L = state.layers[layer];
        if (filter >= L.filters.size())
            fail(ErrorKind::State,
                 "capture ran before the epoch's binarization");
        const BinarizedFilter& f = L.filters[filter];
        TrajectoryRecord rec;
        rec.epoch = epoch;
        rec.layer = layer;
        rec.filter = filter;
        rec.n = f.n;
        rec.k = f.k;
        rec.k_norm = double(f.k) / double(f.n);
        rec.alpha = f.alpha;
        rec.beta = f.beta;
        records_.push_back(rec);
    }
}

EpochHook TrajectoryLog::hook() {
    return [this](const TrainState& state, int epoch) {
        capture_epoch(state, epoch);
    };
}

void TrajectoryLog::write_csv(std::ostream& out) const {
    out << "epoch,layer,filter,n,K,K_norm,alpha,beta\n";
    char line[160];
    for (const TrajectoryRecord& r : records_) {
        std::snprintf(line, sizeof line, "%d,%zu,%zu,%zu,%zu,%.9g,%.9g,%.9g\n",
                      r.epoch, r.layer, r.filter, r.n, r.k, r.k_norm,
                      double(r.alpha), double(r.beta));
        out << line;
    }
}

} // namespace dab
