#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dab/tensor.hpp"

namespace dab {

enum class Split { Train, Test };

struct Dataset {
    RealTensor images; // [n, 1, h, w]
    std::vector<int> labels;
    int class_count = 0;
    Split split = Split::Train;

    std::size_t size() const { return labels.size(); }
};

// Names accepted by generate_sketches, in label order.
inline const std::vector<std::string>& sketch_class_names() {
    static const std::vector<std::string> names{"line", "circle", "rectangle",
                                                "triangle"};
    return names;
}

// Rasterizes per_class images per listed class onto a size x size grid:
// one-pixel-wide strokes, pixels in {0, 1}, with position/scale/rotation
// jitter small enough that shapes never touch the border (keeps each stroke
// one connected component). Deterministic per seed.
Dataset generate_sketches(const std::vector<std::string>& classes,
                          std::size_t per_class, std::size_t size,
                          std::uint32_t seed);

// Reads an IDX image/label file pair (big-endian headers, raw bytes).
// Pixels are scaled to [0, 1] by dividing by 255.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// Writes the dataset as an IDX pair, quantizing pixels to bytes.
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

struct Batch {
    RealTensor images;
    std::vector<int> labels;
};

// Deterministically shuffled pass over the dataset; the last batch may be
// short. Each call to next() materializes one batch.
class BatchIterator {
public:
    BatchIterator(const Dataset& ds, std::size_t batch,
                  std::uint32_t shuffle_seed);

    bool next(Batch& out);
    void reset(std::uint32_t shuffle_seed);
    std::size_t batch_count() const;

private:
    const Dataset* ds_;
    std::size_t batch_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

BatchIterator split_and_batch(const Dataset& ds, std::size_t batch,
                              std::uint32_t shuffle_seed);

} // namespace dab
