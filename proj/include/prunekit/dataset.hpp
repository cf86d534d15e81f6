#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

struct Dataset {
    Tensor images; // [N, C, H, W], values in [0, 1]
    std::vector<int> labels;
    int class_count = 0;
    std::string split; // "train" or "test"

    size_t size() const { return labels.size(); }
    // copies examples [begin, begin+count) into a batch tensor
    Tensor batch(size_t begin, size_t count) const;
    Tensor batch_indices(const std::vector<size_t>& idx, size_t begin, size_t count) const;
    std::vector<int> label_slice(size_t begin, size_t count) const;
    std::vector<int> label_indices(const std::vector<size_t>& idx, size_t begin,
                                   size_t count) const;
};

// IDX (MNIST-style) ingestion: big-endian magic 0x00000803 for images,
// 0x00000801 for labels; u8 payload scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Procedurally rendered single-channel images: one oriented bar per class
// with jittered position plus Gaussian noise (sigma = 0.1), clamped to [0,1].
// Examples are class-interleaved (example i has label i % classes).
Dataset synth_dataset(int classes, int per_class, int hw, uint64_t seed);

} // namespace prunekit
