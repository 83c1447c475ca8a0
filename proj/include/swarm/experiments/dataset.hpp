#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swarm/nn/tensor.hpp"
#include "swarm/trainer/trainer.hpp"
#include "swarm/util/bytes.hpp"

namespace swarm::experiments {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Raw IDX content: an image stack (count x rows x cols) or a label vector.
struct IdxFile {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

/// Big-endian IDX parse of a u8 images or labels file. ParseError carries the byte offset.
IdxFile parse_idx(ByteView bytes);
IdxFile read_idx_file(const std::string& path);

struct IdxDataset {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> images;  // count * rows * cols
    std::vector<std::uint8_t> labels;
};

/// Pair an images file with its labels file; counts must match.
IdxDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Feature matrix plus integer labels, ready for training.
struct Dataset {
    std::size_t n = 0, features = 0, classes = 0;
    std::vector<float> x;  // n * features
    std::vector<int> y;
};

/// Pixels scaled to [0, 1].
Dataset to_dataset(const IdxDataset& idx);

/// Gaussian blobs: class centres drawn once from N(0, I), samples are centre + noise * N(0, I).
Dataset synthetic_blobs(std::size_t samples, std::size_t features, std::size_t classes, double noise,
                        std::uint64_t seed);

/// MNIST training split from `dir` (train-images-idx3-ubyte, train-labels-idx1-ubyte). An empty dir
/// falls back to $DMOE_DATA_DIR. Missing files raise ConfigError telling how to fetch them.
Dataset load_mnist(std::string dir);

/// Deterministic minibatches: epoch e is a Fisher-Yates permutation seeded by (seed, e), and
/// step s takes the s-th window of batch_size rows, wrapping into the next epoch.
template <typename T>
trainer::BatchSource<T> batch_source(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

}  // namespace swarm::experiments
