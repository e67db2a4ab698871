#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <vector>

#include "latentuq/errors.hpp"
#include "latentuq/linalg.hpp"

namespace luq::dataio {

using linalg::Matrix;

/// Feature matrix (entries in [0,1]) with integer class labels in 0..K-1.
struct Dataset {
    Matrix features;
    std::vector<int> labels;
    int num_classes = 0;

    [[nodiscard]] std::size_t size() const { return labels.size(); }

    bool operator==(const Dataset&) const = default;
};

/// Leave-one-label-out split. `train` and `test_in` share the remapped label
/// space 0..K-2; `test_ood` keeps only held-out-label samples with their
/// original labels.
struct OodSplit {
    Dataset train;
    Dataset test_in;
    Dataset test_ood;
    int held_out_label = -1;
    std::map<int, int> label_map; // original -> remapped
};

/// IDX image file (magic 0x00000803): n x (rows*cols) matrix, pixels / 255.
Matrix load_idx_images(std::istream& in);
Matrix load_idx_images(const std::filesystem::path& path);

/// IDX label file (magic 0x00000801).
std::vector<int> load_idx_labels(std::istream& in);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

/// Writers for the same format. Features are quantized to bytes with
/// round(v*255); rows/cols factorization of the feature width is the
/// caller's choice.
void save_idx_images(const Matrix& features, std::uint32_t rows, std::uint32_t cols,
                     std::ostream& out);
void save_idx_labels(const std::vector<int>& labels, std::ostream& out);

Dataset load_idx_dataset(const std::filesystem::path& images,
                         const std::filesystem::path& labels);

OodSplit make_ood_split(const Dataset& train, const Dataset& test, int held_out_label);

/// Synthetic isotropic Gaussian blobs, min-max rescaled into [0,1].
/// Cluster centers are pairwise >= `separation` apart before rescaling.
Dataset synth_blobs(int num_classes, int dim, int per_class, double separation,
                    std::uint64_t seed);

/// Deterministic per-class split: the last `test_per_class` samples of each
/// class go to test, the rest to train. Keeps both halves on the same
/// feature scaling.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, int test_per_class);

} // namespace luq::dataio
