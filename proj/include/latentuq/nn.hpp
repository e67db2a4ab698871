#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "latentuq/dataio.hpp"
#include "latentuq/errors.hpp"
#include "latentuq/linalg.hpp"

namespace luq::nn {

using linalg::Matrix;
using linalg::Vector;

enum class Activation : std::uint8_t { relu = 0, identity = 1 };

struct LayerSpec {
    std::size_t width = 0;
    Activation activation = Activation::relu;
    double dropout_rate = 0.0;

    bool operator==(const LayerSpec&) const = default;
};

struct Layer {
    LayerSpec spec;
    Matrix weights; // width x prev_width
    Vector biases;  // width

    bool operator==(const Layer&) const = default;
};

/// Feed-forward classifier. The last layer always has identity activation and
/// width num_classes (logits). `fingerprint` is the CRC32 of the serialized
/// model bytes and is refreshed by init/train/load.
struct Network {
    std::size_t input_dim = 0;
    std::vector<Layer> layers;
    std::uint64_t seed = 0;
    std::uint32_t fingerprint = 0;

    [[nodiscard]] std::size_t num_classes() const { return layers.back().spec.width; }
    [[nodiscard]] std::size_t num_hidden_layers() const { return layers.size() - 1; }

    bool operator==(const Network&) const = default;
};

/// Post-activation hidden vectors, logits and softmax for one input.
struct LatentTrace {
    std::vector<Vector> hidden;
    Vector logits;
    Vector softmax;
};

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
};
using TrainHistory = std::vector<EpochStats>;

struct TrainConfig {
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    std::size_t max_epochs = 50;
    double early_stop_accuracy = 0.96;
    std::uint64_t seed = 0;
};

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
};

/// Scaled uniform (Glorot) initialization, zero biases, deterministic per seed.
/// `hidden` must be non-empty and num_classes >= 2; the logits layer is
/// appended automatically.
Network init_network(std::size_t input_dim, const std::vector<LayerSpec>& hidden,
                     std::size_t num_classes, std::uint64_t seed);

Vector softmax(std::span<const double> logits);

/// Deterministic forward pass: no masking, no scaling.
LatentTrace forward(const Network& net, std::span<const double> x);

/// Stochastic forward pass: each hidden unit is dropped independently with its
/// layer rate and survivors are scaled by 1/(1-rate) (inverted dropout).
LatentTrace forward_dropout(const Network& net, std::span<const double> x, std::uint64_t seed);

/// Argmax of the deterministic softmax; ties break toward the lowest index.
int predict(const Network& net, std::span<const double> x);

double cross_entropy_loss(const Network& net, std::span<const double> x, int label);

/// Gradients of the single-sample cross-entropy in deterministic mode; the
/// same backward pass train() uses, with batch size 1 and no masks.
Gradients backprop(const Network& net, std::span<const double> x, int label);

/// Minibatch Adam on softmax cross-entropy with dropout on hidden-layer
/// outputs. Evaluates deterministic training accuracy after each epoch and
/// stops once it reaches early_stop_accuracy.
TrainHistory train(Network& net, const dataio::Dataset& data, const TrainConfig& hp);

double accuracy(const Network& net, const dataio::Dataset& data);

// persistence: magic "LCN1", little-endian, trailing CRC32
void save_network(const Network& net, std::ostream& out);
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(std::istream& in);
Network load_network(const std::filesystem::path& path);

/// CRC32 of the serialized model bytes (equal to the model file's trailer).
std::uint32_t fingerprint(const Network& net);

/// Batched deterministic evaluation; row i of each matrix corresponds to
/// sample i. Used by the UQ and evaluation paths.
struct BatchTrace {
    std::vector<Matrix> hidden;
    Matrix logits;
};
BatchTrace forward_batch(const Network& net, const Matrix& x);

/// Batched stochastic logits; row i draws its masks from rng seeded with
/// row_seeds[i], exactly matching forward_dropout(net, x_i, row_seeds[i]).
Matrix logits_batch_dropout(const Network& net, const Matrix& x,
                            std::span<const std::uint64_t> row_seeds);

std::vector<int> predict_batch(const Network& net, const Matrix& x);

} // namespace luq::nn
