#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "latentuq/dataio.hpp"
#include "latentuq/errors.hpp"
#include "latentuq/nn.hpp"

namespace luq::baselines {

using linalg::Matrix;

/// Identically architected networks trained from distinct seeds.
struct Ensemble {
    std::vector<nn::Network> members;
    std::vector<std::uint64_t> seeds;
};

/// Modal vote over repeated predictions; confidence is the modal fraction.
struct VoteResult {
    int predicted_label = -1;
    double confidence = 0.0;
    std::vector<std::size_t> histogram; // votes per label

    bool operator==(const VoteResult&) const = default;
};

/// T stochastic forward passes with dropout left on; pass t draws its masks
/// from substream (seed, t), so passes are order-independent.
VoteResult mc_dropout_score(const nn::Network& net, std::span<const double> x,
                            std::size_t passes, std::uint64_t seed);

/// Batched variant: sample i votes exactly as
/// mc_dropout_score(net, x_i, passes, substream(seed, i)) would.
std::vector<VoteResult> mc_dropout_score_batch(const nn::Network& net, const Matrix& x,
                                               std::size_t passes, std::uint64_t seed);

/// Trains M = member_seeds.size() networks with the shared architecture and
/// hyperparameters. Seeds must be distinct; training failures are rethrown
/// with the member index attached.
Ensemble train_ensemble(std::size_t input_dim, const std::vector<nn::LayerSpec>& hidden,
                        std::size_t num_classes, const dataio::Dataset& data,
                        const nn::TrainConfig& hp, std::vector<std::uint64_t> member_seeds,
                        unsigned workers = 1);

/// Convenience overload: seeds base_seed .. base_seed+M-1.
Ensemble train_ensemble(std::size_t input_dim, const std::vector<nn::LayerSpec>& hidden,
                        std::size_t num_classes, const dataio::Dataset& data,
                        const nn::TrainConfig& hp, std::size_t members,
                        std::uint64_t base_seed, unsigned workers = 1);

/// One deterministic vote per member.
VoteResult ensemble_score(const Ensemble& ens, std::span<const double> x);

std::vector<VoteResult> ensemble_score_batch(const Ensemble& ens, const Matrix& x);

/// Persists members as member_NNN.lcn plus a manifest.json carrying member
/// count, seeds and fingerprints.
void save_ensemble(const Ensemble& ens, const std::filesystem::path& dir);
Ensemble load_ensemble(const std::filesystem::path& dir);

} // namespace luq::baselines
