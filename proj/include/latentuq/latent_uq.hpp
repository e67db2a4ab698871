#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "latentuq/dataio.hpp"
#include "latentuq/errors.hpp"
#include "latentuq/linalg.hpp"
#include "latentuq/nn.hpp"

namespace luq::uq {

using linalg::GaussianDensity;
using linalg::Matrix;
using linalg::Vector;

/// Per-(hidden layer, class) latent vectors of the training points the
/// network classifies correctly. sets[l][k] has one row per kept sample; the
/// kept count of one class is identical across layers.
struct ConfidenceSets {
    std::size_t num_hidden_layers = 0;
    std::size_t num_classes = 0;
    std::vector<std::vector<Matrix>> sets; // [layer][class]
    std::vector<std::size_t> kept_counts;  // [class]
    std::uint32_t network_fingerprint = 0; // carried into the fitted UqModel
};

/// Gaussian + percentile thresholds for one (layer, class) cell.
struct UqCell {
    GaussianDensity gaussian;
    double q_alpha = 0.0;
    double q_beta = 0.0;
};

struct UqModel {
    double alpha = 0.0; // percentile, percent
    double beta = 100.0;
    std::size_t num_hidden_layers = 0;
    std::size_t num_classes = 0;
    std::vector<std::vector<UqCell>> cells; // [layer][class]
    std::uint32_t network_fingerprint = 0;
};

/// Per-sample scoring result: per-layer log-densities, their smoothstep
/// values, and the layer-product confidence.
struct ConfidenceReport {
    int predicted_label = -1;
    std::vector<double> layer_log_prob;
    std::vector<double> layer_s;
    double confidence = 0.0;
    std::optional<bool> accepted;
};

enum class SmoothstepVariant {
    corrected, // numerator 2*X_q - 1: hits 0 and 1 at the interval ends
    literal    // numerator X_q - 1 as printed, kept for comparison
};

/// Forwards every training point deterministically and keeps, per hidden
/// layer, the latents of points whose predicted label equals the true label.
/// Throws EmptyClass if some class retains zero correct points.
ConfidenceSets build_confidence_sets(const nn::Network& net, const dataio::Dataset& train);

/// Fits one Gaussian per (layer, class) cell and calibrates q_alpha/q_beta as
/// the alpha-/beta-th percentiles of the cell's own log-densities.
/// `workers` > 1 fits cells concurrently.
UqModel fit_uq_model(const ConfidenceSets& sets, double alpha, double beta,
                     double ridge_scale, unsigned workers = 1);

/// 0 below q_alpha, 1 above q_beta, and the tanh smoothstep in between:
/// s = (tanh((2*X_q - 1) / (2*sqrt(X_q*(1-X_q)))) + 1) / 2 with
/// X_q = (log_prob - q_alpha)/(q_beta - q_alpha).
double smoothstep(double log_prob, double q_alpha, double q_beta,
                  SmoothstepVariant variant = SmoothstepVariant::corrected);

/// Predicts, evaluates each hidden latent under the (layer, predicted-class)
/// Gaussian, and multiplies the per-layer smoothstep values. Leaves
/// `accepted` unset.
ConfidenceReport score(const UqModel& model, const nn::Network& net,
                       std::span<const double> x,
                       SmoothstepVariant variant = SmoothstepVariant::corrected);

/// Batched score(); identical per-sample results.
std::vector<ConfidenceReport> score_dataset(const UqModel& model, const nn::Network& net,
                                            const Matrix& x,
                                            SmoothstepVariant variant = SmoothstepVariant::corrected);

/// confidence >= threshold, and records the flag on the report.
bool accept(ConfidenceReport& report, double threshold);

// persistence: magic "LUQ1", little-endian, trailing CRC32
void save_uq_model(const UqModel& model, std::ostream& out);
void save_uq_model(const UqModel& model, const std::filesystem::path& path);
UqModel load_uq_model(std::istream& in);
UqModel load_uq_model(const std::filesystem::path& path);

} // namespace luq::uq
