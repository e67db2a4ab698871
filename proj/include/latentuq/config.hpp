#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "latentuq/errors.hpp"

namespace luq::cli {

/// [data] — either four IDX paths or a synthetic blob specification.
struct DataConfig {
    std::string source = "idx"; // "idx" | "synthetic"
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    int classes = 0;
    int dim = 0;
    int train_per_class = 0;
    int test_per_class = 0;
    double separation = 0.0;
    std::optional<std::uint64_t> seed;

    bool operator==(const DataConfig&) const = default;
};

/// [network]
struct NetworkConfig {
    std::vector<std::size_t> hidden_widths;
    double dropout = 0.0; // applied to every hidden layer

    bool operator==(const NetworkConfig&) const = default;
};

/// [training]
struct TrainingConfig {
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    std::size_t max_epochs = 50;
    double early_stop_accuracy = 0.96;
    std::optional<std::uint64_t> seed;

    bool operator==(const TrainingConfig&) const = default;
};

/// [inference] — percentile pairs (alphas[i], betas[i]) share one index.
struct InferenceConfig {
    bool enabled = true;
    std::vector<double> alphas;
    std::vector<double> betas;
    double threshold = 0.5;
    double ridge_scale = 1e-6;
    std::string smoothstep = "corrected"; // "corrected" | "literal"

    bool operator==(const InferenceConfig&) const = default;
};

/// [mc_dropout]
struct McDropoutConfig {
    bool enabled = false;
    std::size_t passes = 100;
    double threshold = 0.99;
    std::optional<std::uint64_t> seed;

    bool operator==(const McDropoutConfig&) const = default;
};

/// [ensemble]
struct EnsembleConfig {
    bool enabled = false;
    std::size_t members = 10;
    double threshold = 0.99;
    std::optional<std::uint64_t> base_seed;

    bool operator==(const EnsembleConfig&) const = default;
};

/// [run]
struct RunSection {
    std::vector<int> held_out_labels; // empty = every label
    unsigned workers = 1;
    std::size_t histogram_bins = 20;
    bool export_scores = false;

    bool operator==(const RunSection&) const = default;
};

struct RunConfig {
    DataConfig data;
    NetworkConfig network;
    TrainingConfig training;
    InferenceConfig inference;
    McDropoutConfig mc_dropout;
    EnsembleConfig ensemble;
    RunSection run;

    bool operator==(const RunConfig&) const = default;
};

/// Parses the flat section/key-value config format. Unknown sections or keys
/// are rejected; messages name the offending key.
RunConfig parse_config(std::istream& in);
RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::filesystem::path& path);

/// Inverse of parse_config: parse_config(render_config(cfg)) == cfg.
std::string render_config(const RunConfig& cfg);

} // namespace luq::cli
