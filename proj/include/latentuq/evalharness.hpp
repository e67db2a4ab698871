#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentuq/config.hpp"
#include "latentuq/errors.hpp"

namespace luq::eval {

enum class Group { in_distribution, ood };

struct ScoredSample {
    int true_label = -1;
    int predicted_label = -1;
    double confidence = 0.0;
    Group group = Group::in_distribution;

    bool operator==(const ScoredSample&) const = default;
};

using ScoredSet = std::vector<ScoredSample>;

/// Qualifying/total counts behind one rate. An empty group reports its rate
/// as absent rather than zero.
struct RateCount {
    std::size_t qualifying = 0;
    std::size_t total = 0;

    [[nodiscard]] bool present() const { return total > 0; }
    [[nodiscard]] std::optional<double> rate() const {
        if (!present()) return std::nullopt;
        return static_cast<double>(qualifying) / static_cast<double>(total);
    }

    bool operator==(const RateCount&) const = default;
};

/// TP = well-classified accepted, TN = misclassified rejected,
/// TN-OOD = out-of-distribution rejected, all at threshold `threshold`.
struct Metrics {
    double threshold = 0.0;
    RateCount tp;
    RateCount tn;
    RateCount tn_ood;

    bool operator==(const Metrics&) const = default;
};

Metrics evaluate(const ScoredSet& scored, double threshold);

/// Three series over uniform bins on [0,1]; the final bin is right-closed.
struct Histogram {
    std::vector<double> bin_low;
    std::vector<double> bin_high;
    std::vector<std::size_t> well_classified;
    std::vector<std::size_t> misclassified;
    std::vector<std::size_t> ood;
};

Histogram export_histogram(const ScoredSet& scored, std::size_t bins);

/// bin_low,bin_high,well_classified,misclassified,ood
void write_histogram_csv(const Histogram& hist, std::ostream& out);

struct PercentilePair {
    double alpha = 0.0;
    double beta = 100.0;

    bool operator==(const PercentilePair&) const = default;
};

/// One results-table cell: a method plus its parameters on one architecture.
struct MethodDescriptor {
    std::string method; // "inference" | "mc_dropout" | "ensemble"
    std::string architecture;
    double dropout = 0.0;
    std::optional<PercentilePair> percentiles;
    double threshold = 0.0;

    bool operator==(const MethodDescriptor&) const = default;
};

struct Aggregate {
    std::optional<double> mean;
    std::optional<double> stddev; // sample standard deviation across labels

    bool operator==(const Aggregate&) const = default;
};

struct CellResult {
    MethodDescriptor descriptor;
    std::vector<int> held_out_labels;
    std::vector<Metrics> per_label; // index-aligned with held_out_labels
    Aggregate tp;
    Aggregate tn;
    Aggregate tn_ood;
    ScoredSet pooled_scores; // concatenated across labels, label order

    bool operator==(const CellResult&) const = default;
};

struct ExperimentResult {
    std::vector<CellResult> cells;
    nlohmann::json metadata; // seeds, counts, histories, wall-clock
};

/// Full leave-one-label-out matrix: per held-out label, split / train /
/// fit / score / evaluate for every enabled method, then aggregate across
/// labels. Deterministic given the config seeds; labels run concurrently up
/// to cfg.run.workers.
ExperimentResult run_experiment(const cli::RunConfig& cfg, std::ostream* progress = nullptr);

/// method,architecture,dropout,alpha,beta,threshold,tp_mean,tp_std,
/// tn_mean,tn_std,tnood_mean,tnood_std
void write_results_csv(const ExperimentResult& result, std::ostream& out);

/// index,group,true_label,predicted_label,confidence
void write_scores_csv(const ScoredSet& scored, std::ostream& out);
ScoredSet read_scores_csv(std::istream& in);

std::string architecture_string(const std::vector<std::size_t>& hidden_widths);

} // namespace luq::eval
