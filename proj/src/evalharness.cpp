#include "latentuq/evalharness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <sstream>

#include "latentuq/baselines.hpp"
#include "latentuq/dataio.hpp"
#include "latentuq/latent_uq.hpp"
#include "latentuq/nn.hpp"
#include "latentuq/parallel.hpp"
#include "latentuq/rng.hpp"

namespace luq::eval {

namespace {

bool well_classified(const ScoredSample& s) {
    return s.group == Group::in_distribution && s.predicted_label == s.true_label;
}

bool misclassified(const ScoredSample& s) {
    return s.group == Group::in_distribution && s.predicted_label != s.true_label;
}

std::string fmt_rate(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

Aggregate aggregate_rates(const std::vector<std::optional<double>>& rates) {
    Aggregate agg;
    std::vector<double> present;
    for (const auto& r : rates)
        if (r) present.push_back(*r);
    if (present.empty()) return agg;
    double sum = 0.0;
    for (double v : present) sum += v;
    const double mean = sum / static_cast<double>(present.size());
    agg.mean = mean;
    if (present.size() >= 2) {
        double ss = 0.0;
        for (double v : present) ss += (v - mean) * (v - mean);
        agg.stddev = std::sqrt(ss / static_cast<double>(present.size() - 1));
    }
    return agg;
}

} // namespace

Metrics evaluate(const ScoredSet& scored, double threshold) {
    if (scored.empty()) throw EmptyInput("evaluate: empty scored set");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw BadParameter("evaluate: threshold outside [0, 1]");
    Metrics m;
    m.threshold = threshold;
    for (const ScoredSample& s : scored) {
        if (!(std::isfinite(s.confidence) && s.confidence >= 0.0 && s.confidence <= 1.0))
            throw BadParameter("evaluate: confidence outside [0, 1]");
        if (s.group == Group::ood) {
            ++m.tn_ood.total;
            if (s.confidence < threshold) ++m.tn_ood.qualifying;
        } else if (well_classified(s)) {
            ++m.tp.total;
            if (s.confidence >= threshold) ++m.tp.qualifying;
        } else {
            ++m.tn.total;
            if (s.confidence < threshold) ++m.tn.qualifying;
        }
    }
    return m;
}

Histogram export_histogram(const ScoredSet& scored, std::size_t bins) {
    if (bins < 1) throw BadParameter("export_histogram: bins must be >= 1");
    Histogram hist;
    hist.bin_low.resize(bins);
    hist.bin_high.resize(bins);
    hist.well_classified.assign(bins, 0);
    hist.misclassified.assign(bins, 0);
    hist.ood.assign(bins, 0);
    for (std::size_t b = 0; b < bins; ++b) {
        hist.bin_low[b] = static_cast<double>(b) / static_cast<double>(bins);
        hist.bin_high[b] = static_cast<double>(b + 1) / static_cast<double>(bins);
    }
    for (const ScoredSample& s : scored) {
        auto b = static_cast<std::size_t>(s.confidence * static_cast<double>(bins));
        if (b >= bins) b = bins - 1; // right-closed final bin
        if (s.group == Group::ood)
            ++hist.ood[b];
        else if (well_classified(s))
            ++hist.well_classified[b];
        else
            ++hist.misclassified[b];
    }
    return hist;
}

void write_histogram_csv(const Histogram& hist, std::ostream& out) {
    out << "bin_low,bin_high,well_classified,misclassified,ood\n";
    for (std::size_t b = 0; b < hist.bin_low.size(); ++b) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%zu,%zu,%zu\n", hist.bin_low[b],
                      hist.bin_high[b], hist.well_classified[b], hist.misclassified[b],
                      hist.ood[b]);
        out << buf;
    }
}

std::string architecture_string(const std::vector<std::size_t>& hidden_widths) {
    const bool uniform = std::all_of(hidden_widths.begin(), hidden_widths.end(),
                                     [&](std::size_t w) { return w == hidden_widths.front(); });
    if (uniform)
        return std::to_string(hidden_widths.size()) + "x[" +
               std::to_string(hidden_widths.front()) + "]";
    std::string s = "[";
    for (std::size_t i = 0; i < hidden_widths.size(); ++i)
        s += (i ? "-" : "") + std::to_string(hidden_widths[i]);
    return s + "]";
}

namespace {

struct LabelOutcome {
    std::map<std::string, Metrics> metrics;   // cell tag -> metrics
    std::map<std::string, ScoredSet> scores;  // cell tag -> scored samples
    nlohmann::json metadata;
};

std::string cell_tag(const MethodDescriptor& d) {
    std::string tag = d.method;
    if (d.percentiles)
        tag += "_a" + fmt_short(d.percentiles->alpha) + "_b" + fmt_short(d.percentiles->beta);
    return tag;
}

ScoredSet scored_from_reports(const std::vector<uq::ConfidenceReport>& reports,
                              const std::vector<int>& true_labels, Group group) {
    ScoredSet out;
    out.reserve(reports.size());
    for (std::size_t i = 0; i < reports.size(); ++i)
        out.push_back({true_labels[i], reports[i].predicted_label, reports[i].confidence, group});
    return out;
}

ScoredSet scored_from_votes(const std::vector<baselines::VoteResult>& votes,
                            const std::vector<int>& true_labels, Group group) {
    ScoredSet out;
    out.reserve(votes.size());
    for (std::size_t i = 0; i < votes.size(); ++i)
        out.push_back({true_labels[i], votes[i].predicted_label, votes[i].confidence, group});
    return out;
}

} // namespace

ExperimentResult run_experiment(const cli::RunConfig& cfg, std::ostream* progress) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();

    // base data
    dataio::Dataset base_train;
    dataio::Dataset base_test;
    if (cfg.data.source == "synthetic") {
        const dataio::Dataset all = dataio::synth_blobs(
            cfg.data.classes, cfg.data.dim, cfg.data.train_per_class + cfg.data.test_per_class,
            cfg.data.separation, *cfg.data.seed);
        std::tie(base_train, base_test) = dataio::split_train_test(all, cfg.data.test_per_class);
    } else {
        base_train = dataio::load_idx_dataset(cfg.data.train_images, cfg.data.train_labels);
        base_test = dataio::load_idx_dataset(cfg.data.test_images, cfg.data.test_labels);
        base_train.num_classes = base_test.num_classes =
            std::max(base_train.num_classes, base_test.num_classes);
    }

    std::vector<int> held_out = cfg.run.held_out_labels;
    if (held_out.empty())
        for (int k = 0; k < base_train.num_classes; ++k) held_out.push_back(k);
    for (int label : held_out)
        if (label >= base_train.num_classes)
            throw ValidationError("run.held_out_labels: label " + std::to_string(label) +
                                  " outside the dataset's class range");

    std::vector<nn::LayerSpec> hidden_specs;
    for (std::size_t w : cfg.network.hidden_widths)
        hidden_specs.push_back({w, nn::Activation::relu, cfg.network.dropout});
    const std::string arch = architecture_string(cfg.network.hidden_widths);

    // the cell grid, fixed up front so per-label results land in stable slots
    std::vector<MethodDescriptor> descriptors;
    if (cfg.inference.enabled)
        for (std::size_t i = 0; i < cfg.inference.alphas.size(); ++i)
            descriptors.push_back({"inference", arch, cfg.network.dropout,
                                   PercentilePair{cfg.inference.alphas[i], cfg.inference.betas[i]},
                                   cfg.inference.threshold});
    if (cfg.inference.enabled && cfg.inference.alphas.empty())
        throw ValidationError("inference.alphas: inference is enabled but no percentile "
                              "pairs are configured");
    if (cfg.mc_dropout.enabled)
        descriptors.push_back(
            {"mc_dropout", arch, cfg.network.dropout, std::nullopt, cfg.mc_dropout.threshold});
    if (cfg.ensemble.enabled)
        descriptors.push_back(
            {"ensemble", arch, cfg.network.dropout, std::nullopt, cfg.ensemble.threshold});
    if (descriptors.empty())
        throw ValidationError("inference.enabled: no method is enabled");

    const auto variant = cfg.inference.smoothstep == "literal"
                             ? uq::SmoothstepVariant::literal
                             : uq::SmoothstepVariant::corrected;

    std::vector<LabelOutcome> outcomes(held_out.size());
    std::mutex progress_mutex;
    const auto log = [&](const std::string& msg) {
        if (!progress) return;
        const std::lock_guard<std::mutex> lock(progress_mutex);
        *progress << msg << std::endl;
    };

    parallel_for(held_out.size(), cfg.run.workers, [&](std::size_t li) {
        const int label = held_out[li];
        const auto t_label = clock::now();
        LabelOutcome& outcome = outcomes[li];

        const dataio::OodSplit split = dataio::make_ood_split(base_train, base_test, label);
        const auto num_classes = static_cast<std::size_t>(split.train.num_classes);

        nn::TrainConfig hp;
        hp.batch_size = cfg.training.batch_size;
        hp.learning_rate = cfg.training.learning_rate;
        hp.max_epochs = cfg.training.max_epochs;
        hp.early_stop_accuracy = cfg.training.early_stop_accuracy;
        hp.seed = rng::substream(*cfg.training.seed, static_cast<std::uint64_t>(label));

        try {
            nn::Network net = nn::init_network(split.train.features.cols(), hidden_specs,
                                               num_classes, hp.seed);
            const nn::TrainHistory history = nn::train(net, split.train, hp);
            log("[label " + std::to_string(label) + "] trained: " +
                std::to_string(history.size()) + " epochs, accuracy " +
                (history.empty() ? "n/a" : fmt_short(history.back().accuracy)));

            outcome.metadata["held_out_label"] = label;
            outcome.metadata["train_size"] = split.train.size();
            outcome.metadata["test_in_size"] = split.test_in.size();
            outcome.metadata["test_ood_size"] = split.test_ood.size();
            outcome.metadata["epochs"] = history.size();
            outcome.metadata["final_train_accuracy"] =
                history.empty() ? 0.0 : history.back().accuracy;
            outcome.metadata["network_fingerprint"] = net.fingerprint;

            if (cfg.inference.enabled) {
                const uq::ConfidenceSets sets = uq::build_confidence_sets(net, split.train);
                outcome.metadata["kept_counts"] = sets.kept_counts;
                for (std::size_t i = 0; i < cfg.inference.alphas.size(); ++i) {
                    const uq::UqModel model =
                        uq::fit_uq_model(sets, cfg.inference.alphas[i], cfg.inference.betas[i],
                                         cfg.inference.ridge_scale);
                    std::vector<uq::ConfidenceReport> in_reports =
                        uq::score_dataset(model, net, split.test_in.features, variant);
                    std::vector<uq::ConfidenceReport> ood_reports =
                        uq::score_dataset(model, net, split.test_ood.features, variant);
                    ScoredSet scored =
                        scored_from_reports(in_reports, split.test_in.labels,
                                            Group::in_distribution);
                    const ScoredSet ood_scored = scored_from_reports(
                        ood_reports, split.test_ood.labels, Group::ood);
                    scored.insert(scored.end(), ood_scored.begin(), ood_scored.end());
                    const MethodDescriptor desc{"inference", arch, cfg.network.dropout,
                                                PercentilePair{cfg.inference.alphas[i],
                                                               cfg.inference.betas[i]},
                                                cfg.inference.threshold};
                    outcome.metrics[cell_tag(desc)] =
                        evaluate(scored, cfg.inference.threshold);
                    outcome.scores[cell_tag(desc)] = std::move(scored);
                }
                log("[label " + std::to_string(label) + "] inference scored");
            }

            if (cfg.mc_dropout.enabled) {
                const std::uint64_t mc_seed =
                    rng::substream(*cfg.mc_dropout.seed, static_cast<std::uint64_t>(label));
                const auto in_votes = baselines::mc_dropout_score_batch(
                    net, split.test_in.features, cfg.mc_dropout.passes,
                    rng::substream(mc_seed, 0));
                const auto ood_votes = baselines::mc_dropout_score_batch(
                    net, split.test_ood.features, cfg.mc_dropout.passes,
                    rng::substream(mc_seed, 1));
                ScoredSet scored = scored_from_votes(in_votes, split.test_in.labels,
                                                     Group::in_distribution);
                const ScoredSet ood_scored =
                    scored_from_votes(ood_votes, split.test_ood.labels, Group::ood);
                scored.insert(scored.end(), ood_scored.begin(), ood_scored.end());
                const MethodDescriptor desc{"mc_dropout", arch, cfg.network.dropout,
                                            std::nullopt, cfg.mc_dropout.threshold};
                outcome.metrics[cell_tag(desc)] = evaluate(scored, cfg.mc_dropout.threshold);
                outcome.scores[cell_tag(desc)] = std::move(scored);
                log("[label " + std::to_string(label) + "] mc_dropout scored");
            }

            if (cfg.ensemble.enabled) {
                const std::uint64_t ens_seed =
                    rng::substream(*cfg.ensemble.base_seed, static_cast<std::uint64_t>(label));
                const baselines::Ensemble ens =
                    baselines::train_ensemble(split.train.features.cols(), hidden_specs,
                                              num_classes, split.train, hp,
                                              cfg.ensemble.members, ens_seed);
                const auto in_votes = baselines::ensemble_score_batch(ens, split.test_in.features);
                const auto ood_votes =
                    baselines::ensemble_score_batch(ens, split.test_ood.features);
                ScoredSet scored = scored_from_votes(in_votes, split.test_in.labels,
                                                     Group::in_distribution);
                const ScoredSet ood_scored =
                    scored_from_votes(ood_votes, split.test_ood.labels, Group::ood);
                scored.insert(scored.end(), ood_scored.begin(), ood_scored.end());
                const MethodDescriptor desc{"ensemble", arch, cfg.network.dropout, std::nullopt,
                                            cfg.ensemble.threshold};
                outcome.metrics[cell_tag(desc)] = evaluate(scored, cfg.ensemble.threshold);
                outcome.scores[cell_tag(desc)] = std::move(scored);
                log("[label " + std::to_string(label) + "] ensemble scored");
            }
        } catch (const Error& e) {
            throw Error("held-out label " + std::to_string(label) + ": " + e.what());
        }

        outcome.metadata["wall_clock_seconds"] =
            std::chrono::duration<double>(clock::now() - t_label).count();
        log("[label " + std::to_string(label) + "] done");
    });

    ExperimentResult result;
    for (const MethodDescriptor& desc : descriptors) {
        CellResult cell;
        cell.descriptor = desc;
        cell.held_out_labels = held_out;
        std::vector<std::optional<double>> tp_rates;
        std::vector<std::optional<double>> tn_rates;
        std::vector<std::optional<double>> tnood_rates;
        for (std::size_t li = 0; li < held_out.size(); ++li) {
            const Metrics& m = outcomes[li].metrics.at(cell_tag(desc));
            cell.per_label.push_back(m);
            tp_rates.push_back(m.tp.rate());
            tn_rates.push_back(m.tn.rate());
            tnood_rates.push_back(m.tn_ood.rate());
            const ScoredSet& s = outcomes[li].scores.at(cell_tag(desc));
            cell.pooled_scores.insert(cell.pooled_scores.end(), s.begin(), s.end());
        }
        cell.tp = aggregate_rates(tp_rates);
        cell.tn = aggregate_rates(tn_rates);
        cell.tn_ood = aggregate_rates(tnood_rates);
        result.cells.push_back(std::move(cell));
    }

    result.metadata["architecture"] = arch;
    result.metadata["dropout"] = cfg.network.dropout;
    result.metadata["config"] = cli::render_config(cfg);
    result.metadata["held_out_labels"] = held_out;
    result.metadata["per_label"] = nlohmann::json::array();
    for (const LabelOutcome& o : outcomes) result.metadata["per_label"].push_back(o.metadata);
    result.metadata["wall_clock_seconds"] =
        std::chrono::duration<double>(clock::now() - t_start).count();
    return result;
}

void write_results_csv(const ExperimentResult& result, std::ostream& out) {
    out << "method,architecture,dropout,alpha,beta,threshold,"
           "tp_mean,tp_std,tn_mean,tn_std,tnood_mean,tnood_std\n";
    for (const CellResult& cell : result.cells) {
        const MethodDescriptor& d = cell.descriptor;
        out << d.method << ',' << d.architecture << ',' << fmt_short(d.dropout) << ',';
        if (d.percentiles)
            out << fmt_short(d.percentiles->alpha) << ',' << fmt_short(d.percentiles->beta);
        else
            out << ',';
        out << ',' << fmt_short(d.threshold) << ',' << fmt_rate(cell.tp.mean) << ','
            << fmt_rate(cell.tp.stddev) << ',' << fmt_rate(cell.tn.mean) << ','
            << fmt_rate(cell.tn.stddev) << ',' << fmt_rate(cell.tn_ood.mean) << ','
            << fmt_rate(cell.tn_ood.stddev) << '\n';
    }
}

void write_scores_csv(const ScoredSet& scored, std::ostream& out) {
    out << "index,group,true_label,predicted_label,confidence\n";
    for (std::size_t i = 0; i < scored.size(); ++i) {
        const ScoredSample& s = scored[i];
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%zu,%s,%d,%d,%.17g\n", i,
                      s.group == Group::ood ? "ood" : "in", s.true_label, s.predicted_label,
                      s.confidence);
        out << buf;
    }
}

ScoredSet read_scores_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("scores csv: empty file");
    // header -> column indices
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
    }
    const auto find_col = [&](const std::string& name) {
        const auto it = std::find(cols.begin(), cols.end(), name);
        if (it == cols.end()) throw ParseError("scores csv: missing column '" + name + "'");
        return static_cast<std::size_t>(it - cols.begin());
    };
    const std::size_t c_group = find_col("group");
    const std::size_t c_true = find_col("true_label");
    const std::size_t c_pred = find_col("predicted_label");
    const std::size_t c_conf = find_col("confidence");

    ScoredSet scored;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < cols.size())
            throw ParseError("scores csv line " + std::to_string(line_no) + ": too few fields");
        ScoredSample s;
        if (fields[c_group] == "ood")
            s.group = Group::ood;
        else if (fields[c_group] == "in")
            s.group = Group::in_distribution;
        else
            throw ParseError("scores csv line " + std::to_string(line_no) +
                             ": group must be 'in' or 'ood'");
        s.true_label = std::stoi(fields[c_true]);
        s.predicted_label = std::stoi(fields[c_pred]);
        s.confidence = std::stod(fields[c_conf]);
        scored.push_back(s);
    }
    return scored;
}

} // namespace luq::eval
