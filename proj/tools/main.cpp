#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentuq/baselines.hpp"
#include "latentuq/config.hpp"
#include "latentuq/dataio.hpp"
#include "latentuq/errors.hpp"
#include "latentuq/evalharness.hpp"
#include "latentuq/latent_uq.hpp"
#include "latentuq/nn.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw luq::Error("cannot write " + path.string());
    return out;
}

/// Loads the configured data and returns {train, test}.
std::pair<luq::dataio::Dataset, luq::dataio::Dataset> load_data(const luq::cli::RunConfig& cfg) {
    if (cfg.data.source == "synthetic") {
        const luq::dataio::Dataset all = luq::dataio::synth_blobs(
            cfg.data.classes, cfg.data.dim, cfg.data.train_per_class + cfg.data.test_per_class,
            cfg.data.separation, *cfg.data.seed);
        return luq::dataio::split_train_test(all, cfg.data.test_per_class);
    }
    auto train = luq::dataio::load_idx_dataset(cfg.data.train_images, cfg.data.train_labels);
    auto test = luq::dataio::load_idx_dataset(cfg.data.test_images, cfg.data.test_labels);
    train.num_classes = test.num_classes = std::max(train.num_classes, test.num_classes);
    return {std::move(train), std::move(test)};
}

std::vector<luq::nn::LayerSpec> hidden_specs(const luq::cli::RunConfig& cfg) {
    std::vector<luq::nn::LayerSpec> specs;
    for (std::size_t w : cfg.network.hidden_widths)
        specs.push_back({w, luq::nn::Activation::relu, cfg.network.dropout});
    return specs;
}

luq::nn::TrainConfig train_config(const luq::cli::RunConfig& cfg) {
    luq::nn::TrainConfig hp;
    hp.batch_size = cfg.training.batch_size;
    hp.learning_rate = cfg.training.learning_rate;
    hp.max_epochs = cfg.training.max_epochs;
    hp.early_stop_accuracy = cfg.training.early_stop_accuracy;
    hp.seed = *cfg.training.seed;
    return hp;
}

std::string pair_tag(double alpha, double beta) {
    auto fmt = [](double v) {
        std::string s = std::to_string(v);
        s.erase(s.find_last_not_of('0') + 1);
        if (!s.empty() && s.back() == '.') s.pop_back();
        for (char& c : s)
            if (c == '.') c = 'p';
        return s;
    };
    return "a" + fmt(alpha) + "_b" + fmt(beta);
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    const auto cfg = luq::cli::parse_config_file(config_path);
    const auto [train_data, test_data] = load_data(cfg);
    std::cerr << "training on " << train_data.size() << " samples, " << train_data.num_classes
              << " classes" << std::endl;

    luq::nn::Network net =
        luq::nn::init_network(train_data.features.cols(), hidden_specs(cfg),
                              train_data.num_classes, *cfg.training.seed);
    const luq::nn::TrainHistory history = luq::nn::train(net, train_data, train_config(cfg));

    fs::create_directories(out_dir);
    luq::nn::save_network(net, fs::path(out_dir) / "model.lcn");
    {
        auto out = open_out(fs::path(out_dir) / "history.csv");
        out << "epoch,loss,accuracy\n";
        for (std::size_t e = 0; e < history.size(); ++e) {
            char buf[80];
            std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.6f\n", e + 1, history[e].loss,
                          history[e].accuracy);
            out << buf;
        }
    }
    {
        nlohmann::json meta;
        meta["epochs"] = history.size();
        meta["final_train_accuracy"] = history.empty() ? 0.0 : history.back().accuracy;
        meta["test_accuracy"] = luq::nn::accuracy(net, test_data);
        meta["network_fingerprint"] = net.fingerprint;
        meta["config"] = luq::cli::render_config(cfg);
        auto out = open_out(fs::path(out_dir) / "train_metadata.json");
        out << meta.dump(2) << '\n';
    }
    std::cerr << "model written to " << (fs::path(out_dir) / "model.lcn").string() << std::endl;
    return kExitOk;
}

int cmd_fit_uq(const std::string& model_path, const std::string& config_path,
               const std::string& out_dir) {
    const auto cfg = luq::cli::parse_config_file(config_path);
    if (cfg.inference.alphas.empty())
        throw luq::ValidationError("inference.alphas: at least one percentile pair is required");
    const luq::nn::Network net = luq::nn::load_network(fs::path(model_path));
    const auto [train_data, test_data] = load_data(cfg);

    std::cerr << "building confidence sets from " << train_data.size() << " training samples"
              << std::endl;
    const luq::uq::ConfidenceSets sets = luq::uq::build_confidence_sets(net, train_data);

    fs::create_directories(out_dir);
    nlohmann::json meta;
    meta["kept_counts"] = sets.kept_counts;
    meta["network_fingerprint"] = net.fingerprint;
    meta["models"] = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.inference.alphas.size(); ++i) {
        const double alpha = cfg.inference.alphas[i];
        const double beta = cfg.inference.betas[i];
        const luq::uq::UqModel model =
            luq::uq::fit_uq_model(sets, alpha, beta, cfg.inference.ridge_scale, cfg.run.workers);
        const std::string name = "uq_" + pair_tag(alpha, beta) + ".luq";
        luq::uq::save_uq_model(model, fs::path(out_dir) / name);
        meta["models"].push_back({{"file", name}, {"alpha", alpha}, {"beta", beta}});
        std::cerr << "fitted " << name << std::endl;
    }
    auto out = open_out(fs::path(out_dir) / "fituq_metadata.json");
    out << meta.dump(2) << '\n';
    return kExitOk;
}

int cmd_score(const std::string& model_path, const std::string& uq_path,
              const std::string& input_path, const std::string& labels_path,
              const std::string& group, const std::string& smoothstep,
              const std::string& out_csv) {
    const luq::nn::Network net = luq::nn::load_network(fs::path(model_path));
    const luq::uq::UqModel model = luq::uq::load_uq_model(fs::path(uq_path));
    const luq::linalg::Matrix features = luq::dataio::load_idx_images(fs::path(input_path));
    std::vector<int> labels(features.rows(), -1);
    if (!labels_path.empty()) {
        labels = luq::dataio::load_idx_labels(fs::path(labels_path));
        if (labels.size() != features.rows())
            throw luq::DimensionMismatch("score: " + std::to_string(labels.size()) +
                                         " labels for " + std::to_string(features.rows()) +
                                         " images");
    }
    const auto variant = smoothstep == "literal" ? luq::uq::SmoothstepVariant::literal
                                                 : luq::uq::SmoothstepVariant::corrected;
    const auto reports = luq::uq::score_dataset(model, net, features, variant);

    luq::eval::ScoredSet scored;
    scored.reserve(reports.size());
    const auto g = group == "ood" ? luq::eval::Group::ood : luq::eval::Group::in_distribution;
    for (std::size_t i = 0; i < reports.size(); ++i)
        scored.push_back({labels[i], reports[i].predicted_label, reports[i].confidence, g});
    auto out = open_out(out_csv);
    luq::eval::write_scores_csv(scored, out);
    std::cerr << "scored " << scored.size() << " samples" << std::endl;
    return kExitOk;
}

int cmd_evaluate(const std::vector<std::string>& score_files, double threshold,
                 const std::string& out_csv) {
    luq::eval::ScoredSet scored;
    for (const std::string& file : score_files) {
        std::ifstream in(file);
        if (!in) throw luq::Error("cannot open scores file " + file);
        const luq::eval::ScoredSet part = luq::eval::read_scores_csv(in);
        scored.insert(scored.end(), part.begin(), part.end());
    }
    for (const luq::eval::ScoredSample& s : scored)
        if (s.group == luq::eval::Group::in_distribution && s.true_label < 0)
            throw luq::ValidationError(
                "evaluate: in-distribution rows need true labels (score with --labels)");
    const luq::eval::Metrics m = luq::eval::evaluate(scored, threshold);

    auto out = open_out(out_csv);
    out << "threshold,tp_rate,tp_accepted,tp_total,tn_rate,tn_rejected,tn_total,"
           "tnood_rate,tnood_rejected,tnood_total\n";
    auto fmt = [](const std::optional<double>& r) {
        if (!r) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", *r);
        return std::string(buf);
    };
    out << threshold << ',' << fmt(m.tp.rate()) << ',' << m.tp.qualifying << ',' << m.tp.total
        << ',' << fmt(m.tn.rate()) << ',' << m.tn.qualifying << ',' << m.tn.total << ','
        << fmt(m.tn_ood.rate()) << ',' << m.tn_ood.qualifying << ',' << m.tn_ood.total << '\n';
    return kExitOk;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir) {
    const auto cfg = luq::cli::parse_config_file(config_path);
    const luq::eval::ExperimentResult result = luq::eval::run_experiment(cfg, &std::cerr);

    fs::create_directories(out_dir);
    {
        auto out = open_out(fs::path(out_dir) / "results.csv");
        luq::eval::write_results_csv(result, out);
    }
    for (const luq::eval::CellResult& cell : result.cells) {
        std::string tag = cell.descriptor.method;
        if (cell.descriptor.percentiles)
            tag += "_" + pair_tag(cell.descriptor.percentiles->alpha,
                                  cell.descriptor.percentiles->beta);
        const luq::eval::Histogram hist =
            luq::eval::export_histogram(cell.pooled_scores, cfg.run.histogram_bins);
        auto hist_out = open_out(fs::path(out_dir) / ("histogram_" + tag + ".csv"));
        luq::eval::write_histogram_csv(hist, hist_out);
        if (cfg.run.export_scores) {
            auto scores_out = open_out(fs::path(out_dir) / ("scores_" + tag + ".csv"));
            luq::eval::write_scores_csv(cell.pooled_scores, scores_out);
        }
    }
    {
        auto out = open_out(fs::path(out_dir) / "metadata.json");
        out << result.metadata.dump(2) << '\n';
    }
    std::cerr << "results written to " << out_dir << std::endl;
    return kExitOk;
}

int cmd_histogram(const std::string& scores_file, std::size_t bins, const std::string& out_csv) {
    std::ifstream in(scores_file);
    if (!in) throw luq::Error("cannot open scores file " + scores_file);
    const luq::eval::ScoredSet scored = luq::eval::read_scores_csv(in);
    const luq::eval::Histogram hist = luq::eval::export_histogram(scored, bins);
    auto out = open_out(out_csv);
    luq::eval::write_histogram_csv(hist, out);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentuq — latent-space uncertainty quantification for feed-forward "
                 "classifiers"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_path;
    std::string model_path;
    std::string uq_path;
    std::string input_path;
    std::string labels_path;
    std::string group = "in";
    std::string smoothstep = "corrected";
    std::vector<std::string> score_files;
    double threshold = 0.5;
    std::size_t bins = 20;

    auto* train = app.add_subcommand("train", "Train a classifier from a config");
    train->add_option("--config", config_path, "Config file")->required();
    train->add_option("--out", out_path, "Output directory")->required();

    auto* fituq = app.add_subcommand("fit-uq", "Fit UQ models for a trained classifier");
    fituq->add_option("--model", model_path, "Model file (.lcn)")->required();
    fituq->add_option("--config", config_path, "Config file")->required();
    fituq->add_option("--out", out_path, "Output directory")->required();

    auto* score = app.add_subcommand("score", "Score an IDX image file");
    score->add_option("--model", model_path, "Model file (.lcn)")->required();
    score->add_option("--uq", uq_path, "UQ model file (.luq)")->required();
    score->add_option("--input", input_path, "IDX image file")->required();
    score->add_option("--labels", labels_path, "Optional IDX label file");
    score->add_option("--group", group, "Group tag: in | ood")
        ->check(CLI::IsMember({"in", "ood"}));
    score->add_option("--smoothstep", smoothstep, "Smoothstep variant: corrected | literal")
        ->check(CLI::IsMember({"corrected", "literal"}));
    score->add_option("--out", out_path, "Output CSV")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Compute TP/TN/TN-OOD from score CSVs");
    evaluate->add_option("--scores", score_files, "Score CSV (repeatable)")->required();
    evaluate->add_option("--threshold", threshold, "Acceptance threshold in [0,1]")
        ->required()
        ->check(CLI::Range(0.0, 1.0));
    evaluate->add_option("--out", out_path, "Output CSV (default metrics.csv)");

    auto* experiment = app.add_subcommand("experiment",
                                          "Run the leave-one-label-out experiment matrix");
    experiment->add_option("--config", config_path, "Config file")->required();
    experiment->add_option("--out", out_path, "Output directory")->required();

    auto* histogram = app.add_subcommand("histogram", "Export confidence histograms");
    histogram->add_option("--scores", score_files, "Score CSV")->required();
    histogram->add_option("--bins", bins, "Bin count")->required();
    histogram->add_option("--out", out_path, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::endl;
        return kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, out_path);
        if (fituq->parsed()) return cmd_fit_uq(model_path, config_path, out_path);
        if (score->parsed())
            return cmd_score(model_path, uq_path, input_path, labels_path, group, smoothstep,
                             out_path);
        if (evaluate->parsed())
            return cmd_evaluate(score_files, threshold,
                                out_path.empty() ? "metrics.csv" : out_path);
        if (experiment->parsed()) return cmd_experiment(config_path, out_path);
        if (histogram->parsed()) return cmd_histogram(score_files.front(), bins, out_path);
        std::cerr << app.help() << std::endl;
        return kExitUsage;
    } catch (const luq::ParseError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const luq::ValidationError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitRuntime;
    }
}
