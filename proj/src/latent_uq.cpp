#include "latentuq/latent_uq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "latentuq/binio.hpp"
#include "latentuq/parallel.hpp"

namespace luq::uq {

namespace {

constexpr std::uint32_t kUqVersion = 1;
constexpr char kUqMagic[5] = "LUQ1";
constexpr std::size_t kScoreChunk = 512;

int argmax_row(std::span<const double> row) {
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

void check_compatible(const UqModel& model, const nn::Network& net) {
    if (model.network_fingerprint != net.fingerprint)
        throw FingerprintMismatch("score: UQ model was fitted for network fingerprint " +
                                  std::to_string(model.network_fingerprint) + ", got " +
                                  std::to_string(net.fingerprint));
    if (model.num_hidden_layers != net.num_hidden_layers() ||
        model.num_classes != net.num_classes())
        throw DimensionMismatch("score: UQ model grid does not match the network");
}

ConfidenceReport score_from_latents(const UqModel& model,
                                    const std::vector<std::span<const double>>& hidden,
                                    std::span<const double> logits,
                                    SmoothstepVariant variant) {
    ConfidenceReport report;
    report.predicted_label = argmax_row(logits);
    const auto k = static_cast<std::size_t>(report.predicted_label);
    report.layer_log_prob.reserve(model.num_hidden_layers);
    report.layer_s.reserve(model.num_hidden_layers);
    double confidence = 1.0;
    for (std::size_t l = 0; l < model.num_hidden_layers; ++l) {
        const UqCell& cell = model.cells[l][k];
        const double lp = linalg::log_density(cell.gaussian, hidden[l]);
        const double s = smoothstep(lp, cell.q_alpha, cell.q_beta, variant);
        report.layer_log_prob.push_back(lp);
        report.layer_s.push_back(s);
        confidence *= s;
    }
    report.confidence = confidence;
    return report;
}

} // namespace

ConfidenceSets build_confidence_sets(const nn::Network& net, const dataio::Dataset& train) {
    const std::size_t n = train.size();
    const std::size_t num_classes = net.num_classes();
    const std::size_t num_hidden = net.num_hidden_layers();
    if (n == 0) throw EmptyDataset("build_confidence_sets: empty training set");
    for (int label : train.labels)
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
            throw BadParameter("build_confidence_sets: label " + std::to_string(label) +
                               " outside the network's class range");

    // one growable buffer per (layer, class); wrapped into matrices at the end
    std::vector<std::vector<std::vector<double>>> buffers(
        num_hidden, std::vector<std::vector<double>>(num_classes));
    std::vector<std::size_t> kept(num_classes, 0);

    for (std::size_t start = 0; start < n; start += kScoreChunk) {
        const std::size_t b = std::min(kScoreChunk, n - start);
        Matrix chunk(b, train.features.cols());
        for (std::size_t i = 0; i < b; ++i) {
            const auto src = train.features.row(start + i);
            std::copy(src.begin(), src.end(), chunk.row(i).begin());
        }
        const nn::BatchTrace trace = nn::forward_batch(net, chunk);
        for (std::size_t i = 0; i < b; ++i) {
            const int predicted = argmax_row(trace.logits.row(i));
            const int truth = train.labels[start + i];
            if (predicted != truth) continue;
            ++kept[static_cast<std::size_t>(truth)];
            for (std::size_t l = 0; l < num_hidden; ++l) {
                const auto row = trace.hidden[l].row(i);
                auto& buf = buffers[l][static_cast<std::size_t>(truth)];
                buf.insert(buf.end(), row.begin(), row.end());
            }
        }
    }

    for (std::size_t k = 0; k < num_classes; ++k)
        if (kept[k] == 0)
            throw EmptyClass("build_confidence_sets: no correctly classified training "
                             "point for class " + std::to_string(k));

    ConfidenceSets sets;
    sets.num_hidden_layers = num_hidden;
    sets.num_classes = num_classes;
    sets.kept_counts = kept;
    sets.network_fingerprint = net.fingerprint;
    sets.sets.resize(num_hidden);
    for (std::size_t l = 0; l < num_hidden; ++l) {
        const std::size_t width = net.layers[l].spec.width;
        sets.sets[l].reserve(num_classes);
        for (std::size_t k = 0; k < num_classes; ++k)
            sets.sets[l].emplace_back(kept[k], width, std::move(buffers[l][k]));
    }
    return sets;
}

UqModel fit_uq_model(const ConfidenceSets& sets, double alpha, double beta,
                     double ridge_scale, unsigned workers) {
    if (!(alpha >= 0.0 && alpha <= beta && beta <= 100.0))
        throw BadPercentiles("fit_uq_model: need 0 <= alpha <= beta <= 100, got alpha=" +
                             std::to_string(alpha) + " beta=" + std::to_string(beta));

    UqModel model;
    model.alpha = alpha;
    model.beta = beta;
    model.num_hidden_layers = sets.num_hidden_layers;
    model.num_classes = sets.num_classes;
    model.network_fingerprint = sets.network_fingerprint;
    model.cells.assign(model.num_hidden_layers,
                       std::vector<UqCell>(model.num_classes));

    const std::size_t n_cells = model.num_hidden_layers * model.num_classes;
    parallel_for(n_cells, workers, [&](std::size_t idx) {
        const std::size_t l = idx / model.num_classes;
        const std::size_t k = idx % model.num_classes;
        const Matrix& samples = sets.sets[l][k];
        UqCell cell;
        cell.gaussian = linalg::fit_gaussian(samples, ridge_scale);
        std::vector<double> self_log_probs(samples.rows());
        for (std::size_t i = 0; i < samples.rows(); ++i)
            self_log_probs[i] = linalg::log_density(cell.gaussian, samples.row(i));
        cell.q_alpha = linalg::percentile(self_log_probs, alpha);
        cell.q_beta = linalg::percentile(self_log_probs, beta);
        model.cells[l][k] = std::move(cell);
    });
    return model;
}

double smoothstep(double log_prob, double q_alpha, double q_beta, SmoothstepVariant variant) {
    if (q_alpha > q_beta)
        throw BadThresholds("smoothstep: q_alpha " + std::to_string(q_alpha) +
                            " > q_beta " + std::to_string(q_beta));
    if (log_prob >= q_beta) return 1.0;
    if (log_prob <= q_alpha) return 0.0;
    const double xq = (log_prob - q_alpha) / (q_beta - q_alpha);
    if (xq <= 0.0) return 0.0;
    if (xq >= 1.0) return 1.0;
    const double numerator = variant == SmoothstepVariant::corrected ? 2.0 * xq - 1.0
                                                                     : xq - 1.0;
    const double s = 0.5 * (std::tanh(numerator / (2.0 * std::sqrt(xq * (1.0 - xq)))) + 1.0);
    // the open interval maps strictly inside (0,1); tanh saturation must not
    // leak exact 0/1, those mark the pinned regions
    if (s <= 0.0) return std::nextafter(0.0, 1.0);
    if (s >= 1.0) return std::nextafter(1.0, 0.0);
    return s;
}

ConfidenceReport score(const UqModel& model, const nn::Network& net,
                       std::span<const double> x, SmoothstepVariant variant) {
    check_compatible(model, net);
    const nn::LatentTrace trace = nn::forward(net, x);
    std::vector<std::span<const double>> hidden;
    hidden.reserve(trace.hidden.size());
    for (const Vector& h : trace.hidden) hidden.emplace_back(h);
    return score_from_latents(model, hidden, trace.logits, variant);
}

std::vector<ConfidenceReport> score_dataset(const UqModel& model, const nn::Network& net,
                                            const Matrix& x, SmoothstepVariant variant) {
    check_compatible(model, net);
    std::vector<ConfidenceReport> reports(x.rows());
    for (std::size_t start = 0; start < x.rows(); start += kScoreChunk) {
        const std::size_t b = std::min(kScoreChunk, x.rows() - start);
        Matrix chunk(b, x.cols());
        for (std::size_t i = 0; i < b; ++i) {
            const auto src = x.row(start + i);
            std::copy(src.begin(), src.end(), chunk.row(i).begin());
        }
        const nn::BatchTrace trace = nn::forward_batch(net, chunk);
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<std::span<const double>> hidden;
            hidden.reserve(trace.hidden.size());
            for (const Matrix& h : trace.hidden) hidden.emplace_back(h.row(i));
            reports[start + i] =
                score_from_latents(model, hidden, trace.logits.row(i), variant);
        }
    }
    return reports;
}

bool accept(ConfidenceReport& report, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw BadParameter("accept: threshold " + std::to_string(threshold) +
                           " outside [0, 1]");
    report.accepted = report.confidence >= threshold;
    return *report.accepted;
}

namespace {

template <typename Sink>
void serialize(const UqModel& model, Sink& sink) {
    sink.write_magic(kUqMagic);
    sink.write(kUqVersion);
    sink.write(model.alpha);
    sink.write(model.beta);
    sink.write(static_cast<std::uint32_t>(model.num_hidden_layers));
    sink.write(static_cast<std::uint32_t>(model.num_classes));
    for (const auto& layer_cells : model.cells) {
        for (const UqCell& cell : layer_cells) {
            const auto d = static_cast<std::uint32_t>(cell.gaussian.mean.size());
            sink.write(d);
            sink.write_bytes(cell.gaussian.mean.data(), d * sizeof(double));
            sink.write_bytes(cell.gaussian.chol_lower.data().data(),
                             cell.gaussian.chol_lower.data().size() * sizeof(double));
            sink.write(cell.gaussian.log_det);
            sink.write(cell.gaussian.reg_lambda);
            sink.write(cell.q_alpha);
            sink.write(cell.q_beta);
        }
    }
    sink.write(model.network_fingerprint);
}

} // namespace

void save_uq_model(const UqModel& model, std::ostream& out) {
    binio::CrcWriter writer(out);
    serialize(model, writer);
    writer.write_trailer();
}

void save_uq_model(const UqModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BadFormat("save_uq_model: cannot open " + path.string());
    save_uq_model(model, out);
}

UqModel load_uq_model(std::istream& in) {
    binio::CrcReader reader(in);
    reader.expect_magic(kUqMagic, "UQ model file");
    const auto version = reader.read<std::uint32_t>();
    if (version != kUqVersion)
        throw VersionMismatch("UQ model file version " + std::to_string(version) +
                              ", expected " + std::to_string(kUqVersion));
    UqModel model;
    model.alpha = reader.read<double>();
    model.beta = reader.read<double>();
    if (!(model.alpha >= 0.0 && model.alpha <= model.beta && model.beta <= 100.0))
        throw BadFormat("UQ model file: percentiles violate 0 <= alpha <= beta <= 100");
    model.num_hidden_layers = reader.read<std::uint32_t>();
    model.num_classes = reader.read<std::uint32_t>();
    model.cells.assign(model.num_hidden_layers, std::vector<UqCell>(model.num_classes));
    for (std::size_t l = 0; l < model.num_hidden_layers; ++l) {
        for (std::size_t k = 0; k < model.num_classes; ++k) {
            UqCell& cell = model.cells[l][k];
            const auto d = reader.read<std::uint32_t>();
            cell.gaussian.mean.resize(d);
            reader.read_bytes(cell.gaussian.mean.data(), d * sizeof(double));
            cell.gaussian.chol_lower = Matrix(d, d);
            reader.read_bytes(cell.gaussian.chol_lower.data().data(),
                              std::size_t(d) * d * sizeof(double));
            cell.gaussian.log_det = reader.read<double>();
            cell.gaussian.reg_lambda = reader.read<double>();
            cell.q_alpha = reader.read<double>();
            cell.q_beta = reader.read<double>();
            if (cell.q_alpha > cell.q_beta)
                throw BadFormat("UQ model file: cell thresholds out of order");
        }
    }
    model.network_fingerprint = reader.read<std::uint32_t>();
    reader.verify_trailer("UQ model file");
    return model;
}

UqModel load_uq_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BadFormat("load_uq_model: cannot open " + path.string());
    return load_uq_model(in);
}

} // namespace luq::uq
