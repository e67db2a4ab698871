#include "latentuq/baselines.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "latentuq/parallel.hpp"
#include "latentuq/rng.hpp"

namespace luq::baselines {

namespace {

constexpr std::size_t kVoteChunk = 512;

int modal_label(const std::vector<std::size_t>& histogram) {
    int best = 0;
    for (std::size_t k = 1; k < histogram.size(); ++k)
        if (histogram[k] > histogram[static_cast<std::size_t>(best)])
            best = static_cast<int>(k);
    return best;
}

VoteResult result_from_histogram(std::vector<std::size_t> histogram, std::size_t total) {
    VoteResult result;
    result.predicted_label = modal_label(histogram);
    result.confidence =
        static_cast<double>(histogram[static_cast<std::size_t>(result.predicted_label)]) /
        static_cast<double>(total);
    result.histogram = std::move(histogram);
    return result;
}

int argmax_row(std::span<const double> row) {
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

std::string member_filename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "member_%03zu.lcn", index);
    return buf;
}

} // namespace

VoteResult mc_dropout_score(const nn::Network& net, std::span<const double> x,
                            std::size_t passes, std::uint64_t seed) {
    if (passes < 1) throw BadParameter("mc_dropout_score: need at least one pass");
    std::vector<std::size_t> histogram(net.num_classes(), 0);
    for (std::size_t t = 0; t < passes; ++t) {
        const nn::LatentTrace trace = nn::forward_dropout(net, x, rng::substream(seed, t));
        ++histogram[static_cast<std::size_t>(argmax_row(trace.logits))];
    }
    return result_from_histogram(std::move(histogram), passes);
}

std::vector<VoteResult> mc_dropout_score_batch(const nn::Network& net, const Matrix& x,
                                               std::size_t passes, std::uint64_t seed) {
    if (passes < 1) throw BadParameter("mc_dropout_score_batch: need at least one pass");
    const std::size_t n = x.rows();
    std::vector<std::vector<std::size_t>> histograms(
        n, std::vector<std::size_t>(net.num_classes(), 0));

    for (std::size_t start = 0; start < n; start += kVoteChunk) {
        const std::size_t b = std::min(kVoteChunk, n - start);
        Matrix chunk(b, x.cols());
        for (std::size_t i = 0; i < b; ++i) {
            const auto src = x.row(start + i);
            std::copy(src.begin(), src.end(), chunk.row(i).begin());
        }
        std::vector<std::uint64_t> row_seeds(b);
        for (std::size_t t = 0; t < passes; ++t) {
            for (std::size_t i = 0; i < b; ++i)
                row_seeds[i] = rng::substream(rng::substream(seed, start + i), t);
            const Matrix logits = nn::logits_batch_dropout(net, chunk, row_seeds);
            for (std::size_t i = 0; i < b; ++i)
                ++histograms[start + i][static_cast<std::size_t>(argmax_row(logits.row(i)))];
        }
    }

    std::vector<VoteResult> results;
    results.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        results.push_back(result_from_histogram(std::move(histograms[i]), passes));
    return results;
}

Ensemble train_ensemble(std::size_t input_dim, const std::vector<nn::LayerSpec>& hidden,
                        std::size_t num_classes, const dataio::Dataset& data,
                        const nn::TrainConfig& hp, std::vector<std::uint64_t> member_seeds,
                        unsigned workers) {
    if (member_seeds.size() < 2)
        throw BadParameter("train_ensemble: need at least 2 members");
    if (std::set<std::uint64_t>(member_seeds.begin(), member_seeds.end()).size() !=
        member_seeds.size())
        throw BadSeeds("train_ensemble: member seeds must be distinct");

    Ensemble ens;
    ens.seeds = std::move(member_seeds);
    ens.members.resize(ens.seeds.size());
    parallel_for(ens.seeds.size(), workers, [&](std::size_t m) {
        try {
            nn::Network net = nn::init_network(input_dim, hidden, num_classes, ens.seeds[m]);
            nn::TrainConfig member_hp = hp;
            member_hp.seed = ens.seeds[m];
            nn::train(net, data, member_hp);
            ens.members[m] = std::move(net);
        } catch (const Error& e) {
            throw Error("ensemble member " + std::to_string(m) + ": " + e.what());
        }
    });
    return ens;
}

Ensemble train_ensemble(std::size_t input_dim, const std::vector<nn::LayerSpec>& hidden,
                        std::size_t num_classes, const dataio::Dataset& data,
                        const nn::TrainConfig& hp, std::size_t members,
                        std::uint64_t base_seed, unsigned workers) {
    std::vector<std::uint64_t> seeds(members);
    for (std::size_t m = 0; m < members; ++m) seeds[m] = base_seed + m;
    return train_ensemble(input_dim, hidden, num_classes, data, hp, std::move(seeds), workers);
}

VoteResult ensemble_score(const Ensemble& ens, std::span<const double> x) {
    std::vector<std::size_t> histogram(ens.members.front().num_classes(), 0);
    for (const nn::Network& member : ens.members)
        ++histogram[static_cast<std::size_t>(nn::predict(member, x))];
    return result_from_histogram(std::move(histogram), ens.members.size());
}

std::vector<VoteResult> ensemble_score_batch(const Ensemble& ens, const Matrix& x) {
    const std::size_t n = x.rows();
    std::vector<std::vector<std::size_t>> histograms(
        n, std::vector<std::size_t>(ens.members.front().num_classes(), 0));
    for (const nn::Network& member : ens.members) {
        const std::vector<int> votes = nn::predict_batch(member, x);
        for (std::size_t i = 0; i < n; ++i)
            ++histograms[i][static_cast<std::size_t>(votes[i])];
    }
    std::vector<VoteResult> results;
    results.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        results.push_back(result_from_histogram(std::move(histograms[i]), ens.members.size()));
    return results;
}

void save_ensemble(const Ensemble& ens, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["member_count"] = ens.members.size();
    manifest["members"] = nlohmann::json::array();
    for (std::size_t m = 0; m < ens.members.size(); ++m) {
        nn::save_network(ens.members[m], dir / member_filename(m));
        manifest["members"].push_back({{"file", member_filename(m)},
                                       {"seed", ens.seeds[m]},
                                       {"fingerprint", ens.members[m].fingerprint}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw BadFormat("save_ensemble: cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw BadFormat("load_ensemble: missing manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw BadFormat("load_ensemble: bad manifest: " + std::string(e.what()));
    }
    Ensemble ens;
    for (const auto& entry : manifest.at("members")) {
        nn::Network net = nn::load_network(dir / entry.at("file").get<std::string>());
        if (net.fingerprint != entry.at("fingerprint").get<std::uint32_t>())
            throw BadFormat("load_ensemble: fingerprint mismatch for " +
                            entry.at("file").get<std::string>());
        ens.seeds.push_back(entry.at("seed").get<std::uint64_t>());
        ens.members.push_back(std::move(net));
    }
    if (ens.members.size() != manifest.at("member_count").get<std::size_t>())
        throw BadFormat("load_ensemble: member count mismatch");
    if (ens.members.size() < 2) throw BadFormat("load_ensemble: fewer than 2 members");
    return ens;
}

} // namespace luq::baselines
