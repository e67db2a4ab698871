#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "latentuq/baselines.hpp"
#include "latentuq/dataio.hpp"
#include "latentuq/nn.hpp"
#include "latentuq/rng.hpp"

using namespace luq;
using baselines::Ensemble;
using baselines::VoteResult;
using linalg::Matrix;
using linalg::Vector;
using nn::Activation;
using nn::Network;

namespace {

/// A zeroed network whose output bias makes it always vote `label`.
Network constant_voter(std::size_t num_classes, int label) {
    Network net = nn::init_network(2, {{2, Activation::relu, 0.0}}, num_classes, 0);
    for (nn::Layer& layer : net.layers) {
        for (double& w : layer.weights.data()) w = 0.0;
        for (double& b : layer.biases) b = 0.0;
    }
    net.layers.back().biases[static_cast<std::size_t>(label)] = 3.0;
    net.fingerprint = nn::fingerprint(net);
    return net;
}

Ensemble voters(std::size_t num_classes, const std::vector<int>& labels) {
    Ensemble ens;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ens.members.push_back(constant_voter(num_classes, labels[i]));
        ens.seeds.push_back(i);
    }
    return ens;
}

dataio::Dataset tiny_blobs() { return dataio::synth_blobs(2, 4, 40, 10.0, 55); }

} // namespace

TEST_SUITE("baselines") {

TEST_CASE("mc_dropout with rate zero gives full confidence") {
    const Network net = nn::init_network(4, {{6, Activation::relu, 0.0}}, 3, 1);
    const VoteResult v = baselines::mc_dropout_score(net, Vector{0.1, 0.2, 0.3, 0.4}, 25, 9);
    CHECK(v.confidence == 1.0);
    CHECK(v.predicted_label == nn::predict(net, Vector{0.1, 0.2, 0.3, 0.4}));
}

TEST_CASE("mc_dropout confidence with 100 passes is a multiple of 0.01") {
    const Network net = nn::init_network(4, {{12, Activation::relu, 0.5}}, 3, 2);
    const VoteResult v = baselines::mc_dropout_score(net, Vector{0.6, 0.1, 0.8, 0.2}, 100, 3);
    const double scaled = v.confidence * 100.0;
    CHECK(scaled == doctest::Approx(std::round(scaled)).epsilon(1e-12));
    CHECK(v.confidence >= 1.0 / 3.0 - 1e-12);
    CHECK(v.confidence <= 1.0);
}

TEST_CASE("mc_dropout is deterministic per seed") {
    const Network net = nn::init_network(4, {{12, Activation::relu, 0.4}}, 3, 2);
    const Vector x = {0.3, 0.9, 0.0, 0.5};
    const VoteResult a = baselines::mc_dropout_score(net, x, 50, 31);
    const VoteResult b = baselines::mc_dropout_score(net, x, 50, 31);
    CHECK(a == b);
}

TEST_CASE("mc_dropout with one pass always gives confidence one") {
    const Network net = nn::init_network(4, {{12, Activation::relu, 0.5}}, 3, 2);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const VoteResult v =
            baselines::mc_dropout_score(net, Vector{0.1, 0.4, 0.7, 1.0}, 1, seed);
        CHECK(v.confidence == 1.0);
    }
}

TEST_CASE("mc_dropout histogram is conserved and modal") {
    const Network net = nn::init_network(4, {{12, Activation::relu, 0.5}}, 4, 8);
    const VoteResult v = baselines::mc_dropout_score(net, Vector{0.9, 0.2, 0.6, 0.3}, 64, 5);
    std::size_t total = 0;
    std::size_t top = 0;
    for (std::size_t c : v.histogram) {
        total += c;
        top = std::max(top, c);
    }
    CHECK(total == 64);
    CHECK(v.confidence == static_cast<double>(top) / 64.0);
    CHECK(v.histogram[static_cast<std::size_t>(v.predicted_label)] == top);
}

TEST_CASE("batched mc_dropout equals the per-sample path") {
    const Network net = nn::init_network(3, {{10, Activation::relu, 0.3}}, 3, 4);
    std::mt19937_64 gen(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x(9, 3);
    for (double& v : x.data()) v = u(gen);
    const auto batch = baselines::mc_dropout_score_batch(net, x, 30, 777);
    REQUIRE(batch.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
        const VoteResult single =
            baselines::mc_dropout_score(net, x.row(i), 30, rng::substream(777, i));
        CHECK(batch[i] == single);
    }
}

TEST_CASE("train_ensemble produces the requested member count") {
    const dataio::Dataset data = tiny_blobs();
    nn::TrainConfig hp;
    hp.batch_size = 20;
    hp.max_epochs = 2;
    hp.early_stop_accuracy = 0.96;
    hp.seed = 0;
    const Ensemble ens = baselines::train_ensemble(
        4, {{6, Activation::relu, 0.1}}, 2, data, hp, 10, 100);
    CHECK(ens.members.size() == 10);
    for (std::size_t m = 0; m < 10; ++m) CHECK(ens.seeds[m] == 100 + m);
    // distinct seeds produce distinct members
    CHECK(ens.members[0] != ens.members[1]);
}

TEST_CASE("train_ensemble rejects colliding seeds") {
    const dataio::Dataset data = tiny_blobs();
    nn::TrainConfig hp;
    hp.max_epochs = 1;
    hp.seed = 0;
    CHECK_THROWS_AS(baselines::train_ensemble(4, {{6, Activation::relu, 0.0}}, 2, data, hp,
                                              std::vector<std::uint64_t>{7, 7}),
                    BadSeeds);
}

TEST_CASE("a diverging member reports its index") {
    dataio::Dataset data = tiny_blobs();
    data.features(0, 0) = std::numeric_limits<double>::infinity();
    nn::TrainConfig hp;
    hp.batch_size = 80;
    hp.max_epochs = 2;
    hp.seed = 0;
    try {
        baselines::train_ensemble(4, {{6, Activation::relu, 0.0}}, 2, data, hp, 2, 5);
        FAIL("expected the ensemble training to diverge");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("member") != std::string::npos);
    }
}

TEST_CASE("unanimous ensembles give full confidence") {
    const Ensemble ens = voters(3, {1, 1, 1, 1});
    const VoteResult v = baselines::ensemble_score(ens, Vector{0.5, 0.5});
    CHECK(v.predicted_label == 1);
    CHECK(v.confidence == 1.0);
}

TEST_CASE("a six-to-four split scores 0.6") {
    const Ensemble ens = voters(3, {2, 2, 0, 2, 0, 2, 0, 2, 0, 2});
    const VoteResult v = baselines::ensemble_score(ens, Vector{0.5, 0.5});
    CHECK(v.predicted_label == 2);
    CHECK(v.confidence == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(v.histogram[0] == 4);
    CHECK(v.histogram[2] == 6);
}

TEST_CASE("vote ties break toward the lowest label") {
    const Ensemble ens = voters(10, {7, 2, 7, 2, 7, 2, 7, 2, 7, 2});
    const VoteResult v = baselines::ensemble_score(ens, Vector{0.5, 0.5});
    CHECK(v.predicted_label == 2);
    CHECK(v.confidence == 0.5);
}

TEST_CASE("ensemble prediction is invariant to member order") {
    Ensemble ens = voters(4, {3, 0, 3, 1, 3, 0});
    const VoteResult before = baselines::ensemble_score(ens, Vector{0.2, 0.8});
    std::reverse(ens.members.begin(), ens.members.end());
    const VoteResult after = baselines::ensemble_score(ens, Vector{0.2, 0.8});
    CHECK(before == after);
}

TEST_CASE("batched ensemble scoring equals the per-sample path") {
    const Ensemble ens = voters(3, {0, 1, 1, 2});
    Matrix x(5, 2);
    for (double& v : x.data()) v = 0.4;
    const auto batch = baselines::ensemble_score_batch(ens, x);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(batch[i] == baselines::ensemble_score(ens, x.row(i)));
}

TEST_CASE("ensembles persist through a directory round trip") {
    const dataio::Dataset data = tiny_blobs();
    nn::TrainConfig hp;
    hp.batch_size = 20;
    hp.max_epochs = 2;
    hp.seed = 0;
    const Ensemble ens =
        baselines::train_ensemble(4, {{6, Activation::relu, 0.1}}, 2, data, hp, 3, 9);

    const auto dir = std::filesystem::temp_directory_path() / "luq_ensemble_test";
    std::filesystem::remove_all(dir);
    baselines::save_ensemble(ens, dir);
    const Ensemble loaded = baselines::load_ensemble(dir);
    CHECK(loaded.seeds == ens.seeds);
    REQUIRE(loaded.members.size() == ens.members.size());
    for (std::size_t m = 0; m < ens.members.size(); ++m)
        CHECK(loaded.members[m] == ens.members[m]);
    std::filesystem::remove_all(dir);
}

} // TEST_SUITE
