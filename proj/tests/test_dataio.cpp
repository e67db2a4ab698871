#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "latentuq/dataio.hpp"
#include "latentuq/nn.hpp"

using namespace luq;
using dataio::Dataset;
using dataio::OodSplit;
using linalg::Matrix;

namespace {

void append_be_u32(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>(v >> 16));
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v));
}

std::string image_stream(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                         const std::vector<unsigned char>& pixels) {
    std::string s;
    append_be_u32(s, 0x00000803u);
    append_be_u32(s, n);
    append_be_u32(s, rows);
    append_be_u32(s, cols);
    for (unsigned char p : pixels) s.push_back(static_cast<char>(p));
    return s;
}

std::string label_stream(const std::vector<unsigned char>& labels) {
    std::string s;
    append_be_u32(s, 0x00000801u);
    append_be_u32(s, static_cast<std::uint32_t>(labels.size()));
    for (unsigned char l : labels) s.push_back(static_cast<char>(l));
    return s;
}

Dataset three_class_dataset() {
    Dataset ds;
    ds.features = Matrix(6, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        ds.features(i, 0) = static_cast<double>(i) / 6.0;
        ds.features(i, 1) = 1.0 - static_cast<double>(i) / 6.0;
    }
    ds.labels = {0, 1, 2, 0, 1, 2};
    ds.num_classes = 3;
    return ds;
}

} // namespace

TEST_SUITE("dataio") {

TEST_CASE("load_idx_images parses a crafted stream") {
    std::istringstream in(image_stream(1, 2, 2, {0, 255, 0, 255}));
    const Matrix m = dataio::load_idx_images(in);
    REQUIRE(m.rows() == 1);
    REQUIRE(m.cols() == 4);
    CHECK(m(0, 0) == 0.0);
    CHECK(m(0, 1) == 1.0);
    CHECK(m(0, 2) == 0.0);
    CHECK(m(0, 3) == 1.0);
}

TEST_CASE("load_idx_images rejects the label magic") {
    std::istringstream in(label_stream({1, 2}));
    CHECK_THROWS_AS(dataio::load_idx_images(in), BadMagic);
}

TEST_CASE("load_idx_images accepts an empty file") {
    std::istringstream in(image_stream(0, 2, 2, {}));
    const Matrix m = dataio::load_idx_images(in);
    CHECK(m.rows() == 0);
    CHECK(m.cols() == 4);
}

TEST_CASE("load_idx_images flags truncation") {
    std::istringstream in(image_stream(2, 2, 2, {9, 9, 9, 9, 9})); // 3 bytes short
    CHECK_THROWS_AS(dataio::load_idx_images(in), TruncatedFile);
}

TEST_CASE("load_idx_labels parses a crafted stream") {
    std::istringstream in(label_stream({7, 0, 3}));
    CHECK(dataio::load_idx_labels(in) == std::vector<int>{7, 0, 3});
}

TEST_CASE("load_idx_labels flags a truncated payload") {
    std::string s = label_stream({7, 0, 3});
    s.resize(s.size() - 1);
    std::istringstream in(s);
    CHECK_THROWS_AS(dataio::load_idx_labels(in), TruncatedFile);
}

TEST_CASE("load_idx_labels accepts an empty file") {
    std::istringstream in(label_stream({}));
    CHECK(dataio::load_idx_labels(in).empty());
}

TEST_CASE("idx round trip preserves labels exactly and features to 1/255") {
    const Dataset ds = dataio::synth_blobs(3, 5, 10, 4.0, 11);
    std::stringstream img;
    std::stringstream lab;
    dataio::save_idx_images(ds.features, 1, 5, img);
    dataio::save_idx_labels(ds.labels, lab);
    const Matrix features = dataio::load_idx_images(img);
    const std::vector<int> labels = dataio::load_idx_labels(lab);
    CHECK(labels == ds.labels);
    REQUIRE(features.rows() == ds.features.rows());
    for (std::size_t i = 0; i < features.data().size(); ++i)
        CHECK(std::abs(features.data()[i] - ds.features.data()[i]) <= 1.0 / 255.0);
}

TEST_CASE("make_ood_split remaps the remaining labels contiguously") {
    const Dataset ds = three_class_dataset();
    const OodSplit split = dataio::make_ood_split(ds, ds, 1);
    REQUIRE(split.label_map.size() == 2);
    CHECK(split.label_map.at(0) == 0);
    CHECK(split.label_map.at(2) == 1);
    CHECK(split.held_out_label == 1);
    CHECK(split.train.num_classes == 2);
}

TEST_CASE("make_ood_split separates held-out samples") {
    const Dataset ds = three_class_dataset();
    const OodSplit split = dataio::make_ood_split(ds, ds, 2);
    CHECK(split.train.size() == 4);
    CHECK(split.test_in.size() == 4);
    CHECK(split.test_ood.size() == 2);
    for (int l : split.test_ood.labels) CHECK(l == 2); // original labels retained
    // remapped arrays never contain K-1
    for (int l : split.train.labels) CHECK(l < 2);
    for (int l : split.test_in.labels) CHECK(l < 2);
    // conservation
    CHECK(split.train.size() + split.test_ood.size() == ds.size());
}

TEST_CASE("make_ood_split rejects an absent label") {
    const Dataset ds = three_class_dataset();
    CHECK_THROWS_AS(dataio::make_ood_split(ds, ds, 11), LabelAbsent);
}

TEST_CASE("synth_blobs is deterministic per seed") {
    const Dataset a = dataio::synth_blobs(4, 6, 25, 3.0, 77);
    const Dataset b = dataio::synth_blobs(4, 6, 25, 3.0, 77);
    const Dataset c = dataio::synth_blobs(4, 6, 25, 3.0, 78);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("synth_blobs output lies in the unit cube") {
    const Dataset ds = dataio::synth_blobs(3, 4, 50, 5.0, 1);
    REQUIRE(ds.size() == 150);
    for (double v : ds.features.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (int l : ds.labels) CHECK(l < 3);
}

TEST_CASE("synth_blobs rejects bad parameters") {
    CHECK_THROWS_AS(dataio::synth_blobs(3, 4, 0, 5.0, 1), BadParameter);
    CHECK_THROWS_AS(dataio::synth_blobs(1, 4, 5, 5.0, 1), BadParameter);
    CHECK_THROWS_AS(dataio::synth_blobs(3, 0, 5, 5.0, 1), BadParameter);
}

TEST_CASE("well-separated blobs train to near-perfect accuracy") {
    const Dataset all = dataio::synth_blobs(2, 8, 120, 10.0, 21);
    const auto [train, test] = dataio::split_train_test(all, 20);
    nn::Network net = nn::init_network(8, {{16, nn::Activation::relu, 0.0}}, 2, 3);
    nn::TrainConfig hp;
    hp.batch_size = 32;
    hp.max_epochs = 60;
    hp.early_stop_accuracy = 1.0;
    hp.seed = 3;
    nn::train(net, train, hp);
    CHECK(nn::accuracy(net, test) >= 0.99);
}

TEST_CASE("split_train_test splits per class on shared scaling") {
    const Dataset all = dataio::synth_blobs(3, 4, 30, 4.0, 5);
    const auto [train, test] = dataio::split_train_test(all, 10);
    CHECK(train.size() == 60);
    CHECK(test.size() == 30);
    std::vector<int> train_counts(3, 0);
    std::vector<int> test_counts(3, 0);
    for (int l : train.labels) ++train_counts[static_cast<std::size_t>(l)];
    for (int l : test.labels) ++test_counts[static_cast<std::size_t>(l)];
    for (int k = 0; k < 3; ++k) {
        CHECK(train_counts[static_cast<std::size_t>(k)] == 20);
        CHECK(test_counts[static_cast<std::size_t>(k)] == 10);
    }
}

} // TEST_SUITE
