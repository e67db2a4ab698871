#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "latentuq/evalharness.hpp"

using namespace luq;
using eval::Group;
using eval::Metrics;
using eval::ScoredSample;
using eval::ScoredSet;

namespace {

ScoredSet spec_example_set() {
    ScoredSet s;
    // well-classified: confidences 1, 1, 0.6, 0.3
    s.push_back({0, 0, 1.0, Group::in_distribution});
    s.push_back({1, 1, 1.0, Group::in_distribution});
    s.push_back({2, 2, 0.6, Group::in_distribution});
    s.push_back({0, 0, 0.3, Group::in_distribution});
    // misclassified: 0.2, 0.9
    s.push_back({0, 1, 0.2, Group::in_distribution});
    s.push_back({1, 0, 0.9, Group::in_distribution});
    // out-of-distribution: 0.1, 0.4, 0.99
    s.push_back({9, 0, 0.1, Group::ood});
    s.push_back({9, 1, 0.4, Group::ood});
    s.push_back({9, 0, 0.99, Group::ood});
    return s;
}

ScoredSet random_set(std::mt19937_64& gen, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ScoredSet s;
    for (std::size_t i = 0; i < n; ++i) {
        ScoredSample sample;
        sample.true_label = static_cast<int>(gen() % 4);
        sample.predicted_label = static_cast<int>(gen() % 4);
        sample.confidence = u(gen);
        sample.group = gen() % 3 == 0 ? Group::ood : Group::in_distribution;
        s.push_back(sample);
    }
    return s;
}

cli::RunConfig smoke_config() {
    cli::RunConfig cfg;
    cfg.data.source = "synthetic";
    cfg.data.classes = 3;
    cfg.data.dim = 5;
    cfg.data.train_per_class = 60;
    cfg.data.test_per_class = 20;
    cfg.data.separation = 8.0;
    cfg.data.seed = 5;
    cfg.network.hidden_widths = {12, 8};
    cfg.network.dropout = 0.2;
    cfg.training.batch_size = 32;
    cfg.training.max_epochs = 40;
    cfg.training.early_stop_accuracy = 0.95;
    cfg.training.seed = 9;
    cfg.inference.alphas = {3.0, 0.1};
    cfg.inference.betas = {90.0, 50.0};
    cfg.mc_dropout.enabled = true;
    cfg.mc_dropout.passes = 25;
    cfg.mc_dropout.seed = 21;
    cfg.ensemble.enabled = true;
    cfg.ensemble.members = 3;
    cfg.ensemble.base_seed = 31;
    cfg.run.workers = 2;
    return cfg;
}

} // namespace

TEST_SUITE("evalharness") {

TEST_CASE("evaluate reproduces the three textbook rates") {
    const Metrics m = eval::evaluate(spec_example_set(), 0.5);
    CHECK(m.tp.rate() == doctest::Approx(3.0 / 4.0));
    CHECK(m.tn.rate() == doctest::Approx(1.0 / 2.0));
    CHECK(m.tn_ood.rate() == doctest::Approx(2.0 / 3.0));
    CHECK(m.tp.total == 4);
    CHECK(m.tn.total == 2);
    CHECK(m.tn_ood.total == 3);
}

TEST_CASE("evaluate reports empty groups as absent") {
    ScoredSet s;
    s.push_back({0, 0, 0.8, Group::in_distribution}); // only well-classified
    const Metrics m = eval::evaluate(s, 0.5);
    CHECK(m.tp.present());
    CHECK(!m.tn.present());
    CHECK(!m.tn_ood.present());
    CHECK(!m.tn.rate().has_value());
}

TEST_CASE("evaluate at the threshold extremes") {
    const ScoredSet s = spec_example_set();
    const Metrics at_zero = eval::evaluate(s, 0.0);
    CHECK(at_zero.tp.rate() == 1.0);
    CHECK(at_zero.tn.rate() == 0.0);
    CHECK(at_zero.tn_ood.rate() == 0.0);

    ScoredSet capped = s;
    for (ScoredSample& sample : capped) sample.confidence *= 0.9; // keep everything below 0.95
    const Metrics above_all = eval::evaluate(capped, 0.95);
    CHECK(above_all.tp.rate() == 0.0);
    CHECK(above_all.tn.rate() == 1.0);
    CHECK(above_all.tn_ood.rate() == 1.0);
}

TEST_CASE("evaluate rejects an empty set") {
    CHECK_THROWS_AS(eval::evaluate(ScoredSet{}, 0.5), EmptyInput);
}

TEST_CASE("raising the threshold never raises TP nor lowers TN") {
    std::mt19937_64 gen(2718);
    for (int rep = 0; rep < 5; ++rep) {
        const ScoredSet s = random_set(gen, 300);
        double prev_tp = 1.0;
        double prev_tn = 0.0;
        double prev_ood = 0.0;
        for (int t = 0; t <= 100; ++t) {
            const Metrics m = eval::evaluate(s, static_cast<double>(t) / 100.0);
            CHECK(*m.tp.rate() <= prev_tp);
            CHECK(*m.tn.rate() >= prev_tn);
            CHECK(*m.tn_ood.rate() >= prev_ood);
            prev_tp = *m.tp.rate();
            prev_tn = *m.tn.rate();
            prev_ood = *m.tn_ood.rate();
        }
    }
}

TEST_CASE("histogram conserves every series") {
    std::mt19937_64 gen(11);
    const ScoredSet s = random_set(gen, 500);
    const Metrics m = eval::evaluate(s, 0.5);
    const eval::Histogram hist = eval::export_histogram(s, 13);
    std::size_t well = 0;
    std::size_t mis = 0;
    std::size_t ood = 0;
    for (std::size_t b = 0; b < 13; ++b) {
        well += hist.well_classified[b];
        mis += hist.misclassified[b];
        ood += hist.ood[b];
    }
    // re-summation reproduces evaluate's group counts exactly
    CHECK(well == m.tp.total);
    CHECK(mis == m.tn.total);
    CHECK(ood == m.tn_ood.total);
}

TEST_CASE("zero confidences collapse into the first bin") {
    ScoredSet s;
    for (int i = 0; i < 7; ++i) s.push_back({0, 0, 0.0, Group::in_distribution});
    const eval::Histogram hist = eval::export_histogram(s, 10);
    CHECK(hist.well_classified[0] == 7);
    for (std::size_t b = 1; b < 10; ++b) CHECK(hist.well_classified[b] == 0);
}

TEST_CASE("a single bin holds everything") {
    std::mt19937_64 gen(13);
    const ScoredSet s = random_set(gen, 64);
    const eval::Histogram hist = eval::export_histogram(s, 1);
    CHECK(hist.well_classified[0] + hist.misclassified[0] + hist.ood[0] == 64);
    CHECK(hist.bin_low[0] == 0.0);
    CHECK(hist.bin_high[0] == 1.0);
}

TEST_CASE("the final bin is right-closed") {
    ScoredSet s;
    s.push_back({0, 0, 1.0, Group::in_distribution});
    const eval::Histogram hist = eval::export_histogram(s, 4);
    CHECK(hist.well_classified[3] == 1);
}

TEST_CASE("histogram rejects zero bins") {
    CHECK_THROWS_AS(eval::export_histogram(spec_example_set(), 0), BadParameter);
}

TEST_CASE("architecture strings use the compact hidden-layer notation") {
    CHECK(eval::architecture_string({1024, 1024}) == "2x[1024]");
    CHECK(eval::architecture_string({256, 256, 256, 256}) == "4x[256]");
    CHECK(eval::architecture_string({300, 100}) == "[300-100]");
}

TEST_CASE("scores csv round trips") {
    std::mt19937_64 gen(17);
    const ScoredSet s = random_set(gen, 50);
    std::stringstream csv;
    eval::write_scores_csv(s, csv);
    const ScoredSet back = eval::read_scores_csv(csv);
    CHECK(back == s);
}

TEST_CASE("the smoke experiment is deterministic and worker-invariant") {
    const cli::RunConfig cfg = smoke_config();
    const eval::ExperimentResult a = eval::run_experiment(cfg);
    const eval::ExperimentResult b = eval::run_experiment(cfg);
    CHECK(a.cells == b.cells);

    cli::RunConfig serial = cfg;
    serial.run.workers = 1;
    const eval::ExperimentResult c = eval::run_experiment(serial);
    CHECK(a.cells == c.cells);

    // one cell per percentile pair plus each baseline
    REQUIRE(a.cells.size() == 4);
    CHECK(a.cells[0].descriptor.method == "inference");
    CHECK(a.cells[1].descriptor.method == "inference");
    CHECK(a.cells[2].descriptor.method == "mc_dropout");
    CHECK(a.cells[3].descriptor.method == "ensemble");

    // identical rendering
    std::stringstream csv_a;
    std::stringstream csv_c;
    eval::write_results_csv(a, csv_a);
    eval::write_results_csv(c, csv_c);
    CHECK(csv_a.str() == csv_c.str());
    CHECK(csv_a.str().starts_with("method,architecture,dropout,alpha,beta,threshold,"
                                  "tp_mean,tp_std,tn_mean,tn_std,tnood_mean,tnood_std\n"));
}

TEST_CASE("aggregated means lie within the per-label extremes") {
    const eval::ExperimentResult result = eval::run_experiment(smoke_config());
    for (const eval::CellResult& cell : result.cells) {
        REQUIRE(cell.per_label.size() == 3);
        const auto check_bounds = [&](const eval::Aggregate& agg,
                                      auto rate_of) {
            if (!agg.mean) return;
            double lo = 1.0;
            double hi = 0.0;
            for (const Metrics& m : cell.per_label) {
                const auto r = rate_of(m);
                if (!r) continue;
                lo = std::min(lo, *r);
                hi = std::max(hi, *r);
            }
            CHECK(*agg.mean >= lo - 1e-12);
            CHECK(*agg.mean <= hi + 1e-12);
        };
        check_bounds(cell.tp, [](const Metrics& m) { return m.tp.rate(); });
        check_bounds(cell.tn, [](const Metrics& m) { return m.tn.rate(); });
        check_bounds(cell.tn_ood, [](const Metrics& m) { return m.tn_ood.rate(); });
    }
}

TEST_CASE("pooled scores stay consistent with the per-label metrics") {
    const eval::ExperimentResult result = eval::run_experiment(smoke_config());
    for (const eval::CellResult& cell : result.cells) {
        const Metrics pooled = eval::evaluate(cell.pooled_scores, cell.descriptor.threshold);
        std::size_t tp_total = 0;
        std::size_t tn_total = 0;
        std::size_t ood_total = 0;
        for (const Metrics& m : cell.per_label) {
            tp_total += m.tp.total;
            tn_total += m.tn.total;
            ood_total += m.tn_ood.total;
        }
        CHECK(pooled.tp.total == tp_total);
        CHECK(pooled.tn.total == tn_total);
        CHECK(pooled.tn_ood.total == ood_total);
    }
}

TEST_CASE("an enabled method with no percentile pairs is rejected") {
    cli::RunConfig cfg = smoke_config();
    cfg.inference.alphas.clear();
    cfg.inference.betas.clear();
    CHECK_THROWS_AS(eval::run_experiment(cfg), ValidationError);
}

TEST_CASE("held-out labels outside the class range are rejected") {
    cli::RunConfig cfg = smoke_config();
    cfg.run.held_out_labels = {7};
    CHECK_THROWS_AS(eval::run_experiment(cfg), ValidationError);
}

} // TEST_SUITE
