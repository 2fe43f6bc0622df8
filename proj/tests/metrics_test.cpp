#include <doctest.h>

#include <cmath>
#include <vector>

#include "tab2img/errors.hpp"
#include "tab2img/metrics.hpp"
#include "tab2img/rng.hpp"
#include "test_support.hpp"

using namespace tab2img;
using metrics::ConfusionMatrix;

TEST_CASE("confusion counts with malignant positive") {
    const std::vector<int> labels = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1};

    SUBCASE("perfect predictions") {
        const auto cm = metrics::confusion(labels, labels);
        CHECK(cm.tp == 4);
        CHECK(cm.tn == 6);
        CHECK(cm.fp == 0);
        CHECK(cm.fn == 0);
    }
    SUBCASE("an all-benign predictor misses every positive") {
        const std::vector<int> all_benign(10, 0);
        const auto cm = metrics::confusion(all_benign, labels);
        CHECK(cm.tp == 0);
        CHECK(cm.fn == 4);
        CHECK(cm.tn == 6);
        CHECK(cm.fp == 0);
    }
    SUBCASE("flipping predictions swaps tp/fn and tn/fp") {
        Rng rng(3);
        std::vector<int> preds(10);
        for (int& p : preds) p = rng.uniform() < 0.5 ? 1 : 0;
        std::vector<int> flipped(10);
        for (std::size_t i = 0; i < 10; ++i) flipped[i] = 1 - preds[i];
        const auto a = metrics::confusion(preds, labels);
        const auto b = metrics::confusion(flipped, labels);
        CHECK(a.tp == b.fn);
        CHECK(a.fn == b.tp);
        CHECK(a.tn == b.fp);
        CHECK(a.fp == b.tn);
    }
    SUBCASE("input validation") {
        CHECK_THROWS_AS(metrics::confusion(std::vector<int>{}, std::vector<int>{}),
                        ValidationError);
        CHECK_THROWS_AS(metrics::confusion(std::vector<int>{0}, std::vector<int>{0, 1}),
                        ValidationError);
        CHECK_THROWS_AS(metrics::confusion(std::vector<int>{0}, std::vector<int>{2}),
                        ValidationError);
    }
}

TEST_CASE("scores from the confusion matrix") {
    SUBCASE("perfect classifier scores 1 everywhere") {
        const auto r = metrics::scores({4, 0, 6, 0});
        CHECK(*r.accuracy == 1.0);
        CHECK(*r.sensitivity == 1.0);
        CHECK(*r.specificity == 1.0);
        CHECK(*r.f1 == 1.0);
    }
    SUBCASE("worked example") {
        ConfusionMatrix cm;
        cm.tp = 50;
        cm.fn = 50;
        cm.tn = 90;
        cm.fp = 10;
        const auto r = metrics::scores(cm);
        CHECK(*r.sensitivity == doctest::Approx(0.5));
        CHECK(*r.specificity == doctest::Approx(0.9));
        CHECK(*r.accuracy == doctest::Approx(0.7));
    }
    SUBCASE("matches the published best-sensitivity row shape") {
        // one benign test record misclassified, every malignant one caught
        ConfusionMatrix cm;
        cm.tp = 48;
        cm.fn = 0;
        cm.tn = 91;
        cm.fp = 1;
        const auto r = metrics::scores(cm);
        CHECK(std::round(*r.sensitivity * 100) / 100 == 1.00);
        CHECK(std::round(*r.specificity * 100) / 100 == 0.99);
        CHECK(std::round(*r.f1 * 100) / 100 == 0.99);
    }
}

TEST_CASE("zero denominators leave scores undefined") {
    ConfusionMatrix no_positives;
    no_positives.tn = 5;
    no_positives.fp = 1;
    const auto r = metrics::scores(no_positives);
    CHECK(!r.sensitivity.has_value());  // tp + fn = 0
    CHECK(r.precision == 0.0);          // tp / (tp + fp) is still defined
    CHECK(!r.f1.has_value());           // needs sensitivity
    CHECK(r.specificity.has_value());
    CHECK(r.accuracy.has_value());

    ConfusionMatrix never_flagged;
    never_flagged.tn = 4;
    never_flagged.fn = 2;
    const auto r2 = metrics::scores(never_flagged);
    CHECK(!r2.precision.has_value());  // tp + fp = 0
    CHECK(r2.sensitivity == 0.0);

    CHECK_THROWS_AS(metrics::scores(ConfusionMatrix{}), ValidationError);
}

TEST_CASE("accuracy decomposes over sensitivity and specificity") {
    Rng rng(5);
    for (int round = 0; round < 30; ++round) {
        ConfusionMatrix cm;
        cm.tp = 1 + static_cast<long long>(rng.uniform_index(50));
        cm.fn = 1 + static_cast<long long>(rng.uniform_index(50));
        cm.tn = 1 + static_cast<long long>(rng.uniform_index(50));
        cm.fp = 1 + static_cast<long long>(rng.uniform_index(50));
        const auto r = metrics::scores(cm);
        const double p = static_cast<double>(cm.tp + cm.fn);
        const double n = static_cast<double>(cm.tn + cm.fp);
        CHECK(*r.accuracy ==
              doctest::Approx((*r.sensitivity * p + *r.specificity * n) / (p + n))
                  .epsilon(1e-12));

        // f1 ignores true negatives
        ConfusionMatrix moved = cm;
        moved.tn += 17;
        CHECK(*metrics::scores(moved).f1 == doctest::Approx(*r.f1).epsilon(1e-12));

        // uniform duplication changes nothing
        ConfusionMatrix doubled{cm.tp * 3, cm.fp * 3, cm.tn * 3, cm.fn * 3};
        const auto rd = metrics::scores(doubled);
        CHECK(*rd.accuracy == doctest::Approx(*r.accuracy).epsilon(1e-12));
        CHECK(*rd.sensitivity == doctest::Approx(*r.sensitivity).epsilon(1e-12));
        CHECK(*rd.specificity == doctest::Approx(*r.specificity).epsilon(1e-12));
        CHECK(*rd.f1 == doctest::Approx(*r.f1).epsilon(1e-12));
    }
}

TEST_CASE("report rows serialize undefined scores explicitly") {
    metrics::ReportRow row;
    row.dataset = "demo";
    row.transform_kind = 3;
    row.px_scale = 2;
    row.report.attempt = 7;
    row.report.split = "test";
    row.report.accuracy = 0.9625;
    row.report.seconds = 12.5;
    // sensitivity etc. left undefined

    const auto text = metrics::format_row(row);
    CHECK(text.find("undefined") != std::string::npos);
    CHECK(text.find("0.962500") != std::string::npos);

    const auto parsed = metrics::parse_row(text);
    CHECK(parsed.dataset == "demo");
    CHECK(parsed.transform_kind == 3);
    CHECK(parsed.px_scale == 2);
    CHECK(parsed.report.attempt == 7);
    CHECK(*parsed.report.accuracy == doctest::Approx(0.9625));
    CHECK(!parsed.report.sensitivity.has_value());
    CHECK(!parsed.diverged);
}

TEST_CASE("row files round-trip") {
    const auto dir = testsup::fresh_dir("rows");
    std::vector<metrics::ReportRow> rows(2);
    rows[0].dataset = "a";
    rows[0].report.split = "validation";
    rows[0].report.accuracy = 0.5;
    rows[1].dataset = "a";
    rows[1].report.split = "test";
    rows[1].diverged = true;

    const auto path = (dir / "rows.csv").string();
    metrics::write_rows(path, rows);
    const auto back = metrics::read_rows(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].report.split == "validation");
    CHECK(*back[0].report.accuracy == doctest::Approx(0.5));
    CHECK(back[1].diverged);
}
