#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tab2img/errors.hpp"
#include "tab2img/experiment.hpp"
#include "tab2img/pnm.hpp"
#include "tab2img/rng.hpp"
#include "test_support.hpp"

using namespace tab2img;
namespace fs = std::filesystem;

namespace {

// A small separable table in the generic layout: class 1 rows sit high on the
// first three fields, class 0 rows sit low, plus two noise fields.
std::string synthetic_csv(Rng& rng, std::size_t per_class) {
    std::ostringstream out;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int cls = static_cast<int>(i % 2);
        for (int f = 0; f < 3; ++f) {
            const double base = cls == 1 ? 0.75 : 0.25;
            out << base + 0.2 * (rng.uniform() - 0.5) << ',';
        }
        out << rng.uniform() << ',' << rng.uniform() << ',' << cls << '\n';
    }
    return out.str();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

cli::ExperimentConfig small_config(const fs::path& dir, const std::string& csv_path) {
    cli::ExperimentConfig config;
    config.dataset_path = csv_path;
    config.dataset_name = "synthetic";
    config.out_dir = (dir / "out").string();
    config.transform = transform::TransformSpec::make(transform::Kind::combined, 1);
    config.train.seed = 9;
    config.ingest.seed = 9;
    config.train.attempts = 2;
    config.train.max_iterations = 24;
    config.train.eval_every = 8;
    config.train.batch = 8;
    config.workers = 1;
    config.threads = 2;
    return config;
}

}  // namespace

TEST_CASE("the full pipeline runs end to end on a synthetic table") {
    const auto dir = testsup::fresh_dir("pipeline");
    Rng rng(1234);
    const auto csv = testsup::write_file(dir / "synthetic.csv", synthetic_csv(rng, 30));
    auto config = small_config(dir, csv);

    cli::cmd_ingest(config);
    CHECK(fs::exists(cli::dataset_manifest_path(config)));

    cli::cmd_transform(config);
    const auto manifest = cli::read_image_manifest(cli::image_manifest_path(config));
    CHECK(manifest.size() == 60);
    for (const auto& row : manifest) {
        CHECK(fs::exists(fs::path(config.out_dir) / row.path));
    }
    // d=5 at px1: side = 5 + 2*6 = 17
    const auto probe = pnm::read((fs::path(config.out_dir) / manifest[0].path).string());
    CHECK(probe.height == 17);
    CHECK(probe.width == 17);
    CHECK(probe.channels == 3);

    cli::cmd_order(config);  // ordering none emits the identity
    std::ifstream order_file(cli::ordering_path(config));
    std::string line;
    std::getline(order_file, line);
    CHECK(line == "1,2,3,4,5");

    cli::cmd_train(config);
    const auto rows = metrics::read_rows(cli::report_rows_path(config));
    CHECK(rows.size() == 4);  // two attempts, validation + test each
    CHECK(fs::exists(fs::path(config.out_dir) / "checkpoints" / "attempt_000.ckpt"));
    CHECK(fs::exists(fs::path(config.out_dir) / "checkpoints" / "attempt_001.ckpt"));
    CHECK(fs::exists(fs::path(config.out_dir) / "traces" / "attempt_001.txt"));

    cli::cmd_report(config);
    CHECK(fs::exists(cli::report_path(config)));

    const auto cells = cli::aggregate(rows);
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].attempts == 2);
    CHECK(cells[0].dataset == "synthetic");
    REQUIRE(cells[0].mean_test.has_value());
    REQUIRE(cells[0].best_test.has_value());
    CHECK(*cells[0].best_test >= *cells[0].mean_test);
    REQUIRE(cells[0].mean_val.has_value());
    CHECK(*cells[0].best_val >= *cells[0].mean_val);
}

TEST_CASE("ingest and transform rerun to identical bytes") {
    const auto dir = testsup::fresh_dir("pipeline_det");
    Rng rng(4321);
    const auto csv = testsup::write_file(dir / "synthetic.csv", synthetic_csv(rng, 20));
    auto config = small_config(dir, csv);

    cli::cmd_ingest(config);
    cli::cmd_transform(config);
    const auto manifest1 = read_file(cli::dataset_manifest_path(config));
    const auto images1 = read_file(fs::path(config.out_dir) / "images" / "rec00003_t3_px1.ppm");

    config.out_dir = (dir / "out2").string();
    cli::cmd_ingest(config);
    cli::cmd_transform(config);
    CHECK(read_file(cli::dataset_manifest_path(config)) == manifest1);
    CHECK(read_file(fs::path(config.out_dir) / "images" / "rec00003_t3_px1.ppm") == images1);
}

TEST_CASE("ga ordering feeds the transform stage") {
    const auto dir = testsup::fresh_dir("pipeline_ga");
    Rng rng(555);
    const auto csv = testsup::write_file(dir / "synthetic.csv", synthetic_csv(rng, 20));
    auto config = small_config(dir, csv);
    config.ordering = cli::OrderingMode::ga;
    config.ga.population = 20;
    config.ga.generations = 30;

    cli::cmd_ingest(config);
    cli::cmd_order(config);
    CHECK(fs::exists(cli::ordering_path(config)));
    CHECK(fs::exists(cli::ordering_trace_path(config)));
    const auto perm = ordering::read_ordering(cli::ordering_path(config));
    CHECK(perm.size() == 5);

    // the trace is non-increasing
    std::ifstream trace(cli::ordering_trace_path(config));
    long long prev = -1, gen = 0, cost = 0;
    bool first = true;
    while (trace >> gen >> cost) {
        if (!first) CHECK(cost <= prev);
        prev = cost;
        first = false;
    }

    config.ordering = cli::OrderingMode::file;
    config.ordering_file = cli::ordering_path(config);
    cli::cmd_transform(config);
    CHECK(cli::read_image_manifest(cli::image_manifest_path(config)).size() == 40);
}

TEST_CASE("a wbc-layout table runs the full type-3 protocol") {
    // same configuration shape as the reference wbc run: id column, integer
    // features 1..10, labels 2/4, a few missing cells
    const auto dir = testsup::fresh_dir("pipeline_wbc");
    Rng rng(31337);
    std::ostringstream csv;
    for (int i = 0; i < 80; ++i) {
        const int cls = i % 2;
        csv << 1000 + i;
        for (int f = 0; f < 9; ++f) {
            const bool missing = rng.uniform() < 0.02;
            if (missing) {
                csv << ",?";
                continue;
            }
            const double base = cls == 1 ? 7.0 : 3.0;
            const int v = std::clamp(static_cast<int>(base + 3.0 * (rng.uniform() - 0.5)), 1, 10);
            csv << ',' << v;
        }
        csv << ',' << (cls == 1 ? 4 : 2) << '\n';
    }
    const auto path = testsup::write_file(dir / "wbc_like.data", csv.str());

    cli::ExperimentConfig config;
    config.dataset_path = path;
    config.dataset_name = "wbc_like";
    config.out_dir = (dir / "out").string();
    config.ingest = ingest::IngestConfig::wbc();
    config.ingest.seed = 2;
    config.transform = transform::TransformSpec::make(transform::Kind::combined, 1);
    config.train.seed = 2;
    config.train.attempts = 2;
    config.train.max_iterations = 60;
    config.train.eval_every = 20;
    config.workers = 2;  // exercise concurrent attempts
    config.threads = 2;

    cli::cmd_ingest(config);
    cli::cmd_transform(config);
    cli::cmd_train(config);
    cli::cmd_report(config);

    const auto manifest = cli::read_image_manifest(cli::image_manifest_path(config));
    const auto probe = pnm::read((fs::path(config.out_dir) / manifest[0].path).string());
    CHECK(probe.height == 29);  // d=9 at px1
    CHECK(probe.channels == 3);

    const auto cells = cli::aggregate(metrics::read_rows(cli::report_rows_path(config)));
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].attempts == 2);
    CHECK(cells[0].diverged == 0);
    REQUIRE(cells[0].mean_test.has_value());
    CHECK(*cells[0].mean_test > 0.7);  // cleanly separable synthetic classes
}

TEST_CASE("aggregation takes the best and the mean over attempts") {
    std::vector<metrics::ReportRow> rows(2);
    for (int a = 0; a < 2; ++a) {
        rows[a].dataset = "demo";
        rows[a].report.attempt = a;
        rows[a].report.split = "test";
    }
    rows[0].report.accuracy = 0.90;
    rows[1].report.accuracy = 1.00;

    const auto cells = cli::aggregate(rows);
    REQUIRE(cells.size() == 1);
    CHECK(*cells[0].best_test == doctest::Approx(1.00));
    CHECK(*cells[0].mean_test == doctest::Approx(0.95));

    const auto single = cli::aggregate(std::span<const metrics::ReportRow>(rows.data(), 1));
    CHECK(*single[0].best_test == *single[0].mean_test);
}

TEST_CASE("diverged attempts are marked and do not stop the run") {
    const auto dir = testsup::fresh_dir("pipeline_div");
    Rng rng(91);
    const auto csv = testsup::write_file(dir / "synthetic.csv", synthetic_csv(rng, 20));
    auto config = small_config(dir, csv);
    config.train.learning_rate = 1e20;
    config.train.attempts = 2;

    cli::cmd_ingest(config);
    cli::cmd_transform(config);
    cli::cmd_train(config);

    const auto rows = metrics::read_rows(cli::report_rows_path(config));
    REQUIRE(rows.size() == 4);
    for (const auto& row : rows) {
        CHECK(row.diverged);
        CHECK(!row.report.accuracy.has_value());
    }
    CHECK(!fs::exists(fs::path(config.out_dir) / "checkpoints" / "attempt_000.ckpt"));

    const auto cells = cli::aggregate(rows);
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].attempts == 2);
    CHECK(cells[0].diverged == 2);
    CHECK(!cells[0].mean_test.has_value());
    CHECK(cli::render_report(cells).find("div") != std::string::npos);
}

TEST_CASE("subcommands validate inputs before writing") {
    const auto dir = testsup::fresh_dir("pipeline_errors");
    Rng rng(777);
    auto config = small_config(dir, (dir / "missing.csv").string());

    CHECK_THROWS_AS(cli::cmd_ingest(config), ValidationError);
    CHECK_THROWS_AS(cli::cmd_transform(config), ValidationError);
    CHECK_THROWS_AS(cli::cmd_train(config), ValidationError);
    CHECK_THROWS_AS(cli::cmd_report(config), ValidationError);
    CHECK(!fs::exists(config.out_dir));  // nothing was created

    const auto csv = testsup::write_file(dir / "synthetic.csv", synthetic_csv(rng, 20));
    config.dataset_path = csv;
    cli::cmd_ingest(config);

    // explicit ordering of the wrong length fails before any image is written
    config.ordering = cli::OrderingMode::file;
    config.ordering_file = testsup::write_file(dir / "bad_order.csv", "1,2\n");
    CHECK_THROWS_AS(cli::cmd_transform(config), ValidationError);
    CHECK(!fs::exists(cli::image_manifest_path(config)));
}
