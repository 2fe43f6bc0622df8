#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tab2img/errors.hpp"
#include "tab2img/experiment.hpp"

namespace {

using tab2img::cli::ExperimentConfig;
using tab2img::cli::OrderingMode;

// Staging area for options that need post-parse interpretation.
struct CliState {
    ExperimentConfig config;
    std::string layout = "generic";
    std::string ordering = "none";
    std::string imputation = "drop_row";
    std::string distance_mode = "signed";
    int transform_kind = 1;

    void finish() {
        using tab2img::ingest::IngestConfig;
        using tab2img::ingest::Imputation;
        if (layout == "wbc") {
            config.ingest.layout = tab2img::ingest::Layout::wbc;
            config.ingest.id_column = IngestConfig::wbc().id_column;
            config.ingest.label_column = IngestConfig::wbc().label_column;
        } else if (layout == "wdbc") {
            config.ingest.layout = tab2img::ingest::Layout::wdbc;
            config.ingest.id_column = IngestConfig::wdbc().id_column;
            config.ingest.label_column = IngestConfig::wdbc().label_column;
        }
        config.ingest.imputation =
            imputation == "column_mean" ? Imputation::column_mean : Imputation::drop_row;
        config.ingest.seed = config.train.seed;
        config.ga.seed = config.train.seed;

        auto spec = tab2img::transform::TransformSpec::make(
            static_cast<tab2img::transform::Kind>(transform_kind), config.transform.px_scale);
        spec.distance_mode = distance_mode == "absolute"
                                 ? tab2img::transform::DistanceMode::absolute_diff
                                 : tab2img::transform::DistanceMode::signed_diff;
        config.transform = spec;

        if (ordering == "none") {
            config.ordering = OrderingMode::none;
        } else if (ordering == "ga") {
            config.ordering = OrderingMode::ga;
        } else {
            config.ordering = OrderingMode::file;
            config.ordering_file = ordering;
        }
    }
};

void add_common_options(CLI::App* cmd, CliState& state) {
    auto& config = state.config;
    cmd->set_config("--config");
    cmd->add_option("--dataset", config.dataset_path, "Input CSV file");
    cmd->add_option("--name", config.dataset_name, "Dataset name used in reports");
    cmd->add_option("--out", config.out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--layout", state.layout, "Input layout: wbc, wdbc or generic")
        ->check(CLI::IsMember({"wbc", "wdbc", "generic"}))
        ->capture_default_str();
    cmd->add_option("--imputation", state.imputation,
                    "Missing values: drop_row or column_mean")
        ->check(CLI::IsMember({"drop_row", "column_mean"}))
        ->capture_default_str();
    cmd->add_option("--label-column", config.ingest.label_column,
                    "Label column for the generic layout (-1 = last)");
    cmd->add_flag("--stratify,!--no-stratify", config.ingest.stratified,
                  "Stratified splitting (default on)");

    cmd->add_option("--transform", state.transform_kind, "Transform type: 1, 2 or 3")
        ->check(CLI::IsMember({1, 2, 3}))
        ->capture_default_str();
    cmd->add_option("--px", config.transform.px_scale, "Pixel scale: 1, 2 or 4")
        ->check(CLI::IsMember({1, 2, 4}))
        ->capture_default_str();
    cmd->add_option("--distance-mode", state.distance_mode,
                    "Distance matrix entries: signed or absolute")
        ->check(CLI::IsMember({"signed", "absolute"}))
        ->capture_default_str();

    cmd->add_option("--ordering", state.ordering,
                    "Field ordering: none, ga, or a path to an ordering file")
        ->capture_default_str();

    cmd->add_option("--seed", config.train.seed, "Base RNG seed")->capture_default_str();
    cmd->add_option("--attempts", config.train.attempts, "Independent training attempts")
        ->capture_default_str();
    cmd->add_option("--iterations", config.train.max_iterations, "Mini-batch updates")
        ->capture_default_str();
    cmd->add_option("--batch", config.train.batch, "Mini-batch size")->capture_default_str();
    cmd->add_option("--lr", config.train.learning_rate, "Learning rate")
        ->capture_default_str();
    cmd->add_option("--momentum", config.train.momentum, "SGD momentum")
        ->capture_default_str();
    cmd->add_option("--l2", config.train.l2, "L2 regularization strength")
        ->capture_default_str();
    cmd->add_flag("--fixed-split", config.fixed_split,
                  "Reuse the manifest split for every attempt");
    cmd->add_option("--workers", config.workers, "Concurrent attempts")
        ->capture_default_str();
    cmd->add_option("--threads", config.threads, "Compute threads (0 = hardware)")
        ->capture_default_str();
    cmd->add_flag("--raw-covariance", config.raw_covariance,
                  "Rank fields on unnormalized covariance");
    cmd->add_option("--ga-population", config.ga.population, "GA population size")
        ->capture_default_str();
    cmd->add_option("--ga-generations", config.ga.generations, "GA generations")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"1-D tabular records to 2-D images, plus a small CNN trained on them"};
    app.require_subcommand(1);

    CliState state;
    auto* ingest_cmd = app.add_subcommand("ingest", "Load, clean and split a dataset");
    auto* transform_cmd =
        app.add_subcommand("transform", "Render every record as an image");
    auto* order_cmd = app.add_subcommand("order", "Optimize the field ordering");
    auto* train_cmd = app.add_subcommand("train", "Train over the configured attempts");
    auto* report_cmd = app.add_subcommand("report", "Aggregate per-attempt results");
    for (auto* cmd : {ingest_cmd, transform_cmd, order_cmd, train_cmd, report_cmd}) {
        add_common_options(cmd, state);
    }

    try {
        app.parse(argc, argv);
        state.finish();
        if (ingest_cmd->parsed()) tab2img::cli::cmd_ingest(state.config);
        if (transform_cmd->parsed()) tab2img::cli::cmd_transform(state.config);
        if (order_cmd->parsed()) tab2img::cli::cmd_order(state.config);
        if (train_cmd->parsed()) tab2img::cli::cmd_train(state.config);
        if (report_cmd->parsed()) tab2img::cli::cmd_report(state.config);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const tab2img::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
