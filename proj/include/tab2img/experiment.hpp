#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tab2img/dataset.hpp"
#include "tab2img/metrics.hpp"
#include "tab2img/nn.hpp"
#include "tab2img/ordering.hpp"
#include "tab2img/transform.hpp"

namespace tab2img::cli {

enum class OrderingMode { none, ga, file };

// Everything a pipeline run needs. Defaults reproduce the reference protocol:
// bar-graph transform at px1, stratified 64/16/20 splits, lr 0.02, momentum
// 0.88, L2 9.4e-7, batch 8, 1000 iterations, 30 attempts.
struct ExperimentConfig {
    std::string dataset_path;
    std::string dataset_name;  // defaults to the file stem
    std::string out_dir = "out";

    ingest::IngestConfig ingest;
    OrderingMode ordering = OrderingMode::none;
    std::string ordering_file;
    bool raw_covariance = false;  // rank fields on unnormalized covariance

    transform::TransformSpec transform;
    nn::NetworkSpec network;
    nn::TrainConfig train;
    ordering::GAConfig ga;

    bool fixed_split = false;  // reuse the manifest split for every attempt
    int workers = 1;           // concurrent attempts
    int threads = 0;           // compute threads total; 0 = hardware

    std::string name() const;
};

// Output locations inside out_dir.
std::string dataset_manifest_path(const ExperimentConfig&);
std::string image_manifest_path(const ExperimentConfig&);
std::string ordering_path(const ExperimentConfig&);
std::string ordering_trace_path(const ExperimentConfig&);
std::string report_rows_path(const ExperimentConfig&);
std::string report_path(const ExperimentConfig&);

struct ImageManifestRow {
    std::string path;  // relative to out_dir
    std::size_t record = 0;
    int label = 0;
    ingest::Split split = ingest::Split::train;
    int transform_kind = 1;
    int px_scale = 1;
};

void write_image_manifest(const std::string& path, std::span<const ImageManifestRow> rows);
std::vector<ImageManifestRow> read_image_manifest(const std::string& path);

// Subcommands. All validate their inputs before writing anything and throw
// ValidationError / RuntimeError on failure.
void cmd_ingest(const ExperimentConfig& config);
void cmd_transform(const ExperimentConfig& config);
void cmd_order(const ExperimentConfig& config);
void cmd_train(const ExperimentConfig& config);
void cmd_report(const ExperimentConfig& config);

// Aggregation behind cmd_report, exposed for tests.
struct AggregateCell {
    std::string dataset;
    int transform_kind = 1;
    int px_scale = 1;
    int attempts = 0;
    int diverged = 0;
    std::optional<double> best_val, mean_val, best_test, mean_test;
    std::optional<double> mean_sensitivity, mean_specificity, mean_f1;
    double mean_seconds = 0.0;
};

std::vector<AggregateCell> aggregate(std::span<const metrics::ReportRow> rows);
std::string render_report(std::span<const AggregateCell> cells);

// Loads the image manifest plus every image it references.
nn::ImageSet<float> load_images(const ExperimentConfig& config,
                                std::span<const ImageManifestRow> rows);

}  // namespace tab2img::cli
