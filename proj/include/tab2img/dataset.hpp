#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tab2img::ingest {

enum class Split : std::uint8_t { train, validation, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

enum class Imputation { drop_row, column_mean };

enum class Layout {
    wbc,      // id, 9 integer features, class in {2,4}
    wdbc,     // id, diagnosis in {M,B}, 30 real features
    generic,  // numeric columns plus a label column with values {0,1}
};

struct IngestConfig {
    Layout layout = Layout::generic;
    std::optional<int> id_column;  // dropped from the feature set when present
    int label_column = -1;         // -1 means last column
    std::string missing_token = "?";
    Imputation imputation = Imputation::drop_row;
    std::uint64_t seed = 1;
    bool stratified = true;

    static IngestConfig wbc();
    static IngestConfig wdbc();
};

// One loaded table. Features are row-major N x d doubles; labels are
// 0 = benign, 1 = malignant. split_tags stays empty until split() runs.
struct TabularDataset {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> features;  // n * d, row-major
    std::vector<int> labels;
    std::vector<std::string> feature_names;
    std::vector<Split> split_tags;
    bool normalized = false;

    // imputation provenance
    std::vector<std::size_t> dropped_rows;  // input line numbers removed by drop_row
    std::vector<std::pair<std::size_t, std::size_t>> imputed_cells;  // (row, col)

    double at(std::size_t row, std::size_t col) const { return features[row * d + col]; }
    double& at(std::size_t row, std::size_t col) { return features[row * d + col]; }
    std::span<const double> record(std::size_t row) const {
        return {features.data() + row * d, d};
    }
    std::size_t count(Split s) const;
};

// Parses the file and applies the configured imputation. Feature values are
// left unscaled; call normalize() afterwards.
TabularDataset load_csv(const std::string& path, const IngestConfig& config);

// Per-column min-max scaling to [0,1]. Constant columns map to all zeros.
TabularDataset normalize(TabularDataset dataset);

// Assigns split tags: |test| = round(0.20 n), |validation| = round(0.20 of the
// rest), remainder train. Stratified assignment uses largest-remainder quotas
// per class so each split tracks the global class ratio within one record.
TabularDataset split(TabularDataset dataset, std::uint64_t seed, bool stratified = true);

// Split tags alone, for re-splitting the same records under a new seed.
std::vector<Split> split_tags_for(std::span<const int> labels, std::uint64_t seed,
                                  bool stratified = true);

struct ManifestRow {
    std::size_t record = 0;
    int label = 0;
    Split split = Split::train;
};

void write_manifest(const TabularDataset& dataset, const std::string& path);
std::vector<ManifestRow> read_manifest(const std::string& path);

}  // namespace tab2img::ingest
