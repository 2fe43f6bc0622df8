#include "tab2img/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "tab2img/errors.hpp"
#include "tab2img/rng.hpp"

namespace tab2img::ingest {

namespace {

const std::array<const char*, 9> kWbcFeatureNames = {
    "clump_thickness",      "cell_size_uniformity", "cell_shape_uniformity",
    "marginal_adhesion",    "single_epi_cell_size", "bare_nuclei",
    "bland_chromatin",      "normal_nucleoli",      "mitoses",
};

const std::array<const char*, 10> kWdbcBaseNames = {
    "radius",      "texture",   "perimeter", "area",     "smoothness",
    "compactness", "concavity", "concave_points", "symmetry", "fractal_dimension",
};

std::vector<std::string> wdbc_feature_names() {
    std::vector<std::string> names;
    for (const char* group : {"mean", "se", "worst"}) {
        for (const char* base : kWdbcBaseNames) {
            names.push_back(std::string(base) + "_" + group);
        }
    }
    return names;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_number(const std::string& cell, std::size_t line_no) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    while (ptr != last && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
    if (ec != std::errc() || ptr != last) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": not a number: '" + cell + "'");
    }
    return value;
}

int parse_label(const std::string& cell, Layout layout, std::size_t line_no) {
    std::string token = cell;
    token.erase(std::remove_if(token.begin(), token.end(),
                               [](char c) { return c == ' ' || c == '\r'; }),
                token.end());
    switch (layout) {
        case Layout::wbc:
            if (token == "2") return 0;
            if (token == "4") return 1;
            break;
        case Layout::wdbc:
            if (token == "B") return 0;
            if (token == "M") return 1;
            break;
        case Layout::generic:
            if (token == "0") return 0;
            if (token == "1") return 1;
            break;
    }
    throw ValidationError("line " + std::to_string(line_no) +
                          ": unknown label token '" + token + "'");
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "validation") return Split::validation;
    if (name == "test") return Split::test;
    throw ValidationError("unknown split tag '" + name + "'");
}

IngestConfig IngestConfig::wbc() {
    IngestConfig cfg;
    cfg.layout = Layout::wbc;
    cfg.id_column = 0;
    cfg.label_column = 10;
    return cfg;
}

IngestConfig IngestConfig::wdbc() {
    IngestConfig cfg;
    cfg.layout = Layout::wdbc;
    cfg.id_column = 0;
    cfg.label_column = 1;
    return cfg;
}

std::size_t TabularDataset::count(Split s) const {
    return static_cast<std::size_t>(
        std::count(split_tags.begin(), split_tags.end(), s));
}

TabularDataset load_csv(const std::string& path, const IngestConfig& config) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");

    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    std::vector<std::size_t> line_numbers;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (width == 0) {
            width = cells.size();
        } else if (cells.size() != width) {
            throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(width) + " columns, got " +
                                  std::to_string(cells.size()));
        }
        rows.push_back(std::move(cells));
        line_numbers.push_back(line_no);
    }
    if (rows.empty()) throw ValidationError("'" + path + "': no records");

    int label_col = config.label_column;
    if (label_col < 0) label_col = static_cast<int>(width) - 1;
    if (label_col >= static_cast<int>(width)) {
        throw ValidationError("label column " + std::to_string(label_col) +
                              " out of range for " + std::to_string(width) + " columns");
    }
    if (config.id_column && *config.id_column == label_col) {
        throw ValidationError("label column equals id column");
    }

    std::vector<int> feature_cols;
    for (int c = 0; c < static_cast<int>(width); ++c) {
        if (c == label_col) continue;
        if (config.id_column && c == *config.id_column) continue;
        feature_cols.push_back(c);
    }
    const std::size_t d = feature_cols.size();
    if (d == 0) throw ValidationError("no feature columns left");

    TabularDataset ds;
    ds.d = d;
    constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

    std::vector<bool> row_has_missing(rows.size(), false);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        ds.labels.push_back(parse_label(rows[r][label_col], config.layout, line_numbers[r]));
        for (int c : feature_cols) {
            const std::string& cell = rows[r][c];
            if (cell == config.missing_token) {
                ds.features.push_back(kMissing);
                row_has_missing[r] = true;
            } else {
                ds.features.push_back(parse_number(cell, line_numbers[r]));
            }
        }
    }
    ds.n = rows.size();

    if (config.imputation == Imputation::drop_row) {
        TabularDataset kept;
        kept.d = d;
        for (std::size_t r = 0; r < ds.n; ++r) {
            if (row_has_missing[r]) {
                kept.dropped_rows.push_back(line_numbers[r]);
                continue;
            }
            auto rec = ds.record(r);
            kept.features.insert(kept.features.end(), rec.begin(), rec.end());
            kept.labels.push_back(ds.labels[r]);
        }
        kept.n = kept.labels.size();
        if (kept.n == 0) throw ValidationError("'" + path + "': every record had missing values");
        ds.features = std::move(kept.features);
        ds.labels = std::move(kept.labels);
        ds.n = kept.n;
        ds.dropped_rows = std::move(kept.dropped_rows);
    } else {
        for (std::size_t c = 0; c < d; ++c) {
            double sum = 0.0;
            std::size_t present = 0;
            for (std::size_t r = 0; r < ds.n; ++r) {
                const double v = ds.at(r, c);
                if (!std::isnan(v)) {
                    sum += v;
                    ++present;
                }
            }
            if (present == 0) {
                throw ValidationError("column " + std::to_string(c) + " has no values");
            }
            const double mean = sum / static_cast<double>(present);
            for (std::size_t r = 0; r < ds.n; ++r) {
                if (std::isnan(ds.at(r, c))) {
                    ds.at(r, c) = mean;
                    ds.imputed_cells.emplace_back(r, c);
                }
            }
        }
    }

    switch (config.layout) {
        case Layout::wbc:
            if (d == kWbcFeatureNames.size()) {
                ds.feature_names.assign(kWbcFeatureNames.begin(), kWbcFeatureNames.end());
            }
            break;
        case Layout::wdbc:
            if (d == 30) ds.feature_names = wdbc_feature_names();
            break;
        case Layout::generic:
            break;
    }
    if (ds.feature_names.empty()) {
        for (std::size_t c = 0; c < d; ++c) ds.feature_names.push_back("f" + std::to_string(c + 1));
    }
    return ds;
}

TabularDataset normalize(TabularDataset dataset) {
    for (std::size_t c = 0; c < dataset.d; ++c) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < dataset.n; ++r) {
            lo = std::min(lo, dataset.at(r, c));
            hi = std::max(hi, dataset.at(r, c));
        }
        const double range = hi - lo;
        for (std::size_t r = 0; r < dataset.n; ++r) {
            dataset.at(r, c) = range > 0.0 ? (dataset.at(r, c) - lo) / range : 0.0;
        }
    }
    dataset.normalized = true;
    return dataset;
}

namespace {

// Largest-remainder allocation of `total` slots across class counts.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& class_counts,
                                   std::size_t total) {
    const std::size_t n = std::accumulate(class_counts.begin(), class_counts.end(),
                                          std::size_t{0});
    std::vector<std::size_t> out(class_counts.size(), 0);
    if (n == 0 || total == 0) return out;
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < class_counts.size(); ++k) {
        const double quota = static_cast<double>(class_counts[k]) *
                             static_cast<double>(total) / static_cast<double>(n);
        out[k] = static_cast<std::size_t>(std::floor(quota));
        out[k] = std::min(out[k], class_counts[k]);
        assigned += out[k];
        remainders.emplace_back(quota - std::floor(quota), k);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (const auto& [frac, k] : remainders) {
        if (assigned >= total) break;
        if (out[k] < class_counts[k]) {
            ++out[k];
            ++assigned;
        }
    }
    return out;
}

}  // namespace

std::vector<Split> split_tags_for(std::span<const int> labels, std::uint64_t seed,
                                  bool stratified) {
    const std::size_t n = labels.size();
    if (n < 10) throw ValidationError("need at least 10 records to split");

    std::vector<std::vector<std::size_t>> by_class(2);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    for (const auto& members : by_class) {
        if (members.empty()) throw ValidationError("both classes must be present");
        if (members.size() < 3) {
            throw ValidationError("class with fewer than 3 members cannot be split");
        }
    }

    const auto test_total = static_cast<std::size_t>(std::llround(0.20 * static_cast<double>(n)));
    const auto val_total =
        static_cast<std::size_t>(std::llround(0.20 * static_cast<double>(n - test_total)));

    std::vector<Split> tags(n, Split::train);
    Rng rng(seed);

    if (!stratified) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        for (std::size_t i = 0; i < test_total; ++i) tags[order[i]] = Split::test;
        for (std::size_t i = test_total; i < test_total + val_total; ++i) {
            tags[order[i]] = Split::validation;
        }
        return tags;
    }

    std::vector<std::size_t> counts = {by_class[0].size(), by_class[1].size()};
    const auto test_per_class = apportion(counts, test_total);
    std::vector<std::size_t> remaining = {counts[0] - test_per_class[0],
                                          counts[1] - test_per_class[1]};
    const auto val_per_class = apportion(remaining, val_total);

    for (std::size_t k = 0; k < 2; ++k) {
        auto order = by_class[k];
        rng.shuffle(order);
        std::size_t i = 0;
        for (std::size_t t = 0; t < test_per_class[k]; ++t) tags[order[i++]] = Split::test;
        for (std::size_t v = 0; v < val_per_class[k]; ++v) tags[order[i++]] = Split::validation;
    }
    return tags;
}

TabularDataset split(TabularDataset dataset, std::uint64_t seed, bool stratified) {
    dataset.split_tags = split_tags_for(dataset.labels, seed, stratified);
    return dataset;
}

void write_manifest(const TabularDataset& dataset, const std::string& path) {
    if (dataset.split_tags.size() != dataset.n) {
        throw ValidationError("dataset has no split tags; run split first");
    }
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write '" + path + "'");
    out << "record,label,split\n";
    for (std::size_t i = 0; i < dataset.n; ++i) {
        out << i << ',' << dataset.labels[i] << ',' << split_name(dataset.split_tags[i]) << '\n';
    }
    if (!out) throw RuntimeError("error writing '" + path + "'");
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("manifest '" + path + "' is empty");
    std::vector<ManifestRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != 3) {
            throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 3 fields");
        }
        ManifestRow row;
        row.record = static_cast<std::size_t>(parse_number(cells[0], line_no));
        row.label = static_cast<int>(parse_number(cells[1], line_no));
        row.split = split_from_name(cells[2]);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace tab2img::ingest
