#include "tab2img/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <tuple>

#include "tab2img/errors.hpp"
#include "tab2img/parallel.hpp"
#include "tab2img/pnm.hpp"

namespace fs = std::filesystem;

namespace tab2img::cli {

std::string ExperimentConfig::name() const {
    if (!dataset_name.empty()) return dataset_name;
    if (!dataset_path.empty()) return fs::path(dataset_path).stem().string();
    return fs::path(out_dir).filename().string();
}

std::string dataset_manifest_path(const ExperimentConfig& c) {
    return (fs::path(c.out_dir) / "dataset_manifest.csv").string();
}
std::string image_manifest_path(const ExperimentConfig& c) {
    return (fs::path(c.out_dir) / "image_manifest.csv").string();
}
std::string ordering_path(const ExperimentConfig& c) {
    return (fs::path(c.out_dir) / "ordering.csv").string();
}
std::string ordering_trace_path(const ExperimentConfig& c) {
    return (fs::path(c.out_dir) / "ordering_trace.txt").string();
}
std::string report_rows_path(const ExperimentConfig& c) {
    return (fs::path(c.out_dir) / "report_rows.csv").string();
}
std::string report_path(const ExperimentConfig& c) {
    return (fs::path(c.out_dir) / "report.txt").string();
}

void write_image_manifest(const std::string& path, std::span<const ImageManifestRow> rows) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write '" + path + "'");
    out << "path,record,label,split,transform,px\n";
    for (const auto& row : rows) {
        out << row.path << ',' << row.record << ',' << row.label << ','
            << ingest::split_name(row.split) << ',' << row.transform_kind << ','
            << row.px_scale << '\n';
    }
    if (!out) throw RuntimeError("error writing '" + path + "'");
}

std::vector<ImageManifestRow> read_image_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open image manifest '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("image manifest '" + path + "' is empty");
    std::vector<ImageManifestRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6) {
            throw ValidationError("image manifest row needs 6 fields: " + line);
        }
        ImageManifestRow row;
        row.path = cells[0];
        row.record = std::stoull(cells[1]);
        row.label = std::stoi(cells[2]);
        row.split = ingest::split_from_name(cells[3]);
        row.transform_kind = std::stoi(cells[4]);
        row.px_scale = std::stoi(cells[5]);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError("image manifest '" + path + "' has no rows");
    return rows;
}

namespace {

int total_threads(const ExperimentConfig& c) {
    if (c.threads > 0) return c.threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

ingest::TabularDataset load_normalized(const ExperimentConfig& c) {
    if (!fs::exists(c.dataset_path)) {
        throw ValidationError("dataset file '" + c.dataset_path + "' does not exist");
    }
    return ingest::normalize(ingest::load_csv(c.dataset_path, c.ingest));
}

std::vector<std::size_t> identity_permutation(std::size_t d) {
    std::vector<std::size_t> perm(d);
    for (std::size_t i = 0; i < d; ++i) perm[i] = i;
    return perm;
}

// The permutation the config asks for; runs the GA when ordering = ga.
std::vector<std::size_t> resolve_ordering(const ExperimentConfig& c,
                                          const ingest::TabularDataset& normalized,
                                          std::vector<long long>* trace_out = nullptr) {
    switch (c.ordering) {
        case OrderingMode::none:
            return identity_permutation(normalized.d);
        case OrderingMode::file: {
            if (!fs::exists(c.ordering_file)) {
                throw ValidationError("ordering file '" + c.ordering_file + "' does not exist");
            }
            auto perm = ordering::read_ordering(c.ordering_file);
            if (perm.size() != normalized.d) {
                throw ValidationError("ordering length " + std::to_string(perm.size()) +
                                      " does not match field count " +
                                      std::to_string(normalized.d));
            }
            return perm;
        }
        case OrderingMode::ga: {
            const auto basis = c.raw_covariance
                                   ? ingest::load_csv(c.dataset_path, c.ingest)
                                   : normalized;
            const auto ranks = ordering::rank_adjacency(basis);
            for (std::size_t f : ranks.zero_variance_fields) {
                std::cerr << "warning: field " << f + 1
                          << " has zero variance; its ranks follow index order\n";
            }
            auto result = ordering::ga_optimize(ranks, c.ga);
            if (trace_out) *trace_out = std::move(result.trace);
            return std::move(result.best.permutation);
        }
    }
    throw ValidationError("unknown ordering mode");
}

std::string image_file_name(std::size_t record, const transform::TransformSpec& spec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "rec%05zu_t%d_px%d.%s", record,
                  static_cast<int>(spec.kind), spec.px_scale,
                  spec.kind == transform::Kind::combined ? "ppm" : "pgm");
    return buf;
}

}  // namespace

void cmd_ingest(const ExperimentConfig& config) {
    auto dataset = load_normalized(config);
    dataset = ingest::split(std::move(dataset), config.ingest.seed, config.ingest.stratified);

    fs::create_directories(config.out_dir);
    ingest::write_manifest(dataset, dataset_manifest_path(config));

    std::cout << config.name() << ": " << dataset.n << " records, " << dataset.d
              << " fields";
    if (!dataset.dropped_rows.empty()) {
        std::cout << " (" << dataset.dropped_rows.size() << " rows dropped)";
    }
    if (!dataset.imputed_cells.empty()) {
        std::cout << " (" << dataset.imputed_cells.size() << " cells imputed)";
    }
    std::cout << "; train " << dataset.count(ingest::Split::train) << ", validation "
              << dataset.count(ingest::Split::validation) << ", test "
              << dataset.count(ingest::Split::test) << '\n';
}

void cmd_transform(const ExperimentConfig& config) {
    config.transform.validate();
    auto dataset = load_normalized(config);
    const auto manifest = ingest::read_manifest(dataset_manifest_path(config));
    if (manifest.size() != dataset.n) {
        throw ValidationError("manifest has " + std::to_string(manifest.size()) +
                              " rows but the dataset has " + std::to_string(dataset.n));
    }
    const auto perm = resolve_ordering(config, dataset);
    dataset = ordering::reorder_fields(std::move(dataset), perm);

    const fs::path image_dir = fs::path(config.out_dir) / "images";
    fs::create_directories(image_dir);

    std::vector<ImageManifestRow> rows(dataset.n);
    for (std::size_t i = 0; i < dataset.n; ++i) {
        auto img = transform::apply(dataset.record(i), config.transform);
        img.source_index = i;
        img.label = dataset.labels[i];
        const std::string file = image_file_name(i, config.transform);
        pnm::write(img, (image_dir / file).string());
        rows[i] = {"images/" + file,      i,
                   dataset.labels[i],     manifest[i].split,
                   static_cast<int>(config.transform.kind), config.transform.px_scale};
    }
    write_image_manifest(image_manifest_path(config), rows);
    std::cout << "wrote " << rows.size() << " images to " << image_dir.string() << '\n';
}

void cmd_order(const ExperimentConfig& config) {
    auto dataset = load_normalized(config);
    std::vector<long long> trace;
    const auto perm = resolve_ordering(config, dataset, &trace);

    fs::create_directories(config.out_dir);
    ordering::write_ordering(ordering_path(config), perm);
    if (!trace.empty()) {
        ordering::write_trace(ordering_trace_path(config), trace);
    }

    std::cout << "ordering:";
    for (std::size_t k = 0; k < perm.size(); ++k) {
        std::cout << (k == 0 ? " " : ",") << perm[k] + 1;
    }
    if (!trace.empty()) std::cout << "  cost " << trace.back();
    std::cout << '\n';
}

nn::ImageSet<float> load_images(const ExperimentConfig& config,
                                std::span<const ImageManifestRow> rows) {
    nn::ImageSet<float> set;
    set.images.reserve(rows.size());
    for (const auto& row : rows) {
        const auto img = pnm::read((fs::path(config.out_dir) / row.path).string());
        if (set.images.empty()) {
            set.channels = img.channels;
            set.height = img.height;
            set.width = img.width;
        } else if (img.channels != set.channels || img.height != set.height ||
                   img.width != set.width) {
            throw ValidationError("image '" + row.path + "' does not match the set shape");
        }
        std::vector<float> values(img.values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = static_cast<float>(img.values[i]);
        }
        set.images.push_back(std::move(values));
        set.labels.push_back(row.label);
        set.splits.push_back(row.split);
    }
    return set;
}

namespace {

struct AttemptOutcome {
    metrics::ReportRow val_row, test_row;
    bool diverged = false;
    std::string diagnostic;
    nn::Model<float> model;
    nn::TrainResult train_result;
};

AttemptOutcome run_attempt(const ExperimentConfig& config, const nn::ImageSet<float>& data,
                           int transform_kind, int px_scale, int attempt, int threads) {
    const auto started = std::chrono::steady_clock::now();

    nn::TrainConfig train_cfg = config.train;
    train_cfg.seed = config.train.seed + static_cast<std::uint64_t>(attempt);

    std::vector<ingest::Split> splits =
        config.fixed_split
            ? data.splits
            : ingest::split_tags_for(data.labels, train_cfg.seed, config.ingest.stratified);

    AttemptOutcome out;
    out.model = nn::build<float>(config.network, data.channels, data.height, data.width,
                                 train_cfg.seed);
    out.train_result = nn::train(out.model, data, splits, train_cfg, threads);
    out.diverged = out.train_result.diverged;
    out.diagnostic = out.train_result.diagnostic;

    auto rows_for = [&](ingest::Split which, const char* split_label) {
        metrics::ReportRow row;
        row.dataset = config.name();
        row.transform_kind = transform_kind;
        row.px_scale = px_scale;
        row.report.attempt = attempt;
        row.report.split = split_label;
        row.diverged = out.diverged;
        if (!out.diverged) {
            std::vector<std::size_t> idx;
            std::vector<int> labels;
            for (std::size_t i = 0; i < data.size(); ++i) {
                if (splits[i] == which) {
                    idx.push_back(i);
                    labels.push_back(data.labels[i]);
                }
            }
            const auto preds = nn::predict<float>(out.model, data.pointers(idx), threads);
            const auto report = metrics::scores(metrics::confusion(preds, labels));
            row.report.accuracy = report.accuracy;
            row.report.sensitivity = report.sensitivity;
            row.report.specificity = report.specificity;
            row.report.precision = report.precision;
            row.report.f1 = report.f1;
        }
        return row;
    };
    out.val_row = rows_for(ingest::Split::validation, "validation");
    out.test_row = rows_for(ingest::Split::test, "test");

    const auto seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out.val_row.report.seconds = seconds;
    out.test_row.report.seconds = seconds;
    return out;
}

}  // namespace

void cmd_train(const ExperimentConfig& config) {
    config.train.validate();
    const auto manifest = read_image_manifest(image_manifest_path(config));
    const auto data = load_images(config, manifest);

    // the manifest is authoritative for what was rendered
    const int transform_kind = manifest.front().transform_kind;
    const int px_scale = manifest.front().px_scale;
    for (const auto& row : manifest) {
        if (row.transform_kind != transform_kind || row.px_scale != px_scale) {
            throw ValidationError("image manifest mixes transform kinds or pixel scales");
        }
    }

    const fs::path ckpt_dir = fs::path(config.out_dir) / "checkpoints";
    const fs::path trace_dir = fs::path(config.out_dir) / "traces";
    fs::create_directories(ckpt_dir);
    fs::create_directories(trace_dir);

    const int attempts = config.train.attempts;
    const int workers = std::max(1, std::min(config.workers, attempts));
    const int inner = std::max(1, total_threads(config) / workers);

    std::vector<AttemptOutcome> outcomes(attempts);
    parallel_for(static_cast<std::size_t>(attempts), workers, [&](std::size_t a, int) {
        outcomes[a] = run_attempt(config, data, transform_kind, px_scale,
                                  static_cast<int>(a), inner);
    });

    std::vector<metrics::ReportRow> rows;
    for (int a = 0; a < attempts; ++a) {
        auto& out = outcomes[a];
        char name[64];
        std::snprintf(name, sizeof name, "attempt_%03d", a);
        if (out.diverged) {
            std::cout << "attempt " << a << ": diverged (" << out.diagnostic << ")\n";
        } else {
            nn::save_checkpoint(out.model, (ckpt_dir / (std::string(name) + ".ckpt")).string());
            std::printf("attempt %d: val %.4f test %.4f (%.1fs)\n", a,
                        out.val_row.report.accuracy.value_or(0.0),
                        out.test_row.report.accuracy.value_or(0.0),
                        out.test_row.report.seconds);
        }
        nn::write_trace((trace_dir / (std::string(name) + ".txt")).string(),
                        out.train_result.trace);
        rows.push_back(out.val_row);
        rows.push_back(out.test_row);
    }
    metrics::write_rows(report_rows_path(config), rows);
}

std::vector<AggregateCell> aggregate(std::span<const metrics::ReportRow> rows) {
    struct Key {
        std::string dataset;
        int kind, px;
        bool operator<(const Key& o) const {
            return std::tie(dataset, kind, px) < std::tie(o.dataset, o.kind, o.px);
        }
    };
    struct Bucket {
        std::vector<double> val_acc, test_acc, sens, spec, f1, seconds;
        std::vector<int> attempts_seen, diverged_seen;
    };
    std::map<Key, Bucket> buckets;
    for (const auto& row : rows) {
        auto& b = buckets[{row.dataset, row.transform_kind, row.px_scale}];
        auto remember = [](std::vector<int>& seen, int attempt) {
            if (std::find(seen.begin(), seen.end(), attempt) == seen.end()) {
                seen.push_back(attempt);
            }
        };
        remember(b.attempts_seen, row.report.attempt);
        if (row.diverged) {
            remember(b.diverged_seen, row.report.attempt);
            continue;
        }
        if (row.report.split == "validation") {
            if (row.report.accuracy) b.val_acc.push_back(*row.report.accuracy);
        } else if (row.report.split == "test") {
            if (row.report.accuracy) b.test_acc.push_back(*row.report.accuracy);
            if (row.report.sensitivity) b.sens.push_back(*row.report.sensitivity);
            if (row.report.specificity) b.spec.push_back(*row.report.specificity);
            if (row.report.f1) b.f1.push_back(*row.report.f1);
            b.seconds.push_back(row.report.seconds);
        }
    }

    auto mean = [](const std::vector<double>& v) -> std::optional<double> {
        if (v.empty()) return std::nullopt;
        double sum = 0.0;
        for (double x : v) sum += x;
        return sum / static_cast<double>(v.size());
    };
    auto best = [](const std::vector<double>& v) -> std::optional<double> {
        if (v.empty()) return std::nullopt;
        return *std::max_element(v.begin(), v.end());
    };

    std::vector<AggregateCell> cells;
    for (const auto& [key, b] : buckets) {
        AggregateCell cell;
        cell.dataset = key.dataset;
        cell.transform_kind = key.kind;
        cell.px_scale = key.px;
        cell.attempts = static_cast<int>(b.attempts_seen.size());
        cell.diverged = static_cast<int>(b.diverged_seen.size());
        cell.best_val = best(b.val_acc);
        cell.mean_val = mean(b.val_acc);
        cell.best_test = best(b.test_acc);
        cell.mean_test = mean(b.test_acc);
        cell.mean_sensitivity = mean(b.sens);
        cell.mean_specificity = mean(b.spec);
        cell.mean_f1 = mean(b.f1);
        cell.mean_seconds = mean(b.seconds).value_or(0.0);
        cells.push_back(std::move(cell));
    }
    return cells;
}

std::string render_report(std::span<const AggregateCell> cells) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %4s %3s %8s %9s %9s %9s %9s %6s %6s %6s %8s\n",
                  "dataset", "type", "px", "attempts", "best_val", "mean_val", "best_test",
                  "mean_test", "sens", "spec", "f1", "sec");
    out << line;
    auto cell_text = [](const std::optional<double>& v, const char* fmt) {
        char buf[32];
        if (v) std::snprintf(buf, sizeof buf, fmt, *v);
        else std::snprintf(buf, sizeof buf, "%s", "-");
        return std::string(buf);
    };
    for (const auto& c : cells) {
        std::string attempts = std::to_string(c.attempts);
        if (c.diverged > 0) attempts += "(" + std::to_string(c.diverged) + " div)";
        std::snprintf(line, sizeof line,
                      "%-10s %4d %3d %8s %9s %9s %9s %9s %6s %6s %6s %8.1f\n",
                      c.dataset.c_str(), c.transform_kind, c.px_scale, attempts.c_str(),
                      cell_text(c.best_val, "%.4f").c_str(),
                      cell_text(c.mean_val, "%.4f").c_str(),
                      cell_text(c.best_test, "%.4f").c_str(),
                      cell_text(c.mean_test, "%.4f").c_str(),
                      cell_text(c.mean_sensitivity, "%.3f").c_str(),
                      cell_text(c.mean_specificity, "%.3f").c_str(),
                      cell_text(c.mean_f1, "%.3f").c_str(), c.mean_seconds);
        out << line;
    }
    return out.str();
}

void cmd_report(const ExperimentConfig& config) {
    const auto rows = metrics::read_rows(report_rows_path(config));
    const auto cells = aggregate(rows);
    const std::string text = render_report(cells);

    std::ofstream out(report_path(config));
    if (!out) throw RuntimeError("cannot write '" + report_path(config) + "'");
    out << text;
    std::cout << text;
}

}  // namespace tab2img::cli
