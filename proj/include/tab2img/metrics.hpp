#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tab2img::metrics {

// Counts with malignant as the positive class.
struct ConfusionMatrix {
    long long tp = 0;
    long long fp = 0;
    long long tn = 0;
    long long fn = 0;

    long long total() const { return tp + fp + tn + fn; }
};

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

// Derived diagnostic scores. A zero denominator leaves the score unset; it is
// serialized as the literal "undefined", never as 0 or 1.
struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> precision;
    std::optional<double> f1;
    int attempt = 0;
    std::string split;
    double seconds = 0.0;
};

MetricsReport scores(const ConfusionMatrix& cm);

// One line of the per-attempt results table.
struct ReportRow {
    std::string dataset;
    int transform_kind = 1;
    int px_scale = 1;
    MetricsReport report;
    bool diverged = false;
};

std::string format_row(const ReportRow& row);
ReportRow parse_row(const std::string& line);

void write_rows(const std::string& path, std::span<const ReportRow> rows);
std::vector<ReportRow> read_rows(const std::string& path);

}  // namespace tab2img::metrics
