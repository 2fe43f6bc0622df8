#include "tab2img/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tab2img/errors.hpp"

namespace tab2img::metrics {

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) {
        throw ValidationError("predictions and labels differ in length");
    }
    if (predictions.empty()) throw ValidationError("nothing to score");

    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
        if (labels[i] == 1) {
            (predictions[i] == 1 ? cm.tp : cm.fn)++;
        } else {
            (predictions[i] == 0 ? cm.tn : cm.fp)++;
        }
    }
    return cm;
}

MetricsReport scores(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw ValidationError("empty confusion matrix");

    MetricsReport r;
    r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    if (cm.tp + cm.fn > 0) {
        r.sensitivity = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    }
    if (cm.tn + cm.fp > 0) {
        r.specificity = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
    }
    if (cm.tp + cm.fp > 0) {
        r.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    }
    if (r.precision && r.sensitivity && (*r.precision + *r.sensitivity) > 0.0) {
        r.f1 = 2.0 * *r.precision * *r.sensitivity / (*r.precision + *r.sensitivity);
    }
    return r;
}

namespace {

std::string score_text(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

std::optional<double> score_value(const std::string& text) {
    if (text == "undefined") return std::nullopt;
    return std::stod(text);
}

}  // namespace

std::string format_row(const ReportRow& row) {
    std::ostringstream out;
    out << row.dataset << ',' << row.transform_kind << ',' << row.px_scale << ','
        << row.report.attempt << ',' << row.report.split << ','
        << score_text(row.report.accuracy) << ',' << score_text(row.report.sensitivity) << ','
        << score_text(row.report.specificity) << ',' << score_text(row.report.f1) << ',';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", row.report.seconds);
    out << buf << ',' << (row.diverged ? "diverged" : "ok");
    return out.str();
}

ReportRow parse_row(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) {
        throw ValidationError("report row needs 11 fields, got " +
                              std::to_string(cells.size()));
    }
    ReportRow row;
    row.dataset = cells[0];
    row.transform_kind = std::stoi(cells[1]);
    row.px_scale = std::stoi(cells[2]);
    row.report.attempt = std::stoi(cells[3]);
    row.report.split = cells[4];
    row.report.accuracy = score_value(cells[5]);
    row.report.sensitivity = score_value(cells[6]);
    row.report.specificity = score_value(cells[7]);
    row.report.f1 = score_value(cells[8]);
    row.report.seconds = std::stod(cells[9]);
    row.diverged = cells[10] == "diverged";
    return row;
}

const char* kRowHeader = "dataset,transform,px,attempt,split,accuracy,sensitivity,specificity,f1,seconds,status";

void write_rows(const std::string& path, std::span<const ReportRow> rows) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write '" + path + "'");
    out << kRowHeader << '\n';
    for (const auto& row : rows) out << format_row(row) << '\n';
    if (!out) throw RuntimeError("error writing '" + path + "'");
}

std::vector<ReportRow> read_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open report rows '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(parse_row(line));
    }
    return rows;
}

}  // namespace tab2img::metrics
