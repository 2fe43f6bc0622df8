#include "tab2img/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tab2img/errors.hpp"

namespace tab2img::transform {

TransformSpec TransformSpec::make(Kind kind, int px_scale) {
    TransformSpec spec;
    spec.kind = kind;
    spec.px_scale = px_scale;
    spec.psi = px_scale;
    spec.gamma = 2;
    spec.expand_rows = 3 * px_scale;
    spec.expand_cols = 3 * px_scale;
    spec.validate();
    return spec;
}

void TransformSpec::validate() const {
    if (px_scale != 1 && px_scale != 2 && px_scale != 4) {
        throw ValidationError("px scale must be 1, 2 or 4");
    }
    if (psi < 1) throw ValidationError("bar width must be at least 1");
    if (gamma < 0) throw ValidationError("bar gap must be non-negative");
    if (expand_rows < 1 || expand_cols < 1) {
        throw ValidationError("replication factors must be at least 1");
    }
}

int bar_image_width(int d, const TransformSpec& spec) {
    return spec.psi * d + spec.gamma * (d + 1);
}

int combined_side(int d, const TransformSpec& spec) {
    return bar_image_width(d, spec);
}

ImageTensor bar_graph(std::span<const double> record, const TransformSpec& spec) {
    spec.validate();
    const int d = static_cast<int>(record.size());
    if (d == 0) throw ValidationError("bar graph needs at least one field");

    const int width = bar_image_width(d, spec);
    const int height = width - 2 * spec.psi;
    if (height <= 0) {
        throw ValidationError("bar width " + std::to_string(spec.psi) +
                              " leaves no room for bars at d=" + std::to_string(d));
    }

    ImageTensor img;
    img.height = height;
    img.width = width;
    img.channels = 1;
    img.values.assign(img.pixel_count(), 0.0);

    for (int k = 0; k < d; ++k) {
        // bar height in rows; rows psi..b (1-based) are foreground
        const int b = static_cast<int>(std::floor(height * record[k]));
        if (b < spec.psi) continue;
        const int col0 = spec.gamma + k * (spec.gamma + spec.psi);
        for (int r = spec.psi - 1; r < b; ++r) {
            double* row = img.values.data() + static_cast<std::size_t>(r) * width;
            std::fill(row + col0, row + col0 + spec.psi, 1.0);
        }
    }
    return img;
}

namespace {

// d x d matrix of pairwise differences, min-max rescaled to [0,1].
std::vector<double> normalized_distances(std::span<const double> record,
                                         DistanceMode mode) {
    const std::size_t d = record.size();
    std::vector<double> m(d * d);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            double v = record[r] - record[c];
            if (mode == DistanceMode::absolute_diff) v = std::fabs(v);
            m[r * d + c] = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double range = hi - lo;
    if (range > 0.0) {
        for (double& v : m) v = (v - lo) / range;
    } else {
        // constant record: the signed fixed point is 0.5, absolute collapses to 0
        const double fill = mode == DistanceMode::signed_diff ? 0.5 : 0.0;
        std::fill(m.begin(), m.end(), fill);
    }
    return m;
}

// Resizes a d x d matrix onto side x side by block replication: band k covers
// output rows [k*side/d, (k+1)*side/d), so blocks are floor(side/d) or
// ceil(side/d) wide and every field stays visible.
void replicate_bands_into(ImageTensor& img, int channel, const std::vector<double>& m,
                          int d, int side) {
    for (int r = 0; r < side; ++r) {
        const auto sr = static_cast<std::size_t>(static_cast<long long>(r) * d / side);
        for (int c = 0; c < side; ++c) {
            const auto sc = static_cast<std::size_t>(static_cast<long long>(c) * d / side);
            img.at(r, c, channel) = m[sr * d + sc];
        }
    }
}

}  // namespace

ImageTensor distance_matrix(std::span<const double> record, const TransformSpec& spec) {
    spec.validate();
    const int d = static_cast<int>(record.size());
    if (d == 0) throw ValidationError("distance matrix needs at least one field");

    const auto m = normalized_distances(record, spec.distance_mode);

    ImageTensor img;
    img.height = d * spec.expand_rows;
    img.width = d * spec.expand_cols;
    img.channels = 1;
    img.values.resize(img.pixel_count());
    for (int r = 0; r < img.height; ++r) {
        const int sr = r / spec.expand_rows;
        for (int c = 0; c < img.width; ++c) {
            img.at(r, c) = m[static_cast<std::size_t>(sr) * d + c / spec.expand_cols];
        }
    }
    return img;
}

ImageTensor combined(std::span<const double> record, const TransformSpec& spec) {
    spec.validate();
    const int d = static_cast<int>(record.size());
    if (d == 0) throw ValidationError("combined transform needs at least one field");

    const int side = combined_side(d, spec);

    ImageTensor img;
    img.height = side;
    img.width = side;
    img.channels = 3;
    img.values.assign(static_cast<std::size_t>(side) * side * 3, 0.0);

    // channel 0: distance matrix blown up to cover the side
    replicate_bands_into(img, 0, normalized_distances(record, spec.distance_mode), d, side);

    // channel 1: bar graph, short by 2*psi rows; missing rows stay background
    TransformSpec bar_spec = spec;
    bar_spec.kind = Kind::bar_graph;
    const ImageTensor bars = bar_graph(record, bar_spec);
    for (int r = 0; r < bars.height; ++r) {
        for (int c = 0; c < side; ++c) img.at(r, c, 1) = bars.at(r, c);
    }

    // channel 2: row band i carries feature i's value across the full width
    for (int r = 0; r < side; ++r) {
        const double v = record[static_cast<std::size_t>(static_cast<long long>(r) * d / side)];
        for (int c = 0; c < side; ++c) img.at(r, c, 2) = v;
    }
    return img;
}

ImageTensor apply(std::span<const double> record, const TransformSpec& spec) {
    switch (spec.kind) {
        case Kind::bar_graph: return bar_graph(record, spec);
        case Kind::distance_matrix: return distance_matrix(record, spec);
        case Kind::combined: return combined(record, spec);
    }
    throw ValidationError("unknown transform kind");
}

}  // namespace tab2img::transform
