#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tab2img::transform {

enum class Kind : int { bar_graph = 1, distance_matrix = 2, combined = 3 };

enum class DistanceMode { signed_diff, absolute_diff };

// Geometry knobs for the three record-to-image encodings.
//
//   bar_graph       vertical bars, width psi, gap gamma; image width
//                   psi*d + gamma*(d+1), height = width - 2*psi
//   distance_matrix pairwise feature differences, min-max rescaled, each
//                   entry replicated into an expand_rows x expand_cols block
//   combined        3 channels at side psi*d + gamma*(d+1): distance matrix,
//                   bar graph, row-constant feature values
struct TransformSpec {
    Kind kind = Kind::bar_graph;
    int px_scale = 1;  // 1, 2 or 4
    int psi = 1;       // bar width; equals px_scale for bar_graph/combined
    int gamma = 2;     // gap between bars
    DistanceMode distance_mode = DistanceMode::signed_diff;
    int expand_rows = 3;  // distance_matrix block replication
    int expand_cols = 3;

    // Applies the pixel-scale conventions: bar width psi = px for Types 1/3,
    // replication 3*px per axis for Type 2.
    static TransformSpec make(Kind kind, int px_scale = 1);

    void validate() const;
};

// H x W x C values in [0,1], stored channel-planar: values[c*H*W + r*W + col].
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> values;
    std::size_t source_index = 0;
    int label = 0;

    double at(int row, int col, int channel = 0) const {
        return values[(static_cast<std::size_t>(channel) * height + row) * width + col];
    }
    double& at(int row, int col, int channel = 0) {
        return values[(static_cast<std::size_t>(channel) * height + row) * width + col];
    }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * width;
    }
};

// Width of a bar-graph image: psi*d + gamma*(d+1).
int bar_image_width(int d, const TransformSpec& spec);
// Side of a combined image; same formula as the bar-graph width.
int combined_side(int d, const TransformSpec& spec);

ImageTensor bar_graph(std::span<const double> record, const TransformSpec& spec);
ImageTensor distance_matrix(std::span<const double> record, const TransformSpec& spec);
ImageTensor combined(std::span<const double> record, const TransformSpec& spec);

// Dispatch on spec.kind.
ImageTensor apply(std::span<const double> record, const TransformSpec& spec);

}  // namespace tab2img::transform
