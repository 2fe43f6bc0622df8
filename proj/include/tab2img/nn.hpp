#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tab2img/dataset.hpp"

namespace tab2img::nn {

// Four VGG-style blocks: 3x3 same-padded convolution, ReLU, 2x2/2 max pool.
// Filters per block follow 0.5 * block * floor(sqrt(pixels per channel)),
// rounded up to at least one. One hidden dense layer feeds a 2-way softmax.
struct NetworkSpec {
    int blocks = 4;
    int filter_size = 3;
    int pool_size = 2;
    int hidden_units = 64;
    int classes = 2;

    std::vector<int> filter_counts(int height, int width) const;
};

struct TrainConfig {
    double learning_rate = 0.02;
    double momentum = 0.88;
    double l2 = 9.4e-7;
    int batch = 8;
    int max_iterations = 1000;
    int eval_every = 50;
    std::uint64_t seed = 1;
    int attempts = 30;

    void validate() const;
};

struct BlockShape {
    int in_ch = 0, out_ch = 0;
    int in_h = 0, in_w = 0;    // conv input == conv output (same padding)
    int out_h = 0, out_w = 0;  // after pooling
};

// All parameters live in one flat array; segments describe the layout
// (per block: filters then biases, then the two dense layers).
struct Segment {
    std::size_t offset = 0;
    std::size_t size = 0;
};

template <class T>
struct Model {
    NetworkSpec spec;
    int in_ch = 1, in_h = 0, in_w = 0;
    std::vector<BlockShape> blocks;
    int flat = 0;  // flattened feature count after the last pool

    std::vector<T> params;
    std::vector<Segment> conv_w, conv_b;
    Segment fc1_w, fc1_b, fc2_w, fc2_b;

    std::span<T> view(Segment s) { return {params.data() + s.offset, s.size}; }
    std::span<const T> view(Segment s) const { return {params.data() + s.offset, s.size}; }

    // weight segments only (biases carry no L2 penalty)
    std::vector<Segment> weight_segments() const;
};

// He-normal filters (variance 2/fan-in), zero biases; deterministic per seed.
// Requires min(height, width) >= 16 so four poolings keep at least one pixel.
template <class T>
Model<T> build(const NetworkSpec& spec, int channels, int height, int width,
               std::uint64_t seed);

// Class probabilities, 2 per sample, softmax-normalized.
template <class T>
std::vector<T> forward(const Model<T>& model, std::span<const T* const> images,
                       int threads = 1);

// Mean cross-entropy over the batch plus the L2 term l2 * sum(w^2); gradients
// for every parameter land in `grads` (resized to match params).
template <class T>
T backward(const Model<T>& model, std::span<const T* const> images,
           std::span<const int> labels, T l2, std::vector<T>& grads,
           int threads = 1);

// Loss only, for finite-difference checks and monitoring.
template <class T>
T batch_loss(const Model<T>& model, std::span<const T* const> images,
             std::span<const int> labels, T l2);

// Argmax labels; ties resolve to class 0.
template <class T>
std::vector<int> predict(const Model<T>& model, std::span<const T* const> images,
                         int threads = 1);

// 2x2 stride-2 max pooling over channel-planar data; odd trailing rows and
// columns are dropped. idx records each window's argmax as a flat plane index.
template <class T>
void maxpool(const T* in, T* out, int* idx, int channels, int h, int w);

template <class T>
struct ImageSet {
    int channels = 0, height = 0, width = 0;
    std::vector<std::vector<T>> images;  // each channels*height*width values
    std::vector<int> labels;
    std::vector<ingest::Split> splits;

    std::size_t size() const { return images.size(); }
    std::vector<const T*> pointers(std::span<const std::size_t> idx) const;
};

struct TracePoint {
    int iteration = 0;
    double loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    bool diverged = false;
    std::string diagnostic;
    double best_val_accuracy = 0.0;
    int best_iteration = 0;
    std::vector<TracePoint> trace;
};

// Momentum SGD (v <- m v - eta g; w <- w + v) over max_iterations mini-batch
// updates, batches drawn by seeded shuffling per epoch. Validation accuracy is
// measured every eval_every iterations and the best-scoring parameters are
// kept in the model. A non-finite loss aborts with diverged set. `splits`
// overrides data.splits so attempts can re-split without copying images.
TrainResult train(Model<float>& model, const ImageSet<float>& data,
                  std::span<const ingest::Split> splits, const TrainConfig& config,
                  int threads = 1);

inline TrainResult train(Model<float>& model, const ImageSet<float>& data,
                         const TrainConfig& config, int threads = 1) {
    return train(model, data, data.splits, config, threads);
}

double evaluate_accuracy(const Model<float>& model, const ImageSet<float>& data,
                         std::span<const std::size_t> idx, int threads = 1);

void save_checkpoint(const Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

void write_trace(const std::string& path, std::span<const TracePoint> trace);

}  // namespace tab2img::nn
