#include "tab2img/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <thread>

#include "tab2img/errors.hpp"
#include "tab2img/parallel.hpp"
#include "tab2img/rng.hpp"

namespace tab2img::nn {

namespace {

// C[m][n] += A[m][k] * B[k][n], all row-major. 4 x 32 register tile held in
// accumulators across the whole k loop, so C is touched once per tile.
template <class T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c,
              int m, int k, int n) {
    constexpr int NR = 32;
    int j0 = 0;
    for (; j0 + NR <= n; j0 += NR) {
        int i = 0;
        for (; i + 4 <= m; i += 4) {
            T acc0[NR] = {}, acc1[NR] = {}, acc2[NR] = {}, acc3[NR] = {};
            const T* a0 = a + static_cast<std::size_t>(i + 0) * k;
            const T* a1 = a + static_cast<std::size_t>(i + 1) * k;
            const T* a2 = a + static_cast<std::size_t>(i + 2) * k;
            const T* a3 = a + static_cast<std::size_t>(i + 3) * k;
            for (int kk = 0; kk < k; ++kk) {
                const T* __restrict bp = b + static_cast<std::size_t>(kk) * n + j0;
                const T x0 = a0[kk], x1 = a1[kk], x2 = a2[kk], x3 = a3[kk];
                for (int j = 0; j < NR; ++j) {
                    acc0[j] += x0 * bp[j];
                    acc1[j] += x1 * bp[j];
                    acc2[j] += x2 * bp[j];
                    acc3[j] += x3 * bp[j];
                }
            }
            T* c0 = c + static_cast<std::size_t>(i + 0) * n + j0;
            T* c1 = c + static_cast<std::size_t>(i + 1) * n + j0;
            T* c2 = c + static_cast<std::size_t>(i + 2) * n + j0;
            T* c3 = c + static_cast<std::size_t>(i + 3) * n + j0;
            for (int j = 0; j < NR; ++j) {
                c0[j] += acc0[j];
                c1[j] += acc1[j];
                c2[j] += acc2[j];
                c3[j] += acc3[j];
            }
        }
        for (; i < m; ++i) {
            T acc[NR] = {};
            const T* ai = a + static_cast<std::size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const T* __restrict bp = b + static_cast<std::size_t>(kk) * n + j0;
                const T x = ai[kk];
                for (int j = 0; j < NR; ++j) acc[j] += x * bp[j];
            }
            T* ci = c + static_cast<std::size_t>(i) * n + j0;
            for (int j = 0; j < NR; ++j) ci[j] += acc[j];
        }
    }
    if (j0 < n) {
        const int nb = n - j0;
        for (int i = 0; i < m; ++i) {
            T* __restrict ci = c + static_cast<std::size_t>(i) * n + j0;
            const T* ai = a + static_cast<std::size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const T x = ai[kk];
                const T* __restrict bp = b + static_cast<std::size_t>(kk) * n + j0;
                for (int j = 0; j < nb; ++j) ci[j] += x * bp[j];
            }
        }
    }
}

template <class T>
void transpose(const T* src, T* dst, int rows, int cols) {
    constexpr int kBlock = 32;
    for (int r0 = 0; r0 < rows; r0 += kBlock) {
        const int r1 = std::min(r0 + kBlock, rows);
        for (int c0 = 0; c0 < cols; c0 += kBlock) {
            const int c1 = std::min(c0 + kBlock, cols);
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    dst[static_cast<std::size_t>(c) * rows + r] =
                        src[static_cast<std::size_t>(r) * cols + c];
                }
            }
        }
    }
}

// Unrolls 3x3 same-padded patches: col is (channels*9) x (h*w), one row per
// (channel, ky, kx); interior spans are straight copies.
template <class T>
void im2col(const T* in, T* col, int channels, int h, int w) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t k = 0;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx, ++k) {
                T* dst = col + k * plane;
                const int dx = kx - 1;
                for (int y = 0; y < h; ++y, dst += w) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* src = in + c * plane + static_cast<std::size_t>(sy) * w;
                    if (dx == 0) {
                        std::copy(src, src + w, dst);
                    } else if (dx < 0) {
                        dst[0] = T(0);
                        std::copy(src, src + w - 1, dst + 1);
                    } else {
                        std::copy(src + 1, src + w, dst);
                        dst[w - 1] = T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add inverse of im2col.
template <class T>
void col2im_acc(const T* col, T* in, int channels, int h, int w) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t k = 0;
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx, ++k) {
                const T* src = col + k * plane;
                const int dx = kx - 1;
                for (int y = 0; y < h; ++y, src += w) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    T* dst = in + c * plane + static_cast<std::size_t>(sy) * w;
                    if (dx == 0) {
                        for (int x = 0; x < w; ++x) dst[x] += src[x];
                    } else if (dx < 0) {
                        for (int x = 1; x < w; ++x) dst[x - 1] += src[x];
                    } else {
                        for (int x = 0; x < w - 1; ++x) dst[x + 1] += src[x];
                    }
                }
            }
        }
    }
}

}  // namespace

template <class T>
void maxpool(const T* in, T* out, int* idx, int channels, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        const T* src = in + c * plane;
        T* dst = out + static_cast<std::size_t>(c) * oh * ow;
        int* id = idx + static_cast<std::size_t>(c) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const int base = 2 * y * w + 2 * x;
                int best = base;
                T v = src[base];
                if (src[base + 1] > v) { v = src[base + 1]; best = base + 1; }
                if (src[base + w] > v) { v = src[base + w]; best = base + w; }
                if (src[base + w + 1] > v) { v = src[base + w + 1]; best = base + w + 1; }
                dst[y * ow + x] = v;
                id[y * ow + x] = best;
            }
        }
    }
}

template void maxpool<float>(const float*, float*, int*, int, int, int);
template void maxpool<double>(const double*, double*, int*, int, int, int);

std::vector<int> NetworkSpec::filter_counts(int height, int width) const {
    const auto pixels = static_cast<std::size_t>(height) * width;
    const auto base = static_cast<long long>(std::floor(std::sqrt(static_cast<double>(pixels))));
    std::vector<int> counts;
    for (int b = 1; b <= blocks; ++b) {
        const long long half_up = (b * base + 1) / 2;  // ceil of 0.5 * b * base
        counts.push_back(static_cast<int>(std::max(1LL, half_up)));
    }
    return counts;
}

void TrainConfig::validate() const {
    if (learning_rate < 0 || momentum < 0 || l2 < 0) {
        throw ValidationError("training rates must be non-negative");
    }
    if (batch < 1 || max_iterations < 1 || eval_every < 1 || attempts < 1) {
        throw ValidationError("batch, iterations, eval interval and attempts must be positive");
    }
}

template <class T>
std::vector<Segment> Model<T>::weight_segments() const {
    std::vector<Segment> segs(conv_w);
    segs.push_back(fc1_w);
    segs.push_back(fc2_w);
    return segs;
}

namespace {

// Shapes and segment layout without parameter initialization.
template <class T>
Model<T> make_model(const NetworkSpec& spec, int channels, int height, int width) {
    if (channels < 1) throw ValidationError("image needs at least one channel");
    if (std::min(height, width) < 16) {
        throw ValidationError("image sides must be at least 16 pixels for " +
                              std::to_string(spec.blocks) + " pooling stages");
    }

    Model<T> model;
    model.spec = spec;
    model.in_ch = channels;
    model.in_h = height;
    model.in_w = width;

    const auto filters = spec.filter_counts(height, width);
    int ch = channels, h = height, w = width;
    for (int b = 0; b < spec.blocks; ++b) {
        BlockShape shape;
        shape.in_ch = ch;
        shape.out_ch = filters[b];
        shape.in_h = h;
        shape.in_w = w;
        shape.out_h = h / 2;
        shape.out_w = w / 2;
        model.blocks.push_back(shape);
        ch = shape.out_ch;
        h = shape.out_h;
        w = shape.out_w;
    }
    model.flat = ch * h * w;

    std::size_t offset = 0;
    auto claim = [&offset](std::size_t size) {
        Segment s{offset, size};
        offset += size;
        return s;
    };
    for (const auto& blk : model.blocks) {
        model.conv_w.push_back(claim(static_cast<std::size_t>(blk.out_ch) * blk.in_ch * 9));
        model.conv_b.push_back(claim(static_cast<std::size_t>(blk.out_ch)));
    }
    model.fc1_w = claim(static_cast<std::size_t>(spec.hidden_units) * model.flat);
    model.fc1_b = claim(static_cast<std::size_t>(spec.hidden_units));
    model.fc2_w = claim(static_cast<std::size_t>(spec.classes) * spec.hidden_units);
    model.fc2_b = claim(static_cast<std::size_t>(spec.classes));
    model.params.assign(offset, T(0));
    return model;
}

}  // namespace

template <class T>
Model<T> build(const NetworkSpec& spec, int channels, int height, int width,
               std::uint64_t seed) {
    Model<T> model = make_model<T>(spec, channels, height, width);
    Rng rng(seed);
    auto init = [&](Segment seg, std::size_t fan_in) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (T& v : model.view(seg)) v = static_cast<T>(rng.normal(0.0, stddev));
    };
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        init(model.conv_w[b], static_cast<std::size_t>(model.blocks[b].in_ch) * 9);
    }
    init(model.fc1_w, static_cast<std::size_t>(model.flat));
    init(model.fc2_w, static_cast<std::size_t>(spec.hidden_units));
    return model;
}

namespace {

template <class T>
struct Workspace {
    // forward
    std::vector<std::vector<T>> col;   // per block: (in_ch*9) x plane
    std::vector<std::vector<T>> z;     // conv output, pre-activation
    std::vector<std::vector<T>> act;   // post-ReLU
    std::vector<std::vector<T>> pool;  // post-pool
    std::vector<std::vector<int>> idx; // pool argmax (flat plane index)
    std::vector<T> hidden_z, hidden_a, logits, probs;
    // backward
    std::vector<std::vector<T>> dpool;
    std::vector<T> dz;    // shared, max conv-output size
    std::vector<T> dcol;  // shared, max col size
    std::vector<T> wt;    // shared, max transposed filter size
    std::vector<T> colt;  // shared, max transposed col size
    std::vector<T> dhidden, dflat_unused;

    explicit Workspace(const Model<T>& m) {
        std::size_t max_z = 0, max_col = 0, max_w = 0;
        for (std::size_t b = 0; b < m.blocks.size(); ++b) {
            const auto& blk = m.blocks[b];
            const std::size_t plane = static_cast<std::size_t>(blk.in_h) * blk.in_w;
            const std::size_t opix = static_cast<std::size_t>(blk.out_h) * blk.out_w;
            col.emplace_back(static_cast<std::size_t>(blk.in_ch) * 9 * plane);
            z.emplace_back(static_cast<std::size_t>(blk.out_ch) * plane);
            act.emplace_back(static_cast<std::size_t>(blk.out_ch) * plane);
            pool.emplace_back(static_cast<std::size_t>(blk.out_ch) * opix);
            idx.emplace_back(static_cast<std::size_t>(blk.out_ch) * opix);
            dpool.emplace_back(static_cast<std::size_t>(blk.out_ch) * opix);
            max_z = std::max(max_z, z.back().size());
            max_col = std::max(max_col, col.back().size());
            max_w = std::max(max_w, m.conv_w[b].size);
        }
        hidden_z.resize(m.spec.hidden_units);
        hidden_a.resize(m.spec.hidden_units);
        logits.resize(m.spec.classes);
        probs.resize(m.spec.classes);
        dz.resize(max_z);
        dcol.resize(max_col);
        wt.resize(max_w);
        colt.resize(max_col);
        dhidden.resize(m.spec.hidden_units);
    }
};

template <class T>
void forward_sample(const Model<T>& m, const T* image, Workspace<T>& ws) {
    const T* input = image;
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        const auto& blk = m.blocks[b];
        const std::size_t plane = static_cast<std::size_t>(blk.in_h) * blk.in_w;
        im2col(input, ws.col[b].data(), blk.in_ch, blk.in_h, blk.in_w);

        // z = bias, then z += W * col
        const auto bias = m.view(m.conv_b[b]);
        for (int f = 0; f < blk.out_ch; ++f) {
            std::fill_n(ws.z[b].data() + f * plane, plane, bias[f]);
        }
        gemm_acc(m.view(m.conv_w[b]).data(), ws.col[b].data(), ws.z[b].data(),
                 blk.out_ch, blk.in_ch * 9, static_cast<int>(plane));

        for (std::size_t i = 0; i < ws.z[b].size(); ++i) {
            ws.act[b][i] = std::max(ws.z[b][i], T(0));
        }
        maxpool(ws.act[b].data(), ws.pool[b].data(), ws.idx[b].data(), blk.out_ch,
                blk.in_h, blk.in_w);
        input = ws.pool[b].data();
    }

    // dense head
    const T* flat = input;
    const auto w1 = m.view(m.fc1_w);
    const auto b1 = m.view(m.fc1_b);
    for (int j = 0; j < m.spec.hidden_units; ++j) {
        T sum = b1[j];
        const T* row = w1.data() + static_cast<std::size_t>(j) * m.flat;
        for (int i = 0; i < m.flat; ++i) sum += row[i] * flat[i];
        ws.hidden_z[j] = sum;
        ws.hidden_a[j] = std::max(sum, T(0));
    }
    const auto w2 = m.view(m.fc2_w);
    const auto b2 = m.view(m.fc2_b);
    for (int k = 0; k < m.spec.classes; ++k) {
        T sum = b2[k];
        const T* row = w2.data() + static_cast<std::size_t>(k) * m.spec.hidden_units;
        for (int j = 0; j < m.spec.hidden_units; ++j) sum += row[j] * ws.hidden_a[j];
        ws.logits[k] = sum;
    }

    // softmax
    const T peak = *std::max_element(ws.logits.begin(), ws.logits.end());
    T denom = T(0);
    for (int k = 0; k < m.spec.classes; ++k) {
        ws.probs[k] = std::exp(ws.logits[k] - peak);
        denom += ws.probs[k];
    }
    for (T& p : ws.probs) p /= denom;
}

template <class T>
double cross_entropy(const Workspace<T>& ws, int label) {
    const T peak = *std::max_element(ws.logits.begin(), ws.logits.end());
    double denom = 0.0;
    for (const T z : ws.logits) denom += std::exp(static_cast<double>(z - peak));
    return std::log(denom) + static_cast<double>(peak) - static_cast<double>(ws.logits[label]);
}

// Gradient of this sample's cross-entropy with respect to every parameter,
// added into grad (sized like params). forward_sample must have run.
template <class T>
void backward_sample(const Model<T>& m, const T* image, int label, Workspace<T>& ws,
                     T* grad) {
    // softmax + cross-entropy head
    std::vector<T>& dlogits = ws.probs;  // reuse: dlogit = p - onehot
    dlogits[label] -= T(1);

    const auto w2 = m.view(m.fc2_w);
    T* g_w2 = grad + m.fc2_w.offset;
    T* g_b2 = grad + m.fc2_b.offset;
    std::fill(ws.dhidden.begin(), ws.dhidden.end(), T(0));
    for (int k = 0; k < m.spec.classes; ++k) {
        const T dk = dlogits[k];
        g_b2[k] += dk;
        T* gw = g_w2 + static_cast<std::size_t>(k) * m.spec.hidden_units;
        const T* row = w2.data() + static_cast<std::size_t>(k) * m.spec.hidden_units;
        for (int j = 0; j < m.spec.hidden_units; ++j) {
            gw[j] += dk * ws.hidden_a[j];
            ws.dhidden[j] += dk * row[j];
        }
    }
    for (int j = 0; j < m.spec.hidden_units; ++j) {
        if (ws.hidden_z[j] <= T(0)) ws.dhidden[j] = T(0);
    }

    const std::size_t last = m.blocks.size() - 1;
    const T* flat = ws.pool[last].data();
    std::vector<T>& dflat = ws.dpool[last];
    std::fill(dflat.begin(), dflat.end(), T(0));
    const auto w1 = m.view(m.fc1_w);
    T* g_w1 = grad + m.fc1_w.offset;
    T* g_b1 = grad + m.fc1_b.offset;
    for (int j = 0; j < m.spec.hidden_units; ++j) {
        const T dj = ws.dhidden[j];
        g_b1[j] += dj;
        if (dj == T(0)) continue;
        T* gw = g_w1 + static_cast<std::size_t>(j) * m.flat;
        const T* row = w1.data() + static_cast<std::size_t>(j) * m.flat;
        for (int i = 0; i < m.flat; ++i) {
            gw[i] += dj * flat[i];
            dflat[i] += dj * row[i];
        }
    }

    // conv blocks, last to first
    for (std::size_t bi = m.blocks.size(); bi-- > 0;) {
        const auto& blk = m.blocks[bi];
        const std::size_t plane = static_cast<std::size_t>(blk.in_h) * blk.in_w;
        const int kdim = blk.in_ch * 9;

        // pool backward into dz, then ReLU mask
        std::fill_n(ws.dz.data(), static_cast<std::size_t>(blk.out_ch) * plane, T(0));
        const std::size_t opix = static_cast<std::size_t>(blk.out_h) * blk.out_w;
        for (int f = 0; f < blk.out_ch; ++f) {
            const T* dp = ws.dpool[bi].data() + f * opix;
            const int* id = ws.idx[bi].data() + f * opix;
            T* dzp = ws.dz.data() + f * plane;
            for (std::size_t o = 0; o < opix; ++o) dzp[id[o]] += dp[o];
        }
        const std::vector<T>& z = ws.z[bi];
        for (std::size_t i = 0; i < static_cast<std::size_t>(blk.out_ch) * plane; ++i) {
            if (z[i] <= T(0)) ws.dz[i] = T(0);
        }

        // bias gradient
        T* g_b = grad + m.conv_b[bi].offset;
        for (int f = 0; f < blk.out_ch; ++f) {
            const T* dzp = ws.dz.data() + f * plane;
            T sum = T(0);
            for (std::size_t p = 0; p < plane; ++p) sum += dzp[p];
            g_b[f] += sum;
        }

        // dW += dz * col^T
        transpose(ws.col[bi].data(), ws.colt.data(), kdim, static_cast<int>(plane));
        gemm_acc(ws.dz.data(), ws.colt.data(), grad + m.conv_w[bi].offset, blk.out_ch,
                 static_cast<int>(plane), kdim);

        if (bi == 0) break;  // input image gradient is not needed

        // dcol = W^T * dz, then scatter back to the previous pool output
        transpose(m.view(m.conv_w[bi]).data(), ws.wt.data(), blk.out_ch, kdim);
        std::fill_n(ws.dcol.data(), static_cast<std::size_t>(kdim) * plane, T(0));
        gemm_acc(ws.wt.data(), ws.dz.data(), ws.dcol.data(), kdim, blk.out_ch,
                 static_cast<int>(plane));
        std::fill(ws.dpool[bi - 1].begin(), ws.dpool[bi - 1].end(), T(0));
        col2im_acc(ws.dcol.data(), ws.dpool[bi - 1].data(), blk.in_ch, blk.in_h, blk.in_w);
    }
    (void)image;
}

template <class T>
double l2_penalty(const Model<T>& m, T l2) {
    if (l2 <= T(0)) return 0.0;
    double sum = 0.0;
    for (const auto& seg : m.weight_segments()) {
        for (const T w : m.view(seg)) sum += static_cast<double>(w) * static_cast<double>(w);
    }
    return static_cast<double>(l2) * sum;
}

}  // namespace

template <class T>
std::vector<T> forward(const Model<T>& model, std::span<const T* const> images,
                       int threads) {
    std::vector<T> out(images.size() * model.spec.classes);
    const int used = std::max(1, std::min<int>(threads, static_cast<int>(images.size())));
    std::vector<Workspace<T>> ws;
    ws.reserve(used);
    for (int t = 0; t < used; ++t) ws.emplace_back(model);
    parallel_for(images.size(), used, [&](std::size_t i, int slot) {
        forward_sample(model, images[i], ws[slot]);
        std::copy(ws[slot].probs.begin(), ws[slot].probs.end(),
                  out.begin() + i * model.spec.classes);
    });
    return out;
}

template <class T>
T batch_loss(const Model<T>& model, std::span<const T* const> images,
             std::span<const int> labels, T l2) {
    if (images.size() != labels.size() || images.empty()) {
        throw ValidationError("batch images and labels must align");
    }
    Workspace<T> ws(model);
    double ce = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        forward_sample(model, images[i], ws);
        ce += cross_entropy(ws, labels[i]);
    }
    return static_cast<T>(ce / static_cast<double>(images.size()) + l2_penalty(model, l2));
}

template <class T>
T backward(const Model<T>& model, std::span<const T* const> images,
           std::span<const int> labels, T l2, std::vector<T>& grads, int threads) {
    if (images.size() != labels.size() || images.empty()) {
        throw ValidationError("batch images and labels must align");
    }
    const std::size_t batch = images.size();
    const int used = std::max(1, std::min<int>(threads, static_cast<int>(batch)));

    std::vector<Workspace<T>> ws;
    ws.reserve(used);
    for (int t = 0; t < used; ++t) ws.emplace_back(model);
    std::vector<std::vector<T>> sample_grads(batch);
    std::vector<double> sample_loss(batch);

    parallel_for(batch, used, [&](std::size_t i, int slot) {
        sample_grads[i].assign(model.params.size(), T(0));
        forward_sample(model, images[i], ws[slot]);
        sample_loss[i] = cross_entropy(ws[slot], labels[i]);
        backward_sample(model, images[i], labels[i], ws[slot], sample_grads[i].data());
    });

    grads.assign(model.params.size(), T(0));
    const T inv = T(1) / static_cast<T>(batch);
    for (std::size_t i = 0; i < batch; ++i) {  // fixed reduction order
        const auto& sg = sample_grads[i];
        for (std::size_t p = 0; p < sg.size(); ++p) grads[p] += sg[p];
    }
    for (T& g : grads) g *= inv;

    if (l2 > T(0)) {
        for (const auto& seg : model.weight_segments()) {
            const T* w = model.params.data() + seg.offset;
            T* g = grads.data() + seg.offset;
            for (std::size_t i = 0; i < seg.size; ++i) g[i] += T(2) * l2 * w[i];
        }
    }

    double ce = 0.0;
    for (double l : sample_loss) ce += l;
    return static_cast<T>(ce / static_cast<double>(batch) + l2_penalty(model, l2));
}

template <class T>
std::vector<int> predict(const Model<T>& model, std::span<const T* const> images,
                         int threads) {
    const auto probs = forward(model, images, threads);
    std::vector<int> labels(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const T* p = probs.data() + i * model.spec.classes;
        int best = 0;
        for (int k = 1; k < model.spec.classes; ++k) {
            if (p[k] > p[best]) best = k;  // ties keep the lower class
        }
        labels[i] = best;
    }
    return labels;
}

template <class T>
std::vector<const T*> ImageSet<T>::pointers(std::span<const std::size_t> idx) const {
    std::vector<const T*> ptrs;
    ptrs.reserve(idx.size());
    for (std::size_t i : idx) ptrs.push_back(images[i].data());
    return ptrs;
}

double evaluate_accuracy(const Model<float>& model, const ImageSet<float>& data,
                         std::span<const std::size_t> idx, int threads) {
    if (idx.empty()) throw ValidationError("nothing to evaluate");
    const auto ptrs = data.pointers(idx);
    const auto preds = predict<float>(model, ptrs, threads);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (preds[i] == data.labels[idx[i]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

TrainResult train(Model<float>& model, const ImageSet<float>& data,
                  std::span<const ingest::Split> splits, const TrainConfig& config,
                  int threads) {
    config.validate();
    if (splits.size() != data.size() || data.labels.size() != data.size()) {
        throw ValidationError("image set needs labels and split tags");
    }

    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (splits[i] == ingest::Split::train) train_idx.push_back(i);
        else if (splits[i] == ingest::Split::validation) val_idx.push_back(i);
    }
    if (train_idx.empty()) throw ValidationError("training split is empty");
    if (val_idx.empty()) throw ValidationError("validation split is empty");
    if (static_cast<std::size_t>(config.batch) > train_idx.size()) {
        throw ValidationError("batch size exceeds the training split");
    }

    Rng rng(config.seed);
    const std::size_t batch = static_cast<std::size_t>(config.batch);
    const int used = std::max(1, std::min<int>(threads, static_cast<int>(batch)));

    std::vector<Workspace<float>> ws;
    ws.reserve(used);
    for (int t = 0; t < used; ++t) ws.emplace_back(model);
    std::vector<std::vector<float>> sample_grads(batch,
                                                 std::vector<float>(model.params.size()));
    std::vector<double> sample_loss(batch);
    std::vector<float> grads(model.params.size());
    std::vector<float> velocity(model.params.size(), 0.0f);
    std::vector<const float*> batch_images(batch);
    std::vector<int> batch_labels(batch);

    std::vector<std::size_t> order = train_idx;
    std::size_t cursor = order.size();  // trigger shuffle on first batch

    TrainResult result;
    std::vector<float> best_params = model.params;
    double best_val = -1.0;

    const auto weight_segs = model.weight_segments();
    const float eta = static_cast<float>(config.learning_rate);
    const float mu = static_cast<float>(config.momentum);
    const float lambda = static_cast<float>(config.l2);

    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        if (cursor + batch > order.size()) {
            rng.shuffle(order);
            cursor = 0;
        }
        for (std::size_t s = 0; s < batch; ++s) {
            const std::size_t i = order[cursor + s];
            batch_images[s] = data.images[i].data();
            batch_labels[s] = data.labels[i];
        }
        cursor += batch;

        parallel_for(batch, used, [&](std::size_t s, int slot) {
            std::fill(sample_grads[s].begin(), sample_grads[s].end(), 0.0f);
            forward_sample(model, batch_images[s], ws[slot]);
            sample_loss[s] = cross_entropy(ws[slot], batch_labels[s]);
            backward_sample(model, batch_images[s], batch_labels[s], ws[slot],
                            sample_grads[s].data());
        });

        std::fill(grads.begin(), grads.end(), 0.0f);
        for (std::size_t s = 0; s < batch; ++s) {
            const auto& sg = sample_grads[s];
            for (std::size_t p = 0; p < sg.size(); ++p) grads[p] += sg[p];
        }
        const float inv = 1.0f / static_cast<float>(batch);
        for (float& g : grads) g *= inv;
        if (lambda > 0.0f) {
            for (const auto& seg : weight_segs) {
                const float* w = model.params.data() + seg.offset;
                float* g = grads.data() + seg.offset;
                for (std::size_t i = 0; i < seg.size; ++i) g[i] += 2.0f * lambda * w[i];
            }
        }

        double ce = 0.0;
        for (double l : sample_loss) ce += l;
        const double loss = ce / static_cast<double>(batch) + l2_penalty(model, lambda);
        if (!std::isfinite(loss)) {
            result.diverged = true;
            result.diagnostic = "non-finite loss at iteration " + std::to_string(iter);
            result.best_val_accuracy = std::max(best_val, 0.0);
            model.params = best_params;
            return result;
        }

        for (std::size_t p = 0; p < model.params.size(); ++p) {
            velocity[p] = mu * velocity[p] - eta * grads[p];
            model.params[p] += velocity[p];
        }

        if (iter % config.eval_every == 0 || iter == config.max_iterations) {
            const double val_acc = evaluate_accuracy(model, data, val_idx, threads);
            result.trace.push_back({iter, loss, val_acc});
            if (val_acc > best_val) {
                best_val = val_acc;
                result.best_iteration = iter;
                best_params = model.params;
            }
        }
    }

    result.best_val_accuracy = best_val;
    model.params = std::move(best_params);
    return result;
}

namespace {

template <class V>
void write_raw(std::ofstream& out, const V& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class V>
V read_raw(std::ifstream& in) {
    V value{};
    in.read(reinterpret_cast<char*>(&value), sizeof value);
    return value;
}

void write_tensor(std::ofstream& out, std::span<const float> data,
                  std::span<const std::uint32_t> dims) {
    write_raw(out, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) write_raw(out, d);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
}

}  // namespace

void save_checkpoint(const Model<float>& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write checkpoint '" + path + "'");
    out.write("T2IC", 4);
    write_raw(out, std::uint32_t{1});                 // version
    write_raw(out, std::uint32_t{sizeof(float)});     // scalar width
    for (int v : {model.in_ch, model.in_h, model.in_w, model.spec.blocks,
                  model.spec.filter_size, model.spec.pool_size, model.spec.hidden_units,
                  model.spec.classes}) {
        write_raw(out, static_cast<std::int32_t>(v));
    }
    const auto tensors = static_cast<std::uint32_t>(model.blocks.size() * 2 + 4);
    write_raw(out, tensors);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto& blk = model.blocks[b];
        const std::uint32_t wdims[] = {static_cast<std::uint32_t>(blk.out_ch),
                                       static_cast<std::uint32_t>(blk.in_ch), 3u, 3u};
        write_tensor(out, model.view(model.conv_w[b]), wdims);
        const std::uint32_t bdims[] = {static_cast<std::uint32_t>(blk.out_ch)};
        write_tensor(out, model.view(model.conv_b[b]), bdims);
    }
    const std::uint32_t w1dims[] = {static_cast<std::uint32_t>(model.spec.hidden_units),
                                    static_cast<std::uint32_t>(model.flat)};
    write_tensor(out, model.view(model.fc1_w), w1dims);
    const std::uint32_t b1dims[] = {static_cast<std::uint32_t>(model.spec.hidden_units)};
    write_tensor(out, model.view(model.fc1_b), b1dims);
    const std::uint32_t w2dims[] = {static_cast<std::uint32_t>(model.spec.classes),
                                    static_cast<std::uint32_t>(model.spec.hidden_units)};
    write_tensor(out, model.view(model.fc2_w), w2dims);
    const std::uint32_t b2dims[] = {static_cast<std::uint32_t>(model.spec.classes)};
    write_tensor(out, model.view(model.fc2_b), b2dims);
    if (!out) throw RuntimeError("error writing checkpoint '" + path + "'");
}

Model<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "T2IC", 4) != 0) {
        throw ValidationError("'" + path + "' is not a checkpoint");
    }
    if (read_raw<std::uint32_t>(in) != 1) throw ValidationError("unsupported checkpoint version");
    if (read_raw<std::uint32_t>(in) != sizeof(float)) {
        throw ValidationError("unsupported checkpoint scalar width");
    }
    const int in_ch = read_raw<std::int32_t>(in);
    const int in_h = read_raw<std::int32_t>(in);
    const int in_w = read_raw<std::int32_t>(in);
    NetworkSpec spec;
    spec.blocks = read_raw<std::int32_t>(in);
    spec.filter_size = read_raw<std::int32_t>(in);
    spec.pool_size = read_raw<std::int32_t>(in);
    spec.hidden_units = read_raw<std::int32_t>(in);
    spec.classes = read_raw<std::int32_t>(in);

    Model<float> model = make_model<float>(spec, in_ch, in_h, in_w);
    const auto tensors = read_raw<std::uint32_t>(in);
    std::vector<Segment> order;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        order.push_back(model.conv_w[b]);
        order.push_back(model.conv_b[b]);
    }
    order.insert(order.end(), {model.fc1_w, model.fc1_b, model.fc2_w, model.fc2_b});
    if (tensors != order.size()) throw ValidationError("checkpoint tensor count mismatch");

    for (const auto& seg : order) {
        const auto rank = read_raw<std::uint32_t>(in);
        std::size_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) count *= read_raw<std::uint32_t>(in);
        if (count != seg.size) throw ValidationError("checkpoint tensor shape mismatch");
        in.read(reinterpret_cast<char*>(model.params.data() + seg.offset),
                static_cast<std::streamsize>(seg.size * sizeof(float)));
    }
    if (!in) throw ValidationError("checkpoint '" + path + "' is truncated");
    return model;
}

void write_trace(const std::string& path, std::span<const TracePoint> trace) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot write '" + path + "'");
    for (const auto& point : trace) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%d %.6f\n", point.iteration, point.val_accuracy);
        out << buf;
    }
}

template struct Model<float>;
template struct Model<double>;
template struct ImageSet<float>;
template struct ImageSet<double>;

template Model<float> build<float>(const NetworkSpec&, int, int, int, std::uint64_t);
template Model<double> build<double>(const NetworkSpec&, int, int, int, std::uint64_t);
template std::vector<float> forward<float>(const Model<float>&,
                                           std::span<const float* const>, int);
template std::vector<double> forward<double>(const Model<double>&,
                                             std::span<const double* const>, int);
template float backward<float>(const Model<float>&, std::span<const float* const>,
                               std::span<const int>, float, std::vector<float>&, int);
template double backward<double>(const Model<double>&, std::span<const double* const>,
                                 std::span<const int>, double, std::vector<double>&, int);
template float batch_loss<float>(const Model<float>&, std::span<const float* const>,
                                 std::span<const int>, float);
template double batch_loss<double>(const Model<double>&, std::span<const double* const>,
                                   std::span<const int>, double);
template std::vector<int> predict<float>(const Model<float>&,
                                         std::span<const float* const>, int);
template std::vector<int> predict<double>(const Model<double>&,
                                          std::span<const double* const>, int);

}  // namespace tab2img::nn
