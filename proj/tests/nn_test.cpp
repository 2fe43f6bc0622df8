#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tab2img/errors.hpp"
#include "tab2img/nn.hpp"
#include "tab2img/rng.hpp"
#include "test_support.hpp"

using namespace tab2img;
using nn::Model;
using nn::NetworkSpec;
using nn::TrainConfig;

namespace {

template <class T>
std::vector<std::vector<T>> random_images(Rng& rng, std::size_t count, int channels,
                                          int side) {
    std::vector<std::vector<T>> images(count);
    for (auto& img : images) {
        img.resize(static_cast<std::size_t>(channels) * side * side);
        for (T& v : img) v = static_cast<T>(rng.uniform());
    }
    return images;
}

template <class T>
std::vector<const T*> as_pointers(const std::vector<std::vector<T>>& images) {
    std::vector<const T*> ptrs;
    for (const auto& img : images) ptrs.push_back(img.data());
    return ptrs;
}

// Two classes that differ in which quadrant is bright; separable by intensity.
nn::ImageSet<float> two_blob_set(Rng& rng, std::size_t per_class, int side) {
    nn::ImageSet<float> set;
    set.channels = 1;
    set.height = side;
    set.width = side;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int cls = static_cast<int>(i % 2);
        std::vector<float> img(static_cast<std::size_t>(side) * side);
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                const bool top_left = y < side / 2 && x < side / 2;
                const bool bottom_right = y >= side / 2 && x >= side / 2;
                const bool bright = cls == 0 ? top_left : bottom_right;
                img[static_cast<std::size_t>(y) * side + x] =
                    static_cast<float>(bright ? 0.8 + 0.2 * rng.uniform()
                                              : 0.05 * rng.uniform());
            }
        }
        set.images.push_back(std::move(img));
        set.labels.push_back(cls);
        // keep a few samples per class for validation
        set.splits.push_back(i < 2 * per_class - 6 ? ingest::Split::train
                                                   : ingest::Split::validation);
    }
    return set;
}

}  // namespace

TEST_CASE("filter counts follow the square-root rule") {
    NetworkSpec spec;
    CHECK(spec.filter_counts(92, 92) == std::vector<int>{46, 92, 138, 184});
    CHECK(spec.filter_counts(90, 92) == std::vector<int>{45, 90, 135, 180});
    CHECK(spec.filter_counts(16, 16) == std::vector<int>{8, 16, 24, 32});
    CHECK(spec.filter_counts(29, 29) == std::vector<int>{15, 29, 44, 58});
}

TEST_CASE("build is deterministic per seed and validates the input size") {
    NetworkSpec spec;
    const auto a = nn::build<float>(spec, 1, 16, 16, 42);
    const auto b = nn::build<float>(spec, 1, 16, 16, 42);
    CHECK(a.params == b.params);
    const auto c = nn::build<float>(spec, 1, 16, 16, 43);
    CHECK(a.params != c.params);

    for (const auto& seg : a.conv_b) {
        for (float v : a.view(seg)) CHECK(v == 0.0f);
    }
    CHECK(a.flat == 32);  // 32 filters over a 1x1 map

    CHECK_THROWS_AS(nn::build<float>(spec, 1, 8, 8, 1), ValidationError);
    CHECK_THROWS_AS(nn::build<float>(spec, 1, 15, 64, 1), ValidationError);
}

TEST_CASE("forward produces normalized probabilities") {
    Rng rng(11);
    const auto model = nn::build<double>(NetworkSpec{}, 1, 16, 16, 7);
    const auto images = random_images<double>(rng, 5, 1, 16);
    const auto probs = nn::forward<double>(model, as_pointers(images));
    REQUIRE(probs.size() == 10);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(probs[2 * i] > 0.0);
        CHECK(probs[2 * i] < 1.0);
        CHECK(probs[2 * i] + probs[2 * i + 1] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("an all-zero image with zero biases scores 50/50") {
    const auto model = nn::build<double>(NetworkSpec{}, 3, 16, 16, 3);
    const std::vector<double> zero(3 * 16 * 16, 0.0);
    const double* ptr = zero.data();
    const auto probs = nn::forward<double>(model, std::span<const double* const>(&ptr, 1));
    CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("max pooling picks the window maximum") {
    const std::vector<double> patch = {1, 2, 3, 4};  // [[1,2],[3,4]]
    std::vector<double> out(1);
    std::vector<int> idx(1);
    nn::maxpool<double>(patch.data(), out.data(), idx.data(), 1, 2, 2);
    CHECK(out[0] == 4.0);
    CHECK(idx[0] == 3);

    // odd trailing row/column is dropped
    const std::vector<double> plane = {9, 1, 5,
                                       1, 2, 7,
                                       8, 8, 8};
    std::vector<double> out2(1);
    std::vector<int> idx2(1);
    nn::maxpool<double>(plane.data(), out2.data(), idx2.data(), 1, 3, 3);
    CHECK(out2[0] == 9.0);
    CHECK(idx2[0] == 0);
}

TEST_CASE("analytic gradients match central differences") {
    Rng rng(13);
    // full-size version of this check runs in the acceptance suite
    for (int channels : {1, 3}) {
        auto model = nn::build<double>(NetworkSpec{}, channels, 16, 16, 17 + channels);
        const auto images = random_images<double>(rng, 3, channels, 16);
        const std::vector<int> labels = {0, 1, 0};

        const auto groups = testsup::parameter_groups(model);
        const auto stats = testsup::gradient_check<double>(
            model, as_pointers(images), labels, 1e-4, groups, 20, rng);
        CHECK(stats.checked == groups.size() * 20);
        CHECK(stats.worst < 1e-4);
    }
}

TEST_CASE("a duplicated sample leaves the mean gradient unchanged") {
    Rng rng(17);
    const auto model = nn::build<double>(NetworkSpec{}, 1, 16, 16, 23);
    const auto images = random_images<double>(rng, 1, 1, 16);
    const std::vector<int> one_label = {1};
    const std::vector<int> two_labels = {1, 1};

    std::vector<double> single, doubled;
    nn::backward<double>(model, as_pointers(images), one_label, 0.0, single);
    const std::vector<const double*> twice = {images[0].data(), images[0].data()};
    nn::backward<double>(model, twice, two_labels, 0.0, doubled);
    REQUIRE(single.size() == doubled.size());
    for (std::size_t i = 0; i < single.size(); ++i) {
        CHECK(doubled[i] == doctest::Approx(single[i]).epsilon(1e-12));
    }
}

TEST_CASE("the L2 term adds exactly 2*lambda*w per weight") {
    Rng rng(19);
    const auto model = nn::build<double>(NetworkSpec{}, 1, 16, 16, 29);
    const auto images = random_images<double>(rng, 2, 1, 16);
    const std::vector<int> labels = {0, 1};
    const double lambda = 0.01;

    std::vector<double> plain, regularized;
    const double loss_plain =
        nn::backward<double>(model, as_pointers(images), labels, 0.0, plain);
    const double loss_reg =
        nn::backward<double>(model, as_pointers(images), labels, lambda, regularized);
    CHECK(loss_reg > loss_plain);  // nonzero weights always pay a penalty

    std::vector<bool> is_weight(model.params.size(), false);
    for (const auto& seg : model.weight_segments()) {
        for (std::size_t i = 0; i < seg.size; ++i) is_weight[seg.offset + i] = true;
    }
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        const double expected =
            is_weight[p] ? plain[p] + 2.0 * lambda * model.params[p] : plain[p];
        CHECK(regularized[p] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("training with a zero learning rate changes nothing") {
    Rng rng(23);
    auto set = two_blob_set(rng, 10, 16);
    auto model = nn::build<float>(NetworkSpec{}, 1, 16, 16, 31);
    const auto before = model.params;

    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.batch = 4;
    cfg.max_iterations = 30;
    cfg.eval_every = 10;
    cfg.seed = 5;
    const auto result = nn::train(model, set, cfg);
    CHECK(!result.diverged);
    CHECK(model.params == before);
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
    Rng rng(29);
    auto set = two_blob_set(rng, 8, 16);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.batch = 4;
    cfg.max_iterations = 25;
    cfg.eval_every = 5;
    cfg.seed = 77;

    auto run = [&](int threads) {
        auto model = nn::build<float>(NetworkSpec{}, 1, 16, 16, 77);
        nn::train(model, set, cfg, threads);
        return model.params;
    };
    const auto a = run(1);
    const auto b = run(1);
    CHECK(a == b);
    const auto c = run(2);  // parallel batches must not change the arithmetic
    CHECK(a == c);
}

TEST_CASE("a separable toy set trains to full accuracy within 200 iterations") {
    Rng rng(31);
    auto set = two_blob_set(rng, 24, 16);
    auto model = nn::build<float>(NetworkSpec{}, 1, 16, 16, 3);

    TrainConfig cfg;
    cfg.learning_rate = 0.02;
    cfg.momentum = 0.88;
    cfg.batch = 8;
    cfg.max_iterations = 200;
    cfg.eval_every = 50;
    cfg.seed = 3;
    const auto result = nn::train(model, set, cfg, 2);
    CHECK(!result.diverged);

    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.splits[i] == ingest::Split::train) train_idx.push_back(i);
    }
    CHECK(nn::evaluate_accuracy(model, set, train_idx) == 1.0);
}

TEST_CASE("prediction breaks ties toward class 0 and ignores batching") {
    NetworkSpec spec;
    Model<float> zero_model = nn::build<float>(spec, 1, 16, 16, 1);
    std::fill(zero_model.params.begin(), zero_model.params.end(), 0.0f);

    Rng rng(37);
    const auto images = random_images<float>(rng, 6, 1, 16);
    const auto ptrs = as_pointers(images);
    const auto ties = nn::predict<float>(zero_model, ptrs);
    CHECK(std::all_of(ties.begin(), ties.end(), [](int p) { return p == 0; }));

    const auto trained = nn::build<float>(spec, 1, 16, 16, 2);
    const auto whole = nn::predict<float>(trained, ptrs);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const auto single =
            nn::predict<float>(trained, std::span<const float* const>(&ptrs[i], 1));
        CHECK(single[0] == whole[i]);
    }
}

TEST_CASE("checkpoints restore the exact parameters") {
    const auto dir = testsup::fresh_dir("ckpt");
    Rng rng(41);
    const auto model = nn::build<float>(NetworkSpec{}, 3, 17, 19, 5);
    const auto path = (dir / "model.ckpt").string();
    nn::save_checkpoint(model, path);

    const auto loaded = nn::load_checkpoint(path);
    CHECK(loaded.params == model.params);
    CHECK(loaded.in_ch == 3);
    CHECK(loaded.in_h == 17);
    CHECK(loaded.in_w == 19);

    std::vector<std::vector<float>> imgs(2);
    for (auto& img : imgs) {
        img.resize(3 * 17 * 19);
        for (float& v : img) v = static_cast<float>(rng.uniform());
    }
    const auto p1 = nn::forward<float>(model, as_pointers(imgs));
    const auto p2 = nn::forward<float>(loaded, as_pointers(imgs));
    CHECK(p1 == p2);

    testsup::write_file(dir / "junk.ckpt", "not a checkpoint");
    CHECK_THROWS_AS(nn::load_checkpoint((dir / "junk.ckpt").string()), ValidationError);
}

TEST_CASE("an exploding learning rate reports divergence") {
    Rng rng(47);
    auto set = two_blob_set(rng, 10, 16);
    auto model = nn::build<float>(NetworkSpec{}, 1, 16, 16, 9);

    TrainConfig cfg;
    cfg.learning_rate = 1e20;
    cfg.batch = 4;
    cfg.max_iterations = 20;
    cfg.eval_every = 5;
    cfg.seed = 9;
    const auto result = nn::train(model, set, cfg);
    CHECK(result.diverged);
    CHECK(result.diagnostic.find("non-finite") != std::string::npos);
}

TEST_CASE("train validates its inputs") {
    Rng rng(43);
    auto set = two_blob_set(rng, 8, 16);
    auto model = nn::build<float>(NetworkSpec{}, 1, 16, 16, 1);

    TrainConfig cfg;
    cfg.batch = 64;  // larger than the training split
    cfg.max_iterations = 1;
    CHECK_THROWS_AS(nn::train(model, set, cfg), ValidationError);

    cfg.batch = 4;
    auto no_splits = set;
    no_splits.splits.clear();
    CHECK_THROWS_AS(nn::train(model, no_splits, cfg), ValidationError);
}
