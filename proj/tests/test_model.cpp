#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "tkil/errors.hpp"
#include "tkil/model.hpp"

using namespace tkil;

namespace {

bool bitwise_equal(const ModelState& a, const ModelState& b) {
    if (a.weights.size() != b.weights.size() || a.head_width != b.head_width) return false;
    for (size_t i = 0; i < a.weights.size(); ++i)
        if (a.weights[i].name != b.weights[i].name ||
            a.weights[i].value.shape != b.weights[i].value.shape ||
            a.weights[i].value.data != b.weights[i].value.data)
            return false;
    return true;
}

// plain nested-loop CNN reference: 3x3 same convolution, relu, 2x2 max pool
Tensor naive_conv3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int OC = w.shape[0];
    Tensor out = Tensor::zeros({B, OC, H, W});
    for (int n = 0; n < B; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double s = b.data[static_cast<size_t>(oc)];
                    for (int c = 0; c < C; ++c)
                        for (int kh = 0; kh < 3; ++kh)
                            for (int kw = 0; kw < 3; ++kw) {
                                const int y = i + kh - 1, xx = j + kw - 1;
                                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                                s += x.data[static_cast<size_t>(((n * C + c) * H + y) * W + xx)] *
                                     w.data[static_cast<size_t>(((oc * C + c) * 3 + kh) * 3 + kw)];
                            }
                    out.data[static_cast<size_t>(((n * OC + oc) * H + i) * W + j)] = s;
                }
    return out;
}

Tensor naive_relu(Tensor t) {
    for (auto& v : t.data) v = v > 0 ? v : 0.0;
    return t;
}

Tensor naive_pool2(const Tensor& x) {
    const int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    Tensor out = Tensor::zeros({B, C, H / 2, W / 2});
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H / 2; ++i)
                for (int j = 0; j < W / 2; ++j) {
                    double best = x.data[static_cast<size_t>(((n * C + c) * H + 2 * i) * W + 2 * j)];
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj)
                            best = std::max(best, x.data[static_cast<size_t>(
                                                      ((n * C + c) * H + 2 * i + di) * W + 2 * j + dj)]);
                    out.data[static_cast<size_t>(((n * C + c) * (H / 2) + i) * (W / 2) + j)] = best;
                }
    return out;
}

} // namespace

TEST_CASE("mlp construction is shaped and seeded deterministically") {
    const ModelState m = make_model("mlp:3:8,4", 2, 5);
    CHECK(m.array("phi.w1").shape == std::vector<int>{8, 3});
    CHECK(m.array("phi.b1").shape == std::vector<int>{8});
    CHECK(m.array("phi.w2").shape == std::vector<int>{4, 8});
    CHECK(m.array("theta.head.w").shape == std::vector<int>{2, 4});
    CHECK(m.head_width == 2);
    CHECK(feature_layer_name(m) == "phi.w2");
    CHECK(model_input_shape(m) == std::vector<int>{3});

    CHECK(bitwise_equal(m, make_model("mlp:3:8,4", 2, 5)));
    CHECK_FALSE(bitwise_equal(m, make_model("mlp:3:8,4", 2, 6)));
    CHECK_THROWS_AS(make_model("rnn:3", 2, 0), ConfigInvalid);
}

TEST_CASE("mlp forward matches a hand-computed example") {
    ModelState m = make_model("mlp:2:2", 1, 0);
    m.array("phi.w1") = Tensor({2, 2}, {1, 0, 0, 1});
    m.array("phi.b1") = Tensor({2}, {0.5, -0.5});
    m.array("theta.head.w") = Tensor({1, 2}, {2, -1});
    m.array("theta.head.b") = Tensor({1}, {0.25});

    const Tensor x({1, 2}, {0.3, 0.7});
    const auto [features, logits] = forward(m, x);
    CHECK(features.shape == std::vector<int>{1, 2});
    CHECK(features.data[0] == doctest::Approx(std::tanh(0.8)).epsilon(1e-14));
    CHECK(features.data[1] == doctest::Approx(std::tanh(0.2)).epsilon(1e-14));
    const double want = 2 * std::tanh(0.8) - std::tanh(0.2) + 0.25;
    CHECK(logits.data[0] == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("growing the head preserves old rows and old logits") {
    const ModelState m2 = make_model("mlp:2:6", 2, 3);
    const Tensor x({2, 2}, {0.1, -0.4, 0.8, 0.2});
    const Tensor before = forward(m2, x).second;

    const ModelState m4 = grow_head(m2, 2, 99);
    CHECK(m4.head_width == 4);
    const Tensor& w2 = m2.array("theta.head.w");
    const Tensor& w4 = m4.array("theta.head.w");
    for (size_t i = 0; i < w2.data.size(); ++i) CHECK(w4.data[i] == w2.data[i]);

    const Tensor after = forward(m4, x).second;
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c) CHECK(after.data[static_cast<size_t>(b * 4 + c)] ==
                                          before.data[static_cast<size_t>(b * 2 + c)]);
    // fresh rows start near zero so new classes cannot drown out old ones
    for (int c = 2; c < 4; ++c)
        for (int b = 0; b < 2; ++b)
            CHECK(std::abs(after.data[static_cast<size_t>(b * 4 + c)]) < 0.2);
}

TEST_CASE("growing in chunks equals growing at once") {
    const ModelState base = make_model("mlp:2:6", 0, 3);
    const ModelState at_once = grow_head(base, 4, 7);
    const ModelState chunked = grow_head(grow_head(base, 2, 7), 2, 7);
    CHECK(bitwise_equal(at_once, chunked));
}

TEST_CASE("cnn forward agrees with a nested-loop reference") {
    const ModelState m = make_model("cnn:1x16x16", 3, 1);
    CHECK(feature_layer_name(m) == "phi.conv4.w");
    Tensor x = Tensor::zeros({2, 1, 16, 16});
    uint64_t s = 12345;
    for (auto& v : x.data) {
        s = s * 6364136223846793005ull + 1442695040888963407ull;
        v = static_cast<double>(s >> 11) / static_cast<double>(1ull << 53) * 2.0 - 1.0;
    }

    Tensor a = naive_pool2(naive_relu(naive_conv3x3(x, m.array("phi.conv1.w"), m.array("phi.conv1.b"))));
    a = naive_pool2(naive_relu(naive_conv3x3(a, m.array("phi.conv2.w"), m.array("phi.conv2.b"))));
    a = naive_relu(naive_conv3x3(a, m.array("phi.conv3.w"), m.array("phi.conv3.b")));
    a = naive_pool2(naive_relu(naive_conv3x3(a, m.array("phi.conv4.w"), m.array("phi.conv4.b"))));

    const auto [features, logits] = forward(m, x);
    CHECK(features.shape == std::vector<int>{2, 16 * 2 * 2});
    REQUIRE(features.data.size() == a.data.size());
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(features.data[i] == doctest::Approx(a.data[i]).epsilon(1e-12));

    const Tensor& hw = m.array("theta.head.w");
    const Tensor& hb = m.array("theta.head.b");
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double want = hb.data[static_cast<size_t>(c)];
            for (int f = 0; f < 64; ++f)
                want += a.data[static_cast<size_t>(n * 64 + f)] * hw.data[static_cast<size_t>(c * 64 + f)];
            CHECK(logits.data[static_cast<size_t>(n * 3 + c)] ==
                  doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("average_weights honors its bitwise contracts") {
    const ModelState m = make_model("mlp:2:8", 2, 1);
    CHECK(bitwise_equal(average_weights({m, m, m}), m));

    ModelState neg = clone(m);
    for (auto& w : neg.weights)
        for (auto& v : w.value.data) v = -v;
    const ModelState zero = average_weights({m, neg});
    for (const auto& w : zero.weights)
        for (double v : w.value.data) CHECK(v == 0.0);

    const ModelState a = make_model("mlp:2:8", 2, 10);
    const ModelState b = make_model("mlp:2:8", 2, 11);
    const ModelState c = make_model("mlp:2:8", 2, 12);
    CHECK(bitwise_equal(average_weights({a, b, c}), average_weights({c, a, b})));

    const ModelState ab = average_weights({a, b});
    for (size_t i = 0; i < ab.weights.size(); ++i)
        for (size_t j = 0; j < ab.weights[i].value.data.size(); ++j) {
            const double want = (a.weights[i].value.data[j] + b.weights[i].value.data[j]) / 2.0;
            CHECK(ab.weights[i].value.data[j] == doctest::Approx(want).epsilon(1e-15));
        }

    CHECK_THROWS_AS(average_weights({}), HeterogeneousModels);
    CHECK_THROWS_AS(average_weights({m, make_model("mlp:2:8", 4, 1)}), HeterogeneousModels);
    CHECK_THROWS_AS(average_weights({m, make_model("mlp:2:9", 2, 1)}), HeterogeneousModels);
}

TEST_CASE("flatten and unflatten round-trip every part") {
    const ModelState m = make_model("mlp:3:5,4", 3, 8);
    const FlatWeights all = flatten(m, Part::all);
    const FlatWeights phi = flatten(m, Part::phi);
    const FlatWeights theta = flatten(m, Part::theta);
    CHECK(all.layout.total == phi.layout.total + theta.layout.total);
    CHECK(static_cast<int64_t>(all.values.size()) == all.layout.total);

    CHECK(bitwise_equal(unflatten(all), m));
    CHECK_THROWS_AS(unflatten(phi), LayoutMismatch);

    ModelState target = make_model("mlp:3:5,4", 3, 1);
    apply_flat(target, all);
    CHECK(bitwise_equal(target, m));

    FlatWeights bad = all;
    bad.values.pop_back();
    CHECK_THROWS_AS(apply_flat(target, bad), LayoutMismatch);
    CHECK_THROWS_AS(unflatten(bad), LayoutMismatch);
}

TEST_CASE("model checkpoints survive the archive round trip") {
    const ModelState m = make_model("mlp:4:6", 3, 17);
    CHECK(bitwise_equal(model_from_archive(model_to_archive(m)), m));

    const std::string path = (std::filesystem::temp_directory_path() / "tkil_model_rt.tkar").string();
    save_archive(path, model_to_archive(m));
    CHECK(bitwise_equal(model_from_archive(load_archive(path)), m));
    std::filesystem::remove(path);
}

TEST_CASE("forward rejects inputs of the wrong shape") {
    const ModelState m = make_model("mlp:3:4", 2, 0);
    CHECK_THROWS_AS(forward(m, Tensor::zeros({2, 4})), ShapeMismatch);
    const ModelState c = make_model("cnn:1x16x16", 2, 0);
    CHECK_THROWS_AS(forward(c, Tensor::zeros({2, 1, 8, 8})), ShapeMismatch);
}
