#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "efm/adam.hpp"
#include "efm/checkpoint.hpp"
#include "efm/mlp.hpp"
#include "efm/rng.hpp"
#include "efm/tensor.hpp"

using namespace efm;
using namespace efm::nn;

namespace {

// ---------------------------------------------------------------------------
// Double-precision reference network, independent of the Tensor graph.
// Used as the oracle for forward values and finite-difference gradients.
// ---------------------------------------------------------------------------
struct RefMlp {
    std::vector<int> sizes;
    std::vector<std::vector<double>> w;  // [in*out] row-major
    std::vector<std::vector<double>> b;

    static RefMlp from(const Mlp& net) {
        RefMlp r;
        r.sizes = net.layer_sizes;
        for (size_t l = 0; l < net.weights.size(); ++l) {
            r.w.emplace_back(net.weights[l].data().begin(), net.weights[l].data().end());
            r.b.emplace_back(net.biases[l].data().begin(), net.biases[l].data().end());
        }
        return r;
    }

    std::vector<double> forward(const std::vector<double>& input) const {
        std::vector<double> x = input;
        for (size_t l = 0; l < w.size(); ++l) {
            const int in = sizes[l], out = sizes[l + 1];
            std::vector<double> y(out, 0.0);
            for (int k = 0; k < in; ++k)
                for (int j = 0; j < out; ++j) y[j] += x[k] * w[l][k * out + j];
            for (int j = 0; j < out; ++j) y[j] += b[l][j];
            if (l + 1 < w.size())
                for (double& v : y) v = std::tanh(v);
            x = std::move(y);
        }
        return x;
    }

    // mean squared error over all batch entries
    double mse_loss(const std::vector<std::vector<double>>& xs,
                    const std::vector<std::vector<double>>& ys) const {
        double acc = 0.0;
        size_t count = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            auto out = forward(xs[i]);
            for (size_t j = 0; j < out.size(); ++j) {
                const double d = out[j] - ys[i][j];
                acc += d * d;
                ++count;
            }
        }
        return acc / static_cast<double>(count);
    }
};

Tensor batch_tensor(const std::vector<std::vector<double>>& rows) {
    const int B = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows[0].size());
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(B) * c);
    for (const auto& r : rows)
        for (double v : r) flat.push_back(static_cast<float>(v));
    return Tensor::from_data({B, c}, std::move(flat));
}

Tensor mse_loss_graph(const Mlp& net, const Tensor& x, const Tensor& y) {
    return mean_all(square(sub(net.forward(x), y)));
}

/// Central finite differences of the reference loss w.r.t. one float weight.
double fd_grad(Mlp& net, RefMlp& ref, int layer, bool bias, size_t idx,
               const std::vector<std::vector<double>>& xs,
               const std::vector<std::vector<double>>& ys, double h) {
    auto& buf = bias ? ref.b[layer] : ref.w[layer];
    const double saved = buf[idx];
    buf[idx] = saved + h;
    const double up = ref.mse_loss(xs, ys);
    buf[idx] = saved - h;
    const double dn = ref.mse_loss(xs, ys);
    buf[idx] = saved;
    (void)net;
    return (up - dn) / (2.0 * h);
}

struct GradCheckStats {
    double worst_rel = 0.0;
    int checked = 0;
};

GradCheckStats grad_check(Mlp& net, Rng& data_rng, int batch) {
    const int in = net.input_width();
    const int out = net.output_width();
    std::vector<std::vector<double>> xs, ys;
    for (int i = 0; i < batch; ++i) {
        std::vector<double> x(in), y(out);
        for (double& v : x) v = data_rng.uniform(-1.0f, 1.0f);
        for (double& v : y) v = data_rng.uniform(-1.0f, 1.0f);
        xs.push_back(std::move(x));
        ys.push_back(std::move(y));
    }

    auto params = net.params();
    zero_grads(params);
    Tensor loss = mse_loss_graph(net, batch_tensor(xs), batch_tensor(ys));
    loss.backward();

    RefMlp ref = RefMlp::from(net);
    GradCheckStats stats;
    for (int l = 0; l < net.layer_count(); ++l) {
        for (int bias = 0; bias < 2; ++bias) {
            Tensor& p = bias ? net.biases[l] : net.weights[l];
            for (size_t k = 0; k < p.data().size(); ++k) {
                const double ad = p.grad()[k];
                const double fd = fd_grad(net, ref, l, bias != 0, k, xs, ys, 1e-3);
                if (std::abs(ad) < 1e-6 && std::abs(fd) < 1e-6) continue;
                const double rel = std::abs(ad - fd) / std::max(std::abs(ad), std::abs(fd));
                stats.worst_rel = std::max(stats.worst_rel, rel);
                ++stats.checked;
            }
        }
    }
    return stats;
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "efm_test_nn";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

TEST_CASE("forward: zero weights return the output bias for every row") {
    Mlp net = Mlp::zeros({3, 4, 2});
    net.biases[1].data()[0] = 1.5f;
    net.biases[1].data()[1] = -2.0f;
    Tensor x = Tensor::from_data({3, 3}, {0.1f, 0.2f, 0.3f, -1, 2, 5, 0, 0, 0});
    Tensor y = net.forward(x);
    for (int i = 0; i < 3; ++i) {
        CHECK(y.data()[i * 2 + 0] == doctest::Approx(1.5f));
        CHECK(y.data()[i * 2 + 1] == doctest::Approx(-2.0f));
    }
}

TEST_CASE("forward: identity single layer passes input through") {
    Mlp net = Mlp::zeros({3, 3});
    for (int i = 0; i < 3; ++i) net.weights[0].data()[i * 3 + i] = 1.0f;
    Tensor x = Tensor::from_data({1, 3}, {0.7f, -0.4f, 2.5f});
    Tensor y = net.forward(x);
    for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("forward: two-layer net matches explicit matrix arithmetic") {
    Mlp net = Mlp::zeros({2, 2, 1});
    // hand-set weights
    const std::vector<float> w0 = {0.5f, -0.3f, 0.2f, 0.8f};  // [2x2]
    const std::vector<float> b0 = {0.1f, -0.2f};
    const std::vector<float> w1 = {1.5f, -0.5f};  // [2x1]
    const std::vector<float> b1 = {0.25f};
    std::copy(w0.begin(), w0.end(), net.weights[0].data().begin());
    std::copy(b0.begin(), b0.end(), net.biases[0].data().begin());
    std::copy(w1.begin(), w1.end(), net.weights[1].data().begin());
    std::copy(b1.begin(), b1.end(), net.biases[1].data().begin());

    Tensor x = Tensor::from_data({1, 2}, {1.0f, 2.0f});
    Tensor y = net.forward(x);

    // independent oracle: explicit double arithmetic
    const double h0 = std::tanh(1.0 * 0.5 + 2.0 * 0.2 + 0.1);
    const double h1 = std::tanh(1.0 * -0.3 + 2.0 * 0.8 - 0.2);
    const double expected = h0 * 1.5 + h1 * -0.5 + 0.25;
    CHECK(y.data()[0] == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("forward: wrong input width names the layer") {
    Mlp net = Mlp::zeros({3, 2});
    Tensor x = Tensor::from_data({1, 2}, {1.0f, 2.0f});
    CHECK_THROWS_WITH_AS(net.forward(x),
                         doctest::Contains("layer 0"), ShapeError);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

TEST_CASE("backward: d/dw sum(w*w) == 2w") {
    Tensor w = Tensor::param({4}, {1.0f, -2.0f, 0.5f, 3.0f});
    Tensor loss = sum_all(mul(w, w));
    loss.backward();
    for (size_t i = 0; i < 4; ++i)
        CHECK(w.grad()[i] == doctest::Approx(2.0f * w.data()[i]));
}

TEST_CASE("backward: repeated calls accumulate") {
    Tensor w = Tensor::param({2}, {1.0f, 2.0f});
    Tensor loss = sum_all(mul(w, w));
    loss.backward();
    loss.backward();
    CHECK(w.grad()[0] == doctest::Approx(4.0f));
    CHECK(w.grad()[1] == doctest::Approx(8.0f));
}

TEST_CASE("backward: constant loss leaves all grads zero") {
    Tensor w = Tensor::param({3}, {1.0f, 2.0f, 3.0f});
    Tensor loss = Tensor::scalar(42.0f);
    loss.backward();  // nothing reachable
    for (size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == 0.0f);
}

TEST_CASE("backward: non-scalar loss is a contract error") {
    Tensor w = Tensor::param({2}, {1.0f, 2.0f});
    Tensor y = mul(w, w);
    CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("backward: random net matches central finite differences") {
    Rng rng(7);
    Mlp net = Mlp::init({3, 8, 2}, rng);
    Rng data_rng(11);
    auto stats = grad_check(net, data_rng, 4);
    CHECK(stats.checked > 0);
    CHECK(stats.worst_rel < 1e-3);
}

TEST_CASE("gradient property: 20 random small MLPs vs finite differences") {
    Rng meta(123);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> sizes;
        const int n_layers = 1 + static_cast<int>(meta.uniform_int(3));  // <= 3 weight layers
        sizes.push_back(1 + static_cast<int>(meta.uniform_int(6)));
        for (int l = 0; l < n_layers - 1; ++l)
            sizes.push_back(1 + static_cast<int>(meta.uniform_int(32)));
        sizes.push_back(1 + static_cast<int>(meta.uniform_int(4)));

        Rng init_rng(derive_seed(1000, static_cast<std::uint64_t>(trial)));
        Mlp net = Mlp::init(sizes, init_rng);
        Rng data_rng(derive_seed(2000, static_cast<std::uint64_t>(trial)));
        auto stats = grad_check(net, data_rng, 3);
        INFO("trial ", trial, " worst rel err ", stats.worst_rel);
        CHECK(stats.worst_rel < 1e-3);
    }
}

TEST_CASE("ops: concat and slice route gradients to the right columns") {
    Tensor a = Tensor::param({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::param({2, 1}, {5, 6});
    Tensor cat = concat_cols({a, b});
    CHECK(cat.cols() == 3);
    CHECK(cat.data()[2] == 5.0f);
    CHECK(cat.data()[5] == 6.0f);
    Tensor loss = sum_all(square(slice_cols(cat, 2, 1)));
    loss.backward();
    CHECK(a.grad()[0] == 0.0f);
    CHECK(b.grad()[0] == doctest::Approx(10.0f));
    CHECK(b.grad()[1] == doctest::Approx(12.0f));
}

// ---------------------------------------------------------------------------
// adam
// ---------------------------------------------------------------------------

TEST_CASE("adam: zero grads leave parameters unchanged") {
    Tensor w = Tensor::param({3}, {1.0f, -2.0f, 0.5f});
    AdamState opt({.learning_rate = 0.1f});
    opt.step({&w});
    CHECK(w.data()[0] == doctest::Approx(1.0f));
    CHECK(w.data()[1] == doctest::Approx(-2.0f));
    CHECK(w.data()[2] == doctest::Approx(0.5f));
}

TEST_CASE("adam: first bias-corrected step moves by about lr") {
    Tensor w = Tensor::param({1}, {0.0f});
    w.grad()[0] = 1.0f;
    AdamState opt({.learning_rate = 0.1f});
    opt.step({&w});
    CHECK(opt.step_count() == 1);
    CHECK(w.data()[0] == doctest::Approx(-0.1f).epsilon(1e-4));
}

TEST_CASE("adam: converges on the quadratic (w-3)^2") {
    Tensor w = Tensor::param({1}, {0.0f});
    AdamState opt({.learning_rate = 0.1f});
    for (int i = 0; i < 100; ++i) {
        w.zero_grad();
        Tensor target = Tensor::scalar(3.0f);
        Tensor loss = sum_all(square(sub(w, target)));
        loss.backward();
        opt.step({&w});
    }
    CHECK(std::abs(w.data()[0] - 3.0f) < 0.1f);
}

TEST_CASE("adam: missing grad is a contract error") {
    Tensor w = Tensor::from_data({1}, {0.0f});  // not a param: no grad buffer
    AdamState opt;
    CHECK_THROWS_AS(opt.step({&w}), ContractError);
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint: empty set round-trips") {
    auto path = temp_file("empty.efmc").string();
    NamedTensors t;
    save_checkpoint(t, path);
    auto back = load_checkpoint(path);
    CHECK(back.size() == 0);
}

TEST_CASE("checkpoint: tensor round-trip is bit exact") {
    auto path = temp_file("one.efmc").string();
    NamedTensors t;
    t.add("layer.w", Tensor::from_data({2, 3}, {1.5f, -0.25f, 3e-8f, 1e20f, 0.0f, -7.0f}));
    save_checkpoint(t, path);
    auto back = load_checkpoint(path);
    REQUIRE(back.size() == 1);
    const Tensor& got = back.at("layer.w");
    CHECK(got.shape() == Shape{2, 3});
    for (size_t i = 0; i < 6; ++i) {
        // bit-level comparison
        float a = t.at("layer.w").data()[i];
        float b = got.data()[i];
        CHECK(std::memcmp(&a, &b, sizeof(float)) == 0);
    }
}

TEST_CASE("checkpoint: corrupted magic is a format error") {
    auto path = temp_file("bad_magic.efmc").string();
    NamedTensors t;
    t.add("x", Tensor::scalar(1.0f));
    save_checkpoint(t, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("checkpoint: truncated file reports the offending offset") {
    auto path = temp_file("trunc.efmc").string();
    NamedTensors t;
    t.add("x", Tensor::from_data({4}, {1, 2, 3, 4}));
    save_checkpoint(t, path);
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 6);
    try {
        load_checkpoint(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset > 0);
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
}

TEST_CASE("checkpoint: duplicate or empty names rejected") {
    NamedTensors t;
    t.add("a", Tensor::scalar(1.0f));
    CHECK_THROWS_AS(t.add("a", Tensor::scalar(2.0f)), ContractError);
    CHECK_THROWS_AS(t.add("", Tensor::scalar(2.0f)), ContractError);
}

// ---------------------------------------------------------------------------
// determinism
// ---------------------------------------------------------------------------

TEST_CASE("determinism: same seed gives bit-identical training trajectories") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Mlp net = Mlp::init({2, 16, 1}, rng);
        AdamState opt({.learning_rate = 1e-2f});
        auto params = net.params();
        Rng data(derive_seed(seed, 1));
        for (int step = 0; step < 20; ++step) {
            std::vector<float> xs, ys;
            for (int i = 0; i < 8; ++i) {
                const float a = data.uniform(-1, 1), b = data.uniform(-1, 1);
                xs.push_back(a);
                xs.push_back(b);
                ys.push_back(a * b);
            }
            zero_grads(params);
            Tensor loss = mean_all(square(
                sub(net.forward(Tensor::from_data({8, 2}, xs)), Tensor::from_data({8, 1}, ys))));
            loss.backward();
            opt.step(params);
        }
        std::vector<float> flat;
        for (const Tensor* p : net.params())
            flat.insert(flat.end(), p->data().begin(), p->data().end());
        return flat;
    };
    auto a = run(42), b = run(42), c = run(43);
    CHECK(a == b);
    CHECK(a != c);
}
