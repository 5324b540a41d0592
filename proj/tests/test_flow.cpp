#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "efm/flow.hpp"

using namespace efm;
using namespace efm::flow;
using nn::Tensor;

namespace {

/// Single linear layer so the field is an exact affine function of (x, t, c).
FlowModel stub_model(int data_dim, int cond_dim, SourceDistribution source) {
    FlowModel m;
    m.data_dim = data_dim;
    m.cond_dim = cond_dim;
    m.source = std::move(source);
    m.net = nn::Mlp::zeros({data_dim + 1 + cond_dim, data_dim});
    return m;
}

FlowModel constant_field_model(const std::vector<float>& v,
                               SourceDistribution source) {
    FlowModel m = stub_model(static_cast<int>(v.size()), 0, std::move(source));
    std::copy(v.begin(), v.end(), m.net.biases[0].data().begin());
    return m;
}

TargetSampler uniform_target(float lo, float hi) {
    return [lo, hi](Rng& rng, std::span<float> x, std::span<float>) { x[0] = rng.uniform(lo, hi); };
}

FlowTrainConfig quick_config(std::uint64_t seed) {
    FlowTrainConfig c;
    c.epochs = 10;
    c.steps_per_epoch = 800;
    c.batch_size = 64;
    c.learning_rate = 2e-3f;
    c.final_lr_fraction = 0.1f;
    c.seed = seed;
    return c;
}

FlowModel trained_1d(const TargetSampler& target, std::uint64_t seed) {
    Rng rng(seed);
    FlowModel m = FlowModel::create(1, 0, {64, 64}, SourceDistribution::unit_box(1), rng);
    train(m, target, quick_config(seed));
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// flow_loss
// ---------------------------------------------------------------------------

TEST_CASE("flow_loss: exact velocity gives zero loss") {
    FlowModel m = constant_field_model({1.0f}, SourceDistribution::unit_box(1));
    FlowBatch b;
    b.x_src = Tensor::from_data({1, 1}, {0.0f});
    b.x_dst = Tensor::from_data({1, 1}, {1.0f});
    b.t = Tensor::from_data({1, 1}, {0.5f});
    CHECK(flow_loss(m, b).item() == doctest::Approx(0.0f));
}

TEST_CASE("flow_loss: zero field against unit transport gives loss 1") {
    FlowModel m = constant_field_model({0.0f}, SourceDistribution::unit_box(1));
    FlowBatch b;
    b.x_src = Tensor::from_data({1, 1}, {0.0f});
    b.x_dst = Tensor::from_data({1, 1}, {1.0f});
    b.t = Tensor::from_data({1, 1}, {0.5f});
    CHECK(flow_loss(m, b).item() == doctest::Approx(1.0f));
}

TEST_CASE("flow_loss: 2-D arithmetic") {
    FlowModel m = constant_field_model({1.0f, 1.0f}, SourceDistribution::unit_box(2));
    FlowBatch b;
    b.x_src = Tensor::from_data({1, 2}, {0.0f, 0.0f});
    b.x_dst = Tensor::from_data({1, 2}, {2.0f, 0.0f});
    b.t = Tensor::from_data({1, 1}, {0.25f});
    CHECK(flow_loss(m, b).item() == doctest::Approx(2.0f));
}

TEST_CASE("flow_loss: dimension mismatch is an error") {
    FlowModel m = constant_field_model({0.0f}, SourceDistribution::unit_box(1));
    FlowBatch b;
    b.x_src = Tensor::from_data({1, 2}, {0.0f, 0.0f});
    b.x_dst = Tensor::from_data({1, 2}, {1.0f, 1.0f});
    b.t = Tensor::from_data({1, 1}, {0.5f});
    CHECK_THROWS_AS(flow_loss(m, b), ShapeError);
}

// ---------------------------------------------------------------------------
// integrate
// ---------------------------------------------------------------------------

TEST_CASE("integrate: constant field is exact for any step count") {
    FlowModel m = constant_field_model({0.7f, -0.3f}, SourceDistribution::unit_box(2));
    const std::vector<float> x0 = {0.1f, 0.9f};
    for (int steps : {1, 2, 5, 10, 17, 64}) {
        auto x1 = integrate_row(m, x0, {}, steps);
        CHECK(x1[0] == doctest::Approx(0.8f).epsilon(1e-5));
        CHECK(x1[1] == doctest::Approx(0.6f).epsilon(1e-5));
    }
}

TEST_CASE("integrate: f(x,t)=t with two steps adds a quarter") {
    FlowModel m = stub_model(1, 0, SourceDistribution::unit_box(1));
    m.net.weights[0].data()[1] = 1.0f;  // weight on the t channel
    auto x1 = integrate_row(m, std::vector<float>{0.3f}, {}, 2);
    CHECK(x1[0] == doctest::Approx(0.3f + 0.25f).epsilon(1e-6));
}

TEST_CASE("integrate: f(x,t)=x with four steps compounds 1.25^4") {
    FlowModel m = stub_model(1, 0, SourceDistribution::unit_box(1));
    m.net.weights[0].data()[0] = 1.0f;  // weight on the x channel
    auto x1 = integrate_row(m, std::vector<float>{0.8f}, {}, 4);
    const float expected = 0.8f * std::pow(1.25f, 4.0f);
    CHECK(x1[0] == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("integrate: zero steps rejected") {
    FlowModel m = constant_field_model({0.0f}, SourceDistribution::unit_box(1));
    CHECK_THROWS_AS(integrate_row(m, std::vector<float>{0.0f}, {}, 0), ContractError);
}

TEST_CASE("integrate: unconditional model ignores any conditioning buffer") {
    FlowModel m = constant_field_model({0.5f}, SourceDistribution::unit_box(1));
    auto a = integrate_row(m, std::vector<float>{0.2f}, {}, 8);
    auto b = integrate_row(m, std::vector<float>{0.2f}, std::vector<float>{9.0f, -3.0f}, 8);
    CHECK(a[0] == b[0]);
}

// ---------------------------------------------------------------------------
// training behavior
// ---------------------------------------------------------------------------

TEST_CASE("train: identical source and target converges to (near) zero transport") {
    FlowModel m = trained_1d(uniform_target(0.0f, 1.0f), 5);
    // The optimum carries every point back to itself; measure net displacement.
    double acc = 0.0;
    int count = 0;
    for (float x0 = 0.05f; x0 < 1.0f; x0 += 0.05f) {
        auto x1 = integrate_row(m, std::vector<float>{x0}, {}, kDefaultEulerSteps);
        acc += std::abs(x1[0] - x0);
        ++count;
    }
    CHECK(acc / count < 0.1);
}

TEST_CASE("train: point-mass target pulls every source point to it") {
    FlowModel m = trained_1d([](Rng&, std::span<float> x, std::span<float>) { x[0] = 3.0f; }, 6);
    for (float x0 = 0.0f; x0 <= 1.0f; x0 += 0.125f) {
        auto x1 = integrate_row(m, std::vector<float>{x0}, {}, kDefaultEulerSteps);
        CHECK(std::abs(x1[0] - 3.0f) < 0.05f);
    }
}

TEST_CASE("train: U(2,5) target generates samples within a loose support band") {
    FlowModel m = trained_1d(uniform_target(2.0f, 5.0f), 7);
    Rng rng(99);
    auto xs = sample(m, {}, 1000, kDefaultEulerSteps, rng);
    const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
    CHECK(*mn > 1.8f);
    CHECK(*mx < 5.2f);
}

TEST_CASE("train: NaN weights abort with step diagnostics") {
    Rng rng(1);
    FlowModel m = FlowModel::create(1, 0, {8}, SourceDistribution::unit_box(1), rng);
    m.net.weights[0].data()[0] = std::numeric_limits<float>::quiet_NaN();
    FlowTrainConfig cfg = quick_config(1);
    cfg.epochs = 1;
    cfg.steps_per_epoch = 2;
    CHECK_THROWS_WITH_AS(train(m, uniform_target(0, 1), cfg), doctest::Contains("step"),
                         TrainingError);
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

TEST_CASE("sample: point-mass model lands every draw near the point") {
    FlowModel m = trained_1d([](Rng&, std::span<float> x, std::span<float>) { x[0] = 3.0f; }, 8);
    Rng rng(3);
    auto xs = sample(m, {}, 64, kDefaultEulerSteps, rng);
    for (float v : xs) CHECK(std::abs(v - 3.0f) < 0.05f);
}

TEST_CASE("sample: seeded rng reproduces the sequence") {
    FlowModel m = constant_field_model({0.25f}, SourceDistribution::unit_box(1));
    Rng r1(17), r2(17);
    auto a = sample(m, {}, 16, 4, r1);
    auto b = sample(m, {}, 16, 4, r2);
    CHECK(a == b);
}

TEST_CASE("sample: conditioning width mismatch is an error") {
    Rng rng(2);
    FlowModel m = FlowModel::create(1, 2, {8}, SourceDistribution::unit_box(1), rng);
    Rng srng(4);
    CHECK_THROWS_AS(sample(m, std::vector<float>{1.0f}, 1, 4, srng), ShapeError);
}

// ---------------------------------------------------------------------------
// properties
// ---------------------------------------------------------------------------

TEST_CASE("property: trained 1-D transport is monotone on the source grid") {
    FlowModel m = trained_1d(
        [](Rng& rng, std::span<float> x, std::span<float>) {
            // bimodal target exercises a non-trivial map
            x[0] = rng.uniform() < 0.5f ? rng.uniform(0.0f, 1.0f) : rng.uniform(3.0f, 4.0f);
        },
        9);
    std::vector<float> grid(101), out;
    for (int i = 0; i <= 100; ++i) grid[i] = static_cast<float>(i) / 100.0f;
    out = integrate(m, grid, {}, 101, kDefaultEulerSteps);
    for (int i = 0; i + 1 <= 100; ++i) CHECK(out[i + 1] - out[i] > -1e-3f);
}

TEST_CASE("property: Euler step refinement converges on a trained model") {
    FlowModel m = trained_1d(uniform_target(2.0f, 5.0f), 10);
    std::vector<float> grid(21);
    for (int i = 0; i <= 20; ++i) grid[i] = static_cast<float>(i) / 20.0f;
    auto diff_at = [&](int n) {
        auto a = integrate(m, grid, {}, 21, n);
        auto b = integrate(m, grid, {}, 21, 2 * n);
        float worst = 0.0f;
        for (int i = 0; i <= 20; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
        return worst;
    };
    float prev = std::numeric_limits<float>::max();
    for (int n : {4, 8, 16, 32}) {
        const float d = diff_at(n);
        CHECK(d < prev + 1e-6f);
        prev = d;
    }
}

TEST_CASE("persistence: flow round-trips through a checkpoint container") {
    Rng rng(21);
    FlowModel m = FlowModel::create(2, 1, {16, 16}, SourceDistribution::unit_box(2), rng);
    nn::NamedTensors out;
    save_flow(m, "actor.", out);
    FlowModel back = load_flow("actor.", out);
    CHECK(back.data_dim == 2);
    CHECK(back.cond_dim == 1);
    CHECK(back.source.kind == SourceDistribution::Kind::UniformBox);
    const std::vector<float> x0 = {0.3f, 0.6f};
    const std::vector<float> c = {0.5f};
    auto a = integrate_row(m, x0, c, 7);
    auto b = integrate_row(back, x0, c, 7);
    CHECK(a == b);
}
