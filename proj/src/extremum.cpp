#include "efm/extremum.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "efm/adam.hpp"

namespace efm::extremum {

// --------------------------------------------------------------------------
// ExtremumModel1D
// --------------------------------------------------------------------------

ExtremumModel1D ExtremumModel1D::create(int cond_dim, const std::vector<int>& hidden, Rng& rng,
                                        float epsilon_lo, float epsilon_hi) {
    if (!(0.0f <= epsilon_lo && epsilon_lo < epsilon_hi && epsilon_hi <= 1.0f))
        throw ContractError("ExtremumModel1D: need 0 <= epsilon_lo < epsilon_hi <= 1");
    ExtremumModel1D m;
    m.flow_model =
        FlowModel::create(1, cond_dim, hidden, flow::SourceDistribution::unit_box(1), rng);
    m.epsilon_lo = epsilon_lo;
    m.epsilon_hi = epsilon_hi;
    return m;
}

float ExtremumModel1D::value_at(float eps, std::span<const float> c, int steps) const {
    if (eps < 0.0f || eps > 1.0f)
        throw ContractError("ExtremumModel1D::value_at: eps outside [0,1]");
    return flow::integrate_row(flow_model, std::vector<float>{eps}, c, steps)[0];
}

Bounds estimate_bounds(const ExtremumModel1D& model, std::span<const float> c, int steps) {
    if (!model.flow_model.net.all_finite())
        throw TrainingError("estimate_bounds: model weights are not finite (untrained or "
                            "diverged model)");
    Bounds b;
    b.min_est = model.value_at(model.epsilon_lo, c, steps);
    b.max_est = model.value_at(model.epsilon_hi, c, steps);
    return b;
}

// --------------------------------------------------------------------------
// Expectile regression
// --------------------------------------------------------------------------

ExpectileModel ExpectileModel::create(int cond_dim, const std::vector<int>& hidden, float epsilon,
                                      Rng& rng) {
    if (!(epsilon > 0.0f && epsilon < 1.0f))
        throw ContractError("ExpectileModel: epsilon must be in (0,1)");
    std::vector<int> sizes;
    sizes.push_back(std::max(cond_dim, 1));  // zero-fill input when unconditional
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    ExpectileModel m;
    m.net = nn::Mlp::init(sizes, rng);
    m.epsilon = epsilon;
    return m;
}

float ExpectileModel::predict(std::span<const float> c) const {
    nn::NoGradGuard ng;
    const int in = net.input_width();
    std::vector<float> row(in, 0.0f);
    if (!c.empty()) {
        if (static_cast<int>(c.size()) != in)
            throw ShapeError("ExpectileModel::predict: conditioning width mismatch");
        std::copy(c.begin(), c.end(), row.begin());
    }
    return net.forward(Tensor::from_data({1, in}, std::move(row))).item();
}

Tensor expectile_loss(const Tensor& pred, const Tensor& target, float epsilon) {
    if (!(epsilon > 0.0f && epsilon < 1.0f))
        throw ContractError("expectile_loss: epsilon must be in (0,1)");
    if (!pred.defined() || !target.defined() || pred.shape() != target.shape())
        throw ShapeError("expectile_loss: pred/target shape mismatch");
    Tensor u = nn::sub(target, pred);
    // |eps - 1(u<0)| acts as a per-element constant weight; the indicator is
    // piecewise constant so its derivative contributes nothing.
    std::vector<float> w(u.data().size());
    for (size_t i = 0; i < w.size(); ++i)
        w[i] = std::abs(epsilon - (u.data()[i] < 0.0f ? 1.0f : 0.0f));
    return nn::mean_all(nn::mul(Tensor::from_data(u.shape(), std::move(w)), nn::square(u)));
}

void train_expectile(ExpectileModel& model, const flow::TargetSampler& sampler,
                     const ExpectileTrainConfig& config) {
    if (config.steps <= 0 || config.batch_size <= 0)
        throw ContractError("train_expectile: steps and batch size must be positive");
    Rng rng(derive_seed(config.seed, "expectile-train"));
    nn::AdamState opt({.learning_rate = config.learning_rate});
    auto params = model.net.params();

    const int B = config.batch_size;
    const int in = model.net.input_width();
    std::vector<float> xs(B), cond(static_cast<size_t>(B) * in, 0.0f);
    for (int step = 0; step < config.steps; ++step) {
        if (config.final_lr_fraction < 1.0f) {
            const float progress = static_cast<float>(step) / static_cast<float>(config.steps);
            opt.set_learning_rate(config.learning_rate *
                                  (1.0f - (1.0f - config.final_lr_fraction) * progress));
        }
        std::fill(cond.begin(), cond.end(), 0.0f);
        for (int i = 0; i < B; ++i) {
            sampler(rng, std::span<float>(&xs[i], 1),
                    std::span<float>(cond.data() + static_cast<size_t>(i) * in, in));
        }
        nn::zero_grads(params);
        Tensor pred = model.net.forward(Tensor::from_data({B, in}, cond));
        Tensor loss = expectile_loss(pred, Tensor::from_data({B, 1}, xs), model.epsilon);
        const float lv = loss.item();
        if (!std::isfinite(lv))
            throw TrainingError("train_expectile: non-finite loss " + std::to_string(lv) +
                                " at step " + std::to_string(step));
        loss.backward();
        opt.step(params);
    }
}

// --------------------------------------------------------------------------
// Multi-dimensional decomposition
// --------------------------------------------------------------------------

std::vector<float> estimate_extremum_nd(const DecomposedModel& model, Direction direction,
                                        int n_samples, Rng& rng, int steps) {
    if (n_samples <= 0) throw ContractError("estimate_extremum_nd: n_samples must be positive");
    if (model.f2.cond_dim < 1)
        throw ContractError("estimate_extremum_nd: f2 must carry a z conditioning channel");
    const float eps =
        direction == Direction::Min ? model.f1.epsilon_lo : model.f1.epsilon_hi;
    const float z = model.f1.value_at(eps, {}, steps);

    const int y_dim = model.f2.data_dim;
    std::vector<float> cond(model.f2.cond_dim, 0.0f);
    cond[0] = z;
    std::vector<float> cond_batch;
    for (int i = 0; i < n_samples; ++i)
        cond_batch.insert(cond_batch.end(), cond.begin(), cond.end());
    auto ys = flow::sample(model.f2, cond_batch, n_samples, steps, rng);

    std::vector<float> out;
    out.reserve(static_cast<size_t>(n_samples) * (1 + y_dim));
    for (int i = 0; i < n_samples; ++i) {
        out.push_back(z);
        for (int j = 0; j < y_dim; ++j) out.push_back(ys[static_cast<size_t>(i) * y_dim + j]);
    }
    return out;
}

std::vector<float> single_model_extremum_baseline(const FlowModel& joint, Direction direction,
                                                  int n_samples, Rng& rng, int steps) {
    if (joint.source.kind != flow::SourceDistribution::Kind::UniformBox)
        throw ContractError("single_model_extremum_baseline: joint source must be a uniform box");
    const int d = joint.data_dim;
    std::vector<float> x0(static_cast<size_t>(n_samples) * d);
    for (int i = 0; i < n_samples; ++i) {
        auto row = std::span<float>(x0.data() + static_cast<size_t>(i) * d, d);
        joint.source.sample_row(rng, row);
        row[0] = direction == Direction::Min ? joint.source.lower[0] : joint.source.upper[0];
    }
    return flow::integrate(joint, x0, {}, n_samples, steps);
}

// --------------------------------------------------------------------------
// Harness
// --------------------------------------------------------------------------

ExtremumModel1D train_family_flow(const SyntheticFamily& family, const HarnessConfig& config) {
    const int cond_dim = family.conditional ? 1 : 0;
    Rng init(derive_seed(config.seed, "family-flow-init"));
    ExtremumModel1D model = ExtremumModel1D::create(cond_dim, config.hidden, init);

    flow::TargetSampler sampler = [&family](Rng& rng, std::span<float> x, std::span<float> c) {
        const float cv = family.sample_condition(rng);
        std::vector<float> full(family.data_dim);
        family.sample(rng, cv, full);
        x[0] = full[0];  // z axis
        if (!c.empty()) c[0] = cv;
    };
    flow::FlowTrainConfig tc;
    tc.epochs = 10;
    tc.steps_per_epoch = std::max(1, config.flow_steps / 10);
    tc.batch_size = config.batch_size;
    tc.learning_rate = config.learning_rate;
    tc.final_lr_fraction = 0.1f;
    tc.seed = derive_seed(config.seed, "family-flow");
    flow::train(model.flow_model, sampler, tc);
    return model;
}

DecomposedModel train_decomposed(const SyntheticFamily& family, const HarnessConfig& config) {
    if (family.data_dim < 2)
        throw ContractError("train_decomposed: family must be multi-dimensional");
    DecomposedModel m;
    m.f1 = train_family_flow(family, config);

    Rng init(derive_seed(config.seed, "decomposed-f2-init"));
    m.f2 = FlowModel::create(family.data_dim - 1, 1, config.hidden,
                             flow::SourceDistribution::gaussian(family.data_dim - 1), init);
    flow::TargetSampler sampler = [&family](Rng& rng, std::span<float> y, std::span<float> c) {
        const float cv = family.sample_condition(rng);
        std::vector<float> full(family.data_dim);
        family.sample(rng, cv, full);
        c[0] = full[0];  // z conditions y
        for (int j = 1; j < family.data_dim; ++j) y[j - 1] = full[j];
    };
    flow::FlowTrainConfig tc;
    tc.epochs = 10;
    tc.steps_per_epoch = std::max(1, config.flow_steps / 10);
    tc.batch_size = config.batch_size;
    tc.learning_rate = config.learning_rate;
    tc.final_lr_fraction = 0.1f;
    tc.seed = derive_seed(config.seed, "decomposed-f2");
    flow::train(m.f2, sampler, tc);
    return m;
}

FlowModel train_joint_baseline(const SyntheticFamily& family, const HarnessConfig& config) {
    Rng init(derive_seed(config.seed, "joint-init"));
    // unit box source in every dimension, mirroring the 1-D uniform choice
    FlowModel joint = FlowModel::create(family.data_dim, 0, config.hidden,
                                        flow::SourceDistribution::unit_box(family.data_dim), init);
    flow::TargetSampler sampler = [&family](Rng& rng, std::span<float> x, std::span<float>) {
        const float cv = family.sample_condition(rng);
        family.sample(rng, cv, x);
    };
    flow::FlowTrainConfig tc;
    tc.epochs = 10;
    tc.steps_per_epoch = std::max(1, config.flow_steps / 10);
    tc.batch_size = config.batch_size;
    tc.learning_rate = config.learning_rate;
    tc.final_lr_fraction = 0.1f;
    tc.seed = derive_seed(config.seed, "joint");
    flow::train(joint, sampler, tc);
    return joint;
}

namespace {

ExpectileModel train_family_expectile(const SyntheticFamily& family, float epsilon,
                                      const HarnessConfig& config, std::string_view tag) {
    const int cond_dim = family.conditional ? 1 : 0;
    Rng init(derive_seed(config.seed, std::string("expectile-init-") + std::string(tag)));
    ExpectileModel m = ExpectileModel::create(cond_dim, config.hidden, epsilon, init);
    flow::TargetSampler sampler = [&family](Rng& rng, std::span<float> x, std::span<float> c) {
        const float cv = family.sample_condition(rng);
        std::vector<float> full(family.data_dim);
        family.sample(rng, cv, full);
        x[0] = full[0];
        if (!c.empty()) c[0] = cv;
    };
    ExpectileTrainConfig tc;
    tc.steps = config.expectile_steps;
    tc.batch_size = config.batch_size;
    tc.learning_rate = config.learning_rate;
    tc.seed = derive_seed(config.seed, std::string("expectile-") + std::string(tag));
    train_expectile(m, sampler, tc);
    return m;
}

void write_comparison_csv(const ComparisonReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open report path '" + path + "'");
    out << "family,condition,true_min,true_max,flow_min,flow_max,expectile_min,expectile_max\n";
    char buf[64];
    auto fmt = [&buf](float v) {
        std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(v));
        return std::string(buf);
    };
    for (const auto& r : report.rows) {
        out << r.family << ',' << fmt(r.condition) << ',' << fmt(r.true_min) << ','
            << fmt(r.true_max) << ',' << fmt(r.flow_min) << ',' << fmt(r.flow_max) << ','
            << fmt(r.expectile_min) << ',' << fmt(r.expectile_max) << '\n';
    }
}

}  // namespace

ComparisonReport compare_methods(const std::string& family_name, const std::string& report_path,
                                 const HarnessConfig& config) {
    const SyntheticFamily family = make_family(family_name);

    // The two methods train concurrently on independent streams derived from
    // the same seed root; results are assembled after the join.
    ExtremumModel1D flow_model;
    ExpectileModel exp_lo, exp_hi;
    std::exception_ptr flow_err, exp_err;
    std::thread flow_thread([&] {
        try {
            flow_model = train_family_flow(family, config);
        } catch (...) {
            flow_err = std::current_exception();
        }
    });
    std::thread exp_thread([&] {
        try {
            exp_lo = train_family_expectile(family, config.expectile_lo, config, "lo");
            exp_hi = train_family_expectile(family, config.expectile_hi, config, "hi");
        } catch (...) {
            exp_err = std::current_exception();
        }
    });
    flow_thread.join();
    exp_thread.join();
    if (flow_err) std::rethrow_exception(flow_err);
    if (exp_err) std::rethrow_exception(exp_err);

    ComparisonReport report;
    double flow_acc = 0.0, exp_acc = 0.0;
    for (float c : family.cond_grid) {
        std::vector<float> cvec;
        if (family.conditional) cvec.push_back(c);
        const auto [tmin, tmax] = family.true_bounds(c);
        const Bounds fb = estimate_bounds(flow_model, cvec, config.euler_steps);
        ComparisonRow row;
        row.family = family.name;
        row.condition = c;
        row.true_min = tmin;
        row.true_max = tmax;
        row.flow_min = fb.min_est;
        row.flow_max = fb.max_est;
        row.expectile_min = exp_lo.predict(cvec);
        row.expectile_max = exp_hi.predict(cvec);
        report.rows.push_back(row);
        flow_acc += std::abs(fb.min_est - tmin) + std::abs(fb.max_est - tmax);
        exp_acc += std::abs(row.expectile_min - tmin) + std::abs(row.expectile_max - tmax);
    }
    const double n = 2.0 * static_cast<double>(report.rows.size());
    report.flow_mae = static_cast<float>(flow_acc / n);
    report.expectile_mae = static_cast<float>(exp_acc / n);

    if (!report_path.empty()) write_comparison_csv(report, report_path);
    return report;
}

}  // namespace efm::extremum
