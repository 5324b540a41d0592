#include "efm/flow.hpp"

#include <cmath>

#include "efm/adam.hpp"

namespace efm::flow {

using nn::NoGradGuard;

// --------------------------------------------------------------------------
// SourceDistribution
// --------------------------------------------------------------------------

SourceDistribution SourceDistribution::uniform_box(std::vector<float> lower,
                                                   std::vector<float> upper) {
    if (lower.empty() || lower.size() != upper.size())
        throw ContractError("UniformBox: lower/upper must be non-empty and equal length");
    for (size_t i = 0; i < lower.size(); ++i)
        if (!(lower[i] < upper[i]))
            throw ContractError("UniformBox: lower must be < upper in every dimension");
    SourceDistribution s;
    s.kind = Kind::UniformBox;
    s.dim = static_cast<int>(lower.size());
    s.lower = std::move(lower);
    s.upper = std::move(upper);
    return s;
}

SourceDistribution SourceDistribution::unit_box(int dim) {
    return uniform_box(std::vector<float>(dim, 0.0f), std::vector<float>(dim, 1.0f));
}

SourceDistribution SourceDistribution::gaussian(int dim) {
    if (dim <= 0) throw ContractError("SourceDistribution: dim must be positive");
    SourceDistribution s;
    s.kind = Kind::StandardGaussian;
    s.dim = dim;
    return s;
}

void SourceDistribution::sample_row(Rng& rng, std::span<float> out) const {
    if (static_cast<int>(out.size()) != dim)
        throw ShapeError("SourceDistribution::sample_row: output size mismatch");
    if (kind == Kind::UniformBox) {
        for (int i = 0; i < dim; ++i) out[i] = rng.uniform(lower[i], upper[i]);
    } else {
        for (int i = 0; i < dim; ++i) out[i] = rng.gaussian();
    }
}

// --------------------------------------------------------------------------
// FlowModel
// --------------------------------------------------------------------------

FlowModel FlowModel::create(int data_dim, int cond_dim, const std::vector<int>& hidden,
                            SourceDistribution source, Rng& rng) {
    if (data_dim <= 0) throw ContractError("FlowModel: data_dim must be positive");
    if (cond_dim < 0) throw ContractError("FlowModel: cond_dim must be >= 0");
    if (source.dim != data_dim)
        throw ShapeError("FlowModel: source dim " + std::to_string(source.dim) +
                         " does not match data dim " + std::to_string(data_dim));
    std::vector<int> sizes;
    sizes.push_back(data_dim + 1 + cond_dim);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(data_dim);
    FlowModel m;
    m.net = nn::Mlp::init(sizes, rng);
    m.source = std::move(source);
    m.data_dim = data_dim;
    m.cond_dim = cond_dim;
    return m;
}

Tensor FlowModel::velocity(const Tensor& x, const Tensor& t, const Tensor& c) const {
    if (x.cols() != data_dim) throw ShapeError("FlowModel: x width != data_dim");
    if (t.cols() != 1 || t.rows() != x.rows()) throw ShapeError("FlowModel: bad t column");
    if (cond_dim == 0) return net.forward(nn::concat_cols({x, t}));
    if (!c.defined() || c.cols() != cond_dim || c.rows() != x.rows())
        throw ShapeError("FlowModel: conditioning width " +
                         std::to_string(c.defined() ? c.cols() : 0) + " != cond_dim " +
                         std::to_string(cond_dim));
    return net.forward(nn::concat_cols({x, t, c}));
}

// --------------------------------------------------------------------------
// Loss and training
// --------------------------------------------------------------------------

Tensor flow_loss(const FlowModel& model, const FlowBatch& batch) {
    const Tensor& xs = batch.x_src;
    const Tensor& xd = batch.x_dst;
    if (!xs.defined() || !xd.defined()) throw ContractError("flow_loss: undefined batch tensors");
    if (xs.shape() != xd.shape()) throw ShapeError("flow_loss: x_src/x_dst shape mismatch");
    if (xs.cols() != model.data_dim) throw ShapeError("flow_loss: batch width != model data_dim");
    const int B = xs.rows();
    if (batch.t.rows() != B) throw ShapeError("flow_loss: t batch size mismatch");
    for (float tv : batch.t.data())
        if (tv < 0.0f || tv > 1.0f) throw ContractError("flow_loss: t outside [0,1]");

    // x_t = (1-t) x_src + t x_dst, expanded per element; constants w.r.t. parameters.
    const int d = model.data_dim;
    std::vector<float> xt(static_cast<size_t>(B) * d), target(static_cast<size_t>(B) * d);
    for (int i = 0; i < B; ++i) {
        const float tv = batch.t.data()[i];
        for (int j = 0; j < d; ++j) {
            const float s = xs.data()[i * d + j];
            const float e = xd.data()[i * d + j];
            xt[i * d + j] = (1.0f - tv) * s + tv * e;
            target[i * d + j] = e - s;
        }
    }
    Tensor v = model.velocity(Tensor::from_data({B, d}, std::move(xt)), batch.t, batch.c);
    Tensor diff = nn::sub(v, Tensor::from_data({B, d}, std::move(target)));
    // mean over rows of the squared L2 norm == sum of squares / B
    return nn::scale(nn::sum_all(nn::square(diff)), 1.0f / static_cast<float>(B));
}

std::vector<float> train(FlowModel& model, const TargetSampler& sampler,
                         const FlowTrainConfig& config) {
    if (config.epochs <= 0 || config.steps_per_epoch <= 0 || config.batch_size <= 0)
        throw ContractError("flow train: epochs, steps and batch size must be positive");
    Rng rng(derive_seed(config.seed, "flow-train"));
    nn::AdamState opt({.learning_rate = config.learning_rate});
    auto params = model.net.params();

    const int B = config.batch_size;
    const int d = model.data_dim;
    const int cd = model.cond_dim;
    std::vector<float> curve;
    curve.reserve(config.epochs);

    std::vector<float> xsrc(static_cast<size_t>(B) * d);
    std::vector<float> xdst(static_cast<size_t>(B) * d);
    std::vector<float> cond(static_cast<size_t>(B) * std::max(cd, 1));
    std::vector<float> tcol(B);

    const long total_steps = static_cast<long>(config.epochs) * config.steps_per_epoch;
    long done_steps = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int step = 0; step < config.steps_per_epoch; ++step) {
            if (config.final_lr_fraction < 1.0f) {
                const float progress =
                    static_cast<float>(done_steps) / static_cast<float>(total_steps);
                opt.set_learning_rate(config.learning_rate *
                                      (1.0f - (1.0f - config.final_lr_fraction) * progress));
            }
            ++done_steps;
            for (int i = 0; i < B; ++i) {
                sampler(rng, std::span<float>(xdst.data() + i * d, d),
                        std::span<float>(cond.data() + static_cast<size_t>(i) * std::max(cd, 1),
                                         cd));
                model.source.sample_row(rng, std::span<float>(xsrc.data() + i * d, d));
                tcol[i] = rng.uniform();
            }
            FlowBatch batch;
            batch.x_src = Tensor::from_data({B, d}, xsrc);
            batch.x_dst = Tensor::from_data({B, d}, xdst);
            batch.t = Tensor::from_data({B, 1}, tcol);
            if (cd > 0) batch.c = Tensor::from_data({B, cd}, cond);

            nn::zero_grads(params);
            Tensor loss = flow_loss(model, batch);
            const float lv = loss.item();
            if (!std::isfinite(lv))
                throw TrainingError("flow train: non-finite loss " + std::to_string(lv) +
                                    " at epoch " + std::to_string(epoch) + " step " +
                                    std::to_string(step));
            loss.backward();
            opt.step(params);
            epoch_loss += lv;
        }
        curve.push_back(static_cast<float>(epoch_loss / config.steps_per_epoch));
    }
    return curve;
}

// --------------------------------------------------------------------------
// Inference
// --------------------------------------------------------------------------

std::vector<float> integrate(const FlowModel& model, std::span<const float> x0,
                             std::span<const float> c, int batch, int steps) {
    if (steps < 1) throw ContractError("integrate: steps must be >= 1");
    if (batch < 1) throw ContractError("integrate: batch must be >= 1");
    const int d = model.data_dim;
    const int cd = model.cond_dim;
    if (static_cast<int>(x0.size()) != batch * d)
        throw ShapeError("integrate: x0 size != batch * data_dim");
    if (cd > 0 && static_cast<int>(c.size()) != batch * cd)
        throw ShapeError("integrate: conditioning size != batch * cond_dim");

    NoGradGuard ng;
    std::vector<float> x(x0.begin(), x0.end());
    Tensor ct;
    if (cd > 0) ct = Tensor::from_data({batch, cd}, std::vector<float>(c.begin(), c.end()));
    const float dt = 1.0f / static_cast<float>(steps);
    for (int s = 0; s < steps; ++s) {
        const float tv = static_cast<float>(s) * dt;
        Tensor xt = Tensor::from_data({batch, d}, x);
        Tensor tt = Tensor::full({batch, 1}, tv);
        Tensor v = model.velocity(xt, tt, ct);
        const auto vd = v.data();
        for (size_t i = 0; i < x.size(); ++i) x[i] += dt * vd[i];
    }
    return x;
}

std::vector<float> integrate_row(const FlowModel& model, std::span<const float> x0,
                                 std::span<const float> c, int steps) {
    return integrate(model, x0, c, 1, steps);
}

std::vector<float> sample(const FlowModel& model, std::span<const float> c, int batch, int steps,
                          Rng& rng) {
    const int d = model.data_dim;
    std::vector<float> x0(static_cast<size_t>(batch) * d);
    for (int i = 0; i < batch; ++i)
        model.source.sample_row(rng, std::span<float>(x0.data() + i * d, d));
    return integrate(model, x0, c, batch, steps);
}

// --------------------------------------------------------------------------
// Persistence
// --------------------------------------------------------------------------

void save_flow(const FlowModel& model, const std::string& prefix, nn::NamedTensors& out) {
    out.add(prefix + "__meta__.dims",
            Tensor::from_data({3}, {static_cast<float>(model.data_dim),
                                    static_cast<float>(model.cond_dim),
                                    static_cast<float>(model.net.layer_sizes.size())}));
    std::vector<float> sizes;
    for (int s : model.net.layer_sizes) sizes.push_back(static_cast<float>(s));
    const int n_sizes = static_cast<int>(sizes.size());
    out.add(prefix + "__meta__.layers", Tensor::from_data({n_sizes}, std::move(sizes)));
    const bool box = model.source.kind == SourceDistribution::Kind::UniformBox;
    out.add(prefix + "__meta__.source",
            Tensor::from_data({2}, {box ? 0.0f : 1.0f, static_cast<float>(model.source.dim)}));
    if (box) {
        out.add(prefix + "__meta__.source_lower",
                Tensor::from_data({model.source.dim}, model.source.lower));
        out.add(prefix + "__meta__.source_upper",
                Tensor::from_data({model.source.dim}, model.source.upper));
    }
    for (auto& [name, t] : model.net.named_params(prefix)) out.add(name, t);
}

FlowModel load_flow(const std::string& prefix, const nn::NamedTensors& in) {
    const Tensor& dims = in.at(prefix + "__meta__.dims");
    FlowModel m;
    m.data_dim = static_cast<int>(dims.data()[0]);
    m.cond_dim = static_cast<int>(dims.data()[1]);
    const Tensor& layers = in.at(prefix + "__meta__.layers");
    std::vector<int> sizes;
    for (float v : layers.data()) sizes.push_back(static_cast<int>(v));
    const Tensor& src = in.at(prefix + "__meta__.source");
    if (src.data()[0] == 0.0f) {
        const Tensor& lo = in.at(prefix + "__meta__.source_lower");
        const Tensor& hi = in.at(prefix + "__meta__.source_upper");
        m.source = SourceDistribution::uniform_box(
            std::vector<float>(lo.data().begin(), lo.data().end()),
            std::vector<float>(hi.data().begin(), hi.data().end()));
    } else {
        m.source = SourceDistribution::gaussian(static_cast<int>(src.data()[1]));
    }
    m.net = nn::Mlp::zeros(sizes);
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
        const Tensor& w = in.at(prefix + "w" + std::to_string(l));
        const Tensor& b = in.at(prefix + "b" + std::to_string(l));
        if (w.shape() != m.net.weights[l].shape() || b.shape() != m.net.biases[l].shape())
            throw FormatError("flow checkpoint: layer " + std::to_string(l) + " shape mismatch",
                              0);
        std::copy(w.data().begin(), w.data().end(), m.net.weights[l].data().begin());
        std::copy(b.data().begin(), b.data().end(), m.net.biases[l].data().begin());
    }
    return m;
}

}  // namespace efm::flow
