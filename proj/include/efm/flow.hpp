#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "efm/checkpoint.hpp"
#include "efm/mlp.hpp"
#include "efm/rng.hpp"
#include "efm/tensor.hpp"

namespace efm::flow {

using nn::Tensor;

/// Source distribution the flow transports to the data distribution.
struct SourceDistribution {
    enum class Kind { UniformBox, StandardGaussian };

    Kind kind = Kind::UniformBox;
    int dim = 1;
    std::vector<float> lower;  // UniformBox only
    std::vector<float> upper;

    static SourceDistribution uniform_box(std::vector<float> lower, std::vector<float> upper);
    /// [0,1]^dim.
    static SourceDistribution unit_box(int dim);
    static SourceDistribution gaussian(int dim);

    void sample_row(Rng& rng, std::span<float> out) const;
};

/// Conditional vector field f(x_t, t, c) with its source descriptor.
/// Net input layout: [x (data_dim) | t (1) | c (cond_dim)].
struct FlowModel {
    nn::Mlp net;
    SourceDistribution source;
    int data_dim = 0;
    int cond_dim = 0;

    static FlowModel create(int data_dim, int cond_dim, const std::vector<int>& hidden,
                            SourceDistribution source, Rng& rng);

    /// Velocity prediction on a batch: x [B,data], t [B,1], c [B,cond].
    Tensor velocity(const Tensor& x, const Tensor& t, const Tensor& c) const;
};

/// One training mini-batch for the matching loss.
struct FlowBatch {
    Tensor x_src;  // [B, data_dim]
    Tensor x_dst;  // [B, data_dim]
    Tensor c;      // [B, cond_dim] (cond_dim may be 0 -> undefined tensor)
    Tensor t;      // [B, 1], each in [0,1]
};

/// Mean over the batch of ||f(x_t,t,c) - (x_dst - x_src)||^2 with
/// x_t = (1-t) x_src + t x_dst. Differentiable w.r.t. the net parameters.
Tensor flow_loss(const FlowModel& model, const FlowBatch& batch);

/// Fills one target sample: x_dst (data_dim) and its conditioning (cond_dim).
using TargetSampler = std::function<void(Rng&, std::span<float> x_dst, std::span<float> c)>;

struct FlowTrainConfig {
    int epochs = 10;
    int steps_per_epoch = 200;
    int batch_size = 128;
    float learning_rate = 1e-3f;
    /// Linear decay target as a fraction of learning_rate (1.0 = constant).
    float final_lr_fraction = 1.0f;
    std::uint64_t seed = 0;
};

/// Simulation-free training; returns per-epoch mean loss.
std::vector<float> train(FlowModel& model, const TargetSampler& sampler,
                         const FlowTrainConfig& config);

/// Euler integration of the learned field from t=0 to t=1.
/// x0: [B, data_dim], c: [B, cond_dim] (ignored when cond_dim == 0).
/// Deterministic given (weights, x0, c, steps).
std::vector<float> integrate(const FlowModel& model, std::span<const float> x0,
                             std::span<const float> c, int batch, int steps);

/// Convenience single-row integrate.
std::vector<float> integrate_row(const FlowModel& model, std::span<const float> x0,
                                 std::span<const float> c, int steps);

/// Draw x0 from the source then integrate. Stochastic only through the draw.
std::vector<float> sample(const FlowModel& model, std::span<const float> c, int batch, int steps,
                          Rng& rng);

/// Serialization into a shared checkpoint container under `prefix`.
/// Weights plus a meta record (dims, source kind/bounds) as reserved names.
void save_flow(const FlowModel& model, const std::string& prefix, nn::NamedTensors& out);
FlowModel load_flow(const std::string& prefix, const nn::NamedTensors& in);

constexpr int kDefaultEulerSteps = 10;

}  // namespace efm::flow
