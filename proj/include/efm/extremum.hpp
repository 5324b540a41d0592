#pragma once

#include <span>
#include <string>
#include <vector>

#include "efm/flow.hpp"
#include "efm/synthetic.hpp"

namespace efm::extremum {

using flow::FlowModel;
using nn::Tensor;

/// 1-D bound reads default to a finer Euler grid than generic sampling:
/// integration is cheap in 1-D and the support edges benefit the most.
constexpr int kBoundsEulerSteps = 40;

// --------------------------------------------------------------------------
// 1-D bound estimation via source-boundary transport
// --------------------------------------------------------------------------

/// 1-D flow with U(0,1) source whose boundary points map to the support
/// bounds of the learned (conditional) distribution.
struct ExtremumModel1D {
    FlowModel flow_model;
    float epsilon_lo = 0.0f;
    float epsilon_hi = 1.0f;

    static ExtremumModel1D create(int cond_dim, const std::vector<int>& hidden, Rng& rng,
                                  float epsilon_lo = 0.0f, float epsilon_hi = 1.0f);

    /// Transport of a single source point eps in [0,1] under conditioning c.
    float value_at(float eps, std::span<const float> c, int steps = kBoundsEulerSteps) const;
};

struct Bounds {
    float min_est = 0.0f;
    float max_est = 0.0f;
};

/// (F(eps_lo | c), F(eps_hi | c)). Model weights must be finite.
Bounds estimate_bounds(const ExtremumModel1D& model, std::span<const float> c,
                       int steps = kBoundsEulerSteps);

// --------------------------------------------------------------------------
// Expectile Regression baseline
// --------------------------------------------------------------------------

/// Direct regressor c -> scalar with a fixed training-time asymmetry.
struct ExpectileModel {
    nn::Mlp net;
    float epsilon = 0.5f;

    static ExpectileModel create(int cond_dim, const std::vector<int>& hidden, float epsilon,
                                 Rng& rng);
    float predict(std::span<const float> c) const;
};

/// mean(|eps - 1(u<0)| * u^2) with u = target - pred.
Tensor expectile_loss(const Tensor& pred, const Tensor& target, float epsilon);

struct ExpectileTrainConfig {
    int steps = 4000;
    int batch_size = 128;
    float learning_rate = 1e-3f;
    float final_lr_fraction = 0.1f;
    std::uint64_t seed = 0;
};

/// Sampler fills (x scalar target, c conditioning); same shape contract as
/// flow training.
void train_expectile(ExpectileModel& model, const flow::TargetSampler& sampler,
                     const ExpectileTrainConfig& config);

// --------------------------------------------------------------------------
// Multi-dimensional decomposition (two-model scheme)
// --------------------------------------------------------------------------

/// f1 models the z axis; f2 models y | z. f2 conditioning is [z | external c],
/// so f2.cond_dim == 1 + external_cond_dim.
struct DecomposedModel {
    ExtremumModel1D f1;
    FlowModel f2;
};

enum class Direction { Min, Max };

/// Joint samples (z~, y~) at the z extremum: z~ from the f1 boundary,
/// y~ drawn from f2 conditioned on z~. Row-major n_samples x data_dim.
std::vector<float> estimate_extremum_nd(const DecomposedModel& model, Direction direction,
                                        int n_samples, Rng& rng,
                                        int steps = flow::kDefaultEulerSteps);

/// Comparison fixture, not part of the estimation API: one joint flow over
/// (z, y) from a unit-box source; extremal z source points (0 or 1, u).
std::vector<float> single_model_extremum_baseline(const FlowModel& joint, Direction direction,
                                                  int n_samples, Rng& rng,
                                                  int steps = flow::kDefaultEulerSteps);

// --------------------------------------------------------------------------
// Method comparison harness
// --------------------------------------------------------------------------

struct HarnessConfig {
    std::vector<int> hidden = {64, 64, 64};
    int flow_steps = 12000;
    int expectile_steps = 4000;
    int batch_size = 128;
    float learning_rate = 2e-3f;
    float expectile_lo = 0.01f;
    float expectile_hi = 0.99f;
    int euler_steps = kBoundsEulerSteps;
    std::uint64_t seed = 0;
};

struct ComparisonRow {
    std::string family;
    float condition;
    float true_min, true_max;
    float flow_min, flow_max;
    float expectile_min, expectile_max;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    float flow_mae = 0.0f;       // mean |bound error| across rows and both bounds
    float expectile_mae = 0.0f;
};

/// Trains Extremum Flow Matching and Expectile Regression on identical
/// data streams (independent RNG streams, same seed root) and scores both
/// against the family's analytic bounds. Writes a CSV when report_path is
/// non-empty: family,condition,true_min,true_max,flow_min,flow_max,
/// expectile_min,expectile_max (6 significant digits).
ComparisonReport compare_methods(const std::string& family_name, const std::string& report_path,
                                 const HarnessConfig& config = {});

/// Trains the two-model decomposition for a 2-D family (f1 on z, f2 on y|z).
DecomposedModel train_decomposed(const SyntheticFamily& family, const HarnessConfig& config);

/// Trains the single joint flow baseline on the same family.
FlowModel train_joint_baseline(const SyntheticFamily& family, const HarnessConfig& config);

/// Trains a 1-D extremum flow for a family (z marginal for 2-D families).
ExtremumModel1D train_family_flow(const SyntheticFamily& family, const HarnessConfig& config);

}  // namespace efm::extremum
