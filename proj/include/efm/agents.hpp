#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efm/dataset.hpp"
#include "efm/flow.hpp"
#include "efm/maze.hpp"

namespace efm::agents {

enum class AgentKind { GC, AC, PC, PS, AS };

AgentKind kind_from_name(const std::string& name);  // gc | ac | pc | ps | as
std::string kind_name(AgentKind k);

struct AgentConfig {
    AgentKind kind = AgentKind::GC;
    bool use_rl = false;
    float r_g = 0.2f;        // Eq. 5 regularization range for eps_g
    int n_candidates = 32;   // PS/AS rejection sampling
    int euler_steps = flow::kDefaultEulerSteps;

    int train_steps = 20000;
    int batch_size = 128;
    float learning_rate = 1e-3f;
    float final_lr_fraction = 0.1f;
    std::vector<int> hidden = {64, 64};
    int critic_sync_interval = 500;  // frozen-copy refresh (Eq. 5 target)
    bool clip_augmented_d = false;   // clip d_aug at L_g instead of letting it exceed
    int log_every = 500;

    data::SamplerConfig sampler;

    int replan_interval = 0;  // 0 -> L_a * S_a / 2

    void validate() const;
    int effective_replan_interval() const {
        return replan_interval > 0 ? replan_interval : sampler.L_a * sampler.S_a / 2;
    }
};

struct TrainMetrics {
    std::vector<int> logged_steps;
    std::map<std::string, std::vector<float>> loss_curves;  // component -> curve
    long negative_critic_clamps = 0;
    long augmented_tuples = 0;
};

/// A trained agent: the Table-I component set plus everything needed to run
/// it against raw observations (normalization stats, sampler geometry).
struct Agent {
    AgentConfig config;
    int dim_o = 0;
    int dim_a = 0;
    data::NormStats stats;

    std::vector<flow::FlowModel> critic;  // two twins when present
    std::optional<flow::FlowModel> actor;
    std::optional<flow::FlowModel> planner;
    std::optional<flow::FlowModel> world;

    bool has_critic() const { return critic.size() == 2; }
    /// Throws ContractError naming the component when absent or non-finite.
    void require(const std::string& component) const;
};

/// Called every log_every steps with the live agent (weights shared, read
/// synchronously) so callers can snapshot periodic checkpoints.
using TrainCallback = std::function<void(int steps_done, const Agent& live)>;

/// Trains the component set of config.kind on the store (Algorithm-1 style
/// interleaved updates; Eq. 5 batch augmentation when use_rl).
Agent train_agent(const AgentConfig& config, const data::EpisodeStore& store, std::uint64_t seed,
                  TrainMetrics* metrics = nullptr, const TrainCallback& callback = {});

/// Trains a dynamics model tau_o | (o, tau_a) alone (the FM-AS World).
flow::FlowModel train_world(const AgentConfig& config, const data::EpisodeStore& store,
                            std::uint64_t seed, TrainMetrics* metrics = nullptr);

/// Pessimistic (max-over-twins) distance estimate in normalized units,
/// clamped to >= 0. o_n and g_n are normalized observations.
float critic_distance(const Agent& agent, float eps, std::span<const float> o_n,
                      std::span<const float> g_n);

/// Bellman-style relabel arithmetic: total distance after stitching a
/// segment of length d onto a critic-estimated continuation.
inline float compose_distance(float d, float critic_estimate, bool clip, float clip_at = 1.0f) {
    const float v = d + std::max(critic_estimate, 0.0f);
    return clip ? std::min(v, clip_at) : v;
}

/// Optional visibility into one inference call (candidate scores, choice).
struct InferenceTrace {
    float d_tilde = -1.0f;               // AC/PC conditioning distance
    std::vector<float> candidate_scores; // PS/AS
    int selected = -1;
};

/// Full inference for one (o, g) query: returns the L_a x dim_a action
/// window, denormalized; rows are clamped to `action_clamp` when > 0.
std::vector<float> infer_action(const Agent& agent, std::span<const float> o_raw,
                                std::span<const float> g_raw, Rng& rng,
                                float action_clamp = 0.0f, InferenceTrace* trace = nullptr);

// --------------------------------------------------------------------------
// Evaluation on the maze environment
// --------------------------------------------------------------------------

struct EvalPair {
    std::array<float, env::kObsDim> start;
    std::array<float, env::kObsDim> goal;
};

/// Deterministic evaluation set: cross-region starts pushing toward corner
/// goals (the same set serves every agent and dataset).
std::vector<EvalPair> make_eval_pairs(const env::MazeSpec& spec, int n, std::uint64_t seed);
void save_eval_pairs(std::span<const EvalPair> pairs, const std::string& path);
std::vector<EvalPair> load_eval_pairs(const std::string& path);

struct EvalRow {
    int pair_id = 0;
    int run = 0;
    bool success = false;
    int steps_to_success = -1;
};

struct EvalResult {
    std::vector<EvalRow> rows;          // pair-major, run-minor
    std::vector<float> per_pair_rate;
    float mean_rate = 0.0f;
};

/// Closed-loop rollouts: replan every config.replan_interval steps, execute
/// with per-step linear interpolation between strided action rows. Runs are
/// independently seeded and order-independent (parallel across rollouts).
EvalResult evaluate(const Agent& agent, const env::MazeSpec& spec,
                    std::span<const EvalPair> pairs, int n_runs, int horizon, std::uint64_t seed,
                    int n_workers = 2);

/// Agent container: component-prefixed tensors (critic.0.*, critic.1.*,
/// actor.*, planner.*, world.*) plus a config record.
void save_agent(const Agent& agent, const std::string& path);
Agent load_agent(const std::string& path);

}  // namespace efm::agents
