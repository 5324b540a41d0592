#pragma once

#include <span>
#include <string>
#include <vector>

#include "efm/errors.hpp"
#include "efm/rng.hpp"

namespace efm::data {

/// One demonstrated episode: T rows of observations and of actions
/// (action k was applied at step k).
struct Episode {
    int T = 0;
    std::vector<float> obs;  // T x dim_o row-major
    std::vector<float> act;  // T x dim_a row-major
};

/// Per-dimension affine normalization (value - mean) / scale.
struct NormStats {
    std::vector<float> obs_mean, obs_scale;
    std::vector<float> act_mean, act_scale;
};

/// Immutable-after-build episode collection with sampling helpers.
class EpisodeStore {
public:
    EpisodeStore() = default;
    EpisodeStore(int dim_o, int dim_a) : dim_o_(dim_o), dim_a_(dim_a) {}

    int dim_o() const { return dim_o_; }
    int dim_a() const { return dim_a_; }
    int episode_count() const { return static_cast<int>(episodes_.size()); }
    long total_steps() const { return total_steps_; }
    bool empty() const { return episodes_.empty(); }
    const Episode& episode(int i) const { return episodes_.at(i); }
    const NormStats& stats() const { return stats_; }

    /// Rejects episodes shorter than 2 steps or with non-finite values.
    void add_episode(Episode e);
    /// Computes normalization statistics; call once the store is complete.
    void finalize();

    std::span<const float> obs_row(int episode, int k) const;
    std::span<const float> act_row(int episode, int k) const;

    /// (episode, row) of a dataset-wide uniformly chosen observation row.
    std::pair<int, int> sample_row(Rng& rng) const;

    // normalization helpers (identity until finalize())
    void normalize_obs(std::span<const float> in, std::span<float> out) const;
    void denormalize_obs(std::span<const float> in, std::span<float> out) const;
    void normalize_act(std::span<const float> in, std::span<float> out) const;
    void denormalize_act(std::span<const float> in, std::span<float> out) const;

    void set_stats(NormStats stats) { stats_ = std::move(stats); }

private:
    int dim_o_ = 0;
    int dim_a_ = 0;
    std::vector<Episode> episodes_;
    std::vector<long> cumulative_;  // cumulative row counts for weighted sampling
    long total_steps_ = 0;
    NormStats stats_;
};

/// Window lengths/strides and the goal horizon of the tuple sampler.
struct SamplerConfig {
    int L_o = 8;   // future-observation window length
    int S_o = 2;   // observation stride
    int L_a = 8;   // future-action window length
    int S_a = 2;   // action stride
    int L_g = 400; // maximum goal horizon

    void validate() const;
};

/// Training sample (o, tau_o, tau_a, d, g).
struct TrajectoryTuple {
    std::vector<float> o;      // dim_o
    std::vector<float> tau_o;  // L_o x dim_o
    std::vector<float> tau_a;  // L_a x dim_a
    int d = 0;
    std::vector<float> g;      // dim_o
    int episode = 0;           // provenance
    int k = 0;
};

/// Deterministic tuple extraction at (episode, k, d). Windows running past
/// the episode end repeat the final row.
TrajectoryTuple extract_tuple(const EpisodeStore& store, int episode, int k, int d,
                              const SamplerConfig& config);

/// Hindsight sample: episode weighted by length, k uniform, d ~ U(0,
/// min(L_g, T-1-k)), g = o_{k+d}.
TrajectoryTuple sample_tuple(const EpisodeStore& store, const SamplerConfig& config, Rng& rng);

/// Uniform draw over every observation row of every episode.
std::vector<float> sample_unrelated_goal(const EpisodeStore& store, Rng& rng);

/// Binary episode file, little-endian: magic "EFED", version u32=1,
/// dim_o u32, dim_a u32, episode_count u32; per episode: T u32, obs f32
/// payload, action f32 payload; trailing mean/scale blocks for obs and act.
void save_store(const EpisodeStore& store, const std::string& path);
EpisodeStore load_store(const std::string& path);

}  // namespace efm::data
