#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "efm/rng.hpp"

namespace efm::extremum {

/// A seeded synthetic target distribution with analytic support bounds,
/// used to score bound estimators against ground truth.
struct SyntheticFamily {
    std::string name;
    int data_dim = 1;              // 1, or 2 for the crescent
    bool conditional = false;      // whether x depends on c
    std::vector<float> cond_grid;  // evaluation grid for c (single value 0 if unconditional)

    /// Draw x | c. `x` must have data_dim entries.
    void sample(Rng& rng, float c, std::span<float> x) const;
    /// Support bounds of the first (z) dimension given c.
    std::pair<float, float> true_bounds(float c) const;
    /// Condition used during training: uniform over [grid_min, grid_max].
    float sample_condition(Rng& rng) const;

private:
    enum class Id { Uniform, PointMass, BimodalUniform, ConditionalMixture, Crescent2D };
    Id id_ = Id::Uniform;
    friend SyntheticFamily make_family(const std::string& name);
};

/// Valid names: uniform, point-mass, bimodal-uniform, conditional-mixture,
/// crescent-2d. Unknown names raise ConfigError listing the valid set.
SyntheticFamily make_family(const std::string& name);
const std::vector<std::string>& family_names();

}  // namespace efm::extremum
