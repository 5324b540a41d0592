#pragma once

#include <optional>
#include <string>
#include <vector>

#include "efm/dataset.hpp"
#include "efm/maze.hpp"
#include "efm/rng.hpp"

namespace efm::env {

/// Grid graph over the free space for a given disc clearance; shortest
/// paths via breadth-first search with a fixed neighbor order.
class GridPlanner {
public:
    GridPlanner(const MazeSpec& spec, float clearance, int cells_per_side = 25);

    /// Cell-center waypoints from `from` to `to` (both snapped to their
    /// nearest free cells), or nullopt when disconnected. An optional disc
    /// obstacle is treated as additional blocked cells.
    std::optional<std::vector<Vec2>> path(Vec2 from, Vec2 to) const;
    std::optional<std::vector<Vec2>> path_avoiding(Vec2 from, Vec2 to, Vec2 obstacle,
                                                   float obstacle_radius) const;

    /// Uniform draw over free cell centers, optionally confined to a
    /// rectangle shrunk by `margin` on every side.
    std::optional<Vec2> random_free_point(Rng& rng, const Rect* within = nullptr,
                                          float margin = 0.0f) const;

    Vec2 cell_center(int cx, int cy) const;
    bool cell_free(int cx, int cy) const;
    int cells_per_side() const { return n_; }

private:
    std::optional<std::vector<Vec2>> search(Vec2 from, Vec2 to,
                                            const std::vector<char>& blocked) const;
    int snap_free(Vec2 p, const std::vector<char>& blocked) const;  // -1 when none

    const MazeSpec& spec_;
    float clearance_;
    int n_;
    float cell_;
    std::vector<char> free_;
};

enum class Behavior { Expert, FullPlay, PartitionedPlay };

Behavior behavior_from_name(const std::string& name);  // expert | full | partitioned
std::string behavior_name(Behavior b);

struct DemoConfig {
    int max_steps_expert = 600;
    int max_steps_play = 800;
    int play_waypoints_min = 5;
    int play_waypoints_max = 9;
    float waypoint_tol = 0.05f;
    float action_noise = 0.2f;         // stddev as a fraction of step_max (play)
    float expert_action_noise = 0.0f;   // the scripted expert is already consistent
    float waypoint_jitter = 0.03f;     // play only
    int max_retries = 50;
    int region_margin_cells = 3;    // PartitionedPlay: keep waypoints off the region edge
};

/// Scripted demonstrations:
///   Expert          — push the object from a random start to a random corner
///                     along the shortest free-space path.
///   FullPlay        — long exploratory episodes through random waypoints
///                     anywhere in the maze.
///   PartitionedPlay — exploratory play confined to one region per episode;
///                     the object never crosses a region boundary.
/// Deterministic given (behavior, spec, n_episodes, rng seed).
data::EpisodeStore generate_demos(Behavior behavior, const MazeSpec& spec, int n_episodes,
                                  Rng& rng, const DemoConfig& config = {});

/// One scripted control decision: reposition behind the object relative to
/// the next waypoint, then push through it. Exposed for tests.
Vec2 push_controller(const EnvState& state, Vec2 waypoint, const MazeSpec& spec,
                     const GridPlanner& agent_planner);

}  // namespace efm::env
