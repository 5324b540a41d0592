#pragma once

#include <array>
#include <cmath>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "efm/errors.hpp"

namespace efm::env {

struct Vec2 {
    float x = 0.0f;
    float y = 0.0f;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(float s) const { return {x * s, y * s}; }
    float norm() const { return std::sqrt(x * x + y * y); }
    float dot(Vec2 o) const { return x * o.x + y * o.y; }
};

inline Vec2 clamp_norm(Vec2 v, float max_norm) {
    const float n = v.norm();
    return n > max_norm && n > 0.0f ? v * (max_norm / n) : v;
}

struct Rect {
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    float width() const { return x1 - x0; }
    float height() const { return y1 - y0; }
    bool contains(Vec2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
    /// Distance from p to the closest point of the rectangle (0 inside).
    float distance(Vec2 p) const {
        const float dx = std::max({x0 - p.x, 0.0f, p.x - x1});
        const float dy = std::max({y0 - p.y, 0.0f, p.y - y1});
        return std::sqrt(dx * dx + dy * dy);
    }
};

/// Planar pushing world: unit-square bounds, axis-aligned walls, three
/// rectangular play regions and four corner goal positions.
struct MazeSpec {
    Rect bounds{0, 0, 1, 1};
    std::vector<Rect> walls;
    std::vector<Rect> regions;
    std::vector<Vec2> corner_goals;
    float agent_radius = 0.03f;
    float object_radius = 0.06f;
    float step_max = 0.02f;
    float success_tol = 0.08f;

    static MazeSpec default_spec();
    void validate() const;

    /// Index of the region containing p, or -1.
    int region_of(Vec2 p) const;
    /// True when a disc of radius r at p touches a wall or leaves the bounds
    /// by more than the contact tolerance.
    bool disc_blocked(Vec2 p, float r) const;

    void write(std::ostream& out) const;
    static MazeSpec parse(std::istream& in);
    void save(const std::string& path) const;
    static MazeSpec load(const std::string& path);
};

/// Positions of the commanded agent disc and the passive object disc.
struct EnvState {
    Vec2 agent;
    Vec2 object;
};

struct Action {
    Vec2 delta;  // per-step displacement command, clamped to step_max
};

constexpr int kObsDim = 4;
constexpr int kActDim = 2;

inline std::array<float, kObsDim> observe(const EnvState& s) {
    return {s.agent.x, s.agent.y, s.object.x, s.object.y};
}
inline EnvState state_from_obs(std::span<const float> obs) {
    if (obs.size() < kObsDim) throw ContractError("state_from_obs: need 4 values");
    return {{obs[0], obs[1]}, {obs[2], obs[3]}};
}

/// Moves a disc by delta, removing motion components that would enter a wall
/// (slide). The result never penetrates a wall.
Vec2 slide_move(Vec2 from, Vec2 delta, float radius, const MazeSpec& spec);

/// One deterministic step: the agent moves with wall sliding; on penetration
/// the object is pushed along the contact normal (wall-clamped, and never
/// farther than the agent itself moved).
EnvState step(const EnvState& state, const Action& action, const MazeSpec& spec);

/// True iff the object sits strictly within success_tol of the goal's
/// object position. The agent position does not participate.
bool success(const EnvState& state, std::span<const float> goal_obs, const MazeSpec& spec);

}  // namespace efm::env
