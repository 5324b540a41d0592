#include "efm/maze.hpp"

#include <fstream>
#include <sstream>

namespace efm::env {

namespace {
constexpr float kSkin = 1e-6f;  // contact tolerance
}

// --------------------------------------------------------------------------
// MazeSpec
// --------------------------------------------------------------------------

MazeSpec MazeSpec::default_spec() {
    MazeSpec s;
    s.bounds = {0, 0, 1, 1};
    // two interior walls with opposite door gaps force an S-shaped crossing
    s.walls = {
        {0.32f, 0.00f, 0.36f, 0.70f},  // door at the top
        {0.64f, 0.30f, 0.68f, 1.00f},  // door at the bottom
    };
    s.regions = {
        {0.00f, 0.0f, 0.34f, 1.0f},
        {0.34f, 0.0f, 0.66f, 1.0f},
        {0.66f, 0.0f, 1.00f, 1.0f},
    };
    s.corner_goals = {{0.12f, 0.12f}, {0.88f, 0.12f}, {0.88f, 0.88f}, {0.12f, 0.88f}};
    return s;
}

void MazeSpec::validate() const {
    if (bounds.width() <= 0 || bounds.height() <= 0)
        throw ConfigError("MazeSpec: empty bounds");
    if (agent_radius <= 0 || object_radius <= 0 || step_max <= 0 || success_tol <= 0)
        throw ConfigError("MazeSpec: radii, step_max and success_tol must be positive");
    if (regions.size() != 3) throw ConfigError("MazeSpec: expected exactly 3 regions");
    if (corner_goals.size() != 4) throw ConfigError("MazeSpec: expected exactly 4 corner goals");
    // regions tile the bounds: disjoint interiors, covering area
    double area = 0.0;
    for (const Rect& r : regions) {
        if (r.width() <= 0 || r.height() <= 0) throw ConfigError("MazeSpec: degenerate region");
        area += static_cast<double>(r.width()) * r.height();
    }
    const double bounds_area = static_cast<double>(bounds.width()) * bounds.height();
    if (std::abs(area - bounds_area) > 1e-4 * bounds_area)
        throw ConfigError("MazeSpec: regions do not tile the bounds");
    for (size_t i = 0; i < regions.size(); ++i)
        for (size_t j = i + 1; j < regions.size(); ++j) {
            const Rect &a = regions[i], &b = regions[j];
            const float ox = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
            const float oy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
            if (ox > 1e-5f && oy > 1e-5f) throw ConfigError("MazeSpec: overlapping regions");
        }
    for (const Vec2& c : corner_goals)
        if (disc_blocked(c, object_radius))
            throw ConfigError("MazeSpec: corner goal not reachable by the object disc");
}

int MazeSpec::region_of(Vec2 p) const {
    for (size_t i = 0; i < regions.size(); ++i)
        if (regions[i].contains(p)) return static_cast<int>(i);
    return -1;
}

bool MazeSpec::disc_blocked(Vec2 p, float r) const {
    if (p.x < bounds.x0 + r - kSkin || p.x > bounds.x1 - r + kSkin ||
        p.y < bounds.y0 + r - kSkin || p.y > bounds.y1 - r + kSkin)
        return true;
    for (const Rect& w : walls)
        if (w.distance(p) < r - kSkin) return true;
    return false;
}

// --------------------------------------------------------------------------
// Text config
// --------------------------------------------------------------------------

void MazeSpec::write(std::ostream& out) const {
    out << "bounds " << bounds.x0 << ' ' << bounds.y0 << ' ' << bounds.x1 << ' ' << bounds.y1
        << '\n';
    out << "agent_radius " << agent_radius << '\n';
    out << "object_radius " << object_radius << '\n';
    out << "step_max " << step_max << '\n';
    out << "success_tol " << success_tol << '\n';
    for (const Rect& w : walls)
        out << "wall " << w.x0 << ' ' << w.y0 << ' ' << w.x1 << ' ' << w.y1 << '\n';
    for (const Rect& r : regions)
        out << "region " << r.x0 << ' ' << r.y0 << ' ' << r.x1 << ' ' << r.y1 << '\n';
    for (const Vec2& c : corner_goals) out << "corner " << c.x << ' ' << c.y << '\n';
}

MazeSpec MazeSpec::parse(std::istream& in) {
    MazeSpec s;
    s.walls.clear();
    s.regions.clear();
    s.corner_goals.clear();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        auto want = [&](int n, float* out_vals) {
            for (int i = 0; i < n; ++i)
                if (!(ls >> out_vals[i]))
                    throw ConfigError("maze spec line " + std::to_string(line_no) + ": key '" +
                                      key + "' expects " + std::to_string(n) + " numbers");
        };
        float v[4];
        if (key == "bounds") {
            want(4, v);
            s.bounds = {v[0], v[1], v[2], v[3]};
        } else if (key == "wall") {
            want(4, v);
            s.walls.push_back({v[0], v[1], v[2], v[3]});
        } else if (key == "region") {
            want(4, v);
            s.regions.push_back({v[0], v[1], v[2], v[3]});
        } else if (key == "corner") {
            want(2, v);
            s.corner_goals.push_back({v[0], v[1]});
        } else if (key == "agent_radius") {
            want(1, v);
            s.agent_radius = v[0];
        } else if (key == "object_radius") {
            want(1, v);
            s.object_radius = v[0];
        } else if (key == "step_max") {
            want(1, v);
            s.step_max = v[0];
        } else if (key == "success_tol") {
            want(1, v);
            s.success_tol = v[0];
        } else {
            throw ConfigError("maze spec line " + std::to_string(line_no) + ": unknown key '" +
                              key + "'");
        }
    }
    s.validate();
    return s;
}

void MazeSpec::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    write(out);
}

MazeSpec MazeSpec::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open maze spec '" + path + "'");
    return parse(in);
}

// --------------------------------------------------------------------------
// Dynamics
// --------------------------------------------------------------------------

namespace {

/// Largest fraction of `delta` travelable from `from` without blocking.
float max_feasible(Vec2 from, Vec2 delta, float radius, const MazeSpec& spec) {
    if (!spec.disc_blocked(from + delta, radius)) return 1.0f;
    float lo = 0.0f, hi = 1.0f;
    for (int it = 0; it < 24; ++it) {
        const float mid = 0.5f * (lo + hi);
        if (spec.disc_blocked(from + delta * mid, radius))
            hi = mid;
        else
            lo = mid;
    }
    return lo;
}

}  // namespace

Vec2 slide_move(Vec2 from, Vec2 delta, float radius, const MazeSpec& spec) {
    // advance along the commanded direction, then slide the remainder per axis
    const float t = max_feasible(from, delta, radius, spec);
    Vec2 p = from + delta * t;
    const Vec2 rest = delta * (1.0f - t);
    if (std::abs(rest.x) > 0.0f) {
        const Vec2 dx{rest.x, 0.0f};
        p = p + dx * max_feasible(p, dx, radius, spec);
    }
    if (std::abs(rest.y) > 0.0f) {
        const Vec2 dy{0.0f, rest.y};
        p = p + dy * max_feasible(p, dy, radius, spec);
    }
    return p;
}

EnvState step(const EnvState& state, const Action& action, const MazeSpec& spec) {
    if (!std::isfinite(action.delta.x) || !std::isfinite(action.delta.y))
        throw ContractError("env step: non-finite action");
    const Vec2 delta = clamp_norm(action.delta, spec.step_max);

    EnvState next = state;
    next.agent = slide_move(state.agent, delta, spec.agent_radius, spec);
    const float agent_disp = (next.agent - state.agent).norm();

    const float contact = spec.agent_radius + spec.object_radius;
    const Vec2 gap = next.object - next.agent;
    const float dist = gap.norm();
    const float overlap = contact - dist;
    if (overlap > 0.0f) {
        const Vec2 normal = dist > 1e-9f ? gap * (1.0f / dist) : Vec2{1.0f, 0.0f};
        // capped by the agent's own displacement so the passive object can
        // never outrun the pusher, even when recovering from a blocked state
        const float push = std::min(overlap, agent_disp);
        next.object = slide_move(next.object, normal * push, spec.object_radius, spec);
    }
    return next;
}

bool success(const EnvState& state, std::span<const float> goal_obs, const MazeSpec& spec) {
    if (goal_obs.size() < kObsDim) throw ContractError("success: goal observation needs 4 values");
    const Vec2 goal_object{goal_obs[2], goal_obs[3]};
    return (state.object - goal_object).norm() < spec.success_tol;
}

}  // namespace efm::env
