#include "efm/demos.hpp"

#include <algorithm>
#include <deque>

namespace efm::env {

// --------------------------------------------------------------------------
// GridPlanner
// --------------------------------------------------------------------------

GridPlanner::GridPlanner(const MazeSpec& spec, float clearance, int cells_per_side)
    : spec_(spec), clearance_(clearance), n_(cells_per_side) {
    if (n_ < 4) throw ContractError("GridPlanner: grid too coarse");
    cell_ = spec.bounds.width() / static_cast<float>(n_);
    free_.assign(static_cast<size_t>(n_) * n_, 0);
    for (int cy = 0; cy < n_; ++cy)
        for (int cx = 0; cx < n_; ++cx)
            free_[static_cast<size_t>(cy) * n_ + cx] =
                spec.disc_blocked(cell_center(cx, cy), clearance) ? 0 : 1;
}

Vec2 GridPlanner::cell_center(int cx, int cy) const {
    return {spec_.bounds.x0 + (static_cast<float>(cx) + 0.5f) * cell_,
            spec_.bounds.y0 + (static_cast<float>(cy) + 0.5f) * cell_};
}

bool GridPlanner::cell_free(int cx, int cy) const {
    if (cx < 0 || cy < 0 || cx >= n_ || cy >= n_) return false;
    return free_[static_cast<size_t>(cy) * n_ + cx] != 0;
}

int GridPlanner::snap_free(Vec2 p, const std::vector<char>& blocked) const {
    // nearest free cell by ring search around the containing cell
    const int px = std::clamp(static_cast<int>((p.x - spec_.bounds.x0) / cell_), 0, n_ - 1);
    const int py = std::clamp(static_cast<int>((p.y - spec_.bounds.y0) / cell_), 0, n_ - 1);
    for (int radius = 0; radius < n_; ++radius) {
        int best = -1;
        float best_d = 1e30f;
        for (int cy = std::max(0, py - radius); cy <= std::min(n_ - 1, py + radius); ++cy)
            for (int cx = std::max(0, px - radius); cx <= std::min(n_ - 1, px + radius); ++cx) {
                const int idx = cy * n_ + cx;
                if (!free_[idx] || blocked[idx]) continue;
                const float d = (cell_center(cx, cy) - p).norm();
                if (d < best_d) {
                    best_d = d;
                    best = idx;
                }
            }
        if (best >= 0) return best;
    }
    return -1;
}

std::optional<std::vector<Vec2>> GridPlanner::search(Vec2 from, Vec2 to,
                                                     const std::vector<char>& blocked) const {
    const int start = snap_free(from, blocked);
    const int goal = snap_free(to, blocked);
    if (start < 0 || goal < 0) return std::nullopt;

    std::vector<int> parent(free_.size(), -2);
    std::deque<int> queue;
    parent[start] = -1;
    queue.push_back(start);
    while (!queue.empty()) {
        const int cur = queue.front();
        queue.pop_front();
        if (cur == goal) break;
        const int cx = cur % n_, cy = cur / n_;
        const int nbrs[4][2] = {{cx + 1, cy}, {cx - 1, cy}, {cx, cy + 1}, {cx, cy - 1}};
        for (const auto& nb : nbrs) {
            if (nb[0] < 0 || nb[1] < 0 || nb[0] >= n_ || nb[1] >= n_) continue;
            const int idx = nb[1] * n_ + nb[0];
            if (!free_[idx] || blocked[idx] || parent[idx] != -2) continue;
            parent[idx] = cur;
            queue.push_back(idx);
        }
    }
    if (parent[goal] == -2) return std::nullopt;
    std::vector<Vec2> path;
    for (int cur = goal; cur != -1; cur = parent[cur]) path.push_back(cell_center(cur % n_, cur / n_));
    std::reverse(path.begin(), path.end());
    return path;
}

std::optional<std::vector<Vec2>> GridPlanner::path(Vec2 from, Vec2 to) const {
    static thread_local std::vector<char> no_extra;
    no_extra.assign(free_.size(), 0);
    return search(from, to, no_extra);
}

std::optional<std::vector<Vec2>> GridPlanner::path_avoiding(Vec2 from, Vec2 to, Vec2 obstacle,
                                                            float obstacle_radius) const {
    std::vector<char> blocked(free_.size(), 0);
    const float keep_out = obstacle_radius + clearance_;
    for (int cy = 0; cy < n_; ++cy)
        for (int cx = 0; cx < n_; ++cx)
            if ((cell_center(cx, cy) - obstacle).norm() < keep_out)
                blocked[static_cast<size_t>(cy) * n_ + cx] = 1;
    return search(from, to, blocked);
}

std::optional<Vec2> GridPlanner::random_free_point(Rng& rng, const Rect* within,
                                                   float margin) const {
    std::vector<int> candidates;
    for (int cy = 0; cy < n_; ++cy)
        for (int cx = 0; cx < n_; ++cx) {
            if (!cell_free(cx, cy)) continue;
            const Vec2 p = cell_center(cx, cy);
            if (within && (p.x < within->x0 + margin || p.x > within->x1 - margin ||
                           p.y < within->y0 + margin || p.y > within->y1 - margin))
                continue;
            candidates.push_back(cy * n_ + cx);
        }
    if (candidates.empty()) return std::nullopt;
    const int pick = candidates[rng.uniform_int(static_cast<std::uint32_t>(candidates.size()))];
    return cell_center(pick % n_, pick / n_);
}

// --------------------------------------------------------------------------
// Behavior names
// --------------------------------------------------------------------------

Behavior behavior_from_name(const std::string& name) {
    if (name == "expert") return Behavior::Expert;
    if (name == "full") return Behavior::FullPlay;
    if (name == "partitioned") return Behavior::PartitionedPlay;
    throw ConfigError("unknown behavior '" + name + "' (valid: expert, full, partitioned)");
}

std::string behavior_name(Behavior b) {
    switch (b) {
        case Behavior::Expert: return "expert";
        case Behavior::FullPlay: return "full";
        case Behavior::PartitionedPlay: return "partitioned";
    }
    return "?";
}

// --------------------------------------------------------------------------
// Scripted controller
// --------------------------------------------------------------------------

namespace {

bool segment_clear(Vec2 a, Vec2 b, float radius, const MazeSpec& spec) {
    const float len = (b - a).norm();
    const int samples = std::max(2, static_cast<int>(len / 0.01f) + 1);
    for (int i = 0; i <= samples; ++i) {
        const float t = static_cast<float>(i) / samples;
        if (spec.disc_blocked(a + (b - a) * t, radius)) return false;
    }
    return true;
}

float segment_point_distance(Vec2 a, Vec2 b, Vec2 p) {
    const Vec2 ab = b - a;
    const float len2 = ab.dot(ab);
    const float t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0f, 1.0f) : 0.0f;
    return (a + ab * t - p).norm();
}

}  // namespace

Vec2 push_controller(const EnvState& state, Vec2 waypoint, const MazeSpec& spec,
                     const GridPlanner& agent_planner) {
    const Vec2 to_wp = waypoint - state.object;
    const float wp_dist = to_wp.norm();
    if (wp_dist < 1e-6f) return {0.0f, 0.0f};
    const Vec2 u = to_wp * (1.0f / wp_dist);
    const float contact = spec.agent_radius + spec.object_radius;

    const Vec2 from_agent = state.object - state.agent;
    const float agent_dist = from_agent.norm();
    const bool aligned = agent_dist > 1e-6f && agent_dist < contact + 0.04f &&
                         from_agent.dot(u) / agent_dist > 0.93f;
    if (aligned) return u * spec.step_max;  // push straight through the object

    // reposition behind the object, keeping clear of it
    const Vec2 behind = state.object - u * (contact + 0.01f);
    const bool direct = segment_clear(state.agent, behind, spec.agent_radius, spec) &&
                        segment_point_distance(state.agent, behind, state.object) >
                            contact - 1e-4f;
    if (direct) return clamp_norm(behind - state.agent, spec.step_max);

    auto path = agent_planner.path_avoiding(state.agent, behind, state.object,
                                            spec.object_radius + 0.005f);
    if (path && path->size() >= 2)
        return clamp_norm((*path)[1] - state.agent, spec.step_max);
    // cramped corner: approach directly and let the contact dynamics sort it out
    return clamp_norm(behind - state.agent, spec.step_max);
}

// --------------------------------------------------------------------------
// Demo generation
// --------------------------------------------------------------------------

namespace {

struct Recorder {
    data::Episode episode;

    void record(const EnvState& s, Vec2 action) {
        const auto obs = observe(s);
        episode.obs.insert(episode.obs.end(), obs.begin(), obs.end());
        episode.act.push_back(action.x);
        episode.act.push_back(action.y);
        episode.T += 1;
    }
};

struct RolloutResult {
    data::Episode episode;
    bool ok = false;
};

/// Drives the controller through a waypoint list. Stops on completion, on
/// max_steps, on stall, or when `keep_running` says no (the step that would
/// violate it is not recorded).
template <typename KeepRunning>
RolloutResult run_waypoints(EnvState state, const std::vector<Vec2>& waypoints,
                            const MazeSpec& spec, const GridPlanner& agent_planner,
                            int max_steps, float waypoint_tol, float final_tol,
                            float action_noise, Rng& rng, KeepRunning&& keep_running,
                            bool require_completion) {
    Recorder rec;
    size_t wp = 0;
    int last_progress_step = 0;
    float best_remaining = 1e30f;
    for (int step_idx = 0; step_idx < max_steps && wp < waypoints.size(); ++step_idx) {
        while (wp < waypoints.size() &&
               (state.object - waypoints[wp]).norm() <
                   (wp + 1 == waypoints.size() ? final_tol : waypoint_tol)) {
            ++wp;
            best_remaining = 1e30f;
            last_progress_step = step_idx;
        }
        if (wp >= waypoints.size()) break;

        Vec2 cmd = push_controller(state, waypoints[wp], spec, agent_planner);
        if (action_noise > 0.0f) {
            cmd.x += rng.gaussian(0.0f, action_noise * spec.step_max);
            cmd.y += rng.gaussian(0.0f, action_noise * spec.step_max);
            cmd = clamp_norm(cmd, spec.step_max);
        }
        EnvState next = env::step(state, Action{cmd}, spec);
        if (!keep_running(next)) break;
        rec.record(state, cmd);
        state = next;

        const float remaining = (state.object - waypoints[wp]).norm();
        if (remaining < best_remaining - 0.004f) {
            best_remaining = remaining;
            last_progress_step = step_idx;
        }
        if (step_idx - last_progress_step > 150) break;  // stalled
    }
    RolloutResult result;
    result.ok = !require_completion || wp >= waypoints.size();
    result.episode = std::move(rec.episode);
    return result;
}

EnvState sample_start(const MazeSpec& spec, const GridPlanner& object_planner, Rng& rng,
                      const Rect* within, float margin) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        auto obj = object_planner.random_free_point(rng, within, margin);
        if (!obj) continue;
        // agent somewhere nearby, clear of walls and of the object
        const float contact = spec.agent_radius + spec.object_radius;
        for (int t = 0; t < 20; ++t) {
            const float ang = rng.uniform(0.0f, 6.2831853f);
            const float rad = contact + 0.01f + rng.uniform(0.0f, 0.08f);
            const Vec2 agent = *obj + Vec2{std::cos(ang), std::sin(ang)} * rad;
            if (spec.disc_blocked(agent, spec.agent_radius)) continue;
            if (within && !within->contains(agent)) continue;
            return {agent, *obj};
        }
    }
    throw TrainingError("sample_start: could not place a collision-free start");
}

data::Episode expert_episode(const MazeSpec& spec, const GridPlanner& object_planner,
                             const GridPlanner& agent_planner, Rng& rng,
                             const DemoConfig& config) {
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
        EnvState start = sample_start(spec, object_planner, rng, nullptr, 0.0f);
        const Vec2 corner =
            spec.corner_goals[rng.uniform_int(static_cast<std::uint32_t>(spec.corner_goals.size()))];
        if ((start.object - corner).norm() < 0.35f) continue;  // too easy, resample
        auto path = object_planner.path(start.object, corner);
        if (!path) continue;
        std::vector<Vec2> waypoints;
        for (size_t i = 2; i + 1 < path->size(); i += 2) waypoints.push_back((*path)[i]);
        waypoints.push_back(corner);
        auto result = run_waypoints(start, waypoints, spec, agent_planner,
                                    config.max_steps_expert, config.waypoint_tol,
                                    spec.success_tol * 0.7f, config.expert_action_noise, rng,
                                    [](const EnvState&) { return true; },
                                    /*require_completion=*/true);
        if (result.ok && result.episode.T >= 2) return std::move(result.episode);
    }
    throw TrainingError("expert_episode: retries exhausted without a feasible episode");
}

data::Episode play_episode(const MazeSpec& spec, const GridPlanner& object_planner,
                           const GridPlanner& agent_planner, Rng& rng, const DemoConfig& config,
                           const Rect* region, float margin) {
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
        EnvState start = sample_start(spec, object_planner, rng, region, margin);
        const int n_wp = config.play_waypoints_min +
                         static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(
                             config.play_waypoints_max - config.play_waypoints_min + 1)));
        std::vector<Vec2> waypoints;
        for (int i = 0; i < n_wp; ++i) {
            auto wp = object_planner.random_free_point(rng, region, margin);
            if (!wp) continue;
            Vec2 p = *wp + Vec2{rng.uniform(-config.waypoint_jitter, config.waypoint_jitter),
                                rng.uniform(-config.waypoint_jitter, config.waypoint_jitter)};
            if (spec.disc_blocked(p, spec.object_radius)) p = *wp;
            if (region && !(p.x > region->x0 + margin && p.x < region->x1 - margin &&
                            p.y > region->y0 + margin && p.y < region->y1 - margin))
                p = *wp;
            waypoints.push_back(p);
        }
        if (waypoints.empty()) continue;

        auto keep_running = [&](const EnvState& s) {
            return region == nullptr || region->contains(s.object);
        };
        auto result = run_waypoints(start, waypoints, spec, agent_planner,
                                    config.max_steps_play, config.waypoint_tol,
                                    config.waypoint_tol, config.action_noise, rng, keep_running,
                                    /*require_completion=*/false);
        if (result.episode.T >= 2) return std::move(result.episode);
    }
    throw TrainingError("play_episode: retries exhausted without a feasible episode");
}

}  // namespace

data::EpisodeStore generate_demos(Behavior behavior, const MazeSpec& spec, int n_episodes,
                                  Rng& rng, const DemoConfig& config) {
    if (n_episodes < 1) throw ContractError("generate_demos: n_episodes must be >= 1");
    spec.validate();
    const GridPlanner object_planner(spec, spec.object_radius + 0.004f);
    const GridPlanner agent_planner(spec, spec.agent_radius + 0.002f);

    data::EpisodeStore store(kObsDim, kActDim);
    for (int i = 0; i < n_episodes; ++i) {
        switch (behavior) {
            case Behavior::Expert:
                store.add_episode(
                    expert_episode(spec, object_planner, agent_planner, rng, config));
                break;
            case Behavior::FullPlay:
                store.add_episode(play_episode(spec, object_planner, agent_planner, rng, config,
                                               nullptr, 0.0f));
                break;
            case Behavior::PartitionedPlay: {
                const Rect& region = spec.regions[i % spec.regions.size()];
                const float margin = static_cast<float>(config.region_margin_cells) /
                                     static_cast<float>(object_planner.cells_per_side());
                store.add_episode(play_episode(spec, object_planner, agent_planner, rng, config,
                                               &region, margin));
                break;
            }
        }
    }
    store.finalize();
    return store;
}

}  // namespace efm::env
