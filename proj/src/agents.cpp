#include "efm/agents.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "efm/adam.hpp"
#include "efm/demos.hpp"

namespace efm::agents {

using data::EpisodeStore;
using data::SamplerConfig;
using data::TrajectoryTuple;
using flow::FlowModel;

// --------------------------------------------------------------------------
// Names and config
// --------------------------------------------------------------------------

AgentKind kind_from_name(const std::string& name) {
    std::string k = name;
    std::transform(k.begin(), k.end(), k.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (k == "gc" || k == "fm-gc") return AgentKind::GC;
    if (k == "ac" || k == "fm-ac") return AgentKind::AC;
    if (k == "pc" || k == "fm-pc") return AgentKind::PC;
    if (k == "ps" || k == "fm-ps") return AgentKind::PS;
    if (k == "as" || k == "fm-as") return AgentKind::AS;
    throw ConfigError("unknown agent kind '" + name + "' (valid: gc, ac, pc, ps, as)");
}

std::string kind_name(AgentKind k) {
    switch (k) {
        case AgentKind::GC: return "gc";
        case AgentKind::AC: return "ac";
        case AgentKind::PC: return "pc";
        case AgentKind::PS: return "ps";
        case AgentKind::AS: return "as";
    }
    return "?";
}

void AgentConfig::validate() const {
    sampler.validate();
    if (!(r_g >= 0.0f && r_g <= 1.0f)) throw ContractError("AgentConfig: r_g must be in [0,1]");
    if (kind == AgentKind::GC && use_rl)
        throw ConfigError("FM-GC has no critic and therefore no RL variant");
    if ((kind == AgentKind::PS || kind == AgentKind::AS) && n_candidates < 2)
        throw ContractError("AgentConfig: rejection-sampling agents need n_candidates >= 2");
    if (train_steps <= 0 || batch_size <= 1 || euler_steps <= 0)
        throw ContractError("AgentConfig: train_steps, batch_size, euler_steps must be positive");
    if (critic_sync_interval <= 0)
        throw ContractError("AgentConfig: critic_sync_interval must be positive");
}

void Agent::require(const std::string& component) const {
    auto fail = [&component](const std::string& why) {
        throw ContractError("agent component '" + component + "' " + why);
    };
    auto check_model = [&](const FlowModel& m) {
        if (m.net.layer_count() == 0) fail("is untrained");
        if (!m.net.all_finite()) fail("has non-finite weights");
    };
    if (component == "critic") {
        if (critic.size() != 2) fail("is missing");
        check_model(critic[0]);
        check_model(critic[1]);
    } else if (component == "actor") {
        if (!actor) fail("is missing");
        check_model(*actor);
    } else if (component == "planner") {
        if (!planner) fail("is missing");
        check_model(*planner);
    } else if (component == "world") {
        if (!world) fail("is missing");
        check_model(*world);
    } else {
        throw ContractError("unknown agent component '" + component + "'");
    }
}

// --------------------------------------------------------------------------
// Training
// --------------------------------------------------------------------------

namespace {

/// Tuple normalized into learning space; d is scaled by 1/L_g.
struct NormTuple {
    std::vector<float> o, tau_o, tau_a, g;
    float d = 0.0f;
};

NormTuple normalize_tuple(const EpisodeStore& store, const SamplerConfig& cfg,
                          const TrajectoryTuple& t) {
    const int dim_o = store.dim_o();
    const int dim_a = store.dim_a();
    NormTuple n;
    n.o.resize(dim_o);
    store.normalize_obs(t.o, n.o);
    n.g.resize(dim_o);
    store.normalize_obs(t.g, n.g);
    n.tau_o.resize(t.tau_o.size());
    for (int j = 0; j < cfg.L_o; ++j)
        store.normalize_obs(std::span<const float>(t.tau_o.data() + j * dim_o, dim_o),
                            std::span<float>(n.tau_o.data() + j * dim_o, dim_o));
    n.tau_a.resize(t.tau_a.size());
    for (int j = 0; j < cfg.L_a; ++j)
        store.normalize_act(std::span<const float>(t.tau_a.data() + j * dim_a, dim_a),
                            std::span<float>(n.tau_a.data() + j * dim_a, dim_a));
    n.d = static_cast<float>(t.d) / static_cast<float>(cfg.L_g);
    return n;
}

enum class CondLayout { OG, OGD, OTauO, O, OTauA };
enum class XSource { Distance, TauA, TauO };

struct Component {
    std::string name;
    FlowModel model;
    nn::AdamState opt;
    CondLayout cond = CondLayout::OG;
    XSource x = XSource::Distance;
    bool augmented = false;  // Eq. 5 half-batch applies
    double loss_acc = 0.0;
    int loss_count = 0;
};

int cond_width(CondLayout layout, int dim_o, int dim_a, const SamplerConfig& s) {
    switch (layout) {
        case CondLayout::OG: return 2 * dim_o;
        case CondLayout::OGD: return 2 * dim_o + 1;
        case CondLayout::OTauO: return dim_o + s.L_o * dim_o;
        case CondLayout::O: return dim_o;
        case CondLayout::OTauA: return dim_o + s.L_a * dim_a;
    }
    return 0;
}

void fill_cond_row(const NormTuple& t, CondLayout layout, std::span<float> out) {
    size_t p = 0;
    auto put = [&](const std::vector<float>& v) {
        std::copy(v.begin(), v.end(), out.begin() + p);
        p += v.size();
    };
    switch (layout) {
        case CondLayout::OG:
            put(t.o);
            put(t.g);
            break;
        case CondLayout::OGD:
            put(t.o);
            put(t.g);
            out[p++] = t.d;
            break;
        case CondLayout::OTauO:
            put(t.o);
            put(t.tau_o);
            break;
        case CondLayout::O:
            put(t.o);
            break;
        case CondLayout::OTauA:
            put(t.o);
            put(t.tau_a);
            break;
    }
}

void fill_x_row(const NormTuple& t, XSource x, std::span<float> out) {
    switch (x) {
        case XSource::Distance:
            out[0] = t.d;
            break;
        case XSource::TauA:
            std::copy(t.tau_a.begin(), t.tau_a.end(), out.begin());
            break;
        case XSource::TauO:
            std::copy(t.tau_o.begin(), t.tau_o.end(), out.begin());
            break;
    }
}

/// Max-over-twins distance at the given source points, clamped to >= 0.
std::vector<float> twin_critic_eval(const FlowModel& twin0, const FlowModel& twin1,
                                    std::span<const float> eps, std::span<const float> cond,
                                    int batch, int euler_steps, long* clamp_counter) {
    auto a = flow::integrate(twin0, eps, cond, batch, euler_steps);
    auto b = flow::integrate(twin1, eps, cond, batch, euler_steps);
    std::vector<float> out(batch);
    for (int i = 0; i < batch; ++i) {
        float v = std::max(a[i], b[i]);  // pessimistic: larger distance
        if (v < 0.0f) {
            v = 0.0f;
            if (clamp_counter) ++(*clamp_counter);
        }
        out[i] = v;
    }
    return out;
}

float flow_training_step(Component& comp, float lr_now, const std::vector<float>& x_rows,
                         const std::vector<float>& c_rows, int B, Rng& rng, int step,
                         const std::string& agent_tag) {
    FlowModel& m = comp.model;
    const int d = m.data_dim;
    std::vector<float> x_src(static_cast<size_t>(B) * d);
    std::vector<float> t_col(B);
    for (int i = 0; i < B; ++i) {
        m.source.sample_row(rng, std::span<float>(x_src.data() + static_cast<size_t>(i) * d, d));
        t_col[i] = rng.uniform();
    }
    flow::FlowBatch batch;
    batch.x_src = nn::Tensor::from_data({B, d}, std::move(x_src));
    batch.x_dst = nn::Tensor::from_data({B, d}, x_rows);
    batch.t = nn::Tensor::from_data({B, 1}, std::move(t_col));
    if (m.cond_dim > 0) batch.c = nn::Tensor::from_data({B, m.cond_dim}, c_rows);

    auto params = m.net.params();
    nn::zero_grads(params);
    nn::Tensor loss = flow::flow_loss(m, batch);
    const float lv = loss.item();
    if (!std::isfinite(lv))
        throw TrainingError("train_agent[" + agent_tag + "]: non-finite " + comp.name +
                            " loss " + std::to_string(lv) + " at step " + std::to_string(step));
    loss.backward();
    comp.opt.set_learning_rate(lr_now);
    comp.opt.step(params);
    return lv;
}

struct Trainer {
    Trainer(const AgentConfig& c, const EpisodeStore& s, std::uint64_t sd)
        : cfg(c), store(s), seed(sd) {}

    const AgentConfig& cfg;
    const EpisodeStore& store;
    std::uint64_t seed;
    std::vector<Component> components;
    // frozen twin copies used as the Eq. 5 bootstrap target
    std::vector<FlowModel> frozen;
    int critic0 = -1, critic1 = -1;  // indices into components
    TrainMetrics metrics;
    std::function<void(int)> on_log;

    Component make_component(const std::string& name, XSource x, CondLayout cond, bool augmented,
                             Rng& init_rng) const {
        const int dim_o = store.dim_o();
        const int dim_a = store.dim_a();
        int data_dim = 0;
        flow::SourceDistribution source;
        switch (x) {
            case XSource::Distance:
                data_dim = 1;
                source = flow::SourceDistribution::unit_box(1);
                break;
            case XSource::TauA:
                data_dim = cfg.sampler.L_a * dim_a;
                source = flow::SourceDistribution::gaussian(data_dim);
                break;
            case XSource::TauO:
                data_dim = cfg.sampler.L_o * dim_o;
                source = flow::SourceDistribution::gaussian(data_dim);
                break;
        }
        Component c;
        c.name = name;
        c.model = FlowModel::create(data_dim, cond_width(cond, dim_o, dim_a, cfg.sampler),
                                    cfg.hidden, std::move(source), init_rng);
        c.opt = nn::AdamState({.learning_rate = cfg.learning_rate});
        c.cond = cond;
        c.x = x;
        c.augmented = augmented;
        return c;
    }

    void run() {
        Rng tuple_rng(derive_seed(seed, "tuples"));
        Rng aug_rng(derive_seed(seed, "augment"));
        Rng flow_rng(derive_seed(seed, "flow-noise"));

        const int B = cfg.batch_size;
        for (int step = 0; step < cfg.train_steps; ++step) {
            if (cfg.use_rl && critic0 >= 0 && step % cfg.critic_sync_interval == 0) {
                frozen[0].net.copy_values_from(components[critic0].model.net);
                frozen[1].net.copy_values_from(components[critic1].model.net);
            }
            const float progress =
                static_cast<float>(step) / static_cast<float>(cfg.train_steps);
            const float lr_now =
                cfg.learning_rate * (1.0f - (1.0f - cfg.final_lr_fraction) * progress);

            for (Component& comp : components) {
                // independent draws per component (twin critics see different
                // shuffles of the data by construction)
                std::vector<NormTuple> batch;
                batch.reserve(B);
                for (int i = 0; i < B; ++i)
                    batch.push_back(normalize_tuple(
                        store, cfg.sampler, data::sample_tuple(store, cfg.sampler, tuple_rng)));
                if (cfg.use_rl && comp.augmented) augment_half(batch, aug_rng);

                const int d = comp.model.data_dim;
                const int cd = comp.model.cond_dim;
                std::vector<float> x_rows(static_cast<size_t>(B) * d);
                std::vector<float> c_rows(static_cast<size_t>(B) * cd);
                for (int i = 0; i < B; ++i) {
                    fill_x_row(batch[i], comp.x,
                               std::span<float>(x_rows.data() + static_cast<size_t>(i) * d, d));
                    fill_cond_row(batch[i], comp.cond,
                                  std::span<float>(c_rows.data() + static_cast<size_t>(i) * cd,
                                                   cd));
                }
                const float lv = flow_training_step(comp, lr_now, x_rows, c_rows, B, flow_rng,
                                                    step, kind_name(cfg.kind));
                comp.loss_acc += lv;
                comp.loss_count += 1;
            }

            if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.train_steps) {
                metrics.logged_steps.push_back(step + 1);
                for (Component& comp : components) {
                    metrics.loss_curves[comp.name].push_back(
                        comp.loss_count ? static_cast<float>(comp.loss_acc / comp.loss_count)
                                        : 0.0f);
                    comp.loss_acc = 0.0;
                    comp.loss_count = 0;
                }
                if (on_log) on_log(step + 1);
            }
        }
    }

    /// Replaces the second half of the batch with Eq. 5 augmented tuples:
    /// (o, tau_o, tau_a, d + Critic(eps_g | g, g'), g').
    void augment_half(std::vector<NormTuple>& batch, Rng& rng) {
        const int B = static_cast<int>(batch.size());
        const int half = B / 2;
        if (half == 0) return;
        const int dim_o = store.dim_o();
        std::vector<float> eps(half);
        std::vector<float> cond(static_cast<size_t>(half) * 2 * dim_o);
        std::vector<std::vector<float>> g_prime(half);
        for (int i = 0; i < half; ++i) {
            NormTuple& t = batch[B - half + i];
            auto raw = data::sample_unrelated_goal(store, rng);
            g_prime[i].resize(dim_o);
            store.normalize_obs(raw, g_prime[i]);
            eps[i] = rng.uniform(0.0f, cfg.r_g);
            float* row = cond.data() + static_cast<size_t>(i) * 2 * dim_o;
            std::copy(t.g.begin(), t.g.end(), row);
            std::copy(g_prime[i].begin(), g_prime[i].end(), row + dim_o);
        }
        auto dist = twin_critic_eval(frozen[0], frozen[1], eps, cond, half, cfg.euler_steps,
                                     &metrics.negative_critic_clamps);
        for (int i = 0; i < half; ++i) {
            NormTuple& t = batch[B - half + i];
            t.d = compose_distance(t.d, dist[i], cfg.clip_augmented_d);
            t.g = std::move(g_prime[i]);
        }
        metrics.augmented_tuples += half;
    }
};

}  // namespace

namespace {

/// Snapshot view sharing the live component weights.
Agent agent_view(const Trainer& trainer, const AgentConfig& config, const EpisodeStore& store) {
    Agent agent;
    agent.config = config;
    agent.dim_o = store.dim_o();
    agent.dim_a = store.dim_a();
    agent.stats = store.stats();
    for (const Component& c : trainer.components) {
        if (c.name == "critic.0" || c.name == "critic.1")
            agent.critic.push_back(c.model);
        else if (c.name == "actor")
            agent.actor = c.model;
        else if (c.name == "planner")
            agent.planner = c.model;
        else if (c.name == "world")
            agent.world = c.model;
    }
    return agent;
}

}  // namespace

Agent train_agent(const AgentConfig& config, const EpisodeStore& store, std::uint64_t seed,
                  TrainMetrics* metrics, const TrainCallback& callback) {
    config.validate();
    if (store.empty()) throw ContractError("train_agent: empty episode store");

    Trainer trainer(config, store, seed);
    Rng init_rng(derive_seed(seed, "init"));

    const bool wants_critic = config.kind != AgentKind::GC;
    if (wants_critic) {
        trainer.critic0 = static_cast<int>(trainer.components.size());
        trainer.components.push_back(trainer.make_component(
            "critic.0", XSource::Distance, CondLayout::OG, config.use_rl, init_rng));
        trainer.critic1 = static_cast<int>(trainer.components.size());
        trainer.components.push_back(trainer.make_component(
            "critic.1", XSource::Distance, CondLayout::OG, config.use_rl, init_rng));
        if (config.use_rl) {
            trainer.frozen.push_back(trainer.components[trainer.critic0].model);
            trainer.frozen.push_back(trainer.components[trainer.critic1].model);
            // deep copies: the frozen nets must not alias the live parameters
            for (int i = 0; i < 2; ++i) {
                const FlowModel& live =
                    trainer.components[i == 0 ? trainer.critic0 : trainer.critic1].model;
                trainer.frozen[i].net = nn::Mlp::zeros(live.net.layer_sizes);
                trainer.frozen[i].net.copy_values_from(live.net);
            }
        }
    }

    switch (config.kind) {
        case AgentKind::GC:
            trainer.components.push_back(trainer.make_component("actor", XSource::TauA,
                                                                CondLayout::OG, false, init_rng));
            break;
        case AgentKind::AC:
            trainer.components.push_back(trainer.make_component(
                "actor", XSource::TauA, CondLayout::OGD, config.use_rl, init_rng));
            break;
        case AgentKind::PC:
            trainer.components.push_back(trainer.make_component(
                "planner", XSource::TauO, CondLayout::OGD, config.use_rl, init_rng));
            trainer.components.push_back(trainer.make_component(
                "actor", XSource::TauA, CondLayout::OTauO, false, init_rng));
            break;
        case AgentKind::PS:
            trainer.components.push_back(
                trainer.make_component("planner", XSource::TauO, CondLayout::O, false, init_rng));
            trainer.components.push_back(trainer.make_component(
                "actor", XSource::TauA, CondLayout::OTauO, false, init_rng));
            break;
        case AgentKind::AS:
            trainer.components.push_back(
                trainer.make_component("actor", XSource::TauA, CondLayout::O, false, init_rng));
            trainer.components.push_back(trainer.make_component(
                "world", XSource::TauO, CondLayout::OTauA, false, init_rng));
            break;
    }

    if (callback)
        trainer.on_log = [&](int steps_done) {
            callback(steps_done, agent_view(trainer, config, store));
        };
    trainer.run();

    Agent agent;
    agent.config = config;
    agent.dim_o = store.dim_o();
    agent.dim_a = store.dim_a();
    agent.stats = store.stats();
    for (Component& c : trainer.components) {
        if (c.name == "critic.0" || c.name == "critic.1")
            agent.critic.push_back(std::move(c.model));
        else if (c.name == "actor")
            agent.actor = std::move(c.model);
        else if (c.name == "planner")
            agent.planner = std::move(c.model);
        else if (c.name == "world")
            agent.world = std::move(c.model);
    }
    if (metrics) *metrics = std::move(trainer.metrics);
    return agent;
}


flow::FlowModel train_world(const AgentConfig& config, const EpisodeStore& store,
                            std::uint64_t seed, TrainMetrics* metrics) {
    AgentConfig cfg = config;
    cfg.kind = AgentKind::AS;
    cfg.use_rl = false;
    cfg.validate();
    if (store.empty()) throw ContractError("train_world: empty episode store");
    Trainer trainer(cfg, store, seed);
    Rng init_rng(derive_seed(seed, "init-world"));
    trainer.components.push_back(
        trainer.make_component("world", XSource::TauO, CondLayout::OTauA, false, init_rng));
    trainer.run();
    if (metrics) *metrics = std::move(trainer.metrics);
    return std::move(trainer.components[0].model);
}

// --------------------------------------------------------------------------
// Inference
// --------------------------------------------------------------------------

float critic_distance(const Agent& agent, float eps, std::span<const float> o_n,
                      std::span<const float> g_n) {
    agent.require("critic");
    if (eps < 0.0f || eps > 1.0f) throw ContractError("critic_distance: eps outside [0,1]");
    std::vector<float> cond;
    cond.insert(cond.end(), o_n.begin(), o_n.end());
    cond.insert(cond.end(), g_n.begin(), g_n.end());
    std::vector<float> e = {eps};
    return twin_critic_eval(agent.critic[0], agent.critic[1], e, cond, 1,
                            agent.config.euler_steps, nullptr)[0];
}

namespace {

std::vector<float> normalized(const data::NormStats& stats, std::span<const float> raw,
                              bool obs) {
    std::vector<float> out(raw.size());
    const auto& mean = obs ? stats.obs_mean : stats.act_mean;
    const auto& scale = obs ? stats.obs_scale : stats.act_scale;
    if (mean.empty()) {
        std::copy(raw.begin(), raw.end(), out.begin());
        return out;
    }
    if (raw.size() != mean.size()) throw ShapeError("normalize: width mismatch");
    for (size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mean[i]) / scale[i];
    return out;
}

std::vector<float> repeat_rows(std::span<const float> row, int n) {
    std::vector<float> out;
    out.reserve(row.size() * n);
    for (int i = 0; i < n; ++i) out.insert(out.end(), row.begin(), row.end());
    return out;
}

/// argmin with ties broken by the lowest candidate index.
int argmin_index(std::span<const float> scores) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores[i] < scores[best]) best = i;
    return best;
}

std::vector<float> concat_rows(std::span<const float> a, std::span<const float> b) {
    std::vector<float> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace

std::vector<float> infer_action(const Agent& agent, std::span<const float> o_raw,
                                std::span<const float> g_raw, Rng& rng, float action_clamp,
                                InferenceTrace* trace) {
    agent.require("actor");
    const auto& cfg = agent.config;
    const int dim_o = agent.dim_o;
    const int dim_a = agent.dim_a;
    if (static_cast<int>(o_raw.size()) != dim_o || static_cast<int>(g_raw.size()) != dim_o)
        throw ShapeError("infer_action: observation width mismatch");
    const std::vector<float> o_n = normalized(agent.stats, o_raw, true);
    const std::vector<float> g_n = normalized(agent.stats, g_raw, true);
    const int steps = cfg.euler_steps;

    std::vector<float> tau_a_n;
    switch (cfg.kind) {
        case AgentKind::GC: {
            tau_a_n = flow::sample(*agent.actor, concat_rows(o_n, g_n), 1, steps, rng);
            break;
        }
        case AgentKind::AC: {
            const float d = critic_distance(agent, 0.0f, o_n, g_n);
            if (trace) trace->d_tilde = d;
            std::vector<float> cond = concat_rows(o_n, g_n);
            cond.push_back(d);
            tau_a_n = flow::sample(*agent.actor, cond, 1, steps, rng);
            break;
        }
        case AgentKind::PC: {
            agent.require("planner");
            const float d = critic_distance(agent, 0.0f, o_n, g_n);
            if (trace) trace->d_tilde = d;
            std::vector<float> cond = concat_rows(o_n, g_n);
            cond.push_back(d);
            auto tau_o = flow::sample(*agent.planner, cond, 1, steps, rng);
            tau_a_n = flow::sample(*agent.actor, concat_rows(o_n, tau_o), 1, steps, rng);
            break;
        }
        case AgentKind::PS: {
            agent.require("planner");
            agent.require("critic");
            const int n = cfg.n_candidates;
            auto plans = flow::sample(*agent.planner, repeat_rows(o_n, n), n, steps, rng);
            const int plan_dim = agent.planner->data_dim;
            // score the final observation of each candidate plan
            std::vector<float> eps(n, 0.0f);
            std::vector<float> cond(static_cast<size_t>(n) * 2 * dim_o);
            for (int i = 0; i < n; ++i) {
                const float* last = plans.data() + static_cast<size_t>(i) * plan_dim +
                                    (cfg.sampler.L_o - 1) * dim_o;
                float* row = cond.data() + static_cast<size_t>(i) * 2 * dim_o;
                std::copy(last, last + dim_o, row);
                std::copy(g_n.begin(), g_n.end(), row + dim_o);
            }
            auto scores = twin_critic_eval(agent.critic[0], agent.critic[1], eps, cond, n, steps,
                                           nullptr);
            const int best = argmin_index(scores);
            if (trace) {
                trace->candidate_scores = scores;
                trace->selected = best;
            }
            std::span<const float> plan(plans.data() + static_cast<size_t>(best) * plan_dim,
                                        plan_dim);
            tau_a_n = flow::sample(*agent.actor, concat_rows(o_n, plan), 1, steps, rng);
            break;
        }
        case AgentKind::AS: {
            agent.require("world");
            agent.require("critic");
            const int n = cfg.n_candidates;
            auto cands = flow::sample(*agent.actor, repeat_rows(o_n, n), n, steps, rng);
            const int act_dim = agent.actor->data_dim;
            // roll each candidate through the world model
            std::vector<float> world_cond(static_cast<size_t>(n) * (dim_o + act_dim));
            for (int i = 0; i < n; ++i) {
                float* row = world_cond.data() + static_cast<size_t>(i) * (dim_o + act_dim);
                std::copy(o_n.begin(), o_n.end(), row);
                std::copy(cands.data() + static_cast<size_t>(i) * act_dim,
                          cands.data() + static_cast<size_t>(i + 1) * act_dim, row + dim_o);
            }
            auto futures = flow::sample(*agent.world, world_cond, n, steps, rng);
            const int plan_dim = agent.world->data_dim;
            std::vector<float> eps(n, 0.0f);
            std::vector<float> cond(static_cast<size_t>(n) * 2 * dim_o);
            for (int i = 0; i < n; ++i) {
                const float* last = futures.data() + static_cast<size_t>(i) * plan_dim +
                                    (cfg.sampler.L_o - 1) * dim_o;
                float* row = cond.data() + static_cast<size_t>(i) * 2 * dim_o;
                std::copy(last, last + dim_o, row);
                std::copy(g_n.begin(), g_n.end(), row + dim_o);
            }
            auto scores = twin_critic_eval(agent.critic[0], agent.critic[1], eps, cond, n, steps,
                                           nullptr);
            const int best = argmin_index(scores);
            if (trace) {
                trace->candidate_scores = scores;
                trace->selected = best;
            }
            tau_a_n.assign(cands.begin() + static_cast<size_t>(best) * act_dim,
                           cands.begin() + static_cast<size_t>(best + 1) * act_dim);
            break;
        }
    }

    // back to raw action units, clamped row-wise at execution bounds
    std::vector<float> out(tau_a_n.size());
    for (int j = 0; j < cfg.sampler.L_a; ++j) {
        std::span<const float> in(tau_a_n.data() + static_cast<size_t>(j) * dim_a, dim_a);
        std::span<float> row(out.data() + static_cast<size_t>(j) * dim_a, dim_a);
        const auto& mean = agent.stats.act_mean;
        const auto& scale = agent.stats.act_scale;
        for (int i = 0; i < dim_a; ++i)
            row[i] = mean.empty() ? in[i] : in[i] * scale[i] + mean[i];
        if (action_clamp > 0.0f) {
            float norm = 0.0f;
            for (int i = 0; i < dim_a; ++i) norm += row[i] * row[i];
            norm = std::sqrt(norm);
            if (norm > action_clamp)
                for (int i = 0; i < dim_a; ++i) row[i] *= action_clamp / norm;
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// Evaluation pairs
// --------------------------------------------------------------------------

std::vector<EvalPair> make_eval_pairs(const env::MazeSpec& spec, int n, std::uint64_t seed) {
    if (n < 1) throw ContractError("make_eval_pairs: n must be >= 1");
    spec.validate();
    Rng rng(derive_seed(seed, "eval-pairs"));
    const env::GridPlanner object_planner(spec, spec.object_radius + 0.004f);
    const float contact = spec.agent_radius + spec.object_radius;

    std::vector<EvalPair> pairs;
    int attempts = 0;
    while (static_cast<int>(pairs.size()) < n && attempts < 20000) {
        ++attempts;
        const env::Vec2 corner =
            spec.corner_goals[pairs.size() % spec.corner_goals.size()];
        auto obj = object_planner.random_free_point(rng);
        if (!obj) continue;
        if ((*obj - corner).norm() < 0.35f) continue;
        // adjacent-region pairs: each requires exactly the one-wall crossing
        // that partitioned play never demonstrates, yet stays solvable inside
        // a reasonable horizon for every agent
        if (std::abs(spec.region_of(*obj) - spec.region_of(corner)) != 1) continue;
        auto path = object_planner.path(*obj, corner);
        if (!path || path->size() < 2) continue;

        // agent placed behind the object along the first path direction
        env::Vec2 u0 = (*path)[1] - *obj;
        if (u0.norm() < 1e-6f) continue;
        u0 = u0 * (1.0f / u0.norm());
        env::Vec2 agent = *obj - u0 * (contact + 0.015f);
        if (spec.disc_blocked(agent, spec.agent_radius)) {
            agent = *obj + u0 * (contact + 0.015f);
            if (spec.disc_blocked(agent, spec.agent_radius)) continue;
        }
        // plausible goal pose: agent tangent to the object opposite the
        // arrival direction
        env::Vec2 u1 = corner - (*path)[path->size() - 2];
        if (u1.norm() < 1e-6f) u1 = u0;
        u1 = u1 * (1.0f / u1.norm());
        env::Vec2 goal_agent = corner - u1 * (contact + 0.005f);
        if (spec.disc_blocked(goal_agent, spec.agent_radius)) goal_agent = agent;

        EvalPair p;
        p.start = env::observe({agent, *obj});
        p.goal = env::observe({goal_agent, corner});
        pairs.push_back(p);
    }
    if (static_cast<int>(pairs.size()) < n)
        throw TrainingError("make_eval_pairs: could not build the requested pair count");
    return pairs;
}

void save_eval_pairs(std::span<const EvalPair> pairs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << "pair_id,agent_x,agent_y,object_x,object_y,goal_agent_x,goal_agent_y,goal_object_x,"
           "goal_object_y\n";
    char buf[64];
    auto fmt = [&buf](float v) {
        std::snprintf(buf, sizeof buf, "%.8g", static_cast<double>(v));
        return std::string(buf);
    };
    for (size_t i = 0; i < pairs.size(); ++i) {
        out << i;
        for (float v : pairs[i].start) out << ',' << fmt(v);
        for (float v : pairs[i].goal) out << ',' << fmt(v);
        out << '\n';
    }
}

std::vector<EvalPair> load_eval_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open eval pairs file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("eval pairs file '" + path + "' is empty");
    std::vector<EvalPair> pairs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<float> vals;
        while (std::getline(ls, cell, ',')) {
            try {
                vals.push_back(std::stof(cell));
            } catch (const std::exception&) {
                throw ConfigError("eval pairs file '" + path + "': bad number '" + cell + "'");
            }
        }
        if (vals.size() != 9)
            throw ConfigError("eval pairs file '" + path + "': expected 9 columns");
        EvalPair p;
        for (int i = 0; i < 4; ++i) p.start[i] = vals[1 + i];
        for (int i = 0; i < 4; ++i) p.goal[i] = vals[5 + i];
        pairs.push_back(p);
    }
    return pairs;
}

// --------------------------------------------------------------------------
// Closed-loop evaluation
// --------------------------------------------------------------------------

namespace {

/// Linear interpolation between strided action rows at step offset j.
std::array<float, env::kActDim> interp_action(std::span<const float> plan, int L_a, int S_a,
                                              int offset) {
    const int idx = std::min(offset / S_a, L_a - 1);
    const int next = std::min(idx + 1, L_a - 1);
    const float frac = S_a > 1 ? static_cast<float>(offset % S_a) / static_cast<float>(S_a) : 0.0f;
    std::array<float, env::kActDim> a{};
    for (int i = 0; i < env::kActDim; ++i) {
        const float v0 = plan[static_cast<size_t>(idx) * env::kActDim + i];
        const float v1 = plan[static_cast<size_t>(next) * env::kActDim + i];
        a[i] = (1.0f - frac) * v0 + frac * v1;
    }
    return a;
}

EvalRow run_rollout(const Agent& agent, const env::MazeSpec& spec, const EvalPair& pair,
                    int pair_id, int run, int horizon, std::uint64_t seed) {
    Rng rng(derive_seed(seed, (static_cast<std::uint64_t>(pair_id) << 20) + run));
    EvalRow row;
    row.pair_id = pair_id;
    row.run = run;

    env::EnvState state = env::state_from_obs(pair.start);
    if (env::success(state, pair.goal, spec)) {
        row.success = true;
        row.steps_to_success = 0;
        return row;
    }
    const int replan = agent.config.effective_replan_interval();
    std::vector<float> plan;
    int plan_step = 0;
    for (int step_idx = 0; step_idx < horizon; ++step_idx) {
        if (plan.empty() || step_idx - plan_step >= replan) {
            const auto obs = env::observe(state);
            plan = infer_action(agent, obs, pair.goal, rng, spec.step_max);
            plan_step = step_idx;
        }
        const auto a = interp_action(plan, agent.config.sampler.L_a, agent.config.sampler.S_a,
                                     step_idx - plan_step);
        state = env::step(state, {{a[0], a[1]}}, spec);
        if (env::success(state, pair.goal, spec)) {
            row.success = true;
            row.steps_to_success = step_idx + 1;
            return row;
        }
    }
    return row;
}

}  // namespace

EvalResult evaluate(const Agent& agent, const env::MazeSpec& spec,
                    std::span<const EvalPair> pairs, int n_runs, int horizon, std::uint64_t seed,
                    int n_workers) {
    if (horizon <= 0) throw ContractError("evaluate: horizon must be positive");
    if (n_runs <= 0) throw ContractError("evaluate: n_runs must be positive");
    if (pairs.empty()) throw ContractError("evaluate: no evaluation pairs");
    if (agent.dim_o != env::kObsDim || agent.dim_a != env::kActDim)
        throw ContractError("evaluate: agent dimensions do not match the maze environment");
    agent.require("actor");

    const int total = static_cast<int>(pairs.size()) * n_runs;
    std::vector<EvalRow> rows(total);
    std::atomic<int> cursor{0};
    auto worker = [&] {
        for (;;) {
            const int idx = cursor.fetch_add(1);
            if (idx >= total) return;
            const int pair_id = idx / n_runs;
            const int run = idx % n_runs;
            rows[idx] = run_rollout(agent, spec, pairs[pair_id], pair_id, run, horizon, seed);
        }
    };
    std::vector<std::thread> threads;
    const int workers = std::max(1, std::min(n_workers, total));
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    EvalResult result;
    result.rows = std::move(rows);
    result.per_pair_rate.assign(pairs.size(), 0.0f);
    int successes = 0;
    for (const EvalRow& r : result.rows) {
        if (r.success) {
            result.per_pair_rate[r.pair_id] += 1.0f;
            ++successes;
        }
    }
    for (float& r : result.per_pair_rate) r /= static_cast<float>(n_runs);
    result.mean_rate = static_cast<float>(successes) / static_cast<float>(total);
    return result;
}

// --------------------------------------------------------------------------
// Persistence
// --------------------------------------------------------------------------

void save_agent(const Agent& agent, const std::string& path) {
    nn::NamedTensors out;
    const auto& c = agent.config;
    out.add("__config__.scalars",
            nn::Tensor::from_data(
                {14}, {static_cast<float>(static_cast<int>(c.kind)), c.use_rl ? 1.0f : 0.0f,
                       c.r_g, static_cast<float>(c.n_candidates),
                       static_cast<float>(c.euler_steps), static_cast<float>(c.replan_interval),
                       static_cast<float>(c.sampler.L_o), static_cast<float>(c.sampler.S_o),
                       static_cast<float>(c.sampler.L_a), static_cast<float>(c.sampler.S_a),
                       static_cast<float>(c.sampler.L_g), static_cast<float>(agent.dim_o),
                       static_cast<float>(agent.dim_a), c.clip_augmented_d ? 1.0f : 0.0f}));
    auto add_stats = [&out](const std::string& name, const std::vector<float>& v) {
        if (!v.empty()) out.add(name, nn::Tensor::from_data({static_cast<int>(v.size())}, v));
    };
    add_stats("__config__.obs_mean", agent.stats.obs_mean);
    add_stats("__config__.obs_scale", agent.stats.obs_scale);
    add_stats("__config__.act_mean", agent.stats.act_mean);
    add_stats("__config__.act_scale", agent.stats.act_scale);
    for (size_t i = 0; i < agent.critic.size(); ++i)
        flow::save_flow(agent.critic[i], "critic." + std::to_string(i) + ".", out);
    if (agent.actor) flow::save_flow(*agent.actor, "actor.", out);
    if (agent.planner) flow::save_flow(*agent.planner, "planner.", out);
    if (agent.world) flow::save_flow(*agent.world, "world.", out);
    nn::save_checkpoint(out, path);
}

Agent load_agent(const std::string& path) {
    const nn::NamedTensors in = nn::load_checkpoint(path);
    const auto& s = in.at("__config__.scalars").data();
    Agent agent;
    agent.config.kind = static_cast<AgentKind>(static_cast<int>(s[0]));
    agent.config.use_rl = s[1] != 0.0f;
    agent.config.r_g = s[2];
    agent.config.n_candidates = static_cast<int>(s[3]);
    agent.config.euler_steps = static_cast<int>(s[4]);
    agent.config.replan_interval = static_cast<int>(s[5]);
    agent.config.sampler.L_o = static_cast<int>(s[6]);
    agent.config.sampler.S_o = static_cast<int>(s[7]);
    agent.config.sampler.L_a = static_cast<int>(s[8]);
    agent.config.sampler.S_a = static_cast<int>(s[9]);
    agent.config.sampler.L_g = static_cast<int>(s[10]);
    agent.dim_o = static_cast<int>(s[11]);
    agent.dim_a = static_cast<int>(s[12]);
    agent.config.clip_augmented_d = s[13] != 0.0f;
    auto get_stats = [&in](const std::string& name, std::vector<float>& v) {
        if (in.contains(name)) {
            const auto d = in.at(name).data();
            v.assign(d.begin(), d.end());
        }
    };
    get_stats("__config__.obs_mean", agent.stats.obs_mean);
    get_stats("__config__.obs_scale", agent.stats.obs_scale);
    get_stats("__config__.act_mean", agent.stats.act_mean);
    get_stats("__config__.act_scale", agent.stats.act_scale);
    if (in.contains("critic.0.__meta__.dims")) {
        agent.critic.push_back(flow::load_flow("critic.0.", in));
        agent.critic.push_back(flow::load_flow("critic.1.", in));
    }
    if (in.contains("actor.__meta__.dims")) agent.actor = flow::load_flow("actor.", in);
    if (in.contains("planner.__meta__.dims")) agent.planner = flow::load_flow("planner.", in);
    if (in.contains("world.__meta__.dims")) agent.world = flow::load_flow("world.", in);
    return agent;
}

}  // namespace efm::agents
