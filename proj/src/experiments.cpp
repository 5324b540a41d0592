#include "efm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "efm/demos.hpp"

namespace efm::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt_float(float v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(v));
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

/// Resolved-config snapshot: plain key=value lines, deterministic order.
void write_resolved_config(const std::string& out_dir,
                           const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream out(fs::path(out_dir) / "config_resolved.txt");
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

env::MazeSpec load_maze(const std::string& maze_path) {
    if (maze_path.empty()) return env::MazeSpec::default_spec();
    return env::MazeSpec::load(maze_path);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace

std::pair<agents::AgentKind, bool> parse_agent_variant(const std::string& name) {
    std::string base = name;
    bool use_rl = false;
    if (auto pos = name.rfind("-use-rl"); pos != std::string::npos && pos + 7 == name.size()) {
        base = name.substr(0, pos);
        use_rl = true;
    } else if (auto p2 = name.rfind("-no-rl"); p2 != std::string::npos && p2 + 6 == name.size()) {
        base = name.substr(0, p2);
    }
    return {agents::kind_from_name(base), use_rl};
}

// --------------------------------------------------------------------------
// gen-data
// --------------------------------------------------------------------------

GenDataResult cmd_gen_data(const GenDataParams& params) {
    const env::Behavior behavior = env::behavior_from_name(params.behavior);
    if (params.n_episodes < 1) throw ConfigError("gen-data: n_episodes must be >= 1");
    ensure_dir(params.out_dir);
    const env::MazeSpec spec = load_maze(params.maze_path);

    Rng rng(derive_seed(params.seed, "gen-data-" + params.behavior));
    data::EpisodeStore store = env::generate_demos(behavior, spec, params.n_episodes, rng);

    GenDataResult result;
    result.data_path = (fs::path(params.out_dir) / (params.behavior + ".efed")).string();
    data::save_store(store, result.data_path);
    spec.save((fs::path(params.out_dir) / "maze.txt").string());

    result.episodes = store.episode_count();
    result.total_steps = store.total_steps();
    result.region_coverage.assign(spec.regions.size(), 0);
    for (int i = 0; i < store.episode_count(); ++i)
        for (int k = 0; k < store.episode(i).T; ++k) {
            const auto s = env::state_from_obs(store.obs_row(i, k));
            const int r = spec.region_of(s.object);
            if (r >= 0) result.region_coverage[r] += 1;
        }

    write_resolved_config(params.out_dir,
                          {{"command", "gen-data"},
                           {"behavior", params.behavior},
                           {"episodes", std::to_string(params.n_episodes)},
                           {"seed", std::to_string(params.seed)},
                           {"maze", params.maze_path.empty() ? "builtin" : params.maze_path},
                           {"out", result.data_path}});
    return result;
}

// --------------------------------------------------------------------------
// demo-extremum
// --------------------------------------------------------------------------

DemoExtremumResult cmd_demo_extremum(const DemoExtremumParams& params) {
    ensure_dir(params.out_dir);
    extremum::HarnessConfig harness = params.harness;
    harness.seed = derive_seed(params.seed, "demo-extremum");

    DemoExtremumResult result;
    result.comparison_csv =
        (fs::path(params.out_dir) / ("compare_" + params.family + ".csv")).string();
    result.comparison = extremum::compare_methods(params.family, result.comparison_csv, harness);

    const extremum::SyntheticFamily family = extremum::make_family(params.family);
    if (family.data_dim == 2) {
        result.has_2d = true;
        extremum::DecomposedModel decomposed = extremum::train_decomposed(family, harness);
        extremum::FlowModel joint = extremum::train_joint_baseline(family, harness);

        // empirical extrema of a reference cloud from the family itself
        Rng data_rng(derive_seed(params.seed, "demo-extremum-data"));
        std::vector<std::array<float, 2>> cloud(params.n_cloud_samples);
        result.data_z_min = 1e30f;
        result.data_z_max = -1e30f;
        std::vector<float> pt(2);
        for (auto& row : cloud) {
            family.sample(data_rng, 0.0f, pt);
            row = {pt[0], pt[1]};
        }
        for (int i = 0; i < 4000; ++i) {
            family.sample(data_rng, 0.0f, pt);
            result.data_z_min = std::min(result.data_z_min, pt[0]);
            result.data_z_max = std::max(result.data_z_max, pt[0]);
        }

        Rng r1(derive_seed(params.seed, "demo-2d-1"));
        Rng r2(derive_seed(params.seed, "demo-2d-2"));
        const int n = params.n_cloud_samples;
        auto dec_min = extremum::estimate_extremum_nd(decomposed, extremum::Direction::Min, n, r1,
                                                      harness.euler_steps);
        auto dec_max = extremum::estimate_extremum_nd(decomposed, extremum::Direction::Max, n, r1,
                                                      harness.euler_steps);
        auto single_min = extremum::single_model_extremum_baseline(
            joint, extremum::Direction::Min, n, r2, harness.euler_steps);
        auto single_max = extremum::single_model_extremum_baseline(
            joint, extremum::Direction::Max, n, r2, harness.euler_steps);

        auto mean_z_err = [n](const std::vector<float>& pts, float target) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += std::abs(pts[static_cast<size_t>(i) * 2] - target);
            return static_cast<float>(acc / n);
        };
        result.decomposed_err_min = mean_z_err(dec_min, result.data_z_min);
        result.decomposed_err_max = mean_z_err(dec_max, result.data_z_max);
        result.single_err_min = mean_z_err(single_min, result.data_z_min);
        result.single_err_max = mean_z_err(single_max, result.data_z_max);

        result.cloud_csv =
            (fs::path(params.out_dir) / ("extremum2d_" + params.family + ".csv")).string();
        std::ofstream out(result.cloud_csv);
        out << "method,sample_id,z,y\n";
        auto dump = [&out](const char* method, const std::vector<float>& pts, int count) {
            for (int i = 0; i < count; ++i)
                out << method << ',' << i << ',' << fmt_float(pts[static_cast<size_t>(i) * 2])
                    << ',' << fmt_float(pts[static_cast<size_t>(i) * 2 + 1]) << '\n';
        };
        {
            std::vector<float> flat;
            for (const auto& row : cloud) {
                flat.push_back(row[0]);
                flat.push_back(row[1]);
            }
            dump("data", flat, params.n_cloud_samples);
        }
        dump("decomposed-min", dec_min, n);
        dump("decomposed-max", dec_max, n);
        dump("single-min", single_min, n);
        dump("single-max", single_max, n);
    }

    write_resolved_config(params.out_dir, {{"command", "demo-extremum"},
                                           {"family", params.family},
                                           {"seed", std::to_string(params.seed)},
                                           {"flow_steps", std::to_string(harness.flow_steps)},
                                           {"expectile_steps",
                                            std::to_string(harness.expectile_steps)}});
    return result;
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

namespace {

void write_loss_csv(const std::string& path, const agents::TrainMetrics& metrics) {
    std::ofstream out(path);
    out << "step";
    for (const auto& [name, curve] : metrics.loss_curves) out << ',' << name;
    out << '\n';
    for (size_t i = 0; i < metrics.logged_steps.size(); ++i) {
        out << metrics.logged_steps[i];
        for (const auto& [name, curve] : metrics.loss_curves)
            out << ',' << (i < curve.size() ? fmt_float(curve[i]) : "");
        out << '\n';
    }
}

}  // namespace

TrainResult cmd_train(const TrainParams& params) {
    if (params.data_path.empty()) throw ConfigError("train: --data is required");
    ensure_dir(params.out_dir);
    data::EpisodeStore store = data::load_store(params.data_path);

    agents::AgentConfig config = params.config;
    config.kind = agents::kind_from_name(params.agent);
    config.use_rl = params.variant == "use-rl";
    if (params.variant != "use-rl" && params.variant != "no-rl")
        throw ConfigError("train: variant must be no-rl or use-rl");
    config.validate();

    const std::string tag = params.dataset_tag.empty()
                                ? fs::path(params.data_path).stem().string()
                                : params.dataset_tag;

    TrainResult result;
    result.checkpoint_path = (fs::path(params.out_dir) / "checkpoint.efmc").string();
    agents::TrainCallback callback;
    if (params.checkpoint_every > 0) {
        // snapshots ride on the logging cadence
        config.log_every = std::min(config.log_every, params.checkpoint_every);
        callback = [&](int steps_done, const agents::Agent& live) {
            if (steps_done % params.checkpoint_every == 0 && steps_done < config.train_steps)
                agents::save_agent(live, (fs::path(params.out_dir) /
                                          ("checkpoint_step" + std::to_string(steps_done) +
                                           ".efmc"))
                                             .string());
        };
    }
    agents::Agent agent =
        agents::train_agent(config, store, params.seed, &result.metrics, callback);
    agents::save_agent(agent, result.checkpoint_path);

    result.loss_csv = (fs::path(params.out_dir) / "loss.csv").string();
    write_loss_csv(result.loss_csv, result.metrics);

    write_resolved_config(
        params.out_dir,
        {{"command", "train"},
         {"agent", params.agent},
         {"variant", params.variant},
         {"data", params.data_path},
         {"dataset", tag},
         {"seed", std::to_string(params.seed)},
         {"train_steps", std::to_string(config.train_steps)},
         {"batch_size", std::to_string(config.batch_size)},
         {"learning_rate", fmt_float(config.learning_rate)},
         {"r_g", fmt_float(config.r_g)},
         {"n_candidates", std::to_string(config.n_candidates)},
         {"euler_steps", std::to_string(config.euler_steps)},
         {"critic_sync_interval", std::to_string(config.critic_sync_interval)},
         {"L_o", std::to_string(config.sampler.L_o)},
         {"S_o", std::to_string(config.sampler.S_o)},
         {"L_a", std::to_string(config.sampler.L_a)},
         {"S_a", std::to_string(config.sampler.S_a)},
         {"L_g", std::to_string(config.sampler.L_g)},
         {"checkpoint", result.checkpoint_path}});
    return result;
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

EvalResultFiles cmd_eval(const EvalParams& params) {
    if (params.checkpoints.empty()) throw ConfigError("eval: at least one checkpoint required");
    if (params.pairs_path.empty() || !fs::exists(params.pairs_path))
        throw ConfigError("eval: pairs file '" + params.pairs_path + "' not found");
    ensure_dir(params.out_dir);
    const env::MazeSpec spec = env::MazeSpec::default_spec();
    const auto pairs = agents::load_eval_pairs(params.pairs_path);

    EvalResultFiles files;
    files.runs_csv = (fs::path(params.out_dir) / "eval_runs.csv").string();
    std::ofstream runs(files.runs_csv);
    runs << "agent,variant,dataset,pair_id,run,success,steps_to_success\n";

    std::vector<std::vector<float>> per_pair_by_seed;
    for (size_t ci = 0; ci < params.checkpoints.size(); ++ci) {
        const agents::Agent agent = agents::load_agent(params.checkpoints[ci]);
        const std::string agent_name = agents::kind_name(agent.config.kind);
        const std::string variant = agent.config.kind == agents::AgentKind::GC
                                        ? "-"
                                        : (agent.config.use_rl ? "use-rl" : "no-rl");
        const auto result =
            agents::evaluate(agent, spec, pairs, params.n_runs, params.horizon,
                             derive_seed(params.seed, ci), params.workers);
        for (const auto& row : result.rows)
            runs << agent_name << ',' << variant << ',' << params.dataset_tag << ','
                 << row.pair_id << ',' << row.run << ',' << (row.success ? 1 : 0) << ','
                 << row.steps_to_success << '\n';
        per_pair_by_seed.push_back(result.per_pair_rate);
        files.per_seed_rate.push_back(result.mean_rate);
    }

    const size_t n_seeds = files.per_seed_rate.size();
    double mean = 0.0;
    for (float v : files.per_seed_rate) mean += v;
    mean /= static_cast<double>(n_seeds);
    double var = 0.0;
    for (float v : files.per_seed_rate) var += (v - mean) * (v - mean);
    files.mean_rate = static_cast<float>(mean);
    files.std_rate = n_seeds > 1 ? static_cast<float>(std::sqrt(var / (n_seeds - 1))) : 0.0f;

    files.summary_csv = (fs::path(params.out_dir) / "eval_summary.csv").string();
    {
        std::ofstream out(files.summary_csv);
        out << "pair_id,mean_success,std_success\n";
        for (size_t p = 0; p < pairs.size(); ++p) {
            double pm = 0.0;
            for (const auto& seed_rates : per_pair_by_seed) pm += seed_rates[p];
            pm /= static_cast<double>(n_seeds);
            double pv = 0.0;
            for (const auto& seed_rates : per_pair_by_seed)
                pv += (seed_rates[p] - pm) * (seed_rates[p] - pm);
            const double ps = n_seeds > 1 ? std::sqrt(pv / (n_seeds - 1)) : 0.0;
            out << p << ',' << fmt_float(static_cast<float>(pm)) << ','
                << fmt_float(static_cast<float>(ps)) << '\n';
        }
        out << "mean," << fmt_float(files.mean_rate) << ',' << fmt_float(files.std_rate) << '\n';
    }

    write_resolved_config(params.out_dir,
                          {{"command", "eval"},
                           {"checkpoints", std::to_string(params.checkpoints.size())},
                           {"pairs", params.pairs_path},
                           {"dataset", params.dataset_tag},
                           {"n_runs", std::to_string(params.n_runs)},
                           {"horizon", std::to_string(params.horizon)},
                           {"seed", std::to_string(params.seed)}});
    return files;
}

// --------------------------------------------------------------------------
// matrix
// --------------------------------------------------------------------------

namespace {

struct CellSpec {
    std::string agent;    // "ac-use-rl"
    std::string dataset;  // "expert"
    int seed_index = 0;
};

std::string cell_dir_name(const CellSpec& c) {
    return c.agent + "_" + c.dataset + "_s" + std::to_string(c.seed_index);
}

}  // namespace

MatrixResult cmd_matrix(const MatrixParams& params) {
    if (params.n_seeds < 1) throw ConfigError("matrix: n_seeds must be >= 1");
    ensure_dir(params.out_dir);
    const fs::path root(params.out_dir);

    // shared inputs: datasets and the evaluation pair set
    ensure_dir((root / "data").string());
    for (const auto& ds : params.datasets) {
        const fs::path data_file = root / "data" / (ds + ".efed");
        if (fs::exists(data_file)) continue;
        GenDataParams gp;
        gp.behavior = ds;
        gp.n_episodes = params.n_episodes;
        gp.seed = derive_seed(params.seed, "matrix-data-" + ds);
        gp.out_dir = (root / "data").string();
        gp.maze_path = params.maze_path;
        cmd_gen_data(gp);
    }
    const env::MazeSpec spec = load_maze(params.maze_path);
    const fs::path pairs_path = root / "pairs.csv";
    if (!fs::exists(pairs_path)) {
        auto pairs =
            agents::make_eval_pairs(spec, params.n_pairs, derive_seed(params.seed, "pairs"));
        agents::save_eval_pairs(pairs, pairs_path.string());
    }

    // the cell checksum pins everything that affects its outputs
    auto cell_checksum = [&](const CellSpec& c) {
        std::ostringstream key;
        key << c.agent << '|' << c.dataset << '|' << c.seed_index << '|' << params.seed << '|'
            << params.n_episodes << '|' << params.config.train_steps << '|'
            << params.config.batch_size << '|' << params.config.learning_rate << '|'
            << params.config.sampler.L_g << '|' << params.n_runs << '|' << params.horizon;
        return fnv1a(key.str());
    };

    std::vector<CellSpec> cells;
    for (const auto& agent : params.agents)
        for (const auto& ds : params.datasets)
            for (int s = 0; s < params.n_seeds; ++s) cells.push_back({agent, ds, s});

    std::atomic<size_t> cursor{0};
    std::vector<std::string> failures(cells.size());
    auto worker = [&] {
        for (;;) {
            const size_t idx = cursor.fetch_add(1);
            if (idx >= cells.size()) return;
            const CellSpec& cell = cells[idx];
            const fs::path dir = root / "cells" / cell_dir_name(cell);
            const fs::path done = dir / "done";
            const std::string checksum = std::to_string(cell_checksum(cell));
            if (fs::exists(done)) {
                std::ifstream in(done);
                std::string existing;
                in >> existing;
                if (existing == checksum) continue;  // resume: cell already computed
            }
            try {
                ensure_dir(dir.string());
                auto [kind, use_rl] = parse_agent_variant(cell.agent);
                TrainParams tp;
                tp.agent = agents::kind_name(kind);
                tp.variant = use_rl ? "use-rl" : "no-rl";
                tp.data_path = (root / "data" / (cell.dataset + ".efed")).string();
                tp.seed = derive_seed(params.seed,
                                      "cell-" + cell_dir_name(cell));
                tp.out_dir = dir.string();
                tp.config = params.config;
                tp.config.kind = kind;
                tp.config.use_rl = use_rl;
                tp.checkpoint_every = 0;
                tp.dataset_tag = cell.dataset;
                TrainResult trained = cmd_train(tp);

                EvalParams ep;
                ep.checkpoints = {trained.checkpoint_path};
                ep.pairs_path = pairs_path.string();
                ep.dataset_tag = cell.dataset;
                ep.n_runs = params.n_runs;
                ep.horizon = params.horizon;
                ep.seed = derive_seed(params.seed, "eval-" + cell_dir_name(cell));
                ep.out_dir = dir.string();
                ep.workers = 1;  // cells already run in parallel
                cmd_eval(ep);

                std::ofstream out(done);
                out << checksum << '\n';
            } catch (const std::exception& e) {
                failures[idx] = e.what();
            }
        }
    };
    std::vector<std::thread> threads;
    const int workers = std::max(1, params.workers);
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    // assemble the summary in deterministic order
    MatrixResult result;
    result.summary_csv = (root / "summary.csv").string();
    std::ofstream out(result.summary_csv);
    out << "agent,variant,dataset,seeds,mean_success,std_success,status\n";
    for (const auto& agent : params.agents) {
        for (const auto& ds : params.datasets) {
            MatrixCell row;
            row.agent = agent;
            row.dataset = ds;
            std::vector<float> rates;
            bool all_done = true;
            for (int s = 0; s < params.n_seeds; ++s) {
                const CellSpec cell{agent, ds, s};
                const fs::path dir = root / "cells" / cell_dir_name(cell);
                const fs::path done = dir / "done";
                bool ok = false;
                if (fs::exists(done)) {
                    std::ifstream in(done);
                    std::string existing;
                    in >> existing;
                    ok = existing == std::to_string(cell_checksum(cell));
                }
                if (!ok) {
                    all_done = false;
                    continue;
                }
                // the mean row is the last line of the cell's eval summary
                std::ifstream in(dir / "eval_summary.csv");
                std::string line, last;
                while (std::getline(in, line))
                    if (!line.empty()) last = line;
                if (last.rfind("mean,", 0) == 0) {
                    std::istringstream ls(last.substr(5));
                    std::string cellv;
                    std::getline(ls, cellv, ',');
                    rates.push_back(std::stof(cellv));
                } else {
                    all_done = false;
                }
            }
            row.seeds = static_cast<int>(rates.size());
            row.complete = all_done && row.seeds == params.n_seeds;
            const auto [kind, use_rl] = parse_agent_variant(agent);
            const std::string variant =
                kind == agents::AgentKind::GC ? "-" : (use_rl ? "use-rl" : "no-rl");
            if (row.complete) {
                double m = 0.0;
                for (float v : rates) m += v;
                m /= rates.size();
                double var = 0.0;
                for (float v : rates) var += (v - m) * (v - m);
                row.mean_rate = static_cast<float>(m);
                row.std_rate =
                    rates.size() > 1 ? static_cast<float>(std::sqrt(var / (rates.size() - 1)))
                                     : 0.0f;
                out << agents::kind_name(kind) << ',' << variant << ',' << ds << ',' << row.seeds
                    << ',' << fmt_float(row.mean_rate) << ',' << fmt_float(row.std_rate)
                    << ",OK\n";
            } else {
                out << agents::kind_name(kind) << ',' << variant << ',' << ds << ',' << row.seeds
                    << ",,,INCOMPLETE\n";
            }
            result.cells.push_back(row);
        }
    }
    out.close();

    // surface the first failure after writing the summary
    for (size_t i = 0; i < cells.size(); ++i)
        if (!failures[i].empty())
            throw TrainingError("matrix cell " + cell_dir_name(cells[i]) +
                                " failed: " + failures[i]);

    write_resolved_config(params.out_dir,
                          {{"command", "matrix"},
                           {"datasets", std::to_string(params.datasets.size())},
                           {"agents", std::to_string(params.agents.size())},
                           {"n_seeds", std::to_string(params.n_seeds)},
                           {"n_episodes", std::to_string(params.n_episodes)},
                           {"train_steps", std::to_string(params.config.train_steps)},
                           {"n_pairs", std::to_string(params.n_pairs)},
                           {"n_runs", std::to_string(params.n_runs)},
                           {"horizon", std::to_string(params.horizon)},
                           {"seed", std::to_string(params.seed)}});
    return result;
}

}  // namespace efm::cli
