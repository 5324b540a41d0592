#pragma once

#include <string>
#include <vector>

#include "efm/agents.hpp"
#include "efm/extremum.hpp"

namespace efm::cli {

// Parameter structs mirror the CLI flags one-to-one; every command writes a
// resolved-config snapshot (config_resolved.txt) beside its outputs.

struct GenDataParams {
    std::string behavior = "expert";  // expert | full | partitioned
    int n_episodes = 200;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string maze_path;  // empty -> built-in default maze
};

struct GenDataResult {
    std::string data_path;
    int episodes = 0;
    long total_steps = 0;
    std::vector<int> region_coverage;  // object visits per region
};

GenDataResult cmd_gen_data(const GenDataParams& params);

struct DemoExtremumParams {
    std::string family = "bimodal-uniform";
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    extremum::HarnessConfig harness;  // training knobs
    int n_cloud_samples = 256;        // 2-D sample clouds for plotting
};

struct DemoExtremumResult {
    extremum::ComparisonReport comparison;
    std::string comparison_csv;
    // 2-D decomposition study (crescent family only)
    bool has_2d = false;
    std::string cloud_csv;
    float data_z_min = 0, data_z_max = 0;           // empirical extrema
    float decomposed_err_min = 0, decomposed_err_max = 0;
    float single_err_min = 0, single_err_max = 0;
};

DemoExtremumResult cmd_demo_extremum(const DemoExtremumParams& params);

struct TrainParams {
    std::string agent = "gc";       // gc | ac | pc | ps | as
    std::string variant = "no-rl";  // no-rl | use-rl
    std::string data_path;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    agents::AgentConfig config;     // kind/use_rl overwritten from the above
    int checkpoint_every = 5000;    // periodic snapshots (0 = final only)
    std::string dataset_tag;        // label carried into evaluation output
};

struct TrainResult {
    std::string checkpoint_path;
    std::string loss_csv;
    agents::TrainMetrics metrics;
};

TrainResult cmd_train(const TrainParams& params);

struct EvalParams {
    std::vector<std::string> checkpoints;  // one per training seed
    std::string pairs_path;
    std::string dataset_tag = "-";
    int n_runs = 4;
    int horizon = 800;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    int workers = 2;
};

struct EvalResultFiles {
    std::string runs_csv;     // agent,variant,dataset,pair_id,run,success,steps_to_success
    std::string summary_csv;  // per-pair and aggregate mean/std across seeds
    float mean_rate = 0;
    float std_rate = 0;
    std::vector<float> per_seed_rate;
};

EvalResultFiles cmd_eval(const EvalParams& params);

struct MatrixParams {
    std::vector<std::string> datasets = {"expert", "full", "partitioned"};
    std::vector<std::string> agents = {"gc",        "ac-no-rl", "ac-use-rl", "pc-no-rl",
                                       "pc-use-rl", "ps-no-rl", "ps-use-rl", "as-no-rl",
                                       "as-use-rl"};
    int n_seeds = 2;
    int n_episodes = 200;
    int n_pairs = 8;
    int n_runs = 4;
    int horizon = 800;
    std::uint64_t seed = 0;
    std::string out_dir = "matrix";
    std::string maze_path;
    agents::AgentConfig config;  // shared training knobs
    int workers = 2;
};

struct MatrixCell {
    std::string agent;  // e.g. "ac-use-rl"
    std::string dataset;
    bool complete = false;
    float mean_rate = 0;
    float std_rate = 0;
    int seeds = 0;
};

struct MatrixResult {
    std::string summary_csv;
    std::vector<MatrixCell> cells;
};

MatrixResult cmd_matrix(const MatrixParams& params);

/// "<agent>-<variant>" -> (kind, use_rl); plain "gc" is the no-variant baseline.
std::pair<agents::AgentKind, bool> parse_agent_variant(const std::string& name);

}  // namespace efm::cli
