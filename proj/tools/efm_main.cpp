#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "efm/experiments.hpp"

using namespace efm;

namespace {

void print_kv(const char* key, const std::string& value) {
    std::printf("%-18s %s\n", key, value.c_str());
}

int run_gen_data(const cli::GenDataParams& params) {
    auto result = cli::cmd_gen_data(params);
    print_kv("data file", result.data_path);
    print_kv("episodes", std::to_string(result.episodes));
    print_kv("total steps", std::to_string(result.total_steps));
    std::string coverage;
    for (size_t i = 0; i < result.region_coverage.size(); ++i)
        coverage += (i ? " / " : "") + std::to_string(result.region_coverage[i]);
    print_kv("region coverage", coverage);
    return 0;
}

int run_demo_extremum(const cli::DemoExtremumParams& params) {
    auto result = cli::cmd_demo_extremum(params);
    print_kv("comparison csv", result.comparison_csv);
    print_kv("flow MAE", std::to_string(result.comparison.flow_mae));
    print_kv("expectile MAE", std::to_string(result.comparison.expectile_mae));
    if (result.has_2d) {
        print_kv("cloud csv", result.cloud_csv);
        std::printf("decomposed z-err   min %.4f / max %.4f\n", result.decomposed_err_min,
                    result.decomposed_err_max);
        std::printf("single-model z-err min %.4f / max %.4f\n", result.single_err_min,
                    result.single_err_max);
    }
    return 0;
}

int run_train(const cli::TrainParams& params) {
    auto result = cli::cmd_train(params);
    print_kv("checkpoint", result.checkpoint_path);
    print_kv("loss csv", result.loss_csv);
    for (const auto& [name, curve] : result.metrics.loss_curves)
        if (!curve.empty())
            std::printf("%-18s final loss %.5f\n", name.c_str(), curve.back());
    if (result.metrics.augmented_tuples > 0)
        print_kv("augmented tuples", std::to_string(result.metrics.augmented_tuples));
    return 0;
}

int run_eval(const cli::EvalParams& params) {
    auto result = cli::cmd_eval(params);
    print_kv("runs csv", result.runs_csv);
    print_kv("summary csv", result.summary_csv);
    std::printf("success rate       %.3f +- %.3f over %zu seed(s)\n", result.mean_rate,
                result.std_rate, result.per_seed_rate.size());
    return 0;
}

int run_matrix(const cli::MatrixParams& params) {
    auto result = cli::cmd_matrix(params);
    print_kv("summary csv", result.summary_csv);
    for (const auto& cell : result.cells)
        std::printf("%-12s %-12s %s\n", cell.agent.c_str(), cell.dataset.c_str(),
                    cell.complete ? (std::to_string(cell.mean_rate).c_str()) : "INCOMPLETE");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Extremum Flow Matching experiments"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key-value config file (flags override)");

    cli::GenDataParams gen;
    auto* cmd_gen = app.add_subcommand("gen-data", "generate scripted demonstrations");
    cmd_gen->add_option("--behavior", gen.behavior, "expert | full | partitioned");
    cmd_gen->add_option("--episodes", gen.n_episodes, "episode count");
    cmd_gen->add_option("--seed", gen.seed, "rng seed");
    cmd_gen->add_option("--out", gen.out_dir, "output directory");
    cmd_gen->add_option("--maze", gen.maze_path, "maze spec file (default: builtin)");

    cli::DemoExtremumParams demo;
    auto* cmd_demo = app.add_subcommand("demo-extremum", "bound-estimation comparison study");
    cmd_demo->add_option("--family", demo.family, "synthetic family name");
    cmd_demo->add_option("--seed", demo.seed, "rng seed");
    cmd_demo->add_option("--out", demo.out_dir, "output directory");
    cmd_demo->add_option("--flow-steps", demo.harness.flow_steps, "flow training steps");
    cmd_demo->add_option("--expectile-steps", demo.harness.expectile_steps,
                         "expectile training steps");
    cmd_demo->add_option("--cloud-samples", demo.n_cloud_samples, "2-D plot cloud size");

    cli::TrainParams train;
    auto* cmd_train = app.add_subcommand("train", "train an agent on an episode file");
    cmd_train->add_option("--agent", train.agent, "gc | ac | pc | ps | as");
    cmd_train->add_option("--variant", train.variant, "no-rl | use-rl");
    cmd_train->add_option("--data", train.data_path, "episode file")->required();
    cmd_train->add_option("--seed", train.seed, "rng seed");
    cmd_train->add_option("--out", train.out_dir, "output directory");
    cmd_train->add_option("--steps", train.config.train_steps, "training steps");
    cmd_train->add_option("--batch-size", train.config.batch_size, "batch size");
    cmd_train->add_option("--lr", train.config.learning_rate, "Adam learning rate");
    cmd_train->add_option("--hidden", train.config.hidden, "hidden layer widths");
    cmd_train->add_option("--rg", train.config.r_g, "Eq. 5 eps_g range");
    cmd_train->add_option("--candidates", train.config.n_candidates, "rejection candidates");
    cmd_train->add_option("--euler-steps", train.config.euler_steps, "integration steps");
    cmd_train->add_option("--sync-interval", train.config.critic_sync_interval,
                          "frozen critic refresh");
    cmd_train->add_option("--lo", train.config.sampler.L_o, "observation window length");
    cmd_train->add_option("--so", train.config.sampler.S_o, "observation stride");
    cmd_train->add_option("--la", train.config.sampler.L_a, "action window length");
    cmd_train->add_option("--sa", train.config.sampler.S_a, "action stride");
    cmd_train->add_option("--lg", train.config.sampler.L_g, "goal horizon");
    cmd_train->add_option("--checkpoint-every", train.checkpoint_every,
                          "periodic checkpoint cadence (0 = final only)");
    cmd_train->add_option("--dataset", train.dataset_tag, "dataset label for eval output");

    cli::EvalParams eval;
    auto* cmd_eval = app.add_subcommand("eval", "closed-loop evaluation of checkpoints");
    cmd_eval->add_option("--checkpoint", eval.checkpoints, "agent checkpoint (repeatable)")
        ->required();
    cmd_eval->add_option("--pairs", eval.pairs_path, "evaluation pairs csv")->required();
    cmd_eval->add_option("--dataset", eval.dataset_tag, "dataset label");
    cmd_eval->add_option("--runs", eval.n_runs, "runs per pair");
    cmd_eval->add_option("--horizon", eval.horizon, "max env steps per run");
    cmd_eval->add_option("--seed", eval.seed, "rng seed");
    cmd_eval->add_option("--out", eval.out_dir, "output directory");
    cmd_eval->add_option("--workers", eval.workers, "parallel rollouts");

    cli::MatrixParams matrix;
    auto* cmd_matrix = app.add_subcommand("matrix", "datasets x agents study grid");
    cmd_matrix->add_option("--datasets", matrix.datasets, "behaviors to include");
    cmd_matrix->add_option("--agents", matrix.agents, "agent-variant names");
    cmd_matrix->add_option("--seeds", matrix.n_seeds, "training seeds per cell");
    cmd_matrix->add_option("--episodes", matrix.n_episodes, "episodes per dataset");
    cmd_matrix->add_option("--pairs", matrix.n_pairs, "evaluation pairs");
    cmd_matrix->add_option("--runs", matrix.n_runs, "runs per pair");
    cmd_matrix->add_option("--horizon", matrix.horizon, "max env steps per run");
    cmd_matrix->add_option("--steps", matrix.config.train_steps, "training steps per agent");
    cmd_matrix->add_option("--batch-size", matrix.config.batch_size, "batch size");
    cmd_matrix->add_option("--lg", matrix.config.sampler.L_g, "goal horizon");
    cmd_matrix->add_option("--seed", matrix.seed, "rng seed");
    cmd_matrix->add_option("--out", matrix.out_dir, "output directory");
    cmd_matrix->add_option("--maze", matrix.maze_path, "maze spec file");
    cmd_matrix->add_option("--workers", matrix.workers, "parallel cells");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen_data(gen);
        if (cmd_demo->parsed()) return run_demo_extremum(demo);
        if (cmd_train->parsed()) return run_train(train);
        if (cmd_eval->parsed()) return run_eval(eval);
        if (cmd_matrix->parsed()) return run_matrix(matrix);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
