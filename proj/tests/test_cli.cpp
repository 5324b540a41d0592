#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efm/agents.hpp"
#include "efm/dataset.hpp"
#include "efm/maze.hpp"

#ifndef EFM_CLI_PATH
#error "EFM_CLI_PATH must be defined by the build"
#endif

using namespace efm;
namespace fs = std::filesystem;

namespace {

const std::string kCli = EFM_CLI_PATH;

struct CommandResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CommandResult run(const std::string& args) {
    static int counter = 0;
    const fs::path log = fs::temp_directory_path() / ("efm_cli_out_" + std::to_string(counter++));
    const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CommandResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "efm_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Tiny but real training settings shared by the CLI tests.
const std::string kTinyTrain =
    " --steps 120 --batch-size 32 --hidden 16 16 --lo 4 --so 1 --la 4 --sa 1 --lg 40";

}  // namespace

TEST_CASE("cli: gen-data expert postcondition and summary") {
    const auto dir = work_dir("gen_expert");
    auto r = run("gen-data --behavior expert --episodes 4 --seed 3 --out " + dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("episodes") != std::string::npos);
    CHECK(fs::exists(dir / "config_resolved.txt"));

    const env::MazeSpec spec = env::MazeSpec::default_spec();
    auto store = data::load_store((dir / "expert.efed").string());
    REQUIRE(store.episode_count() == 4);
    for (int i = 0; i < 4; ++i) {
        const auto& e = store.episode(i);
        const auto last = env::state_from_obs(store.obs_row(i, e.T - 1));
        float best = 1e30f;
        for (const auto& c : spec.corner_goals)
            best = std::min(best, (last.object - c).norm());
        CHECK(best < spec.success_tol);
    }
}

TEST_CASE("cli: gen-data twice gives byte-identical files") {
    const auto d1 = work_dir("gen_rep1");
    const auto d2 = work_dir("gen_rep2");
    REQUIRE(run("gen-data --behavior full --episodes 3 --seed 9 --out " + d1.string()).exit_code ==
            0);
    REQUIRE(run("gen-data --behavior full --episodes 3 --seed 9 --out " + d2.string()).exit_code ==
            0);
    CHECK(slurp(d1 / "full.efed") == slurp(d2 / "full.efed"));
}

TEST_CASE("cli: gen-data partitioned reports per-region coverage") {
    const auto dir = work_dir("gen_part");
    auto r = run("gen-data --behavior partitioned --episodes 3 --seed 5 --out " + dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("region coverage") != std::string::npos);
    const env::MazeSpec spec = env::MazeSpec::default_spec();
    auto store = data::load_store((dir / "partitioned.efed").string());
    for (int i = 0; i < store.episode_count(); ++i) {
        int region = -2;
        bool single = true;
        for (int k = 0; k < store.episode(i).T; ++k) {
            const int rg = spec.region_of(env::state_from_obs(store.obs_row(i, k)).object);
            if (region == -2) region = rg;
            single = single && rg == region;
        }
        CHECK(single);
    }
}

TEST_CASE("cli: invalid behavior exits with usage code 2") {
    auto r = run("gen-data --behavior sideways");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("expert") != std::string::npos);  // lists valid names
}

TEST_CASE("cli: train writes a checkpoint, loss curve and resolved config") {
    const auto data_dir = work_dir("train_data");
    REQUIRE(
        run("gen-data --behavior expert --episodes 4 --seed 2 --out " + data_dir.string())
            .exit_code == 0);
    const auto out = work_dir("train_gc");
    auto r = run("train --agent gc --data " + (data_dir / "expert.efed").string() + " --seed 7" +
                 kTinyTrain + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(out / "checkpoint.efmc"));
    CHECK(fs::exists(out / "loss.csv"));
    CHECK(fs::exists(out / "config_resolved.txt"));

    // FM-GC checkpoint carries only actor tensors (plus the config record)
    auto names = nn::load_checkpoint((out / "checkpoint.efmc").string());
    for (const auto& [name, t] : names) {
        const bool ok = name.rfind("actor.", 0) == 0 || name.rfind("__config__.", 0) == 0;
        INFO("tensor ", name);
        CHECK(ok);
    }
}

TEST_CASE("cli: identical seeds give identical loss CSVs") {
    const auto data_dir = work_dir("train_det_data");
    REQUIRE(
        run("gen-data --behavior expert --episodes 3 --seed 2 --out " + data_dir.string())
            .exit_code == 0);
    const auto o1 = work_dir("train_det1");
    const auto o2 = work_dir("train_det2");
    const std::string args = "train --agent ac --variant use-rl --data " +
                             (data_dir / "expert.efed").string() + " --seed 11" + kTinyTrain;
    REQUIRE(run(args + " --out " + o1.string()).exit_code == 0);
    REQUIRE(run(args + " --out " + o2.string()).exit_code == 0);
    CHECK(slurp(o1 / "loss.csv") == slurp(o2 / "loss.csv"));
    CHECK(slurp(o1 / "checkpoint.efmc") == slurp(o2 / "checkpoint.efmc"));
}

TEST_CASE("cli: periodic checkpoints are loadable and evaluable") {
    const auto data_dir = work_dir("train_ckpt_data");
    REQUIRE(
        run("gen-data --behavior expert --episodes 3 --seed 2 --out " + data_dir.string())
            .exit_code == 0);
    const auto out = work_dir("train_ckpt");
    auto r = run("train --agent gc --data " + (data_dir / "expert.efed").string() +
                 " --seed 13 --steps 200 --batch-size 32 --hidden 16 16 --lo 4 --so 1 --la 4 "
                 "--sa 1 --lg 40 --checkpoint-every 100 --out " +
                 out.string());
    REQUIRE(r.exit_code == 0);
    const fs::path mid = out / "checkpoint_step100.efmc";
    REQUIRE(fs::exists(mid));
    agents::Agent agent = agents::load_agent(mid.string());

    const env::MazeSpec spec = env::MazeSpec::default_spec();
    agents::EvalPair pair;
    pair.start = {0.2f, 0.2f, 0.5f, 0.5f};
    pair.goal = pair.start;
    auto result = agents::evaluate(agent, spec, std::vector<agents::EvalPair>{pair}, 1, 10, 1);
    CHECK(result.mean_rate == 1.0f);
}

TEST_CASE("cli: eval emits the run schema and a mean row") {
    const auto data_dir = work_dir("eval_data");
    REQUIRE(
        run("gen-data --behavior expert --episodes 3 --seed 2 --out " + data_dir.string())
            .exit_code == 0);
    const auto train_out = work_dir("eval_train");
    REQUIRE(run("train --agent gc --data " + (data_dir / "expert.efed").string() + " --seed 5" +
                kTinyTrain + " --out " + train_out.string())
                .exit_code == 0);

    // one trivial pair (goal == start) plus one real pair
    const env::MazeSpec spec = env::MazeSpec::default_spec();
    auto pairs = agents::make_eval_pairs(spec, 1, 42);
    agents::EvalPair trivial;
    trivial.start = {0.2f, 0.2f, 0.5f, 0.5f};
    trivial.goal = trivial.start;
    pairs.insert(pairs.begin(), trivial);
    const auto out = work_dir("eval_out");
    const auto pairs_path = out / "pairs.csv";
    agents::save_eval_pairs(pairs, pairs_path.string());

    auto r = run("eval --checkpoint " + (train_out / "checkpoint.efmc").string() + " --pairs " +
                 pairs_path.string() + " --runs 2 --horizon 30 --dataset expert --out " +
                 out.string());
    REQUIRE(r.exit_code == 0);

    std::ifstream runs(out / "eval_runs.csv");
    std::string header;
    std::getline(runs, header);
    CHECK(header == "agent,variant,dataset,pair_id,run,success,steps_to_success");
    int lines = 0;
    std::string line;
    std::vector<std::string> first_cols;
    while (std::getline(runs, line))
        if (!line.empty()) {
            ++lines;
            if (first_cols.empty()) {
                std::istringstream ls(line);
                std::string c;
                while (std::getline(ls, c, ',')) first_cols.push_back(c);
            }
        }
    CHECK(lines == 2 * 2);  // pairs x runs
    REQUIRE(first_cols.size() == 7);
    CHECK(first_cols[0] == "gc");
    CHECK(first_cols[2] == "expert");
    CHECK(first_cols[5] == "1");  // trivial pair succeeds
    CHECK(first_cols[6] == "0");  // at step zero

    std::string summary = slurp(out / "eval_summary.csv");
    CHECK(summary.find("mean,") != std::string::npos);
    CHECK(summary.find("std_success") != std::string::npos);
}

TEST_CASE("cli: eval without a pairs file is a config error") {
    auto r = run("eval --checkpoint nowhere.efmc --pairs missing.csv");
    CHECK(r.exit_code == 2);
}

TEST_CASE("cli: matrix builds the grid, resumes, and marks completeness") {
    const auto out = work_dir("matrix");
    const std::string args =
        "matrix --datasets expert --agents gc ac-no-rl --seeds 2 --episodes 3 --pairs 2 "
        "--runs 1 --horizon 25 --steps 60 --batch-size 32 --lg 40 --seed 21 --workers 2 --out " +
        out.string();
    auto r = run(args);
    REQUIRE(r.exit_code == 0);

    std::ifstream in(out / "summary.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "agent,variant,dataset,seeds,mean_success,std_success,status");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) {
            ++rows;
            CHECK(line.find("INCOMPLETE") == std::string::npos);
            CHECK(line.find(",2,") != std::string::npos);  // both seeds aggregated
        }
    CHECK(rows == 2);  // agents x datasets

    // resume: a second run must reuse every cell and reproduce the summary
    const std::string before = slurp(out / "summary.csv");
    auto r2 = run(args);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(out / "summary.csv") == before);
}
