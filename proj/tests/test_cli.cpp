#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsdiff/cli.hpp"

using namespace tsdiff;

namespace {

namespace fs = std::filesystem;

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() / ("tsdiff_cli_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

GenDataArgs tiny_gen(const TmpDir& tmp) {
    GenDataArgs g;
    g.out = tmp.file("data.ndjson");
    g.disks = 14;
    g.features = 3;
    g.length = 12;
    g.missing_ratio = 0.25;
    g.seed = 5;
    return g;
}

std::string write_tiny_config(const TmpDir& tmp) {
    const std::string path = tmp.file("cfg.txt");
    std::ofstream out(path);
    out << "T = 8\nhidden_width = 8\nresidual_blocks = 1\nstep_embed_dim = 4\n"
        << "epochs = 2\nbatch_size = 4\nn_replicates = 4\nfast_steps = 4\nseed = 9\n";
    return path;
}

}  // namespace

TEST_CASE("gen-data writes the dataset and its ground-truth sidecar", "[cli]") {
    TmpDir tmp;
    const GenDataArgs g = tiny_gen(tmp);
    REQUIRE(run_gen_data(g) == kExitOk);

    const auto data = read_ndjson(g.out);
    const auto truth = read_ndjson(g.out + ".truth");
    REQUIRE(data.size() == 14);
    REQUIRE(truth.size() == 14);
    std::size_t missing = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        REQUIRE(data[i].disk_id == truth[i].disk_id);
        REQUIRE(count_ones(truth[i].obs_mask) == truth[i].obs_mask.size());
        for (std::size_t j = 0; j < data[i].values.size(); ++j)
            if (data[i].obs_mask.data[j])
                REQUIRE(data[i].values.data[j] == truth[i].values.data[j]);
            else
                ++missing;
    }
    REQUIRE(missing > 0);
}

TEST_CASE("gen-data is byte-reproducible", "[cli]") {
    TmpDir tmp;
    GenDataArgs g = tiny_gen(tmp);
    REQUIRE(run_gen_data(g) == kExitOk);
    const std::string first = slurp(g.out);
    const std::string first_truth = slurp(g.out + ".truth");
    REQUIRE(run_gen_data(g) == kExitOk);
    REQUIRE(slurp(g.out) == first);
    REQUIRE(slurp(g.out + ".truth") == first_truth);
}

TEST_CASE("train writes a loadable checkpoint and a report", "[cli]") {
    TmpDir tmp;
    const GenDataArgs g = tiny_gen(tmp);
    run_gen_data(g);

    TrainArgs t;
    t.data = g.out;
    t.config_file = write_tiny_config(tmp);
    t.out_checkpoint = tmp.file("model.ckpt");
    REQUIRE(run_train(t) == kExitOk);

    const Checkpoint ck = load_checkpoint(t.out_checkpoint);
    REQUIRE(ck.K == 3);
    REQUIRE(ck.L == 12);
    REQUIRE(ck.cfg.epochs == 2);
    REQUIRE(static_cast<int>(ck.norm_mean.size()) == 3);

    const auto report = nlohmann::ordered_json::parse(slurp(t.out_checkpoint + ".train.json"));
    REQUIRE(report.at("command") == "train");
    REQUIRE(report.at("epoch_loss").size() == 2);
    REQUIRE(report.at("config").at("seed") == 9);
    REQUIRE(report.contains("timing"));
}

TEST_CASE("eval-impute emits the table-shaped report with CRPS only for probabilistic methods", "[cli]") {
    TmpDir tmp;
    const GenDataArgs g = tiny_gen(tmp);
    run_gen_data(g);
    TrainArgs t;
    t.data = g.out;
    t.config_file = write_tiny_config(tmp);
    t.out_checkpoint = tmp.file("model.ckpt");
    run_train(t);

    EvalImputeArgs e;
    e.data = g.out;
    e.checkpoint = t.out_checkpoint;
    e.mask_ratio = 0.2;
    e.replicates = 4;
    e.fast_steps = 4;
    e.out = tmp.file("impute.json");
    e.threads = 2;
    REQUIRE(run_eval_impute(e) == kExitOk);

    const auto rep = nlohmann::ordered_json::parse(slurp(e.out));
    REQUIRE(rep.at("command") == "eval-impute");
    REQUIRE(rep.at("results").size() == 5);
    for (const auto& row : rep.at("results")) {
        const std::string method = row.at("method");
        REQUIRE(row.at("mae").is_number());
        REQUIRE(row.at("mae").get<double>() >= 0.0);
        if (method == "diffusion" || method == "diffusion-plus")
            REQUIRE(row.at("crps").is_number());
        else
            REQUIRE(row.at("crps").is_null());
    }
    REQUIRE(rep.at("seeds").contains("eval_mask"));
    REQUIRE(rep.at("config").at("T") == 8);
}

TEST_CASE("eval-impute zero-method MAE equals the mean absolute z-scored truth at the held-out entries",
          "[cli]") {
    TmpDir tmp;
    const GenDataArgs g = tiny_gen(tmp);
    run_gen_data(g);
    TrainArgs t;
    t.data = g.out;
    t.config_file = write_tiny_config(tmp);
    t.out_checkpoint = tmp.file("model.ckpt");
    run_train(t);

    EvalImputeArgs e;
    e.data = g.out;
    e.checkpoint = t.out_checkpoint;
    e.mask_ratio = 0.3;
    e.methods = {"zero"};
    e.out = tmp.file("impute_zero.json");
    e.eval_seed = 777;
    REQUIRE(run_eval_impute(e) == kExitOk);
    const auto rep = nlohmann::ordered_json::parse(slurp(e.out));
    const double reported = rep.at("results")[0].at("mae").get<double>();

    // independent re-derivation of the protocol
    const Checkpoint ck = load_checkpoint(t.out_checkpoint);
    NormStats stats;
    stats.mean = ck.norm_mean;
    stats.std = ck.norm_std;
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& raw : read_ndjson(g.out)) {
        if (count_ones(raw.obs_mask) < 2) continue;
        const Window w = apply_norm(raw, stats);
        Rng rng(derive_seed(777, w.disk_id, 0));
        const MaskPair mp = partition_mask(w, 0.3, rng);
        for (std::size_t i = 0; i < w.values.size(); ++i)
            if (mp.target_mask.data[i]) {
                acc += std::abs(w.values.data[i]);
                ++n;
            }
    }
    REQUIRE_THAT(reported, Catch::Matchers::WithinAbs(acc / n, 1e-12));
}

TEST_CASE("eval-impute reports are byte-identical across runs and thread counts", "[cli]") {
    TmpDir tmp;
    const GenDataArgs g = tiny_gen(tmp);
    run_gen_data(g);
    TrainArgs t;
    t.data = g.out;
    t.config_file = write_tiny_config(tmp);
    t.out_checkpoint = tmp.file("model.ckpt");
    run_train(t);

    EvalImputeArgs e;
    e.data = g.out;
    e.checkpoint = t.out_checkpoint;
    e.replicates = 3;
    e.fast_steps = 4;
    e.out = tmp.file("impute_a.json");
    e.threads = 1;
    run_eval_impute(e);
    const std::string first = slurp(e.out);

    e.out = tmp.file("impute_b.json");
    e.threads = 2;
    run_eval_impute(e);
    REQUIRE(slurp(e.out) == first);
}

TEST_CASE("eval-downstream reports per-method precision/recall/F1", "[cli]") {
    TmpDir tmp;
    GenDataArgs g = tiny_gen(tmp);
    g.disks = 24;
    g.failure_rate = 0.4;
    run_gen_data(g);
    TrainArgs t;
    t.data = g.out;
    t.config_file = write_tiny_config(tmp);
    t.out_checkpoint = tmp.file("model.ckpt");
    run_train(t);

    EvalDownstreamArgs d;
    d.data = g.out;
    d.checkpoint = t.out_checkpoint;
    d.methods = {"zero", "diffusion-plus"};
    d.out = tmp.file("down.json");
    d.threads = 2;
    REQUIRE(run_eval_downstream(d) == kExitOk);

    const auto rep = nlohmann::ordered_json::parse(slurp(d.out));
    REQUIRE(rep.at("results").size() == 2);
    for (const auto& row : rep.at("results")) {
        for (const char* key : {"precision", "recall", "f1"}) {
            const double v = row.at(key).get<double>();
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("bench CSV rows carry exact eval counts and doubling T doubles them", "[cli]") {
    TmpDir tmp;
    const GenDataArgs g = tiny_gen(tmp);
    run_gen_data(g);
    TrainArgs t;
    t.data = g.out;
    t.config_file = write_tiny_config(tmp);
    t.out_checkpoint = tmp.file("model.ckpt");
    run_train(t);

    BenchArgs b;
    b.data = g.out;
    b.checkpoint = t.out_checkpoint;
    b.steps_list = {4, 8};
    b.fast_steps = 4;
    b.bench_windows = 3;
    b.out = tmp.file("bench.csv");
    REQUIRE(run_bench(b) == kExitOk);

    std::ifstream csv(b.out);
    std::string line;
    std::getline(csv, line);
    REQUIRE(line == "mode,steps,ms_per_sample,denoiser_evals");
    long evals4 = -1, evals8 = -1, evals_fast = -1;
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string mode, steps, ms, evals;
        std::getline(ss, mode, ',');
        std::getline(ss, steps, ',');
        std::getline(ss, ms, ',');
        std::getline(ss, evals, ',');
        if (mode == "ancestral" && steps == "4") evals4 = std::stol(evals);
        if (mode == "ancestral" && steps == "8") evals8 = std::stol(evals);
        if (mode == "fast") evals_fast = std::stol(evals);
    }
    REQUIRE(evals4 == 4);
    REQUIRE(evals8 == 8);
    REQUIRE(evals_fast == 4);
}

TEST_CASE("bad arguments and bad data map to the documented error types", "[cli]") {
    TmpDir tmp;
    EvalImputeArgs e;
    e.data = tmp.file("none.ndjson");
    e.checkpoint = tmp.file("none.ckpt");
    e.mask_ratio = 1.5;
    REQUIRE_THROWS_AS(run_eval_impute(e), ConfigError);

    e.mask_ratio = 0.2;
    REQUIRE_THROWS_AS(run_eval_impute(e), DataError);  // missing checkpoint file

    GenDataArgs g = tiny_gen(tmp);
    g.pattern = "nope";
    REQUIRE_THROWS_AS(run_gen_data(g), ConfigError);
}

TEST_CASE("cli binary maps errors to exit codes", "[cli]") {
    const char* bin = std::getenv("TSDIFF_BIN");
    if (!bin) SKIP("TSDIFF_BIN not set");
    TmpDir tmp;

    const std::string base = std::string(bin);
    REQUIRE(std::system((base + " gen-data --out " + tmp.file("d.ndjson") +
                         " --disks 6 --features 2 --length 8 --seed 3 > /dev/null")
                            .c_str()) == 0);

    int rc = std::system((base + " bogus-subcommand > /dev/null 2>&1").c_str());
    REQUIRE(WEXITSTATUS(rc) == kExitBadArgs);

    rc = std::system((base + " train --data " + tmp.file("missing.ndjson") + " --out-checkpoint " +
                      tmp.file("m.ckpt") + " > /dev/null 2>&1")
                         .c_str());
    REQUIRE(WEXITSTATUS(rc) == kExitDataError);

    rc = std::system((base + " gen-data --out " + tmp.file("d2.ndjson") + " --pattern nope > /dev/null 2>&1").c_str());
    REQUIRE(WEXITSTATUS(rc) == kExitBadArgs);
}
