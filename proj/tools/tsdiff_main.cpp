#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsdiff/cli.hpp"

namespace {

int dispatch(int argc, char** argv) {
    CLI::App app{"diffusion-based time-series imputation toolkit"};
    app.require_subcommand(1);

    tsdiff::GenDataArgs gen;
    auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic disk-telemetry dataset");
    cmd_gen->add_option("--out", gen.out, "output NDJSON path (ground truth lands at <out>.truth)")->required();
    cmd_gen->add_option("--disks", gen.disks, "number of disks");
    cmd_gen->add_option("--features", gen.features, "features per disk (K)");
    cmd_gen->add_option("--length", gen.length, "window length in hours (L)");
    cmd_gen->add_option("--failure-rate", gen.failure_rate, "fraction of failing disks");
    cmd_gen->add_option("--missing-ratio", gen.missing_ratio, "injected missingness ratio");
    cmd_gen->add_option("--pattern", gen.pattern, "missingness pattern: mcar or burst");
    cmd_gen->add_option("--seed", gen.seed, "generator seed");

    tsdiff::TrainArgs tr;
    auto* cmd_train = app.add_subcommand("train", "train the conditional denoiser");
    cmd_train->add_option("--data", tr.data, "training dataset (NDJSON)")->required();
    cmd_train->add_option("--config", tr.config_file, "flat key = value config file");
    cmd_train->add_option("--out-checkpoint", tr.out_checkpoint, "checkpoint output path")->required();
    cmd_train->add_option("--mask-ratio", tr.mask_ratio, "training mask ratio override");
    cmd_train->add_option("--seed", tr.seed, "seed override");

    tsdiff::EvalImputeArgs ei;
    std::string ei_methods;
    std::uint64_t ei_seed = 0;
    auto* cmd_ei = app.add_subcommand("eval-impute", "hold-out imputation quality (MAE, CRPS)");
    cmd_ei->add_option("--data", ei.data, "dataset (NDJSON)")->required();
    cmd_ei->add_option("--checkpoint", ei.checkpoint, "trained checkpoint")->required();
    cmd_ei->add_option("--mask-ratio", ei.mask_ratio, "evaluation masking ratio");
    cmd_ei->add_option("--methods", ei_methods, "comma-separated methods");
    cmd_ei->add_option("--replicates", ei.replicates, "samples per window for probabilistic methods");
    cmd_ei->add_option("--fast-steps", ei.fast_steps, "steps for the fast sampler");
    cmd_ei->add_option("--out", ei.out, "JSON report path");
    cmd_ei->add_option("--threads", ei.threads, "worker threads over windows");
    auto* ei_seed_opt = cmd_ei->add_option("--eval-seed", ei_seed, "override the derived evaluation mask seed");

    tsdiff::EvalDownstreamArgs ed;
    std::string ed_methods;
    auto* cmd_ed = app.add_subcommand("eval-downstream", "failure prediction after imputation (P/R/F1)");
    cmd_ed->add_option("--data", ed.data, "dataset (NDJSON)")->required();
    cmd_ed->add_option("--checkpoint", ed.checkpoint, "trained checkpoint")->required();
    cmd_ed->add_option("--methods", ed_methods, "comma-separated methods");
    cmd_ed->add_option("--out", ed.out, "JSON report path");
    cmd_ed->add_option("--threads", ed.threads, "worker threads over windows");
    cmd_ed->add_option("--test-fraction", ed.test_fraction, "held-out disk fraction");

    tsdiff::BenchArgs be;
    std::string be_steps;
    auto* cmd_be = app.add_subcommand("bench", "per-sample imputation timing");
    cmd_be->add_option("--data", be.data, "dataset (NDJSON)")->required();
    cmd_be->add_option("--checkpoint", be.checkpoint, "trained checkpoint")->required();
    cmd_be->add_option("--steps-list", be_steps, "comma-separated diffusion step counts");
    cmd_be->add_option("--fast-steps", be.fast_steps, "steps for the fast sampler");
    cmd_be->add_option("--out", be.out, "CSV output path")->required();
    cmd_be->add_option("--bench-windows", be.bench_windows, "windows per measurement");
    cmd_be->add_option("--throughput-threads", be.throughput_threads,
                       "when > 1, also report parallel-throughput rows");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : tsdiff::kExitBadArgs;
    }

    auto split_csv = [](const std::string& s) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (start <= s.size()) {
            const auto comma = s.find(',', start);
            const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!item.empty()) out.push_back(item);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return out;
    };

    if (cmd_gen->parsed()) return tsdiff::run_gen_data(gen);
    if (cmd_train->parsed()) return tsdiff::run_train(tr);
    if (cmd_ei->parsed()) {
        if (!ei_methods.empty()) ei.methods = split_csv(ei_methods);
        if (ei_seed_opt->count() > 0) ei.eval_seed = ei_seed;
        return tsdiff::run_eval_impute(ei);
    }
    if (cmd_ed->parsed()) {
        if (!ed_methods.empty()) ed.methods = split_csv(ed_methods);
        return tsdiff::run_eval_downstream(ed);
    }
    if (cmd_be->parsed()) {
        if (!be_steps.empty()) {
            be.steps_list.clear();
            for (const auto& s : split_csv(be_steps)) be.steps_list.push_back(std::stoi(s));
        }
        return tsdiff::run_bench(be);
    }
    return tsdiff::kExitBadArgs;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const tsdiff::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return tsdiff::kExitBadArgs;
    } catch (const tsdiff::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return tsdiff::kExitNumericError;
    } catch (const tsdiff::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return tsdiff::kExitDataError;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return tsdiff::kExitBadArgs;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return tsdiff::kExitDataError;
    }
}
