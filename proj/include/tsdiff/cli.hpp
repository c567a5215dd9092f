#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tsdiff/baselines.hpp"
#include "tsdiff/core.hpp"
#include "tsdiff/downstream.hpp"
#include "tsdiff/metrics.hpp"
#include "tsdiff/sampler.hpp"
#include "tsdiff/synthdata.hpp"
#include "tsdiff/trainer.hpp"

namespace tsdiff {

// exit codes shared by every subcommand
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadArgs = 2;
inline constexpr int kExitDataError = 3;
inline constexpr int kExitNumericError = 4;

inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int n_threads = std::min<std::size_t>(threads, n);
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

inline void write_json_report(const nlohmann::ordered_json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open report file: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("report write failed: " + path);
}

inline NormStats norm_from_checkpoint(const Checkpoint& ck) {
    if (ck.norm_mean.empty()) throw DataError("checkpoint carries no normalization stats; re-train");
    NormStats stats;
    stats.mean = ck.norm_mean;
    stats.std = ck.norm_std;
    return stats;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string out;
    int disks = 500;
    int features = 8;
    int length = 72;
    double failure_rate = 0.15;
    double missing_ratio = 0.2;
    std::string pattern = "mcar";
    std::uint64_t seed = 1;
};

// Writes the dataset NDJSON at `out` and the fully-observed ground truth at
// `out + ".truth"`.
inline int run_gen_data(const GenDataArgs& a) {
    GenConfig gc;
    gc.n_disks = a.disks;
    gc.K = a.features;
    gc.L = a.length;
    gc.failure_rate = a.failure_rate;
    gc.seed = a.seed;

    const std::vector<Window> complete = generate(gc);
    Rng rng(derive_seed(a.seed, "missing", 0));
    const MissingDataset ds = inject_missing(complete, a.missing_ratio, missing_pattern_from_string(a.pattern), rng);

    write_ndjson(ds.windows, a.out);
    write_ndjson(complete, a.out + ".truth");

    std::size_t observed = 0, total = 0;
    int positives = 0;
    for (const auto& w : ds.windows) {
        observed += count_ones(w.obs_mask);
        total += w.obs_mask.size();
        positives += w.label;
    }
    std::printf("gen-data: %d disks (%d positive), %dx%d, %.1f%% missing -> %s (+ .truth)\n", a.disks, positives,
                a.features, a.length, 100.0 * (1.0 - static_cast<double>(observed) / total), a.out.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string data;
    std::string config_file;       // optional
    std::string out_checkpoint;
    double mask_ratio = -1.0;      // < 0: keep config value
    long long seed = -1;           // < 0: keep config value
};

inline int run_train(const TrainArgs& a) {
    DiffusionConfig cfg = a.config_file.empty() ? DiffusionConfig{} : load_config_file(a.config_file);
    if (a.mask_ratio >= 0.0) cfg.mask_ratio = a.mask_ratio;
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    cfg.validate();

    const std::vector<Window> raw = read_ndjson(a.data);
    if (raw.empty()) throw DataError("train: dataset is empty: " + a.data);
    const NormStats stats = fit_norm(raw);
    for (int k : stats.floored)
        std::fprintf(stderr, "train: warning: feature %d has (near-)constant observations; std floored\n", k);

    std::vector<Window> zs;
    zs.reserve(raw.size());
    for (const auto& w : raw) zs.push_back(apply_norm(w, stats));

    const TrainResult tr = train(zs, cfg);

    Checkpoint ck;
    ck.cfg = cfg;
    ck.K = tr.params.K;
    ck.L = tr.params.L;
    ck.params = tr.params;
    ck.norm_mean = stats.mean;
    ck.norm_std = stats.std;
    save_checkpoint(ck, a.out_checkpoint);

    nlohmann::ordered_json report;
    report["command"] = "train";
    report["data"] = a.data;
    nlohmann::ordered_json jc;
    to_json(jc, cfg);
    report["config"] = jc;
    report["seeds"] = {{"train", cfg.seed}};
    report["n_windows"] = raw.size();
    report["skipped_windows"] = tr.report.skipped_windows;
    report["epoch_loss"] = tr.report.epoch_loss;
    report["checkpoint"] = a.out_checkpoint;
    report["timing"] = {{"wall_seconds", tr.report.wall_seconds}};
    write_json_report(report, a.out_checkpoint + ".train.json");

    std::printf("train: %zu windows, %d epochs, loss %.4f -> %.4f, %.1fs -> %s\n", raw.size(), cfg.epochs,
                tr.report.epoch_loss.empty() ? 0.0 : tr.report.epoch_loss.front(),
                tr.report.epoch_loss.empty() ? 0.0 : tr.report.epoch_loss.back(), tr.report.wall_seconds,
                a.out_checkpoint.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval-impute

struct EvalImputeArgs {
    std::string data;
    std::string checkpoint;
    double mask_ratio = 0.1;
    std::vector<std::string> methods = {"zero", "forward", "linear", "diffusion", "diffusion-plus"};
    int replicates = 100;
    int fast_steps = 10;
    std::string out;
    int threads = 1;
    std::optional<std::uint64_t> eval_seed;  // default: derived from the training seed
};

namespace detail {

// window with the hold-out targets hidden, for the rule-based imputers
inline Window masked_view(const Window& w, const MaskPair& mp) {
    Window m = w;
    m.obs_mask = mp.cond_mask;
    for (std::size_t i = 0; i < m.values.size(); ++i)
        if (!mp.cond_mask.data[i]) m.values.data[i] = missing_value();
    return m;
}

struct MethodAccum {
    double abs_err = 0.0;
    double crps_sum = 0.0;  // per-entry crps summed over entries
    std::size_t entries = 0;
    bool probabilistic = false;
};

}  // namespace detail

inline int run_eval_impute(const EvalImputeArgs& a) {
    if (!(a.mask_ratio > 0.0 && a.mask_ratio < 1.0)) throw ConfigError("eval-impute: mask-ratio must be in (0, 1)");
    if (a.replicates < 1) throw ConfigError("eval-impute: replicates must be >= 1");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const NormStats stats = norm_from_checkpoint(ck);
    DiffusionConfig cfg = ck.cfg;
    cfg.n_replicates = a.replicates;
    bool wants_fast = false;
    for (const std::string& m : a.methods) {
        if (m == "diffusion-plus")
            wants_fast = true;
        else if (m != "zero" && m != "forward" && m != "linear" && m != "diffusion")
            throw ConfigError("eval-impute: unknown method: " + m);
    }
    if (wants_fast) cfg.fast_steps = a.fast_steps;  // only then does M constrain the config
    cfg.validate();

    const std::uint64_t eval_seed = a.eval_seed ? *a.eval_seed : derive_seed(cfg.seed, "eval", 0);

    const std::vector<Window> raw = read_ndjson(a.data);
    std::vector<Window> windows;
    windows.reserve(raw.size());
    int skipped = 0;
    for (const auto& w : raw) {
        if (w.features() != ck.K || w.length() != ck.L)
            throw DataError("eval-impute: window " + w.disk_id + " shape disagrees with checkpoint");
        if (count_ones(w.obs_mask) < 2) {
            ++skipped;
            continue;
        }
        windows.push_back(apply_norm(w, stats));
    }
    if (windows.empty()) throw DataError("eval-impute: no usable windows");

    // hold-out masks are drawn per window from the evaluation seed, which is
    // disjoint from every training stream
    std::vector<MaskPair> masks(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        Rng rng(derive_seed(eval_seed, windows[i].disk_id, 0));
        masks[i] = partition_mask(windows[i], a.mask_ratio, rng);
    }

    std::vector<detail::MethodAccum> accums(a.methods.size());
    std::vector<std::vector<detail::MethodAccum>> per_window(a.methods.size(),
                                                             std::vector<detail::MethodAccum>(windows.size()));

    parallel_for(windows.size(), a.threads, [&](std::size_t i) {
        const Window& w = windows[i];
        const MaskPair& mp = masks[i];
        const std::size_t n_targets = count_ones(mp.target_mask);
        for (std::size_t mi = 0; mi < a.methods.size(); ++mi) {
            const std::string& method = a.methods[mi];
            detail::MethodAccum& acc = per_window[mi][i];
            acc.entries = n_targets;
            Matrix pred;
            if (method == "zero" || method == "forward" || method == "linear") {
                const Window masked = detail::masked_view(w, mp);
                pred = method == "zero" ? zero_impute(masked)
                                        : (method == "forward" ? forward_impute(masked) : linear_impute(masked));
            } else {
                const SampleMode mode = method == "diffusion" ? SampleMode::ancestral : SampleMode::fast;
                const char* tag = method == "diffusion" ? "impute-ancestral" : "impute-fast";
                const ReplicateSet reps =
                    impute_replicates(ck.params, w, mp, cfg, mode, derive_seed(eval_seed, tag, 0));
                pred = aggregate_replicates(w, mp, reps).median;
                acc.crps_sum = crps(reps.values, w.values, mp.target_mask) * static_cast<double>(n_targets);
                acc.probabilistic = true;
            }
            for (std::size_t j = 0; j < w.values.size(); ++j)
                if (mp.target_mask.data[j]) acc.abs_err += std::abs(pred.data[j] - w.values.data[j]);
        }
    });

    for (std::size_t mi = 0; mi < a.methods.size(); ++mi)
        for (const auto& acc : per_window[mi]) {
            accums[mi].abs_err += acc.abs_err;
            accums[mi].crps_sum += acc.crps_sum;
            accums[mi].entries += acc.entries;
            accums[mi].probabilistic = acc.probabilistic;
        }

    nlohmann::ordered_json report;
    report["command"] = "eval-impute";
    report["data"] = a.data;
    report["checkpoint"] = a.checkpoint;
    nlohmann::ordered_json jc;
    to_json(jc, cfg);
    report["config"] = jc;
    report["seeds"] = {{"train", cfg.seed}, {"eval_mask", eval_seed}};
    report["mask_ratio"] = a.mask_ratio;
    report["replicates"] = a.replicates;
    report["fast_steps"] = a.fast_steps;
    report["n_windows"] = windows.size();
    report["skipped_windows"] = skipped;
    report["n_target_entries"] = accums.empty() ? 0 : accums.front().entries;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    std::printf("eval-impute: mask ratio %.0f%%, %zu windows\n", 100.0 * a.mask_ratio, windows.size());
    std::printf("  %-16s %10s %10s\n", "method", "MAE", "CRPS");
    for (std::size_t mi = 0; mi < a.methods.size(); ++mi) {
        const auto& acc = accums[mi];
        const double m = acc.abs_err / static_cast<double>(acc.entries);
        nlohmann::ordered_json row;
        row["method"] = a.methods[mi];
        row["mae"] = m;
        if (acc.probabilistic) {
            row["crps"] = acc.crps_sum / static_cast<double>(acc.entries);
            std::printf("  %-16s %10.4f %10.4f\n", a.methods[mi].c_str(), m, acc.crps_sum / acc.entries);
        } else {
            row["crps"] = nullptr;
            std::printf("  %-16s %10.4f %10s\n", a.methods[mi].c_str(), m, "-");
        }
        rows.push_back(std::move(row));
    }
    report["results"] = std::move(rows);
    if (!a.out.empty()) write_json_report(report, a.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval-downstream

struct EvalDownstreamArgs {
    std::string data;
    std::string checkpoint;
    std::vector<std::string> methods = {"zero", "forward", "linear", "diffusion", "diffusion-plus"};
    std::string out;
    int threads = 1;
    double test_fraction = 0.3;
    ClassifierConfig classifier;
};

inline int run_eval_downstream(const EvalDownstreamArgs& a) {
    for (const std::string& m : a.methods)
        if (m != "zero" && m != "forward" && m != "linear" && m != "diffusion" && m != "diffusion-plus")
            throw ConfigError("eval-downstream: unknown method: " + m);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const NormStats stats = norm_from_checkpoint(ck);
    const DiffusionConfig cfg = ck.cfg;

    const std::vector<Window> raw = read_ndjson(a.data);
    if (raw.empty()) throw DataError("eval-downstream: dataset is empty");
    std::vector<Window> windows;
    windows.reserve(raw.size());
    for (const auto& w : raw) {
        if (w.features() != ck.K || w.length() != ck.L)
            throw DataError("eval-downstream: window " + w.disk_id + " shape disagrees with checkpoint");
        windows.push_back(apply_norm(w, stats));
    }

    Rng split_rng(derive_seed(cfg.seed, "split", 0));
    const SplitIndices split = split_by_disk(windows, a.test_fraction, split_rng);

    nlohmann::ordered_json report;
    report["command"] = "eval-downstream";
    report["data"] = a.data;
    report["checkpoint"] = a.checkpoint;
    nlohmann::ordered_json jc;
    to_json(jc, cfg);
    report["config"] = jc;
    report["seeds"] = {{"train", cfg.seed}, {"split", derive_seed(cfg.seed, "split", 0)}};
    report["test_fraction"] = a.test_fraction;
    report["n_windows"] = windows.size();
    report["classifier"] = {{"lr", a.classifier.lr}, {"epochs", a.classifier.epochs}, {"threshold", a.classifier.threshold}};
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();

    std::printf("eval-downstream: %zu windows (train %zu / test %zu)\n", windows.size(), split.train.size(),
                split.test.size());
    std::printf("  %-16s %10s %10s %10s\n", "method", "precision", "recall", "F1");

    for (const std::string& method : a.methods) {
        // imputation runs over the whole dataset before the classifier sees it
        std::vector<Matrix> imputed(windows.size());
        parallel_for(windows.size(), a.threads, [&](std::size_t i) {
            const Window& w = windows[i];
            if (method == "zero")
                imputed[i] = zero_impute(w);
            else if (method == "forward")
                imputed[i] = forward_impute(w);
            else if (method == "linear")
                imputed[i] = linear_impute(w);
            else if (method == "diffusion")
                imputed[i] = impute(ck.params, w, std::nullopt, cfg, SampleMode::ancestral,
                                    derive_seed(cfg.seed, "downstream-ancestral", 0))
                                 .median;
            else
                imputed[i] = impute(ck.params, w, std::nullopt, cfg, SampleMode::fast,
                                    derive_seed(cfg.seed, "downstream-fast", 0))
                                 .median;
        });

        std::unordered_map<std::string, const Matrix*> by_id;
        for (std::size_t i = 0; i < windows.size(); ++i) by_id[windows[i].disk_id] = &imputed[i];
        const PRF1 r = evaluate_pipeline(
            windows, [&](const Window& w) { return *by_id.at(w.disk_id); }, split, a.classifier);

        nlohmann::ordered_json row;
        row["method"] = method;
        row["precision"] = r.precision;
        row["recall"] = r.recall;
        row["f1"] = r.f1;
        row["precision_defined"] = r.precision_defined;
        row["recall_defined"] = r.recall_defined;
        rows.push_back(std::move(row));
        std::printf("  %-16s %10.4f %10.4f %10.4f\n", method.c_str(), r.precision, r.recall, r.f1);
    }
    report["results"] = std::move(rows);
    if (!a.out.empty()) write_json_report(report, a.out);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    std::string data;
    std::string checkpoint;
    std::vector<int> steps_list = {10, 20, 50, 100, 200};
    int fast_steps = 10;
    std::string out;
    int bench_windows = 10;
    int throughput_threads = 1;  // > 1 adds parallel-throughput rows
};

inline int run_bench(const BenchArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const NormStats stats = norm_from_checkpoint(ck);

    const std::vector<Window> raw = read_ndjson(a.data);
    std::vector<Window> windows;
    for (const auto& w : raw) {
        if (count_ones(w.obs_mask) == w.obs_mask.size()) continue;  // nothing to impute
        if (w.features() != ck.K || w.length() != ck.L) continue;
        windows.push_back(apply_norm(w, stats));
        if (static_cast<int>(windows.size()) >= a.bench_windows) break;
    }
    if (windows.empty()) throw DataError("bench: no windows with missing entries");

    struct Row {
        std::string mode;
        int steps;
        double ms_per_sample;
        long evals_per_sample;
    };
    std::vector<Row> rows;

    auto time_mode = [&](SampleMode mode, int T_steps, int M, const std::string& label, int threads) {
        DiffusionConfig cfg = ck.cfg;
        cfg.T = T_steps;
        cfg.fast_steps = std::min(M, T_steps);
        cfg.n_replicates = 1;
        cfg.validate();
        // warm-up, untimed
        impute_replicates(ck.params, windows.front(), std::nullopt, cfg, mode, derive_seed(cfg.seed, "bench-warm", 0));
        std::atomic<long> evals{0};
        const auto t0 = std::chrono::steady_clock::now();
        parallel_for(windows.size(), threads, [&](std::size_t i) {
            const ReplicateSet reps =
                impute_replicates(ck.params, windows[i], std::nullopt, cfg, mode, derive_seed(cfg.seed, "bench", i));
            evals += reps.denoiser_evals;
        });
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back({label, mode == SampleMode::ancestral ? T_steps : cfg.fast_steps,
                        ms / static_cast<double>(windows.size()),
                        evals.load() / static_cast<long>(windows.size())});
    };

    for (int T_steps : a.steps_list) time_mode(SampleMode::ancestral, T_steps, a.fast_steps, "ancestral", 1);
    time_mode(SampleMode::fast, ck.cfg.T, a.fast_steps, "fast", 1);
    if (a.throughput_threads > 1) {
        for (int T_steps : a.steps_list)
            time_mode(SampleMode::ancestral, T_steps, a.fast_steps, "ancestral-parallel", a.throughput_threads);
        time_mode(SampleMode::fast, ck.cfg.T, a.fast_steps, "fast-parallel", a.throughput_threads);
    }

    std::ofstream csv(a.out, std::ios::binary | std::ios::trunc);
    if (!csv) throw DataError("bench: cannot open " + a.out);
    csv << "mode,steps,ms_per_sample,denoiser_evals\n";
    std::printf("bench: %zu windows per row\n", windows.size());
    for (const auto& r : rows) {
        csv << r.mode << ',' << r.steps << ',' << r.ms_per_sample << ',' << r.evals_per_sample << '\n';
        std::printf("  %-20s steps=%-4d %10.3f ms/sample  evals=%ld\n", r.mode.c_str(), r.steps, r.ms_per_sample,
                    r.evals_per_sample);
    }
    return kExitOk;
}

}  // namespace tsdiff
