#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsdiff/denoiser.hpp"
#include "tsdiff/rng.hpp"
#include "tsdiff/schedule.hpp"

namespace tsdiff {

struct AdamState {
    ModelParams m;  // first moments, shaped like the parameters
    ModelParams v;  // second moments
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState make_adam_state(const ModelParams& p) {
    AdamState s;
    s.m = zeros_like(p);
    s.v = zeros_like(p);
    return s;
}

struct TrainReport {
    std::vector<double> epoch_loss;  // mean per-sample loss per epoch
    double wall_seconds = 0.0;
    int skipped_windows = 0;         // windows with fewer than 2 observed entries
};

// Missing entries become 0.0; obs_mask and observed entries are untouched.
inline Window zero_preimpute(const Window& w) {
    Window out = w;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        if (!out.obs_mask.data[i]) out.values.data[i] = 0.0;
    return out;
}

// Random split of the observed entries into conditioning set and imputation
// targets. Target count = round(ratio * #observed), clamped so both sides
// stay non-empty.
inline MaskPair partition_mask(const Window& w, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("partition_mask: ratio must be in (0, 1)");
    std::vector<std::size_t> observed;
    observed.reserve(w.obs_mask.size());
    for (std::size_t i = 0; i < w.obs_mask.size(); ++i)
        if (w.obs_mask.data[i]) observed.push_back(i);
    const std::size_t n_obs = observed.size();
    if (n_obs < 2) throw DataError("partition_mask: window needs at least 2 observed entries");

    std::size_t n_target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_obs)));
    n_target = std::clamp<std::size_t>(n_target, 1, n_obs - 1);

    // partial Fisher-Yates: the first n_target slots become the targets
    for (std::size_t i = 0; i < n_target; ++i) {
        const std::size_t j = i + rng.below(n_obs - i);
        std::swap(observed[i], observed[j]);
    }
    MaskPair mp;
    mp.cond_mask = Mask(w.obs_mask.rows, w.obs_mask.cols);
    mp.target_mask = Mask(w.obs_mask.rows, w.obs_mask.cols);
    for (std::size_t i = 0; i < n_target; ++i) mp.target_mask.data[observed[i]] = 1;
    for (std::size_t i = n_target; i < n_obs; ++i) mp.cond_mask.data[observed[i]] = 1;
    return mp;
}

struct LossGrads {
    double loss = 0.0;
    ModelGrads grads;
};

// Deterministic core of one training term at a fixed step t with explicit
// noise: the mean squared noise-prediction error over target entries and its
// exact parameter gradients. Noise outside the target mask is zero-masked,
// so the loss depends only on target-entry noise.
inline LossGrads loss_and_grads_at(const ModelParams& params, const Window& w, const MaskPair& mp,
                                   const NoiseSchedule& sched, int t, const Matrix& noise) {
    const std::size_t n_target = count_ones(mp.target_mask);
    if (n_target == 0) throw std::invalid_argument("loss_and_grads: empty target mask");
    if (!noise.same_shape(w.values)) throw std::invalid_argument("loss_and_grads: noise shape mismatch");

    Matrix eps(w.values.rows, w.values.cols);
    Matrix x_target(w.values.rows, w.values.cols);
    for (std::size_t i = 0; i < w.values.size(); ++i) {
        if (mp.target_mask.data[i]) {
            eps.data[i] = noise.data[i];
            x_target.data[i] = w.values.data[i];
        }
    }

    DenoiserInput in;
    in.noisy_target = forward_noise(x_target, t, sched, eps);
    in.cond_values = Matrix(w.values.rows, w.values.cols);
    for (std::size_t i = 0; i < w.values.size(); ++i)
        if (mp.cond_mask.data[i]) in.cond_values.data[i] = w.values.data[i];
    in.cond_mask = mp.cond_mask;
    in.t = t;

    ForwardTrace trace;
    const Matrix eps_hat = forward_at(params, in, mp.target_mask, &trace);

    double loss = 0.0;
    Matrix upstream(w.values.rows, w.values.cols);
    const double inv_n = 1.0 / static_cast<double>(n_target);
    for (std::size_t i = 0; i < eps.size(); ++i) {
        if (!mp.target_mask.data[i]) continue;
        const double d = eps.data[i] - eps_hat.data[i];
        loss += d * d;
        upstream.data[i] = 2.0 * (eps_hat.data[i] - eps.data[i]) * inv_n;
    }
    loss *= inv_n;
    if (!std::isfinite(loss)) throw NumericError("loss_and_grads: non-finite loss");

    LossGrads out;
    out.loss = loss;
    out.grads = backward(params, in, trace, upstream);
    return out;
}

// Stochastic flavor: t uniform on {1..T}, standard-normal noise at the
// target positions.
inline LossGrads loss_and_grads(const ModelParams& params, const Window& w, const MaskPair& mp,
                                const NoiseSchedule& sched, Rng& rng) {
    if (count_ones(mp.target_mask) == 0) throw std::invalid_argument("loss_and_grads: empty target mask");
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps())));
    Matrix noise(w.values.rows, w.values.cols);
    for (std::size_t i = 0; i < noise.size(); ++i)
        if (mp.target_mask.data[i]) noise.data[i] = rng.normal();
    return loss_and_grads_at(params, w, mp, sched, t, noise);
}

// Standard Adam with bias correction, in place.
inline void adam_update(ModelParams& params, const ModelGrads& grads, AdamState& state, double lr) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    auto pv = tensor_views(params);
    auto gv = tensor_views(const_cast<ModelGrads&>(grads));
    auto mv = tensor_views(state.m);
    auto vv = tensor_views(state.v);
    for (std::size_t k = 0; k < pv.size(); ++k) {
        auto& pd = pv[k].data;
        auto& gd = gv[k].data;
        auto& md = mv[k].data;
        auto& vd = vv[k].data;
        for (std::size_t i = 0; i < pd.size(); ++i) {
            const double g = gd[i];
            if (!std::isfinite(g)) throw NumericError("adam_update: non-finite gradient in " + pv[k].name);
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * g;
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = md[i] / bc1;
            const double v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

struct TrainResult {
    ModelParams params;
    TrainReport report;
};

// Self-supervised training over pre-normalized windows: zero pre-imputation,
// fresh random mask partitions every epoch, per-batch mean gradients,
// Adam updates. Fully determined by (dataset, cfg).
inline TrainResult train(const std::vector<Window>& dataset, const DiffusionConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw DataError("train: empty dataset");
    const int K = dataset.front().features();
    const int L = dataset.front().length();
    for (const auto& w : dataset)
        if (w.features() != K || w.length() != L) throw DataError("train: windows disagree on K x L");

    const auto t_start = std::chrono::steady_clock::now();

    TrainResult res;
    res.params = init_params(K, L, cfg, derive_seed(cfg.seed, "init", 0));

    std::vector<Window> windows;
    windows.reserve(dataset.size());
    for (const auto& w : dataset) {
        if (count_ones(w.obs_mask) < 2) {
            ++res.report.skipped_windows;
            continue;
        }
        windows.push_back(zero_preimpute(w));
    }
    if (windows.empty()) throw DataError("train: no window has 2 or more observed entries");

    const NoiseSchedule sched = build_schedule(cfg);
    AdamState adam = make_adam_state(res.params);
    Rng rng(derive_seed(cfg.seed, "train", 0));

    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            ModelGrads acc = zeros_like(res.params);
            auto acc_views = tensor_views(acc);
            for (std::size_t i = start; i < end; ++i) {
                const Window& w = windows[order[i]];
                const MaskPair mp = partition_mask(w, cfg.mask_ratio, rng);
                LossGrads lg = loss_and_grads(res.params, w, mp, sched, rng);
                epoch_loss += lg.loss;
                auto g_views = tensor_views(lg.grads);
                for (std::size_t k = 0; k < acc_views.size(); ++k)
                    for (std::size_t j = 0; j < acc_views[k].data.size(); ++j)
                        acc_views[k].data[j] += g_views[k].data[j];
            }
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (auto& tv : acc_views)
                for (auto& x : tv.data) x *= inv_batch;
            adam_update(res.params, acc, adam, cfg.learning_rate);
        }
        res.report.epoch_loss.push_back(epoch_loss / static_cast<double>(windows.size()));
    }

    res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint container: one-line JSON manifest (config, window shape, tensor
// names/shapes, little-endian f64 payload layout) followed by the raw tensor
// payloads concatenated in manifest order.

struct Checkpoint {
    DiffusionConfig cfg;
    int K = 0, L = 0;
    ModelParams params;
    // per-feature normalization fitted at training time; empty when absent
    std::vector<double> norm_mean;
    std::vector<double> norm_std;
};

namespace detail {

inline void write_payload_f64(std::ofstream& out, std::span<const double> xs) {
    static_assert(sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size() * 8));
    } else {
        for (double x : xs) {
            std::uint64_t u;
            std::memcpy(&u, &x, 8);
            char buf[8];
            for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xff);
            out.write(buf, 8);
        }
    }
}

inline void read_payload_f64(std::ifstream& in, std::span<double> xs) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(xs.size() * 8));
    } else {
        for (double& x : xs) {
            char buf[8];
            in.read(buf, 8);
            std::uint64_t u = 0;
            for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
            std::memcpy(&x, &u, 8);
        }
    }
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    auto views = tensor_views(const_cast<ModelParams&>(ck.params));
    nlohmann::ordered_json manifest;
    manifest["format"] = "tsdiff-checkpoint";
    manifest["version"] = 1;
    manifest["byte_order"] = "little";
    manifest["dtype"] = "f64";
    manifest["K"] = ck.K;
    manifest["L"] = ck.L;
    nlohmann::ordered_json jc;
    to_json(jc, ck.cfg);
    manifest["config"] = jc;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::size_t total = 0;
    for (const auto& tv : views) {
        tensors.push_back({{"name", tv.name}, {"rows", tv.rows}, {"cols", tv.cols}, {"count", tv.data.size()}});
        total += tv.data.size();
    }
    if (!ck.norm_mean.empty()) {
        tensors.push_back({{"name", "norm_mean"},
                           {"rows", ck.norm_mean.size()},
                           {"cols", 1},
                           {"count", ck.norm_mean.size()}});
        tensors.push_back(
            {{"name", "norm_std"}, {"rows", ck.norm_std.size()}, {"cols", 1}, {"count", ck.norm_std.size()}});
        total += ck.norm_mean.size() + ck.norm_std.size();
    }
    manifest["tensors"] = tensors;
    manifest["total_elements"] = total;

    // write to a temp file, then rename: a partial write never replaces an
    // existing checkpoint
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("save_checkpoint: cannot open " + tmp);
        out << manifest.dump() << '\n';
        for (const auto& tv : views) detail::write_payload_f64(out, tv.data);
        if (!ck.norm_mean.empty()) {
            detail::write_payload_f64(out, ck.norm_mean);
            detail::write_payload_f64(out, ck.norm_std);
        }
        if (!out) throw DataError("save_checkpoint: write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const ModelParams& params, const DiffusionConfig& cfg, const std::string& path) {
    Checkpoint ck;
    ck.cfg = cfg;
    ck.K = params.K;
    ck.L = params.L;
    ck.params = params;
    save_checkpoint(ck, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw DataError("load_checkpoint: missing manifest line");
    nlohmann::ordered_json manifest;
    try {
        manifest = nlohmann::ordered_json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("load_checkpoint: bad manifest: ") + e.what());
    }
    if (manifest.value("format", "") != "tsdiff-checkpoint") throw DataError("load_checkpoint: unknown format");
    if (manifest.value("dtype", "") != "f64" || manifest.value("byte_order", "") != "little")
        throw DataError("load_checkpoint: unsupported payload encoding");

    Checkpoint ck;
    try {
        from_json(manifest.at("config"), ck.cfg);
        ck.K = manifest.at("K").get<int>();
        ck.L = manifest.at("L").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("load_checkpoint: bad manifest fields: ") + e.what());
    }

    ck.params = init_params(ck.K, ck.L, ck.cfg, 0);  // shapes only; payload overwrites
    auto views = tensor_views(ck.params);

    const auto& tensors = manifest.at("tensors");
    std::size_t vi = 0;
    for (const auto& tj : tensors) {
        const std::string name = tj.at("name").get<std::string>();
        const std::size_t count = tj.at("count").get<std::size_t>();
        std::span<double> dst;
        if (name == "norm_mean") {
            ck.norm_mean.resize(count);
            dst = ck.norm_mean;
        } else if (name == "norm_std") {
            ck.norm_std.resize(count);
            dst = ck.norm_std;
        } else {
            if (vi >= views.size() || views[vi].name != name)
                throw DataError("load_checkpoint: unexpected tensor " + name);
            if (views[vi].data.size() != count || views[vi].rows != tj.at("rows").get<int>() ||
                views[vi].cols != tj.at("cols").get<int>())
                throw DataError("load_checkpoint: shape mismatch for tensor " + name);
            dst = views[vi].data;
            ++vi;
        }
        detail::read_payload_f64(in, dst);
        if (!in) throw DataError("load_checkpoint: truncated payload at tensor " + name);
    }
    if (vi != views.size()) throw DataError("load_checkpoint: manifest is missing parameter tensors");
    if (ck.norm_mean.size() != ck.norm_std.size())
        throw DataError("load_checkpoint: normalization tensors disagree");
    if (!ck.norm_mean.empty() && static_cast<int>(ck.norm_mean.size()) != ck.K)
        throw DataError("load_checkpoint: normalization length disagrees with K");
    return ck;
}

}  // namespace tsdiff
