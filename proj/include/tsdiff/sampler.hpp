#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "tsdiff/denoiser.hpp"
#include "tsdiff/rng.hpp"
#include "tsdiff/schedule.hpp"
#include "tsdiff/stats.hpp"

namespace tsdiff {

enum class SampleMode { ancestral, fast };

inline SampleMode sample_mode_from_string(const std::string& s) {
    if (s == "ancestral") return SampleMode::ancestral;
    if (s == "fast") return SampleMode::fast;
    throw ConfigError("unknown sample mode: " + s);
}

// Per-entry aggregate of the imputation replicates. Target positions carry
// the replicate median and 5%/95% quantiles; every other position is copied
// through from the input.
struct ImputationResult {
    Matrix median;
    Matrix q05;
    Matrix q95;
    int n_replicates = 0;
    long denoiser_evals = 0;  // total across replicates
};

// One reverse step of the stochastic sampler:
//   mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
//   sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
// The final step (t = 1) is exactly mu since abar_0 = 1. Only target
// positions are touched; the state is zero elsewhere.
inline Matrix ancestral_step(const ModelParams& params, const Matrix& x_t, const Matrix& cond,
                             const Mask& cond_mask, const Mask& target_mask, int t, const NoiseSchedule& sched,
                             Rng& rng) {
    if (t < 1 || t > sched.steps()) throw std::invalid_argument("ancestral_step: step out of range");
    const Matrix eps_hat = forward_at(params, DenoiserInput{x_t, cond, cond_mask, t}, target_mask);

    const double a_t = sched.alpha(t);
    const double ab_t = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    const double inv_sqrt_a = 1.0 / std::sqrt(a_t);
    const double noise_coef = sched.beta(t) / std::sqrt(1.0 - ab_t);
    const double sigma = t > 1 ? std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * sched.beta(t)) : 0.0;

    Matrix out(x_t.rows, x_t.cols);
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        if (!target_mask.data[i]) continue;
        const double mu = inv_sqrt_a * (x_t.data[i] - noise_coef * eps_hat.data[i]);
        out.data[i] = t > 1 ? mu + sigma * rng.normal() : mu;
    }
    return out;
}

struct SampleOut {
    Matrix values;
    long denoiser_evals = 0;
};

// Full reverse chain from x_T ~ N(0, I) at the target positions down to
// x_0, conditioning on the given observed values. Exactly T denoiser
// evaluations; positions outside the target set are returned bit-exact.
inline SampleOut ancestral_sample(const ModelParams& params, const Window& w, const Mask& cond_mask,
                                  const Mask& target_mask, const NoiseSchedule& sched, Rng& rng) {
    SampleOut out;
    out.values = w.values;
    if (count_ones(target_mask) == 0) return out;

    Matrix cond(w.values.rows, w.values.cols);
    for (std::size_t i = 0; i < w.values.size(); ++i)
        if (cond_mask.data[i]) cond.data[i] = w.values.data[i];

    Matrix x(w.values.rows, w.values.cols);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (target_mask.data[i]) x.data[i] = rng.normal();

    for (int t = sched.steps(); t >= 1; --t) {
        x = ancestral_step(params, x, cond, cond_mask, target_mask, t, sched, rng);
        ++out.denoiser_evals;
    }
    for (std::size_t i = 0; i < x.size(); ++i)
        if (target_mask.data[i]) out.values.data[i] = x.data[i];
    return out;
}

// inference flavor: everything unobserved is a target
inline SampleOut ancestral_sample(const ModelParams& params, const Window& w, const NoiseSchedule& sched,
                                  Rng& rng) {
    Mask targets(w.obs_mask.rows, w.obs_mask.cols);
    for (std::size_t i = 0; i < w.obs_mask.size(); ++i) targets.data[i] = w.obs_mask.data[i] ? 0 : 1;
    return ancestral_sample(params, w, w.obs_mask, targets, sched, rng);
}

// M + 1 step indices uniformly spaced from T down to 0 (both endpoints
// included), rounded to nearest integer and deduplicated while keeping the
// sequence strictly decreasing.
inline std::vector<int> fast_schedule(int T, int M) {
    if (M < 1 || M > T) throw std::invalid_argument("fast_schedule: require 1 <= M <= T");
    std::vector<int> taus;
    taus.reserve(M + 1);
    for (int i = 0; i <= M; ++i) {
        const int tau = static_cast<int>(std::llround(static_cast<double>(T) -
                                                      static_cast<double>(i) * static_cast<double>(T) / M));
        if (taus.empty() || tau < taus.back()) taus.push_back(tau);
    }
    if (taus.back() != 0) taus.push_back(0);  // unreachable for exact arithmetic; keeps the contract explicit
    return taus;
}

// Deterministic first-order probability-flow update from step s to s' < s:
//   x0_hat = (x_s - sqrt(1 - abar_s) eps_hat) / sqrt(abar_s)
//   x_s'   = sqrt(abar_s') x0_hat + sqrt(1 - abar_s') eps_hat
// With abar_0 = 1, s' = 0 returns x0_hat directly.
inline Matrix fast_step(const ModelParams& params, const Matrix& x_s, const Matrix& cond, const Mask& cond_mask,
                        const Mask& target_mask, int s, int s_next, const NoiseSchedule& sched) {
    if (!(sched.steps() >= s && s > s_next && s_next >= 0))
        throw std::invalid_argument("fast_step: require T >= s > s' >= 0");
    const Matrix eps_hat = forward_at(params, DenoiserInput{x_s, cond, cond_mask, s}, target_mask);

    const double ab_s = sched.alpha_bar(s);
    const double ab_n = sched.alpha_bar(s_next);
    const double inv_sqrt_ab_s = 1.0 / std::sqrt(ab_s);
    const double sq_one_minus_s = std::sqrt(1.0 - ab_s);
    const double sq_ab_n = std::sqrt(ab_n);
    const double sq_one_minus_n = std::sqrt(1.0 - ab_n);

    Matrix out(x_s.rows, x_s.cols);
    for (std::size_t i = 0; i < x_s.size(); ++i) {
        if (!target_mask.data[i]) continue;
        const double x0_hat = (x_s.data[i] - sq_one_minus_s * eps_hat.data[i]) * inv_sqrt_ab_s;
        out.data[i] = sq_ab_n * x0_hat + sq_one_minus_n * eps_hat.data[i];
    }
    return out;
}

// Few-step deterministic sampling along fast_schedule(T, M) with the same
// trained parameters; noise enters only through the initial draw.
inline SampleOut fast_sample(const ModelParams& params, const Window& w, const Mask& cond_mask,
                             const Mask& target_mask, const NoiseSchedule& sched, int M, Rng& rng) {
    SampleOut out;
    out.values = w.values;
    if (count_ones(target_mask) == 0) return out;

    Matrix cond(w.values.rows, w.values.cols);
    for (std::size_t i = 0; i < w.values.size(); ++i)
        if (cond_mask.data[i]) cond.data[i] = w.values.data[i];

    Matrix x(w.values.rows, w.values.cols);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (target_mask.data[i]) x.data[i] = rng.normal();

    const std::vector<int> taus = fast_schedule(sched.steps(), M);
    for (std::size_t k = 0; k + 1 < taus.size(); ++k) {
        x = fast_step(params, x, cond, cond_mask, target_mask, taus[k], taus[k + 1], sched);
        ++out.denoiser_evals;
    }
    for (std::size_t i = 0; i < x.size(); ++i)
        if (target_mask.data[i]) out.values.data[i] = x.data[i];
    return out;
}

inline SampleOut fast_sample(const ModelParams& params, const Window& w, const NoiseSchedule& sched, int M,
                             Rng& rng) {
    Mask targets(w.obs_mask.rows, w.obs_mask.cols);
    for (std::size_t i = 0; i < w.obs_mask.size(); ++i) targets.data[i] = w.obs_mask.data[i] ? 0 : 1;
    return fast_sample(params, w, w.obs_mask, targets, sched, M, rng);
}

struct ReplicateSet {
    std::vector<Matrix> values;  // one imputed matrix per replicate
    long denoiser_evals = 0;
};

// N independent replicates with per-replicate noise streams seeded from
// (base seed, disk_id, replicate index). The masks argument selects the
// evaluation flavor (hold-out targets); without it, targets are the
// genuinely missing positions.
inline ReplicateSet impute_replicates(const ModelParams& params, const Window& w,
                                      const std::optional<MaskPair>& masks, const DiffusionConfig& cfg,
                                      SampleMode mode, std::uint64_t base_seed) {
    if (cfg.n_replicates < 1) throw ConfigError("impute: n_replicates must be >= 1");
    const NoiseSchedule sched = build_schedule(cfg);

    Mask cond_mask, target_mask;
    if (masks) {
        if (!mask_pair_valid(*masks, w.obs_mask)) throw std::invalid_argument("impute: invalid mask pair");
        cond_mask = masks->cond_mask;
        target_mask = masks->target_mask;
    } else {
        cond_mask = w.obs_mask;
        target_mask = Mask(w.obs_mask.rows, w.obs_mask.cols);
        for (std::size_t i = 0; i < w.obs_mask.size(); ++i) target_mask.data[i] = w.obs_mask.data[i] ? 0 : 1;
    }

    // the sampler never reads values outside the conditioning set; zero them
    // so the evaluation flavor cannot leak held-out entries
    Window masked = w;
    for (std::size_t i = 0; i < masked.values.size(); ++i)
        if (!cond_mask.data[i]) masked.values.data[i] = 0.0;

    ReplicateSet reps;
    reps.values.reserve(cfg.n_replicates);
    for (int r = 0; r < cfg.n_replicates; ++r) {
        Rng rng(derive_seed(base_seed, w.disk_id, static_cast<std::uint64_t>(r)));
        SampleOut s = mode == SampleMode::ancestral
                          ? ancestral_sample(params, masked, cond_mask, target_mask, sched, rng)
                          : fast_sample(params, masked, cond_mask, target_mask, sched, cfg.fast_steps, rng);
        reps.denoiser_evals += s.denoiser_evals;
        reps.values.push_back(std::move(s.values));
    }
    return reps;
}

inline ImputationResult aggregate_replicates(const Window& w, const std::optional<MaskPair>& masks,
                                             const ReplicateSet& reps) {
    Mask target_mask;
    if (masks) {
        target_mask = masks->target_mask;
    } else {
        target_mask = Mask(w.obs_mask.rows, w.obs_mask.cols);
        for (std::size_t i = 0; i < w.obs_mask.size(); ++i) target_mask.data[i] = w.obs_mask.data[i] ? 0 : 1;
    }

    ImputationResult res;
    res.median = w.values;
    res.q05 = w.values;
    res.q95 = w.values;
    res.n_replicates = static_cast<int>(reps.values.size());
    res.denoiser_evals = reps.denoiser_evals;

    std::vector<double> buf(reps.values.size());
    for (std::size_t i = 0; i < w.values.size(); ++i) {
        if (!target_mask.data[i]) continue;
        for (std::size_t r = 0; r < reps.values.size(); ++r) buf[r] = reps.values[r].data[i];
        std::sort(buf.begin(), buf.end());
        res.median.data[i] = linear_quantile(buf, 0.5);
        res.q05.data[i] = linear_quantile(buf, 0.05);
        res.q95.data[i] = linear_quantile(buf, 0.95);
    }
    return res;
}

inline ImputationResult impute(const ModelParams& params, const Window& w, const std::optional<MaskPair>& masks,
                               const DiffusionConfig& cfg, SampleMode mode, std::uint64_t base_seed) {
    return aggregate_replicates(w, masks, impute_replicates(params, w, masks, cfg, mode, base_seed));
}

}  // namespace tsdiff
