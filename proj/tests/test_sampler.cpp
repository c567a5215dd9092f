#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "oracle.hpp"
#include "tsdiff/sampler.hpp"
#include "tsdiff/trainer.hpp"

using namespace tsdiff;

namespace {

DiffusionConfig small_cfg(int T = 6) {
    DiffusionConfig cfg;
    cfg.T = T;
    cfg.hidden_width = 4;
    cfg.residual_blocks = 1;
    cfg.step_embed_dim = 4;
    cfg.fast_steps = std::min(3, T);
    return cfg;
}

struct Setup {
    DiffusionConfig cfg;
    NoiseSchedule sched;
    ModelParams params;
    Window w;
    Mask cond_mask, target_mask;
    Matrix cond;
};

Setup make_setup(int K = 2, int L = 3, int T = 6) {
    Setup s;
    s.cfg = small_cfg(T);
    s.sched = build_schedule(s.cfg);
    s.params = oracle::tiny_fixed_params(K, L, s.cfg.hidden_width, s.cfg.residual_blocks, s.cfg.step_embed_dim);
    s.w.disk_id = "s0";
    s.w.values = Matrix(K, L);
    s.w.obs_mask = Mask(K, L, 1);
    Rng rng(55);
    for (auto& x : s.w.values.data) x = rng.normal();
    s.cond_mask = Mask(K, L);
    s.target_mask = Mask(K, L);
    for (std::size_t i = 0; i < s.w.obs_mask.size(); ++i)
        (i % 3 == 0 ? s.target_mask : s.cond_mask).data[i] = 1;
    s.cond = Matrix(K, L);
    for (std::size_t i = 0; i < s.cond.size(); ++i)
        if (s.cond_mask.data[i]) s.cond.data[i] = s.w.values.data[i];
    return s;
}

Matrix random_state(const Mask& targets, std::uint64_t seed) {
    Matrix x(targets.rows, targets.cols);
    Rng rng(seed);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (targets.data[i]) x.data[i] = rng.normal();
    return x;
}

}  // namespace

TEST_CASE("final ancestral step is deterministic", "[sampler]") {
    const Setup s = make_setup();
    const Matrix x1 = random_state(s.target_mask, 1);
    Rng ra(100), rb(200);  // different noise streams must not matter at t = 1
    const Matrix outa = ancestral_step(s.params, x1, s.cond, s.cond_mask, s.target_mask, 1, s.sched, ra);
    const Matrix outb = ancestral_step(s.params, x1, s.cond, s.cond_mask, s.target_mask, 1, s.sched, rb);
    REQUIRE(outa == outb);
}

TEST_CASE("ancestral step with a fresh model reduces to x_t/sqrt(alpha) plus noise", "[sampler]") {
    const Setup s = make_setup();
    const ModelParams fresh = init_params(2, 3, s.cfg, 9);  // eps_hat == 0
    const Matrix x = random_state(s.target_mask, 2);
    const int t = 4;
    Rng rng(300);
    const Matrix out = ancestral_step(fresh, x, s.cond, s.cond_mask, s.target_mask, t, s.sched, rng);

    Rng replay(300);
    const double sigma =
        std::sqrt((1.0 - s.sched.alpha_bar(t - 1)) / (1.0 - s.sched.alpha_bar(t)) * s.sched.beta(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!s.target_mask.data[i]) continue;
        const double expect = x.data[i] / std::sqrt(s.sched.alpha(t)) + sigma * replay.normal();
        REQUIRE_THAT(out.data[i], Catch::Matchers::WithinAbs(expect, 1e-14));
    }
}

TEST_CASE("ancestral step matches an independent transcription of the formulas", "[sampler]") {
    const Setup s = make_setup();
    for (int t : {1, 3, 6}) {
        const Matrix x = random_state(s.target_mask, 40 + t);
        Rng rng(500 + t);
        const Matrix got = ancestral_step(s.params, x, s.cond, s.cond_mask, s.target_mask, t, s.sched, rng);

        // replay the same noise stream (target entries in row-major order)
        Matrix z(x.rows, x.cols);
        if (t > 1) {
            Rng replay(500 + t);
            for (std::size_t i = 0; i < z.size(); ++i)
                if (s.target_mask.data[i]) z.data[i] = replay.normal();
        }
        const Matrix want = oracle::ref_ancestral_step(s.params, x, s.cond, s.cond_mask, s.target_mask, t, s.sched, z);
        for (std::size_t i = 0; i < got.size(); ++i)
            REQUIRE_THAT(got.data[i], Catch::Matchers::WithinAbs(want.data[i], 1e-12));
    }
}

TEST_CASE("ancestral step rejects out-of-range steps", "[sampler]") {
    const Setup s = make_setup();
    const Matrix x = random_state(s.target_mask, 3);
    Rng rng(1);
    REQUIRE_THROWS_AS(ancestral_step(s.params, x, s.cond, s.cond_mask, s.target_mask, 0, s.sched, rng),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(ancestral_step(s.params, x, s.cond, s.cond_mask, s.target_mask, 7, s.sched, rng),
                      std::invalid_argument);
}

TEST_CASE("ancestral sampling leaves fully observed windows alone", "[sampler]") {
    const Setup s = make_setup();
    Rng rng(4);
    const SampleOut out = ancestral_sample(s.params, s.w, s.sched, rng);  // no missing entries
    REQUIRE(out.values == s.w.values);
    REQUIRE(out.denoiser_evals == 0);
}

TEST_CASE("ancestral sampling runs exactly T denoiser evaluations and is seed-stable", "[sampler]") {
    const Setup s = make_setup();
    Rng ra(10), rb(10), rc(11);
    const SampleOut a = ancestral_sample(s.params, s.w, s.cond_mask, s.target_mask, s.sched, ra);
    const SampleOut b = ancestral_sample(s.params, s.w, s.cond_mask, s.target_mask, s.sched, rb);
    const SampleOut c = ancestral_sample(s.params, s.w, s.cond_mask, s.target_mask, s.sched, rc);
    REQUIRE(a.denoiser_evals == s.cfg.T);
    REQUIRE(a.values == b.values);
    REQUIRE(a.values != c.values);
    // conditioning and pass-through entries are bit-exact
    for (std::size_t i = 0; i < s.w.values.size(); ++i)
        if (!s.target_mask.data[i]) REQUIRE(a.values.data[i] == s.w.values.data[i]);
}

TEST_CASE("fast_schedule spacing, endpoints, degenerate cases", "[sampler]") {
    REQUIRE(fast_schedule(50, 10) == std::vector<int>{50, 45, 40, 35, 30, 25, 20, 15, 10, 5, 0});
    REQUIRE(fast_schedule(5, 5) == std::vector<int>{5, 4, 3, 2, 1, 0});
    REQUIRE(fast_schedule(50, 1) == std::vector<int>{50, 0});
    REQUIRE_THROWS_AS(fast_schedule(10, 11), std::invalid_argument);
    REQUIRE_THROWS_AS(fast_schedule(10, 0), std::invalid_argument);

    for (int T : {7, 13, 50, 101})
        for (int M : {1, 2, 3, 5, 7}) {
            const auto taus = fast_schedule(T, M);
            REQUIRE(taus.front() == T);
            REQUIRE(taus.back() == 0);
            REQUIRE(static_cast<int>(taus.size()) <= M + 1);
            for (std::size_t i = 0; i + 1 < taus.size(); ++i) REQUIRE(taus[i] > taus[i + 1]);
        }
}

TEST_CASE("fast step trivial endpoints", "[sampler]") {
    const Setup s = make_setup();
    const Matrix x = random_state(s.target_mask, 5);
    const int t = 5;

    // s' = 0 returns the predicted x0
    const Matrix to_zero = fast_step(s.params, x, s.cond, s.cond_mask, s.target_mask, t, 0, s.sched);
    const Matrix eps_hat = oracle::ref_forward(s.params, DenoiserInput{x, s.cond, s.cond_mask, t});
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!s.target_mask.data[i]) continue;
        const double x0 =
            (x.data[i] - std::sqrt(1.0 - s.sched.alpha_bar(t)) * eps_hat.data[i]) / std::sqrt(s.sched.alpha_bar(t));
        REQUIRE_THAT(to_zero.data[i], Catch::Matchers::WithinAbs(x0, 1e-12));
    }

    // fresh model (eps_hat == 0) contracts by sqrt(abar_s'/abar_s)
    const ModelParams fresh = init_params(2, 3, s.cfg, 9);
    const Matrix scaled = fast_step(fresh, x, s.cond, s.cond_mask, s.target_mask, 5, 2, s.sched);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!s.target_mask.data[i]) continue;
        const double expect = std::sqrt(s.sched.alpha_bar(2) / s.sched.alpha_bar(5)) * x.data[i];
        REQUIRE_THAT(scaled.data[i], Catch::Matchers::WithinAbs(expect, 1e-14));
    }

    REQUIRE_THROWS_AS(fast_step(s.params, x, s.cond, s.cond_mask, s.target_mask, 3, 3, s.sched),
                      std::invalid_argument);
}

TEST_CASE("full-step fast chain matches the independent recursion endpoint", "[sampler]") {
    const Setup s = make_setup(2, 3, 8);
    Rng rng(777);
    const SampleOut got = fast_sample(s.params, s.w, s.cond_mask, s.target_mask, s.sched, s.sched.steps(), rng);
    REQUIRE(got.denoiser_evals == s.sched.steps());

    Rng replay(777);
    Matrix x_init(2, 3);
    for (std::size_t i = 0; i < x_init.size(); ++i)
        if (s.target_mask.data[i]) x_init.data[i] = replay.normal();
    const Matrix want = oracle::ref_ddim_endpoint(s.params, x_init, s.cond, s.cond_mask, s.target_mask, s.sched);
    for (std::size_t i = 0; i < want.size(); ++i)
        if (s.target_mask.data[i])
            REQUIRE_THAT(got.values.data[i], Catch::Matchers::WithinAbs(want.data[i], 1e-10));
}

TEST_CASE("fast sampling eval counts follow M", "[sampler]") {
    const Setup s = make_setup(2, 3, 6);
    Rng r1(3);
    const SampleOut one = fast_sample(s.params, s.w, s.cond_mask, s.target_mask, s.sched, 1, r1);
    REQUIRE(one.denoiser_evals == 1);
    Rng r3(3);
    const SampleOut three = fast_sample(s.params, s.w, s.cond_mask, s.target_mask, s.sched, 3, r3);
    REQUIRE(three.denoiser_evals == 3);
    for (std::size_t i = 0; i < s.w.values.size(); ++i)
        if (!s.target_mask.data[i]) REQUIRE(three.values.data[i] == s.w.values.data[i]);
}

TEST_CASE("replicate aggregation reproduces the order-statistic arithmetic", "[sampler]") {
    Window w;
    w.disk_id = "q";
    w.values = Matrix(1, 1);
    w.obs_mask = Mask(1, 1);  // single missing entry
    w.values(0, 0) = 0.0;

    ReplicateSet reps;
    for (int v = 1; v <= 100; ++v) {
        Matrix m(1, 1);
        m(0, 0) = v;
        reps.values.push_back(m);
    }
    const ImputationResult r = aggregate_replicates(w, std::nullopt, reps);
    REQUIRE(r.median(0, 0) == 50.5);
    REQUIRE_THAT(r.q05(0, 0), Catch::Matchers::WithinAbs(5.95, 1e-12));
    REQUIRE_THAT(r.q95(0, 0), Catch::Matchers::WithinAbs(95.05, 1e-12));

    // permuting replicates changes nothing
    ReplicateSet shuffled = reps;
    Rng rng(8);
    for (std::size_t i = shuffled.values.size(); i > 1; --i)
        std::swap(shuffled.values[i - 1], shuffled.values[rng.below(i)]);
    const ImputationResult r2 = aggregate_replicates(w, std::nullopt, shuffled);
    REQUIRE(r2.median(0, 0) == r.median(0, 0));
    REQUIRE(r2.q05(0, 0) == r.q05(0, 0));
    REQUIRE(r2.q95(0, 0) == r.q95(0, 0));

    // a constant replicate set collapses all three quantiles
    ReplicateSet constant;
    for (int i = 0; i < 7; ++i) {
        Matrix m(1, 1);
        m(0, 0) = 2.25;
        constant.values.push_back(m);
    }
    const ImputationResult rc = aggregate_replicates(w, std::nullopt, constant);
    REQUIRE(rc.median(0, 0) == 2.25);
    REQUIRE(rc.q05(0, 0) == 2.25);
    REQUIRE(rc.q95(0, 0) == 2.25);
}

TEST_CASE("impute keeps observed entries bit-exact and the quantile sandwich", "[sampler]") {
    const Setup s = make_setup(3, 4, 6);
    Window w = s.w;
    // hide a few entries for real
    for (std::size_t i = 0; i < w.obs_mask.size(); ++i)
        if (i % 4 == 1) {
            w.obs_mask.data[i] = 0;
            w.values.data[i] = missing_value();
        }
    const Window pre = zero_preimpute(w);

    DiffusionConfig cfg = s.cfg;
    cfg.n_replicates = 9;
    for (SampleMode mode : {SampleMode::ancestral, SampleMode::fast}) {
        const ImputationResult r = impute(s.params, pre, std::nullopt, cfg, mode, 321);
        for (std::size_t i = 0; i < pre.values.size(); ++i) {
            if (w.obs_mask.data[i]) {
                REQUIRE(r.median.data[i] == pre.values.data[i]);
                REQUIRE(r.q05.data[i] == pre.values.data[i]);
                REQUIRE(r.q95.data[i] == pre.values.data[i]);
            } else {
                REQUIRE(r.q05.data[i] <= r.median.data[i]);
                REQUIRE(r.median.data[i] <= r.q95.data[i]);
            }
        }
        const long per_rep = mode == SampleMode::ancestral ? cfg.T : cfg.fast_steps;
        REQUIRE(r.denoiser_evals == per_rep * cfg.n_replicates);
        REQUIRE(r.n_replicates == cfg.n_replicates);
    }
}

TEST_CASE("impute is a pure function of params, window, config, seed", "[sampler]") {
    const Setup s = make_setup(2, 3, 6);
    Window w = s.w;
    w.obs_mask(0, 1) = 0;
    w.values(0, 1) = 0.0;
    DiffusionConfig cfg = s.cfg;
    cfg.n_replicates = 5;
    const ImputationResult a = impute(s.params, w, std::nullopt, cfg, SampleMode::ancestral, 99);
    const ImputationResult b = impute(s.params, w, std::nullopt, cfg, SampleMode::ancestral, 99);
    REQUIRE(a.median == b.median);
    REQUIRE(a.q05 == b.q05);
    REQUIRE(a.q95 == b.q95);
    const ImputationResult c = impute(s.params, w, std::nullopt, cfg, SampleMode::ancestral, 100);
    REQUIRE(a.median != c.median);
}

TEST_CASE("evaluation-mode impute never reads held-out values", "[sampler]") {
    const Setup s = make_setup(2, 4, 6);
    MaskPair mp;
    mp.cond_mask = Mask(2, 4);
    mp.target_mask = Mask(2, 4);
    for (std::size_t i = 0; i < s.w.obs_mask.size(); ++i)
        (i % 2 == 0 ? mp.cond_mask : mp.target_mask).data[i] = 1;

    DiffusionConfig cfg = s.cfg;
    cfg.n_replicates = 3;
    Window poisoned = s.w;
    for (std::size_t i = 0; i < poisoned.values.size(); ++i)
        if (mp.target_mask.data[i]) poisoned.values.data[i] = 1e6;  // held-out truth must not leak

    const ImputationResult a = impute(s.params, s.w, mp, cfg, SampleMode::ancestral, 7);
    const ImputationResult b = impute(s.params, poisoned, mp, cfg, SampleMode::ancestral, 7);
    for (std::size_t i = 0; i < a.median.size(); ++i)
        if (mp.target_mask.data[i]) REQUIRE(a.median.data[i] == b.median.data[i]);
}
