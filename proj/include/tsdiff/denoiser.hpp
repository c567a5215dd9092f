#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tsdiff/core.hpp"
#include "tsdiff/matrix.hpp"
#include "tsdiff/rng.hpp"

namespace tsdiff {

// Input to the conditional denoiser: the noisy target channel, the observed
// conditioning channel, the conditioning mask, and the diffusion step.
struct DenoiserInput {
    Matrix noisy_target;  // x_t at target positions, 0 elsewhere
    Matrix cond_values;   // observed conditional values, 0 elsewhere
    Mask cond_mask;
    int t = 0;
};

struct ResidualBlockParams {
    Matrix w1, w2;               // H x H
    std::vector<double> b1, b2;  // H
};

// Conditional denoiser shared across window positions: every entry (k, l)
// runs the same residual MLP over a local feature vector (own noisy value,
// nearest observed neighbors in its row, cross-feature column statistics,
// row statistics, position, feature identity) plus a step embedding fed
// through a two-layer projection. Entries are denoised independently given
// the conditioning, which is what the per-entry median/quantile metrics
// consume.
struct ModelParams {
    int K = 0, L = 0, H = 0, D = 0;
    Matrix w_in;                  // H x F, F = 18 + K
    std::vector<double> b_in;     // H
    Matrix w_step1;               // H x D
    std::vector<double> b_step1;  // H
    Matrix w_step2;               // H x H
    std::vector<double> b_step2;  // H
    std::vector<ResidualBlockParams> blocks;
    Matrix w_out;                 // 1 x H
    std::vector<double> b_out;    // 1

    int block_count() const { return static_cast<int>(blocks.size()); }
    int feature_count() const { return 18 + K; }
};

using ModelGrads = ModelParams;

struct TensorView {
    std::string name;
    std::span<double> data;
    int rows = 0, cols = 0;  // vectors reported as n x 1
};

inline std::vector<TensorView> tensor_views(ModelParams& p) {
    std::vector<TensorView> v;
    auto mat = [&](const std::string& name, Matrix& m) { v.push_back({name, m.data, m.rows, m.cols}); };
    auto vec = [&](const std::string& name, std::vector<double>& x) {
        v.push_back({name, x, static_cast<int>(x.size()), 1});
    };
    mat("w_in", p.w_in);
    vec("b_in", p.b_in);
    mat("w_step1", p.w_step1);
    vec("b_step1", p.b_step1);
    mat("w_step2", p.w_step2);
    vec("b_step2", p.b_step2);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const std::string tag = "block" + std::to_string(b) + ".";
        mat(tag + "w1", p.blocks[b].w1);
        vec(tag + "b1", p.blocks[b].b1);
        mat(tag + "w2", p.blocks[b].w2);
        vec(tag + "b2", p.blocks[b].b2);
    }
    mat("w_out", p.w_out);
    vec("b_out", p.b_out);
    return v;
}

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z;
    z.K = p.K;
    z.L = p.L;
    z.H = p.H;
    z.D = p.D;
    z.w_in = Matrix(p.w_in.rows, p.w_in.cols);
    z.b_in.assign(p.b_in.size(), 0.0);
    z.w_step1 = Matrix(p.w_step1.rows, p.w_step1.cols);
    z.b_step1.assign(p.b_step1.size(), 0.0);
    z.w_step2 = Matrix(p.w_step2.rows, p.w_step2.cols);
    z.b_step2.assign(p.b_step2.size(), 0.0);
    z.blocks.resize(p.blocks.size());
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        z.blocks[b].w1 = Matrix(p.blocks[b].w1.rows, p.blocks[b].w1.cols);
        z.blocks[b].w2 = Matrix(p.blocks[b].w2.rows, p.blocks[b].w2.cols);
        z.blocks[b].b1.assign(p.blocks[b].b1.size(), 0.0);
        z.blocks[b].b2.assign(p.blocks[b].b2.size(), 0.0);
    }
    z.w_out = Matrix(p.w_out.rows, p.w_out.cols);
    z.b_out.assign(p.b_out.size(), 0.0);
    return z;
}

// Sinusoidal step embedding: entry 2i = sin(t / 10000^(2i/D)),
// entry 2i+1 = cos(t / 10000^(2i/D)).
inline std::vector<double> step_embedding(int t, int D) {
    if (D < 2 || D % 2 != 0) throw std::invalid_argument("step_embedding: D must be a positive even number");
    if (t < 0) throw std::invalid_argument("step_embedding: t must be >= 0");
    std::vector<double> e(D);
    for (int i = 0; i < D / 2; ++i) {
        const double freq = std::pow(10000.0, 2.0 * i / D);
        e[2 * i] = std::sin(t / freq);
        e[2 * i + 1] = std::cos(t / freq);
    }
    return e;
}

// Glorot-uniform hidden weights (s = sqrt(6 / (fan_in + fan_out))), zero
// biases, zero output head: a fresh model predicts eps_hat = 0.
inline ModelParams init_params(int K, int L, const DiffusionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (K < 1 || L < 1) throw std::invalid_argument("init_params: K and L must be >= 1");
    const int H = cfg.hidden_width;
    const int D = cfg.step_embed_dim;
    const int B = cfg.residual_blocks;
    const int F = 18 + K;

    ModelParams p;
    p.K = K;
    p.L = L;
    p.H = H;
    p.D = D;
    p.w_in = Matrix(H, F);
    p.b_in.assign(H, 0.0);
    p.w_step1 = Matrix(H, D);
    p.b_step1.assign(H, 0.0);
    p.w_step2 = Matrix(H, H);
    p.b_step2.assign(H, 0.0);
    p.blocks.resize(B);
    for (auto& blk : p.blocks) {
        blk.w1 = Matrix(H, H);
        blk.w2 = Matrix(H, H);
        blk.b1.assign(H, 0.0);
        blk.b2.assign(H, 0.0);
    }
    p.w_out = Matrix(1, H);
    p.b_out.assign(1, 0.0);

    Rng rng(seed);
    auto fill = [&](Matrix& w) {
        const double s = std::sqrt(6.0 / (w.cols + w.rows));
        for (auto& x : w.data) x = rng.uniform(-s, s);
    };
    fill(p.w_in);
    fill(p.w_step1);
    fill(p.w_step2);
    for (auto& blk : p.blocks) {
        fill(blk.w1);
        fill(blk.w2);
    }
    // w_out / b_out stay zero
    return p;
}

inline double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

inline void check_input_shapes(const ModelParams& p, const DenoiserInput& in) {
    if (in.noisy_target.rows != p.K || in.noisy_target.cols != p.L ||
        !in.noisy_target.same_shape(in.cond_values) || in.cond_mask.rows != p.K || in.cond_mask.cols != p.L)
        throw std::invalid_argument("denoiser: input shape mismatch");
}

namespace detail {

// Conditioning summaries shared by every position of one forward call.
// Neighbors are strict (l' != l), so a conditioning entry's own value never
// appears among its neighbor features. The per-column residual aggregates
// collect, for each timestamp, the other rows' deviation from their own-row
// interpolation; that is the shared-innovation signal a multivariate
// imputer exploits.
struct FeatureContext {
    std::vector<int> left_col;   // strict nearest earlier cond column, -1 if none
    std::vector<int> right_col;  // strict nearest later cond column, -1 if none
    std::vector<double> col_sum;
    std::vector<int> col_cnt;
    std::vector<double> resid_sum;  // per column: sum of cond interpolation residuals
    std::vector<int> resid_cnt;
    std::vector<double> resid_own;      // per position: own residual contribution (0 if none)
    std::vector<std::uint8_t> has_resid;  // per position: own residual defined
    std::vector<double> row_sum;
    std::vector<int> row_cnt;
};

inline FeatureContext build_feature_context(const DenoiserInput& in) {
    const int K = in.cond_mask.rows, L = in.cond_mask.cols;
    const std::size_t n = static_cast<std::size_t>(K) * L;
    FeatureContext ctx;
    ctx.left_col.assign(n, -1);
    ctx.right_col.assign(n, -1);
    ctx.col_sum.assign(L, 0.0);
    ctx.col_cnt.assign(L, 0);
    ctx.resid_sum.assign(L, 0.0);
    ctx.resid_cnt.assign(L, 0);
    ctx.resid_own.assign(n, 0.0);
    ctx.has_resid.assign(n, 0);
    ctx.row_sum.assign(K, 0.0);
    ctx.row_cnt.assign(K, 0);
    for (int k = 0; k < K; ++k) {
        int last = -1;
        for (int l = 0; l < L; ++l) {
            const std::size_t i = static_cast<std::size_t>(k) * L + l;
            ctx.left_col[i] = last;
            if (in.cond_mask.data[i]) {
                last = l;
                const double v = in.cond_values.data[i];
                ctx.col_sum[l] += v;
                ++ctx.col_cnt[l];
                ctx.row_sum[k] += v;
                ++ctx.row_cnt[k];
            }
        }
        int next = -1;
        for (int l = L - 1; l >= 0; --l) {
            const std::size_t i = static_cast<std::size_t>(k) * L + l;
            ctx.right_col[i] = next;
            if (in.cond_mask.data[i]) next = l;
        }
        // interpolation residuals of the conditioning entries themselves
        for (int l = 0; l < L; ++l) {
            const std::size_t i = static_cast<std::size_t>(k) * L + l;
            if (!in.cond_mask.data[i]) continue;
            const int lc = ctx.left_col[i], rc = ctx.right_col[i];
            if (lc < 0 || rc < 0) continue;
            const double w = static_cast<double>(rc - l) / (rc - lc);
            const double pred = w * in.cond_values(k, lc) + (1.0 - w) * in.cond_values(k, rc);
            const double r = in.cond_values.data[i] - pred;
            ctx.resid_sum[l] += r;
            ++ctx.resid_cnt[l];
            ctx.resid_own[i] = r;
            ctx.has_resid[i] = 1;
        }
    }
    return ctx;
}

// Feature layout (F = 18 + K):
//   0 own noisy value, 1 cond flag, 2 cond value,
//   3-5 strict nearest earlier cond: flag, value, distance / L,
//   6-8 strict nearest later cond: flag, value, distance / L,
//   9-10 distance-weighted interpolation of those neighbors: flag, value,
//   11-12 same-timestamp other-feature cond: fraction, mean value,
//   13-14 same-timestamp other-feature interpolation residuals: fraction, mean,
//   15-16 row cond: fraction, mean value,
//   17 position l / (L - 1),
//   18.. one-hot feature index.
inline void fill_features(const DenoiserInput& in, const FeatureContext& ctx, int k, int l,
                          std::span<double> phi) {
    const int K = in.cond_mask.rows, L = in.cond_mask.cols;
    const std::size_t i = static_cast<std::size_t>(k) * L + l;
    std::fill(phi.begin(), phi.end(), 0.0);
    phi[0] = in.noisy_target.data[i];
    phi[1] = in.cond_mask.data[i] ? 1.0 : 0.0;
    phi[2] = in.cond_values.data[i];
    const int lc = ctx.left_col[i];
    if (lc >= 0) {
        phi[3] = 1.0;
        phi[4] = in.cond_values(k, lc);
        phi[5] = static_cast<double>(l - lc) / L;
    } else {
        phi[5] = 1.0;
    }
    const int rc = ctx.right_col[i];
    if (rc >= 0) {
        phi[6] = 1.0;
        phi[7] = in.cond_values(k, rc);
        phi[8] = static_cast<double>(rc - l) / L;
    } else {
        phi[8] = 1.0;
    }
    if (lc >= 0 && rc >= 0) {
        const double w = static_cast<double>(rc - l) / (rc - lc);
        phi[9] = 1.0;
        phi[10] = w * in.cond_values(k, lc) + (1.0 - w) * in.cond_values(k, rc);
    } else if (lc >= 0) {
        phi[10] = in.cond_values(k, lc);
    } else if (rc >= 0) {
        phi[10] = in.cond_values(k, rc);
    }
    const int own = in.cond_mask.data[i] ? 1 : 0;
    const int others = ctx.col_cnt[l] - own;
    if (K > 1 && others > 0) {
        phi[11] = static_cast<double>(others) / (K - 1);
        phi[12] = (ctx.col_sum[l] - (own ? in.cond_values.data[i] : 0.0)) / others;
    }
    const int rothers = ctx.resid_cnt[l] - (ctx.has_resid[i] ? 1 : 0);
    if (K > 1 && rothers > 0) {
        phi[13] = static_cast<double>(rothers) / (K - 1);
        phi[14] = (ctx.resid_sum[l] - ctx.resid_own[i]) / rothers;
    }
    if (ctx.row_cnt[k] > 0) {
        phi[15] = static_cast<double>(ctx.row_cnt[k]) / L;
        phi[16] = ctx.row_sum[k] / ctx.row_cnt[k];
    }
    phi[17] = L > 1 ? static_cast<double>(l) / (L - 1) : 0.0;
    phi[18 + k] = 1.0;
}

}  // namespace detail

// Intermediates cached by forward for the exact backward pass.
struct ForwardTrace {
    std::vector<double> emb;       // D
    std::vector<double> step_pre;  // H, pre-activation of the first step layer
    std::vector<double> step_act;  // H, SiLU of step_pre
    std::vector<double> step_out;  // H, shared additive step vector e

    struct BlockTrace {
        std::vector<double> pre, act, out;  // H each
    };
    struct PositionTrace {
        std::size_t index;                // flat k * L + l
        std::vector<double> features;     // F
        std::vector<double> trunk_pre;    // H
        std::vector<double> trunk_act;    // H
        std::vector<BlockTrace> blocks;
    };
    std::vector<PositionTrace> positions;
};

// Denoise only the selected positions (the rest of the output stays zero).
// Each position's value is independent of the selection, so this equals the
// full forward restricted to the selected entries.
inline Matrix forward_at(const ModelParams& p, const DenoiserInput& in, const Mask& positions,
                         ForwardTrace* trace = nullptr) {
    check_input_shapes(p, in);
    if (positions.rows != p.K || positions.cols != p.L)
        throw std::invalid_argument("denoiser: position mask shape mismatch");
    const int H = p.H;
    const int F = p.feature_count();

    const std::vector<double> emb = step_embedding(in.t, p.D);
    std::vector<double> u1(H), su(H), e(H);
    matvec(p.w_step1, emb, u1);
    for (int j = 0; j < H; ++j) u1[j] += p.b_step1[j];
    for (int j = 0; j < H; ++j) su[j] = silu(u1[j]);
    matvec(p.w_step2, su, e);
    for (int j = 0; j < H; ++j) e[j] += p.b_step2[j];

    if (trace) {
        trace->emb = emb;
        trace->step_pre = u1;
        trace->step_act = su;
        trace->step_out = e;
        trace->positions.clear();
    }

    const detail::FeatureContext ctx = detail::build_feature_context(in);

    Matrix out(p.K, p.L);
    std::vector<double> phi(F), z0(H), h(H), a(H), s(H), delta(H);
    for (int k = 0; k < p.K; ++k) {
        for (int l = 0; l < p.L; ++l) {
            const std::size_t i = static_cast<std::size_t>(k) * p.L + l;
            if (!positions.data[i]) continue;
            detail::fill_features(in, ctx, k, l, phi);

            matvec(p.w_in, phi, z0);
            for (int j = 0; j < H; ++j) z0[j] += p.b_in[j] + e[j];
            for (int j = 0; j < H; ++j) h[j] = silu(z0[j]);

            ForwardTrace::PositionTrace* pt = nullptr;
            if (trace) {
                trace->positions.push_back({i, phi, z0, h, {}});
                pt = &trace->positions.back();
                pt->blocks.reserve(p.blocks.size());
            }
            for (const auto& blk : p.blocks) {
                matvec(blk.w1, h, a);
                for (int j = 0; j < H; ++j) a[j] += blk.b1[j];
                for (int j = 0; j < H; ++j) s[j] = silu(a[j]);
                matvec(blk.w2, s, delta);
                for (int j = 0; j < H; ++j) h[j] += delta[j] + blk.b2[j];
                if (pt) pt->blocks.push_back({a, s, h});
            }

            double y = p.b_out[0];
            for (int j = 0; j < H; ++j) y += p.w_out(0, j) * h[j];
            out.data[i] = y;
        }
    }
    return out;
}

inline Matrix forward(const ModelParams& p, const DenoiserInput& in, ForwardTrace* trace = nullptr) {
    return forward_at(p, in, Mask(p.K, p.L, 1), trace);
}

// Exact reverse-mode gradients of <upstream, forward(params, in)> with
// respect to every parameter tensor, given the trace of the matching
// forward call. Upstream must be zero outside the traced positions.
inline ModelGrads backward(const ModelParams& p, const DenoiserInput& in, const ForwardTrace& trace,
                           const Matrix& upstream) {
    check_input_shapes(p, in);
    if (upstream.rows != p.K || upstream.cols != p.L) throw std::invalid_argument("backward: upstream shape mismatch");
    const int H = p.H;
    const int B = p.block_count();

    ModelGrads g = zeros_like(p);
    std::vector<double> ge(H, 0.0);  // gradient into the shared step vector

    std::vector<double> gh(H), gs(H), ga(H), tmp(H), gz0(H);
    for (const auto& pt : trace.positions) {
        const double u = upstream.data[pt.index];
        if (u == 0.0) continue;

        const std::vector<double>& h_final = B > 0 ? pt.blocks.back().out : pt.trunk_act;
        for (int j = 0; j < H; ++j) g.w_out(0, j) += u * h_final[j];
        g.b_out[0] += u;
        for (int j = 0; j < H; ++j) gh[j] = u * p.w_out(0, j);

        for (int b = B - 1; b >= 0; --b) {
            const auto& blk = p.blocks[b];
            const auto& tb = pt.blocks[b];
            const std::vector<double>& h_prev = b > 0 ? pt.blocks[b - 1].out : pt.trunk_act;

            add_outer(g.blocks[b].w2, gh, tb.act);
            for (int j = 0; j < H; ++j) g.blocks[b].b2[j] += gh[j];
            matvec_transpose(blk.w2, gh, gs);
            for (int j = 0; j < H; ++j) ga[j] = gs[j] * silu_grad(tb.pre[j]);
            add_outer(g.blocks[b].w1, ga, h_prev);
            for (int j = 0; j < H; ++j) g.blocks[b].b1[j] += ga[j];
            matvec_transpose(blk.w1, ga, tmp);
            for (int j = 0; j < H; ++j) gh[j] += tmp[j];
        }

        for (int j = 0; j < H; ++j) gz0[j] = gh[j] * silu_grad(pt.trunk_pre[j]);
        add_outer(g.w_in, gz0, pt.features);
        for (int j = 0; j < H; ++j) {
            g.b_in[j] += gz0[j];
            ge[j] += gz0[j];  // shared step vector feeds every position
        }
    }

    // step-embedding projections, once for the whole call
    add_outer(g.w_step2, ge, trace.step_act);
    for (int j = 0; j < H; ++j) g.b_step2[j] += ge[j];
    std::vector<double> gsu(H), gu1(H);
    matvec_transpose(p.w_step2, ge, gsu);
    for (int j = 0; j < H; ++j) gu1[j] = gsu[j] * silu_grad(trace.step_pre[j]);
    add_outer(g.w_step1, gu1, trace.emb);
    for (int j = 0; j < H; ++j) g.b_step1[j] += gu1[j];

    return g;
}

inline ModelGrads backward(const ModelParams& p, const DenoiserInput& in, const Matrix& upstream) {
    ForwardTrace trace;
    forward(p, in, &trace);
    return backward(p, in, trace, upstream);
}

}  // namespace tsdiff
