#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsdiff/core.hpp"
#include "tsdiff/rng.hpp"

namespace tsdiff {

// Synthetic per-disk health telemetry. Each feature is a mean-reverting
// AR(1) series around a per-disk baseline; the innovations share a common
// factor across features (loading `factor_loading`), which gives the
// cross-feature dependency a multivariate imputer can exploit. Failing
// disks drift upward on two randomly chosen degrading features after a
// random onset, with doubled innovation noise there.
struct GenConfig {
    int n_disks = 100;
    int K = 8;
    int L = 72;
    double failure_rate = 0.15;
    double ar_coefficient = 0.8;  // phi, |phi| < 1
    double noise_scale = 1.0;
    double drift_rate = 0.15;     // per hour, in units of the feature scale
    double factor_loading = 0.9;  // weight of the shared innovation factor
    std::uint64_t seed = 0;
    // onset is drawn uniformly over [L/4, 3L/4]; per-disk baselines are
    // mu_k ~ U(45, 55) and scales sigma_k ~ U(0.5, 3)

    void validate() const {
        if (n_disks < 1) throw ConfigError("gen: n_disks must be >= 1");
        if (K < 1) throw ConfigError("gen: K must be >= 1");
        if (L < 4) throw ConfigError("gen: L must be >= 4");
        if (!(failure_rate >= 0.0 && failure_rate <= 1.0)) throw ConfigError("gen: failure_rate outside [0, 1]");
        if (!(std::abs(ar_coefficient) < 1.0)) throw ConfigError("gen: |ar_coefficient| must be < 1");
        if (!(factor_loading >= 0.0 && factor_loading <= 1.0)) throw ConfigError("gen: factor_loading outside [0, 1]");
    }
};

inline std::vector<Window> generate(const GenConfig& cfg) {
    cfg.validate();
    std::vector<Window> out;
    out.reserve(cfg.n_disks);
    const double lam = cfg.factor_loading;
    const double lam_res = std::sqrt(1.0 - lam * lam);

    for (int d = 0; d < cfg.n_disks; ++d) {
        Rng rng(derive_seed(cfg.seed, "disk", static_cast<std::uint64_t>(d)));
        Window w;
        char id[32];
        std::snprintf(id, sizeof id, "disk-%06d", d);
        w.disk_id = id;
        w.start_time = 480000 + static_cast<std::int64_t>(d) * cfg.L;
        w.values = Matrix(cfg.K, cfg.L);
        w.obs_mask = Mask(cfg.K, cfg.L, 1);

        std::vector<double> mu(cfg.K), sigma(cfg.K);
        for (int k = 0; k < cfg.K; ++k) mu[k] = rng.uniform(45.0, 55.0);
        for (int k = 0; k < cfg.K; ++k) sigma[k] = rng.uniform(0.5, 3.0);

        w.label = rng.bernoulli(cfg.failure_rate) ? 1 : 0;
        int deg0 = rng.uniform_int(0, cfg.K - 1);
        int deg1 = cfg.K > 1 ? rng.uniform_int(0, cfg.K - 2) : deg0;
        if (cfg.K > 1 && deg1 >= deg0) ++deg1;
        const int onset = rng.uniform_int(cfg.L / 4, 3 * cfg.L / 4);

        auto degrading = [&](int k) { return w.label == 1 && (k == deg0 || k == deg1); };

        for (int l = 0; l < cfg.L; ++l) {
            const double g = rng.normal();  // shared factor for this timestamp
            for (int k = 0; k < cfg.K; ++k) {
                double z = lam * g + lam_res * rng.normal();
                if (degrading(k) && l > onset) z *= 2.0;
                const double noise = cfg.noise_scale * sigma[k] * z;
                double x = l == 0 ? mu[k] + noise
                                  : mu[k] + cfg.ar_coefficient * (w.values(k, l - 1) - mu[k]) + noise;
                if (degrading(k)) x += cfg.drift_rate * sigma[k] * std::max(0, l - onset);
                w.values(k, l) = x;
            }
        }
        out.push_back(std::move(w));
    }
    return out;
}

enum class MissingPattern { mcar, burst };

inline MissingPattern missing_pattern_from_string(const std::string& s) {
    if (s == "mcar") return MissingPattern::mcar;
    if (s == "burst") return MissingPattern::burst;
    throw ConfigError("unknown missingness pattern: " + s);
}

// Windows with injected missingness plus the original values, kept aside as
// ground truth for end-to-end imputation scoring.
struct MissingDataset {
    std::vector<Window> windows;
    std::vector<Matrix> truth;
};

inline MissingDataset inject_missing(const std::vector<Window>& dataset, double ratio, MissingPattern pattern,
                                     Rng& rng) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("inject_missing: ratio must be in [0, 1)");
    MissingDataset out;
    out.windows = dataset;
    out.truth.reserve(dataset.size());
    for (const auto& w : dataset) out.truth.push_back(w.values);
    if (ratio == 0.0) return out;

    for (auto& w : out.windows) {
        const int K = w.values.rows, L = w.values.cols;
        if (pattern == MissingPattern::mcar) {
            for (std::size_t i = 0; i < w.values.size(); ++i) {
                if (w.obs_mask.data[i] && rng.bernoulli(ratio)) {
                    w.obs_mask.data[i] = 0;
                    w.values.data[i] = missing_value();
                }
            }
        } else {
            // contiguous runs of geometric length (mean 6) per feature row
            // until the row's missing fraction reaches the ratio
            for (int k = 0; k < K; ++k) {
                auto missing_in_row = [&] {
                    int n = 0;
                    for (int l = 0; l < L; ++l) n += !w.obs_mask(k, l);
                    return n;
                };
                while (missing_in_row() < ratio * L) {
                    std::vector<int> observed;
                    for (int l = 0; l < L; ++l)
                        if (w.obs_mask(k, l)) observed.push_back(l);
                    if (observed.empty()) break;
                    const int start = observed[rng.below(observed.size())];
                    double u = rng.uniform();
                    while (u == 0.0) u = rng.uniform();
                    const int run = 1 + static_cast<int>(std::log(u) / std::log(1.0 - 1.0 / 6.0));
                    for (int l = start; l < std::min(L, start + run); ++l) {
                        w.obs_mask(k, l) = 0;
                        w.values(k, l) = missing_value();
                    }
                }
            }
        }
    }
    return out;
}

// Per-feature z-scoring statistics from observed training entries only.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<int> floored;  // features whose std hit the floor

    static constexpr double kStdFloor = 1e-6;
};

inline NormStats fit_norm(const std::vector<Window>& train) {
    if (train.empty()) throw DataError("fit_norm: empty training set");
    const int K = train.front().features();
    NormStats stats;
    stats.mean.assign(K, 0.0);
    stats.std.assign(K, 0.0);
    std::vector<double> sum(K, 0.0), sum2(K, 0.0);
    std::vector<std::size_t> n(K, 0);
    for (const auto& w : train) {
        if (w.features() != K) throw DataError("fit_norm: windows disagree on K");
        for (int k = 0; k < K; ++k)
            for (int l = 0; l < w.length(); ++l) {
                if (!w.obs_mask(k, l)) continue;
                const double v = w.values(k, l);
                sum[k] += v;
                sum2[k] += v * v;
                ++n[k];
            }
    }
    for (int k = 0; k < K; ++k) {
        if (n[k] == 0) {
            stats.mean[k] = 0.0;
            stats.std[k] = NormStats::kStdFloor;
            stats.floored.push_back(k);
            continue;
        }
        const double m = sum[k] / static_cast<double>(n[k]);
        const double var = std::max(0.0, sum2[k] / static_cast<double>(n[k]) - m * m);
        stats.mean[k] = m;
        double s = std::sqrt(var);
        if (s < NormStats::kStdFloor) {
            s = NormStats::kStdFloor;
            stats.floored.push_back(k);
        }
        stats.std[k] = s;
    }
    return stats;
}

inline Window apply_norm(const Window& w, const NormStats& stats) {
    if (w.features() != static_cast<int>(stats.mean.size())) throw DataError("apply_norm: K mismatch");
    Window out = w;
    for (int k = 0; k < w.features(); ++k)
        for (int l = 0; l < w.length(); ++l)
            if (w.obs_mask(k, l)) out.values(k, l) = (w.values(k, l) - stats.mean[k]) / stats.std[k];
    return out;
}

inline Matrix invert_norm(const Matrix& m, const NormStats& stats) {
    if (m.rows != static_cast<int>(stats.mean.size())) throw DataError("invert_norm: K mismatch");
    Matrix out = m;
    for (int k = 0; k < m.rows; ++k)
        for (int l = 0; l < m.cols; ++l) out(k, l) = m(k, l) * stats.std[k] + stats.mean[k];
    return out;
}

// ---------------------------------------------------------------------------
// NDJSON dataset format: one UTF-8 JSON object per line,
//   {"disk_id", "label", "start_time", "K", "L", "values"}
// with values row-major of length K*L and null at missing positions.

inline void write_ndjson(const std::vector<Window>& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("write_ndjson: cannot open " + path);
    for (const auto& w : dataset) {
        nlohmann::ordered_json rec;
        rec["disk_id"] = w.disk_id;
        rec["label"] = w.label;
        rec["start_time"] = w.start_time;
        rec["K"] = w.values.rows;
        rec["L"] = w.values.cols;
        nlohmann::ordered_json vals = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < w.values.size(); ++i) {
            if (w.obs_mask.data[i])
                vals.push_back(w.values.data[i]);
            else
                vals.push_back(nullptr);
        }
        rec["values"] = std::move(vals);
        out << rec.dump() << '\n';
    }
    if (!out) throw DataError("write_ndjson: write failed: " + path);
}

inline std::vector<Window> read_ndjson(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_ndjson: cannot open " + path);
    std::vector<Window> dataset;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        nlohmann::ordered_json rec;
        try {
            rec = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": parse failure: " + e.what());
        }
        try {
            Window w;
            w.disk_id = rec.at("disk_id").get<std::string>();
            w.label = rec.at("label").get<int>();
            w.start_time = rec.at("start_time").get<std::int64_t>();
            const int K = rec.at("K").get<int>();
            const int L = rec.at("L").get<int>();
            if (K < 1 || L < 1) throw DataError(where + ": K and L must be >= 1");
            const auto& vals = rec.at("values");
            if (static_cast<int>(vals.size()) != K * L)
                throw DataError(where + ": values length " + std::to_string(vals.size()) + " != K*L = " +
                                std::to_string(K * L));
            w.values = Matrix(K, L);
            w.obs_mask = Mask(K, L);
            for (int i = 0; i < K * L; ++i) {
                if (vals[i].is_null()) {
                    w.values.data[i] = missing_value();
                    w.obs_mask.data[i] = 0;
                } else {
                    w.values.data[i] = vals[i].get<double>();
                    w.obs_mask.data[i] = 1;
                }
            }
            dataset.push_back(std::move(w));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": bad record: " + e.what());
        }
    }
    return dataset;
}

}  // namespace tsdiff
