#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tsdiff/matrix.hpp"
#include "tsdiff/stats.hpp"

namespace tsdiff {

// Mean absolute error over the target entries.
inline double mae(const Matrix& pred, const Matrix& truth, const Mask& target_mask) {
    if (!pred.same_shape(truth) || pred.rows != target_mask.rows || pred.cols != target_mask.cols)
        throw std::invalid_argument("mae: shape mismatch");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!target_mask.data[i]) continue;
        acc += std::abs(pred.data[i] - truth.data[i]);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("mae: empty target mask");
    return acc / static_cast<double>(n);
}

// CRPS approximated by averaged pinball losses on the 19-level quantile
// grid {0.05, 0.10, ..., 0.95}. Per entry:
//   crps = (1/19) * sum_q 2 * rho_q(truth - Fhat^-1(q))
// accumulated with integer level weights (20 * 2 * rho at level i/20 is
// u * i for u >= 0 and u * (i - 20) otherwise), so a point mass scores
// exactly |sample - truth|. Reported value is the mean over target entries.
inline double crps(const std::vector<Matrix>& samples, const Matrix& truth, const Mask& target_mask) {
    if (samples.empty()) throw std::invalid_argument("crps: need at least one sample");
    for (const auto& s : samples)
        if (!s.same_shape(truth)) throw std::invalid_argument("crps: sample shape mismatch");
    if (truth.rows != target_mask.rows || truth.cols != target_mask.cols)
        throw std::invalid_argument("crps: mask shape mismatch");

    const std::size_t n_samples = samples.size();
    std::vector<double> buf(n_samples);
    double acc = 0.0;
    std::size_t n_entries = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!target_mask.data[i]) continue;
        for (std::size_t r = 0; r < n_samples; ++r) buf[r] = samples[r].data[i];
        std::sort(buf.begin(), buf.end());
        double entry = 0.0;
        for (int lvl = 1; lvl <= 19; ++lvl) {
            const double q = lvl / 20.0;
            const double u = truth.data[i] - linear_quantile(buf, q);
            entry += u >= 0.0 ? u * lvl : u * (lvl - 20);
        }
        acc += entry / 190.0;
        ++n_entries;
    }
    if (n_entries == 0) throw std::invalid_argument("crps: empty target mask");
    return acc / static_cast<double>(n_entries);
}

struct PRF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_defined = true;  // false when there were no positive predictions
    bool recall_defined = true;     // false when there were no positive truths
};

inline PRF1 prf1(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size()) throw std::invalid_argument("prf1: length mismatch");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] != 0;
        const bool t = truth[i] != 0;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    PRF1 r;
    if (tp + fp == 0) {
        r.precision = 0.0;
        r.precision_defined = false;
    } else {
        r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
        r.recall = 0.0;
        r.recall_defined = false;
    } else {
        r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

}  // namespace tsdiff
