#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tsdiff/core.hpp"
#include "tsdiff/matrix.hpp"
#include "tsdiff/metrics.hpp"
#include "tsdiff/rng.hpp"

namespace tsdiff {

// Per feature row: mean, std (population), last value, least-squares slope
// over time, concatenated in that order. Consumes only the imputed values
// matrix, never masks or labels.
inline std::vector<double> featurize(const Matrix& imputed) {
    const int K = imputed.rows, L = imputed.cols;
    std::vector<double> f;
    f.reserve(4 * K);
    const double lbar = (L - 1) / 2.0;
    double sxx = 0.0;
    for (int l = 0; l < L; ++l) sxx += (l - lbar) * (l - lbar);
    for (int k = 0; k < K; ++k) {
        double mean = 0.0;
        for (int l = 0; l < L; ++l) mean += imputed(k, l);
        mean /= L;
        double var = 0.0, sxy = 0.0;
        for (int l = 0; l < L; ++l) {
            const double d = imputed(k, l) - mean;
            var += d * d;
            sxy += (l - lbar) * d;
        }
        f.push_back(mean);
        f.push_back(std::sqrt(var / L));
        f.push_back(imputed(k, L - 1));
        f.push_back(sxx > 0.0 ? sxy / sxx : 0.0);
    }
    return f;
}

struct LogisticModel {
    std::vector<double> w;
    double b = 0.0;

    double probability(const std::vector<double>& x) const {
        double z = b;
        for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * x[i];
        return 1.0 / (1.0 + std::exp(-z));
    }
};

inline double logistic_loss(const LogisticModel& m, const std::vector<std::vector<double>>& X,
                            const std::vector<int>& y) {
    double loss = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double p = m.probability(X[i]);
        const double eps = 1e-12;  // keep log finite at saturated probabilities
        loss += y[i] ? -std::log(std::max(p, eps)) : -std::log(std::max(1.0 - p, eps));
    }
    return loss / static_cast<double>(X.size());
}

inline void logistic_grad(const LogisticModel& m, const std::vector<std::vector<double>>& X,
                          const std::vector<int>& y, std::vector<double>& grad_w, double& grad_b) {
    grad_w.assign(m.w.size(), 0.0);
    grad_b = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double err = m.probability(X[i]) - (y[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < m.w.size(); ++j) grad_w[j] += err * X[i][j];
        grad_b += err;
    }
    const double inv_n = 1.0 / static_cast<double>(X.size());
    for (auto& g : grad_w) g *= inv_n;
    grad_b *= inv_n;
}

// Full-batch gradient descent on cross-entropy from zero initialization.
inline LogisticModel train_classifier(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                                      double lr, int epochs, std::uint64_t /*seed*/ = 0) {
    if (X.empty() || X.size() != y.size()) throw DataError("train_classifier: bad dataset");
    bool has_pos = false, has_neg = false;
    for (int v : y) (v ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw DataError("train_classifier: need at least one example of each class");

    LogisticModel m;
    m.w.assign(X.front().size(), 0.0);
    std::vector<double> gw;
    double gb = 0.0;
    for (int e = 0; e < epochs; ++e) {
        logistic_grad(m, X, y, gw, gb);
        for (std::size_t j = 0; j < m.w.size(); ++j) m.w[j] -= lr * gw[j];
        m.b -= lr * gb;
    }
    return m;
}

struct SplitIndices {
    std::vector<int> train;
    std::vector<int> test;
};

// Disjoint train/test split by disk: every disk_id lands on exactly one
// side.
inline SplitIndices split_by_disk(const std::vector<Window>& windows, double test_fraction, Rng& rng) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("split_by_disk: bad test_fraction");
    std::vector<int> idx(windows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(test_fraction * windows.size()));
    SplitIndices s;
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_test ? s.test : s.train).push_back(idx[i]);
    return s;
}

struct ClassifierConfig {
    double lr = 0.1;
    int epochs = 500;
    std::uint64_t seed = 0;
    double threshold = 0.5;  // ties predict negative
};

// End-to-end harness: impute every window, featurize, fit the classifier on
// the train split, report precision/recall/F1 on the test split.
inline PRF1 evaluate_pipeline(const std::vector<Window>& windows,
                              const std::function<Matrix(const Window&)>& imputer, const SplitIndices& split,
                              const ClassifierConfig& ccfg) {
    if (split.train.empty() || split.test.empty()) throw DataError("evaluate_pipeline: empty split");

    std::vector<std::vector<double>> feats(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) feats[i] = featurize(imputer(windows[i]));

    std::vector<std::vector<double>> Xtr;
    std::vector<int> ytr;
    for (int i : split.train) {
        Xtr.push_back(feats[i]);
        ytr.push_back(windows[i].label);
    }
    const LogisticModel m = train_classifier(Xtr, ytr, ccfg.lr, ccfg.epochs, ccfg.seed);

    std::vector<int> pred, truth;
    for (int i : split.test) {
        pred.push_back(m.probability(feats[i]) > ccfg.threshold ? 1 : 0);
        truth.push_back(windows[i].label);
    }
    return prf1(pred, truth);
}

}  // namespace tsdiff
