#pragma once

#include "tsdiff/core.hpp"
#include "tsdiff/matrix.hpp"

namespace tsdiff {

// Rule-based imputers. Each returns a dense K x L matrix, leaves observed
// entries untouched, and fills missing positions per its rule. A row with
// no observed entry becomes zeros.

inline Matrix zero_impute(const Window& w) {
    Matrix out = w.values;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!w.obs_mask.data[i]) out.data[i] = 0.0;
    return out;
}

// each missing entry takes the nearest earlier observed value; a leading
// gap takes the first observed value in the row
inline Matrix forward_impute(const Window& w) {
    Matrix out = w.values;
    for (int k = 0; k < w.values.rows; ++k) {
        int first_obs = -1;
        for (int l = 0; l < w.values.cols; ++l)
            if (w.obs_mask(k, l)) {
                first_obs = l;
                break;
            }
        if (first_obs < 0) {
            for (int l = 0; l < w.values.cols; ++l) out(k, l) = 0.0;
            continue;
        }
        double last = w.values(k, first_obs);
        for (int l = 0; l < w.values.cols; ++l) {
            if (w.obs_mask(k, l))
                last = w.values(k, l);
            else
                out(k, l) = last;
        }
    }
    return out;
}

// interior gaps are linearly interpolated between the nearest observed
// neighbors; leading/trailing gaps hold the nearest observed value
inline Matrix linear_impute(const Window& w) {
    Matrix out = w.values;
    for (int k = 0; k < w.values.rows; ++k) {
        int prev = -1;  // last observed column seen
        for (int l = 0; l < w.values.cols; ++l) {
            if (!w.obs_mask(k, l)) continue;
            if (prev < 0) {
                for (int j = 0; j < l; ++j) out(k, j) = w.values(k, l);
            } else if (prev + 1 < l) {
                const double v0 = w.values(k, prev);
                const double v1 = w.values(k, l);
                const double span = l - prev;
                for (int j = prev + 1; j < l; ++j) out(k, j) = v0 + (v1 - v0) * (j - prev) / span;
            }
            prev = l;
        }
        if (prev < 0) {
            for (int l = 0; l < w.values.cols; ++l) out(k, l) = 0.0;
        } else {
            for (int l = prev + 1; l < w.values.cols; ++l) out(k, l) = w.values(k, prev);
        }
    }
    return out;
}

}  // namespace tsdiff
