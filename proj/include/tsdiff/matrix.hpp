#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace tsdiff {

// Dense row-major grid, rows = features (K), cols = timestamps (L).
template <typename T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int r, int c, T fill = T{})
        : rows(r), cols(c), data(static_cast<std::size_t>(r < 0 ? 0 : r) * static_cast<std::size_t>(c < 0 ? 0 : c), fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Grid: negative dimensions");
    }

    T& operator()(int r, int c) {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return data[static_cast<std::size_t>(r) * cols + c];
    }
    const T& operator()(int r, int c) const {
        assert(r >= 0 && r < rows && c >= 0 && c < cols);
        return data[static_cast<std::size_t>(r) * cols + c];
    }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Matrix = Grid<double>;
using Mask = Grid<std::uint8_t>;

inline std::size_t count_ones(const Mask& m) {
    std::size_t n = 0;
    for (auto v : m.data) n += (v != 0);
    return n;
}

// y = W x, W is (rows x cols), len(x) = cols, len(y) = rows
inline void matvec(const Matrix& W, std::span<const double> x, std::span<double> y) {
    assert(static_cast<int>(x.size()) == W.cols && static_cast<int>(y.size()) == W.rows);
    const double* w = W.data.data();
    for (int r = 0; r < W.rows; ++r) {
        const double* row = w + static_cast<std::size_t>(r) * W.cols;
        double acc = 0.0;
        for (int c = 0; c < W.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

// x = W^T y
inline void matvec_transpose(const Matrix& W, std::span<const double> y, std::span<double> x) {
    assert(static_cast<int>(y.size()) == W.rows && static_cast<int>(x.size()) == W.cols);
    std::fill(x.begin(), x.end(), 0.0);
    const double* w = W.data.data();
    for (int r = 0; r < W.rows; ++r) {
        const double g = y[r];
        if (g == 0.0) continue;
        const double* row = w + static_cast<std::size_t>(r) * W.cols;
        for (int c = 0; c < W.cols; ++c) x[c] += row[c] * g;
    }
}

// G += y x^T
inline void add_outer(Matrix& G, std::span<const double> y, std::span<const double> x) {
    assert(static_cast<int>(y.size()) == G.rows && static_cast<int>(x.size()) == G.cols);
    double* g = G.data.data();
    for (int r = 0; r < G.rows; ++r) {
        const double yr = y[r];
        double* row = g + static_cast<std::size_t>(r) * G.cols;
        if (yr == 0.0) continue;
        for (int c = 0; c < G.cols; ++c) row[c] += yr * x[c];
    }
}

}  // namespace tsdiff
