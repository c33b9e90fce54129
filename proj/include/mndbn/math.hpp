#pragma once

// Dense row-major matrices, elementwise nonlinearities and a seeded
// generator. Everything is 64-bit and bit-reproducible for a given seed;
// no std:: distributions are used because their output is
// implementation-defined.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mndbn/error.hpp"

namespace mndbn {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        detail::require(data_.size() == rows * cols, "Matrix: data length must equal rows*cols");
    }
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            detail::require(r.size() == cols_, "Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }
    [[nodiscard]] std::span<double> flat() noexcept { return data_; }
    [[nodiscard]] std::span<const double> flat() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& storage() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Threading

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
    static std::atomic<unsigned> n{1};
    return n;
}
}  // namespace detail

inline void set_num_threads(unsigned n) { detail::thread_setting() = std::max(1u, n); }
inline unsigned num_threads() { return detail::thread_setting(); }

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks never share
/// output rows, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(num_threads(), n);
    if (workers <= 1 || n < 64) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
}

// ---------------------------------------------------------------------------
// Elementwise

/// Logistic function. Input clamped to [-500, 500]; output kept strictly
/// inside (0, 1).
inline double sigmoid(double z) noexcept {
    constexpr double below_one = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    z = std::clamp(z, -500.0, 500.0);
    return std::min(1.0 / (1.0 + std::exp(-z)), below_one);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) noexcept {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline bool all_finite(std::span<const double> v) noexcept {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()));
}
}  // namespace detail

/// A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    parallel_for(a.rows(), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            auto o = out.row(r);
            for (std::size_t k = 0; k < a.cols(); ++k) {
                const double v = a(r, k);
                if (v == 0.0) continue;
                const auto br = b.row(k);
                for (std::size_t c = 0; c < o.size(); ++c) o[c] += v * br[c];
            }
        }
    });
    return out;
}

/// A^T * B, summing over rows of A and B in index order.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    detail::require(a.rows() == b.rows(), "matmul_tn: row counts differ");
    Matrix out(a.cols(), b.cols());
    parallel_for(a.cols(), [&](std::size_t c0, std::size_t c1) {
        for (std::size_t k = 0; k < a.rows(); ++k) {
            const auto br = b.row(k);
            for (std::size_t i = c0; i < c1; ++i) {
                const double v = a(k, i);
                if (v == 0.0) continue;
                auto o = out.row(i);
                for (std::size_t c = 0; c < o.size(); ++c) o[c] += v * br[c];
            }
        }
    });
    return out;
}

/// A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    detail::require(a.cols() == b.cols(), "matmul_nt: column counts differ");
    Matrix out(a.rows(), b.rows());
    parallel_for(a.rows(), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = 0; c < b.rows(); ++c) out(r, c) = dot(a.row(r), b.row(c));
    });
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "add");
    Matrix out = a;
    auto o = out.flat();
    auto bf = b.flat();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bf[i];
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "sub");
    Matrix out = a;
    auto o = out.flat();
    auto bf = b.flat();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bf[i];
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.flat()) v *= s;
    return out;
}

/// y += alpha * x
inline void axpy(double alpha, const Matrix& x, Matrix& y) {
    detail::require_same_shape(x, y, "axpy");
    auto yf = y.flat();
    auto xf = x.flat();
    for (std::size_t i = 0; i < yf.size(); ++i) yf[i] += alpha * xf[i];
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    detail::require(x.size() == y.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline Vector row_sums(const Matrix& a) {
    Vector out(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (double v : a.row(r)) out[r] += v;
    return out;
}

inline Vector col_sums(const Matrix& a) {
    Vector out(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
    }
    return out;
}

inline Vector col_means(const Matrix& a) {
    detail::require(a.rows() > 0, "col_means: empty matrix");
    Vector out = col_sums(a);
    for (double& v : out) v /= static_cast<double>(a.rows());
    return out;
}

/// out(r, c) = a(r, c) + v[c]
inline void add_row_vector(Matrix& a, std::span<const double> v) {
    detail::require(a.cols() == v.size(), "add_row_vector: length mismatch");
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto row = a.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += v[c];
    }
}

inline Matrix sigmoid(Matrix a) {
    for (double& v : a.flat()) v = sigmoid(v);
    return a;
}

inline Matrix select_rows(const Matrix& a, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        detail::require(idx[r] < a.rows(), "select_rows: index out of range");
        std::copy_n(a.row(idx[r]).begin(), a.cols(), out.row(r).begin());
    }
    return out;
}

inline Matrix row_matrix(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

// ---------------------------------------------------------------------------
// Random numbers

/// xoshiro256** seeded through splitmix64. Same seed, same stream on every
/// platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    /// Independent stream for sub-task `index` under `key`, e.g. one per batch row.
    static Rng stream(std::uint64_t key, std::uint64_t index) {
        std::uint64_t s = key ^ (0x9E3779B97F4A7C15ULL * (index + 1));
        return Rng(splitmix64(s));
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, n), unbiased.
    std::uint64_t uniform_index(std::uint64_t n) {
        detail::require(n > 0, "uniform_index: n must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do x = next_u64();
        while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool operator==(const Rng&) const = default;

private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }
    static std::uint64_t splitmix64(std::uint64_t& s) noexcept {
        std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_[4]{};
};

/// 1 with probability p. Exactly one draw.
inline int sample_bernoulli(double p, Rng& rng) {
    detail::require(p >= 0.0 && p <= 1.0, "sample_bernoulli: p outside [0,1]");
    return rng.uniform() < p ? 1 : 0;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = stddev * rng.normal();
    return m;
}

}  // namespace mndbn
