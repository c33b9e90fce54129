#pragma once

// Binary-binary RBM: energy, factorized conditionals, k-step Gibbs chains,
// contrastive-divergence statistics, the momentum update, and exact
// enumeration routines (partition function, log-likelihood gradient) for
// models small enough to enumerate.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mndbn/error.hpp"
#include "mndbn/math.hpp"

namespace mndbn {

/// Parameters of one RBM: w is visible x hidden, b_vis the visible biases,
/// a_hid the hidden biases. Shapes are fixed at construction; code that
/// mutates the fields must keep them.
struct Rbm {
    Matrix w;
    Vector b_vis;
    Vector a_hid;

    Rbm() = default;
    Rbm(std::size_t visible, std::size_t hidden) : w(visible, hidden), b_vis(visible, 0.0), a_hid(hidden, 0.0) {}
    Rbm(Matrix weights, Vector visible_bias, Vector hidden_bias)
        : w(std::move(weights)), b_vis(std::move(visible_bias)), a_hid(std::move(hidden_bias)) {
        detail::require(w.rows() == b_vis.size() && w.cols() == a_hid.size(), "Rbm: bias lengths must match w");
    }

    /// Gaussian weights with the given standard deviation, zero biases.
    static Rbm random(std::size_t visible, std::size_t hidden, Rng& rng, double weight_std = 0.01) {
        Rbm m(visible, hidden);
        m.w = gaussian_matrix(visible, hidden, weight_std, rng);
        return m;
    }

    [[nodiscard]] std::size_t num_visible() const noexcept { return w.rows(); }
    [[nodiscard]] std::size_t num_hidden() const noexcept { return w.cols(); }

    [[nodiscard]] bool finite() const {
        return all_finite(w.flat()) && all_finite(b_vis) && all_finite(a_hid);
    }

    bool operator==(const Rbm&) const = default;
};

/// Same shape as the parameters. Used for CD estimates, exact gradients and
/// momentum velocities.
struct CdStats {
    Matrix dw;
    Vector db_vis;
    Vector da_hid;
    std::size_t batch_size = 0;

    static CdStats zeros_like(const Rbm& m) {
        return {Matrix(m.num_visible(), m.num_hidden()), Vector(m.num_visible(), 0.0),
                Vector(m.num_hidden(), 0.0), 0};
    }
};

namespace detail {
inline void require_shape(const Rbm& m, const CdStats& s, const char* op) {
    require(s.dw.rows() == m.num_visible() && s.dw.cols() == m.num_hidden() &&
                s.db_vis.size() == m.num_visible() && s.da_hid.size() == m.num_hidden(),
            std::string(op) + ": statistics do not match model shape");
}
}  // namespace detail

inline double energy(const Rbm& m, std::span<const double> x, std::span<const double> h) {
    detail::require(x.size() == m.num_visible() && h.size() == m.num_hidden(), "energy: length mismatch");
    double e = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) continue;
        const auto wi = m.w.row(i);
        for (std::size_t j = 0; j < h.size(); ++j) e -= x[i] * h[j] * wi[j];
    }
    for (std::size_t i = 0; i < x.size(); ++i) e -= m.b_vis[i] * x[i];
    for (std::size_t j = 0; j < h.size(); ++j) e -= m.a_hid[j] * h[j];
    return e;
}

/// p(h_j = 1 | x) = sigmoid(a_j + sum_i x_i w_ij)
inline Vector prob_h_given_x(const Rbm& m, std::span<const double> x) {
    detail::require(x.size() == m.num_visible(), "prob_h_given_x: length mismatch");
    Vector out = m.a_hid;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) continue;
        axpy(x[i], m.w.row(i), out);
    }
    for (double& v : out) v = sigmoid(v);
    return out;
}

/// p(x_i = 1 | h) = sigmoid(b_i + sum_j h_j w_ij)
inline Vector prob_x_given_h(const Rbm& m, std::span<const double> h) {
    detail::require(h.size() == m.num_hidden(), "prob_x_given_h: length mismatch");
    Vector out(m.num_visible());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(m.b_vis[i] + dot(m.w.row(i), h));
    return out;
}

/// Row-wise p(h | x) for a batch (L x I) -> L x J. Bit-identical to the
/// per-sample overload on each row.
inline Matrix prob_h_given_x(const Rbm& m, const Matrix& batch) {
    detail::require(batch.cols() == m.num_visible(), "prob_h_given_x: batch width mismatch");
    Matrix out(batch.rows(), m.num_hidden());
    parallel_for(batch.rows(), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const Vector p = prob_h_given_x(m, batch.row(r));
            std::copy(p.begin(), p.end(), out.row(r).begin());
        }
    });
    return out;
}

/// Row-wise p(x | h) for a batch (L x J) -> L x I.
inline Matrix prob_x_given_h(const Rbm& m, const Matrix& hidden) {
    detail::require(hidden.cols() == m.num_hidden(), "prob_x_given_h: batch width mismatch");
    Matrix out(hidden.rows(), m.num_visible());
    parallel_for(hidden.rows(), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const Vector p = prob_x_given_h(m, hidden.row(r));
            std::copy(p.begin(), p.end(), out.row(r).begin());
        }
    });
    return out;
}

struct GibbsResult {
    Vector x_tilde;        ///< final reconstruction, as probabilities
    Vector h0_probs;       ///< p(h | x0)
    Vector h_tilde_probs;  ///< p(h | x_tilde)
};

/// k alternating steps starting at x0: sample h ~ p(h|x), then set x to
/// p(x|h). Visibles stay mean-field; hiddens are sampled. Consumes exactly
/// k * J draws.
inline GibbsResult gibbs_chain(const Rbm& m, std::span<const double> x0, std::size_t k, Rng& rng) {
    detail::require(k >= 1, "gibbs_chain: k must be >= 1");
    GibbsResult r;
    r.h0_probs = prob_h_given_x(m, x0);
    Vector h_probs = r.h0_probs;
    Vector h_sample(m.num_hidden());
    for (std::size_t step = 0; step < k; ++step) {
        for (std::size_t j = 0; j < h_sample.size(); ++j) h_sample[j] = sample_bernoulli(h_probs[j], rng);
        r.x_tilde = prob_x_given_h(m, h_sample);
        h_probs = prob_h_given_x(m, r.x_tilde);
    }
    r.h_tilde_probs = std::move(h_probs);
    return r;
}

/// CD statistics together with the intermediate per-sample quantities.
struct CdResult {
    CdStats stats;
    Matrix h0_probs;  ///< L x J, p(h | x^l)
    Matrix x_tilde;   ///< L x I reconstructions
};

/// CD-k over a mini-batch. Draws one key from `rng`; row l runs its chain on
/// Rng::stream(key, l), so rows are independent of evaluation order.
inline CdResult cd_step_detailed(const Rbm& m, const Matrix& batch, std::size_t k, Rng& rng) {
    detail::require(batch.cols() == m.num_visible(), "cd_step: batch width must equal visible size");
    detail::require(batch.rows() > 0, "cd_step: empty batch");
    const std::size_t L = batch.rows();
    const std::uint64_t key = rng.next_u64();

    CdResult r;
    r.h0_probs = Matrix(L, m.num_hidden());
    r.x_tilde = Matrix(L, m.num_visible());
    Matrix h_tilde(L, m.num_hidden());
    parallel_for(L, [&](std::size_t l0, std::size_t l1) {
        for (std::size_t l = l0; l < l1; ++l) {
            Rng row_rng = Rng::stream(key, l);
            GibbsResult g = gibbs_chain(m, batch.row(l), k, row_rng);
            std::copy(g.h0_probs.begin(), g.h0_probs.end(), r.h0_probs.row(l).begin());
            std::copy(g.x_tilde.begin(), g.x_tilde.end(), r.x_tilde.row(l).begin());
            std::copy(g.h_tilde_probs.begin(), g.h_tilde_probs.end(), h_tilde.row(l).begin());
        }
    });

    const double inv_l = 1.0 / static_cast<double>(L);
    r.stats.dw = scale(sub(matmul_tn(batch, r.h0_probs), matmul_tn(r.x_tilde, h_tilde)), inv_l);
    r.stats.db_vis = col_means(sub(batch, r.x_tilde));
    r.stats.da_hid = col_means(sub(r.h0_probs, h_tilde));
    r.stats.batch_size = L;
    return r;
}

/// Contrastive-divergence estimate of the log-likelihood gradient (ascent
/// direction) averaged over the batch rows.
inline CdStats cd_step(const Rbm& m, const Matrix& batch, std::size_t k, Rng& rng) {
    return cd_step_detailed(m, batch, k, rng).stats;
}

/// velocity <- momentum * velocity + lr * stats; parameters += velocity.
inline void apply_update(Rbm& m, const CdStats& stats, double lr, double momentum, CdStats& velocity) {
    detail::require(lr > 0.0, "apply_update: lr must be positive");
    detail::require(momentum >= 0.0 && momentum < 1.0, "apply_update: momentum must be in [0, 1)");
    detail::require_shape(m, stats, "apply_update");
    detail::require_shape(m, velocity, "apply_update");

    auto step = [&](std::span<double> v, std::span<const double> g, std::span<double> p) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = momentum * v[i] + lr * g[i];
            p[i] += v[i];
        }
    };
    step(velocity.dw.flat(), stats.dw.flat(), m.w.flat());
    step(velocity.db_vis, stats.db_vis, m.b_vis);
    step(velocity.da_hid, stats.da_hid, m.a_hid);
}

/// F(x) = -b.x - sum_j softplus(a_j + x.w_j); p(x) = e^{-F(x)} / Z.
inline double free_energy(const Rbm& m, std::span<const double> x) {
    detail::require(x.size() == m.num_visible(), "free_energy: length mismatch");
    Vector act = m.a_hid;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] != 0.0) axpy(x[i], m.w.row(i), act);
    double f = -dot(m.b_vis, x);
    for (double v : act) f -= softplus(v);
    return f;
}

// ---------------------------------------------------------------------------
// Exact enumeration (tiny models only)

inline constexpr std::size_t max_enumeration_units = 20;

namespace detail {
inline void require_enumerable(const Rbm& m, const char* op) {
    if (m.num_visible() + m.num_hidden() > max_enumeration_units)
        throw refusal_error(std::string(op) + ": " + std::to_string(m.num_visible()) + " visible + " +
                            std::to_string(m.num_hidden()) + " hidden units exceed the enumeration limit of " +
                            std::to_string(max_enumeration_units));
}

inline void bits_to_vector(std::uint64_t bits, Vector& out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>((bits >> i) & 1U);
}
}  // namespace detail

/// log Z by summing e^{-E(x,h)} over every binary configuration.
inline double log_partition_function(const Rbm& m) {
    detail::require_enumerable(m, "log_partition_function");
    const std::size_t I = m.num_visible();
    const std::size_t J = m.num_hidden();
    Vector x(I), h(J);
    Vector neg_energy;
    neg_energy.reserve(std::size_t{1} << (I + J));
    for (std::uint64_t xb = 0; xb < (std::uint64_t{1} << I); ++xb) {
        detail::bits_to_vector(xb, x);
        for (std::uint64_t hb = 0; hb < (std::uint64_t{1} << J); ++hb) {
            detail::bits_to_vector(hb, h);
            neg_energy.push_back(-energy(m, x, h));
        }
    }
    return log_sum_exp(neg_energy);
}

inline double exact_partition_function(const Rbm& m) { return std::exp(log_partition_function(m)); }

/// log p(x) using the free energy and the enumerated partition function.
inline double exact_log_prob(const Rbm& m, std::span<const double> x) {
    return -free_energy(m, x) - log_partition_function(m);
}

/// Gradient of log p(x) with respect to (w, b, a), computed by enumerating the
/// model expectation. Data term minus model term, i.e. the ascent direction.
inline CdStats exact_log_likelihood_grad(const Rbm& m, std::span<const double> x) {
    detail::require_enumerable(m, "exact_log_likelihood_grad");
    detail::require(x.size() == m.num_visible(), "exact_log_likelihood_grad: length mismatch");
    const std::size_t I = m.num_visible();
    const std::size_t J = m.num_hidden();

    CdStats g = CdStats::zeros_like(m);
    g.batch_size = 1;
    const Vector ph = prob_h_given_x(m, x);
    for (std::size_t i = 0; i < I; ++i) {
        g.db_vis[i] = x[i];
        for (std::size_t j = 0; j < J; ++j) g.dw(i, j) = x[i] * ph[j];
    }
    g.da_hid = ph;

    const double log_z = log_partition_function(m);
    Vector xs(I), hs(J);
    for (std::uint64_t xb = 0; xb < (std::uint64_t{1} << I); ++xb) {
        detail::bits_to_vector(xb, xs);
        for (std::uint64_t hb = 0; hb < (std::uint64_t{1} << J); ++hb) {
            detail::bits_to_vector(hb, hs);
            const double p = std::exp(-energy(m, xs, hs) - log_z);
            for (std::size_t i = 0; i < I; ++i) {
                if (xs[i] == 0.0) continue;
                g.db_vis[i] -= p;
                for (std::size_t j = 0; j < J; ++j) g.dw(i, j) -= p * hs[j];
            }
            for (std::size_t j = 0; j < J; ++j) g.da_hid[j] -= p * hs[j];
        }
    }
    return g;
}

}  // namespace mndbn
