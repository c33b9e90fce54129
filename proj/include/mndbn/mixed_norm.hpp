#pragma once

// l1,2 group penalty on hidden activation probabilities and the two-step
// regularized RBM training loop:
//   1. a contrastive-divergence update of all parameters;
//   2. a descent step on lambda * sum_G ||p_G(h=1|x)||_2 for w and a_hid,
//      using probabilities recomputed from the step-1 parameters.
// Visible biases are never regularized.

#include <chrono>
#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mndbn/data.hpp"
#include "mndbn/error.hpp"
#include "mndbn/groups.hpp"
#include "mndbn/math.hpp"
#include "mndbn/rbm.hpp"

namespace mndbn {

inline constexpr double default_norm_floor = 1e-8;

struct PenaltyConfig {
    double lambda = 0.0;
    GroupPartition partition;
    double epsilon = default_norm_floor;

    void validate() const {
        if (!(lambda >= 0.0)) throw config_error("penalty lambda must be >= 0");
        if (!(epsilon > 0.0 && epsilon <= 1e-6)) throw config_error("penalty epsilon must be in (0, 1e-6]");
    }
};

/// Serializable description of a layer's penalty; the partition is built
/// once the layer size is known. group_size 0 means one group spanning the
/// whole layer.
struct PenaltySpec {
    double lambda = 0.0;
    std::size_t group_size = 0;
    double overlap_fraction = 0.0;
    double epsilon = default_norm_floor;

    bool operator==(const PenaltySpec&) const = default;
};

inline PenaltyConfig make_penalty(const PenaltySpec& spec, std::size_t layer_size) {
    const std::size_t g = spec.group_size == 0 ? layer_size : spec.group_size;
    PenaltyConfig cfg{spec.lambda, make_overlapping(layer_size, g, spec.overlap_fraction), spec.epsilon};
    cfg.validate();
    return cfg;
}

/// sum over groups of the Euclidean norm of the group's (expanded) entries.
inline double mixed_norm(std::span<const double> h_probs, const PenaltyConfig& cfg) {
    const Vector aug = expand(h_probs, cfg.partition);
    double total = 0.0;
    for (const auto& g : cfg.partition.group_bounds()) {
        double sq = 0.0;
        for (std::size_t t = g.begin; t < g.end; ++t) sq += aug[t] * aug[t];
        total += std::sqrt(sq);
    }
    return total;
}

/// Derivative of the mixed norm with respect to each unit's pre-sigmoid
/// input: sum over the unit's copies t of p^2 (1 - p) / max(||p_G||, eps).
inline Vector penalty_unit_scales(std::span<const double> h_probs, const PenaltyConfig& cfg) {
    const Vector aug = expand(h_probs, cfg.partition);
    Vector s(aug.size(), 0.0);
    for (const auto& g : cfg.partition.group_bounds()) {
        double sq = 0.0;
        for (std::size_t t = g.begin; t < g.end; ++t) sq += aug[t] * aug[t];
        const double denom = std::max(std::sqrt(sq), cfg.epsilon);
        for (std::size_t t = g.begin; t < g.end; ++t) s[t] = aug[t] * aug[t] * (1.0 - aug[t]) / denom;
    }
    return accumulate(s, cfg.partition);
}

struct PenaltyGrad {
    Matrix gw;  ///< I x J
    Vector ga;  ///< J
};

/// Gradient of mixed_norm(p(h=1|x)) with respect to w and a_hid.
inline PenaltyGrad penalty_grad(const Rbm& m, std::span<const double> x, const PenaltyConfig& cfg) {
    detail::require(cfg.partition.j_original() == m.num_hidden(), "penalty_grad: partition does not match hidden size");
    const Vector s = penalty_unit_scales(prob_h_given_x(m, x), cfg);
    PenaltyGrad g{Matrix(m.num_visible(), m.num_hidden()), s};
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto row = g.gw.row(i);
        for (std::size_t j = 0; j < s.size(); ++j) row[j] = x[i] * s[j];
    }
    return g;
}

/// penalty_grad averaged over the rows of a batch.
inline PenaltyGrad penalty_grad(const Rbm& m, const Matrix& batch, const PenaltyConfig& cfg) {
    detail::require(cfg.partition.j_original() == m.num_hidden(), "penalty_grad: partition does not match hidden size");
    detail::require(batch.rows() > 0, "penalty_grad: empty batch");
    const Matrix probs = prob_h_given_x(m, batch);
    Matrix scales(batch.rows(), m.num_hidden());
    for (std::size_t l = 0; l < batch.rows(); ++l) {
        const Vector s = penalty_unit_scales(probs.row(l), cfg);
        std::copy(s.begin(), s.end(), scales.row(l).begin());
    }
    const double inv_l = 1.0 / static_cast<double>(batch.rows());
    return {scale(matmul_tn(batch, scales), inv_l), col_means(scales)};
}

/// Per-batch quantities reported to the training log (pre-update model).
struct StepReport {
    double recon_sq_error = 0.0;  ///< sum over rows of mean squared pixel error
    double hidden_activation = 0.0;  ///< sum over rows of mean p(h=1|x)
    double mixed_norm_value = 0.0;   ///< sum over rows of the mixed norm
    std::size_t rows = 0;
};

/// One regularized step on a mini-batch: CD update (with momentum), then,
/// if lambda > 0, w -= lr * lambda * gw and a_hid -= lr * lambda * ga.
inline StepReport regularized_update(Rbm& m, const Matrix& batch, const PenaltyConfig& cfg, std::size_t cd_k,
                                     double lr, double momentum, CdStats& velocity, Rng& rng) {
    const CdResult cd = cd_step_detailed(m, batch, cd_k, rng);

    StepReport rep;
    rep.rows = batch.rows();
    for (std::size_t l = 0; l < batch.rows(); ++l) {
        const auto x = batch.row(l);
        const auto xt = cd.x_tilde.row(l);
        double se = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - xt[i]) * (x[i] - xt[i]);
        rep.recon_sq_error += se / static_cast<double>(x.size());
        const auto h = cd.h0_probs.row(l);
        double hs = 0.0;
        for (double v : h) hs += v;
        rep.hidden_activation += hs / static_cast<double>(h.size());
        rep.mixed_norm_value += mixed_norm(h, cfg);
    }

    apply_update(m, cd.stats, lr, momentum, velocity);

    if (cfg.lambda > 0.0) {
        const PenaltyGrad g = penalty_grad(m, batch, cfg);
        axpy(-lr * cfg.lambda, g.gw, m.w);
        axpy(-lr * cfg.lambda, g.ga, m.a_hid);
    }
    return rep;
}

struct TrainParams {
    double lr = 0.1;
    double momentum = 0.5;
    double final_momentum = 0.9;
    std::size_t momentum_switch_epoch = 5;  ///< epochs run at `momentum` before switching
    std::size_t batch_size = 100;
    std::size_t epochs = 30;
    std::size_t cd_k = 1;
    double weight_init_std = 0.01;

    void validate() const {
        if (!(lr > 0.0)) throw config_error("train.lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("train.momentum must be in [0, 1)");
        if (!(final_momentum >= 0.0 && final_momentum < 1.0))
            throw config_error("train.final_momentum must be in [0, 1)");
        if (batch_size == 0) throw config_error("train.batch must be >= 1");
        if (cd_k == 0) throw config_error("train.cd_k must be >= 1");
        if (!(weight_init_std >= 0.0)) throw config_error("train.weight_init_std must be >= 0");
    }

    [[nodiscard]] double momentum_at(std::size_t epoch) const {
        return epoch < momentum_switch_epoch ? momentum : final_momentum;
    }
};

struct EpochLog {
    std::size_t epoch = 0;
    double recon_error = 0.0;
    double mean_hidden_activation = 0.0;
    double mixed_norm_value = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    Rbm model;
    std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains one (mixed-norm) RBM on the rows of `data` (N x I, values in [0,1]).
/// Weights are drawn from `rng` first, then each epoch draws its permutation
/// and per-batch chain keys from the same stream. lambda = 0 gives plain CD.
inline TrainResult train_mnrbm(const Matrix& data, std::size_t layer_size, const PenaltyConfig& cfg,
                               const TrainParams& params, Rng& rng, const EpochCallback& on_epoch = {}) {
    if (data.rows() == 0) throw config_error("train_mnrbm: dataset is empty");
    if (layer_size == 0) throw config_error("train_mnrbm: layer_size must be >= 1");
    if (cfg.partition.j_original() != layer_size)
        throw config_error("train_mnrbm: group partition covers " + std::to_string(cfg.partition.j_original()) +
                           " units but the layer has " + std::to_string(layer_size));
    cfg.validate();
    params.validate();

    TrainResult out;
    out.model = Rbm::random(data.cols(), layer_size, rng, params.weight_init_std);
    CdStats velocity = CdStats::zeros_like(out.model);

    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const double momentum = params.momentum_at(epoch);
        StepReport total;
        for (const auto& idx : shuffle_split(data.rows(), params.batch_size, rng)) {
            const Matrix batch = select_rows(data, idx);
            const StepReport r =
                regularized_update(out.model, batch, cfg, params.cd_k, params.lr, momentum, velocity, rng);
            total.recon_sq_error += r.recon_sq_error;
            total.hidden_activation += r.hidden_activation;
            total.mixed_norm_value += r.mixed_norm_value;
            total.rows += r.rows;
        }
        if (!out.model.finite())
            throw numeric_error("train_mnrbm: non-finite parameters after epoch " + std::to_string(epoch + 1));
        const double n = static_cast<double>(total.rows);
        EpochLog entry{epoch + 1, total.recon_sq_error / n, total.hidden_activation / n, total.mixed_norm_value / n,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
        out.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    return out;
}

/// Mean over rows of the hidden activation probabilities, per hidden unit.
inline Vector mean_activation(const Rbm& m, const Matrix& data) { return col_means(prob_h_given_x(m, data)); }

/// Mean over rows of mixed_norm(p(h=1|x)).
inline double mean_mixed_norm(const Rbm& m, const Matrix& data, const PenaltyConfig& cfg) {
    detail::require(data.rows() > 0, "mean_mixed_norm: empty data");
    const Matrix probs = prob_h_given_x(m, data);
    double s = 0.0;
    for (std::size_t r = 0; r < probs.rows(); ++r) s += mixed_norm(probs.row(r), cfg);
    return s / static_cast<double>(probs.rows());
}

}  // namespace mndbn
