#pragma once

// Deep belief network: greedy layer-wise (MN)RBM pre-training, a
// mean-field upward pass, a softmax classification head, and supervised
// fine-tuning of the whole sigmoid stack by nonlinear conjugate gradient on
// the multiclass cross-entropy. The mixed-norm penalty is used during
// pre-training only.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mndbn/cg.hpp"
#include "mndbn/data.hpp"
#include "mndbn/error.hpp"
#include "mndbn/math.hpp"
#include "mndbn/mixed_norm.hpp"
#include "mndbn/rbm.hpp"

namespace mndbn {

struct SoftmaxLayer {
    Matrix w_out;  ///< top_hidden x classes
    Vector b_out;

    SoftmaxLayer() = default;
    SoftmaxLayer(std::size_t inputs, std::size_t classes) : w_out(inputs, classes), b_out(classes, 0.0) {}

    [[nodiscard]] std::size_t num_inputs() const noexcept { return w_out.rows(); }
    [[nodiscard]] std::size_t num_classes() const noexcept { return w_out.cols(); }
    bool operator==(const SoftmaxLayer&) const = default;
};

struct Dbn {
    std::vector<Rbm> layers;
    std::optional<SoftmaxLayer> head;
    std::vector<PenaltySpec> layer_penalties;  ///< aligned with layers

    [[nodiscard]] std::size_t num_inputs() const { return layers.empty() ? 0 : layers.front().num_visible(); }
    [[nodiscard]] std::size_t top_size() const { return layers.empty() ? 0 : layers.back().num_hidden(); }

    /// Throws config_error when adjacent layer sizes or the head do not chain.
    void validate() const {
        if (layers.empty()) throw config_error("Dbn: no layers");
        for (std::size_t l = 1; l < layers.size(); ++l)
            if (layers[l].num_visible() != layers[l - 1].num_hidden())
                throw config_error("Dbn: layer " + std::to_string(l) + " expects " +
                                   std::to_string(layers[l].num_visible()) + " inputs but layer " +
                                   std::to_string(l - 1) + " has " + std::to_string(layers[l - 1].num_hidden()) +
                                   " hidden units");
        if (head && head->num_inputs() != top_size())
            throw config_error("Dbn: head input size does not match the top layer");
        if (!layer_penalties.empty() && layer_penalties.size() != layers.size())
            throw config_error("Dbn: layer_penalties not aligned with layers");
    }

    bool operator==(const Dbn&) const = default;
};

// ---------------------------------------------------------------------------
// Pre-training

using LayerEpochCallback = std::function<void(std::size_t layer, const EpochLog&)>;

struct PretrainResult {
    Dbn dbn;
    std::vector<std::vector<EpochLog>> logs;  ///< one per layer
};

/// Trains layer 1 on `data`, then each next layer on the previous layer's
/// hidden probabilities. Earlier layers are never touched again.
inline PretrainResult pretrain_greedy(const Matrix& data, std::span<const std::size_t> layer_sizes,
                                      std::span<const PenaltySpec> penalties, const TrainParams& params, Rng& rng,
                                      const LayerEpochCallback& on_epoch = {}) {
    if (layer_sizes.empty()) throw config_error("pretrain_greedy: layer_sizes is empty");
    if (penalties.size() != layer_sizes.size())
        throw config_error("pretrain_greedy: " + std::to_string(penalties.size()) + " penalty blocks for " +
                           std::to_string(layer_sizes.size()) + " layers");
    PretrainResult out;
    Matrix inputs = data;
    for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
        const PenaltyConfig cfg = make_penalty(penalties[l], layer_sizes[l]);
        EpochCallback cb;
        if (on_epoch) cb = [&on_epoch, l](const EpochLog& e) { on_epoch(l, e); };
        TrainResult r = train_mnrbm(inputs, layer_sizes[l], cfg, params, rng, cb);
        if (l + 1 < layer_sizes.size()) inputs = prob_h_given_x(r.model, inputs);
        out.dbn.layers.push_back(std::move(r.model));
        out.dbn.layer_penalties.push_back(penalties[l]);
        out.logs.push_back(std::move(r.log));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inference

/// Mean-field upward pass through every layer (probabilities, no sampling).
inline Vector forward(const Dbn& d, std::span<const double> x) {
    detail::require(!d.layers.empty(), "forward: empty network");
    detail::require(x.size() == d.num_inputs(), "forward: input length must equal the first layer's visible size");
    Vector act(x.begin(), x.end());
    for (const auto& layer : d.layers) act = prob_h_given_x(layer, act);
    return act;
}

inline Matrix forward(const Dbn& d, const Matrix& batch) {
    detail::require(!d.layers.empty(), "forward: empty network");
    detail::require(batch.cols() == d.num_inputs(), "forward: batch width must equal the first layer's visible size");
    Matrix act = batch;
    for (const auto& layer : d.layers) act = prob_h_given_x(layer, act);
    return act;
}

/// Numerically stable softmax.
inline Vector softmax(std::span<const double> logits) {
    detail::require(!logits.empty(), "softmax: empty input");
    const double lse = log_sum_exp(logits);
    Vector p(logits.size());
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = std::exp(logits[c] - lse);
    return p;
}

inline Vector head_logits(const SoftmaxLayer& head, std::span<const double> features) {
    detail::require(features.size() == head.num_inputs(), "head_logits: feature length mismatch");
    Vector z = head.b_out;
    for (std::size_t i = 0; i < features.size(); ++i)
        if (features[i] != 0.0) axpy(features[i], head.w_out.row(i), z);
    return z;
}

inline const SoftmaxLayer& require_head(const Dbn& d) {
    if (!d.head) throw state_error("network has no softmax head");
    return *d.head;
}

inline Vector softmax_predict(const Dbn& d, std::span<const double> x) {
    const SoftmaxLayer& head = require_head(d);
    return softmax(head_logits(head, forward(d, x)));
}

inline std::size_t argmax(std::span<const double> v) {
    detail::require(!v.empty(), "argmax: empty input");
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Evaluation {
    double accuracy = 0.0;
    Matrix confusion;  ///< classes x classes, rows = true class, cols = predicted
};

inline Evaluation evaluate(const Dbn& d, const Matrix& images, std::span<const std::uint8_t> labels) {
    const SoftmaxLayer& head = require_head(d);
    detail::require(images.rows() > 0, "evaluate: empty dataset");
    detail::require(images.rows() == labels.size(), "evaluate: image and label counts differ");
    const std::size_t classes = head.num_classes();
    const Matrix top = forward(d, images);
    std::vector<std::size_t> predicted(images.rows());
    parallel_for(images.rows(), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) predicted[r] = argmax(head_logits(head, top.row(r)));
    });
    Evaluation e{0.0, Matrix(classes, classes)};
    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        detail::require(labels[r] < classes, "evaluate: label out of range");
        e.confusion(labels[r], predicted[r]) += 1.0;
        if (predicted[r] == labels[r]) ++correct;
    }
    e.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    return e;
}

inline Evaluation evaluate(const Dbn& d, const Dataset& data) { return evaluate(d, data.images, data.labels); }

// ---------------------------------------------------------------------------
// Discriminative objective

/// Number of trainable fine-tuning parameters: every layer's (w, a_hid)
/// followed by the head (w_out, b_out). Visible biases do not take part in
/// the upward pass and are excluded.
inline std::size_t parameter_count(const Dbn& d, bool head_only = false) {
    std::size_t n = 0;
    if (!head_only)
        for (const auto& l : d.layers) n += l.w.size() + l.a_hid.size();
    const SoftmaxLayer& h = require_head(d);
    return n + h.w_out.size() + h.b_out.size();
}

inline Vector pack_parameters(const Dbn& d, bool head_only = false) {
    Vector p;
    p.reserve(parameter_count(d, head_only));
    if (!head_only)
        for (const auto& l : d.layers) {
            p.insert(p.end(), l.w.flat().begin(), l.w.flat().end());
            p.insert(p.end(), l.a_hid.begin(), l.a_hid.end());
        }
    const SoftmaxLayer& h = require_head(d);
    p.insert(p.end(), h.w_out.flat().begin(), h.w_out.flat().end());
    p.insert(p.end(), h.b_out.begin(), h.b_out.end());
    return p;
}

inline void unpack_parameters(Dbn& d, std::span<const double> p, bool head_only = false) {
    detail::require(p.size() == parameter_count(d, head_only), "unpack_parameters: length mismatch");
    std::size_t o = 0;
    auto take = [&](std::span<double> dst) {
        std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(o), dst.size(), dst.begin());
        o += dst.size();
    };
    if (!head_only)
        for (auto& l : d.layers) {
            take(l.w.flat());
            take(l.a_hid);
        }
    take(d.head->w_out.flat());
    take(d.head->b_out);
}

/// Mean cross-entropy of the head on top of fixed features, with gradients
/// for (w_out, b_out) and for the features themselves.
struct HeadLoss {
    double loss = 0.0;
    Matrix d_logits;  ///< (P - Y) / N
};

inline HeadLoss head_cross_entropy(const SoftmaxLayer& head, const Matrix& features,
                                   std::span<const std::uint8_t> labels) {
    detail::require(features.rows() == labels.size() && features.rows() > 0, "cross_entropy: batch mismatch");
    detail::require(features.cols() == head.num_inputs(), "cross_entropy: feature width mismatch");
    const std::size_t n = features.rows();
    Matrix logits = matmul(features, head.w_out);
    add_row_vector(logits, head.b_out);
    HeadLoss out{0.0, Matrix(n, head.num_classes())};
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        detail::require(labels[r] < head.num_classes(), "cross_entropy: label out of range");
        const auto z = logits.row(r);
        const double lse = log_sum_exp(z);
        out.loss += lse - z[labels[r]];
        auto dz = out.d_logits.row(r);
        for (std::size_t c = 0; c < z.size(); ++c) dz[c] = std::exp(z[c] - lse) * inv_n;
        dz[labels[r]] -= inv_n;
    }
    out.loss *= inv_n;
    return out;
}

/// Mean cross-entropy of the full network on a batch. When grad is
/// non-null it receives the gradient in pack_parameters order.
inline double network_loss(const Dbn& d, const Matrix& images, std::span<const std::uint8_t> labels,
                           Vector* grad = nullptr, bool head_only = false) {
    const SoftmaxLayer& head = require_head(d);
    std::vector<Matrix> acts;
    acts.reserve(d.layers.size() + 1);
    acts.push_back(images);
    for (const auto& l : d.layers) acts.push_back(prob_h_given_x(l, acts.back()));

    HeadLoss hl = head_cross_entropy(head, acts.back(), labels);
    if (!grad) return hl.loss;

    grad->assign(parameter_count(d, head_only), 0.0);
    // Head block sits at the end of the vector.
    const Matrix g_wout = matmul_tn(acts.back(), hl.d_logits);
    const Vector g_bout = col_sums(hl.d_logits);
    std::size_t o = grad->size() - head.w_out.size() - head.b_out.size();
    std::copy(g_wout.flat().begin(), g_wout.flat().end(), grad->begin() + static_cast<std::ptrdiff_t>(o));
    o += head.w_out.size();
    std::copy(g_bout.begin(), g_bout.end(), grad->begin() + static_cast<std::ptrdiff_t>(o));
    if (head_only) return hl.loss;

    std::vector<std::size_t> offsets(d.layers.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
        offsets[l] = off;
        off += d.layers[l].w.size() + d.layers[l].a_hid.size();
    }

    Matrix delta = matmul_nt(hl.d_logits, head.w_out);  // dLoss/d(top activations)
    for (std::size_t l = d.layers.size(); l-- > 0;) {
        const Matrix& a = acts[l + 1];
        auto df = delta.flat();
        auto af = a.flat();
        for (std::size_t i = 0; i < df.size(); ++i) df[i] *= af[i] * (1.0 - af[i]);
        const Matrix gw = matmul_tn(acts[l], delta);
        const Vector ga = col_sums(delta);
        std::copy(gw.flat().begin(), gw.flat().end(), grad->begin() + static_cast<std::ptrdiff_t>(offsets[l]));
        std::copy(ga.begin(), ga.end(), grad->begin() + static_cast<std::ptrdiff_t>(offsets[l] + gw.size()));
        if (l > 0) delta = matmul_nt(delta, d.layers[l].w);
    }
    return hl.loss;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FineTuneParams {
    std::size_t epochs = 30;
    std::size_t head_only_epochs = 0;  ///< leading epochs that train the head on frozen features
    std::size_t batch_size = 1000;
    std::size_t cg_iterations = 3;     ///< line searches per mini-batch
    bool use_cg = true;                ///< false: fixed-step gradient descent
    double gd_learning_rate = 0.1;

    void validate() const {
        if (batch_size == 0) throw config_error("finetune.batch must be >= 1");
        if (cg_iterations == 0) throw config_error("finetune.cg_iterations must be >= 1");
        if (!(gd_learning_rate > 0.0)) throw config_error("finetune.gd_learning_rate must be > 0");
    }
};

struct FineTuneEpoch {
    std::size_t epoch = 0;
    bool head_only = false;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
};

using FineTuneCallback = std::function<void(const FineTuneEpoch&)>;

/// Attaches a zero-initialized head with `classes` outputs if none is present.
inline void ensure_head(Dbn& d, std::size_t classes = num_classes) {
    if (!d.head) d.head = SoftmaxLayer(d.top_size(), classes);
}

/// Runs head_only_epochs + epochs passes over shuffled mini-batches, each
/// batch getting cg_iterations line searches of nonlinear CG (or as many
/// fixed gradient steps). Returns one log entry per pass.
inline std::vector<FineTuneEpoch> fine_tune(Dbn& d, const Dataset& train, const FineTuneParams& params, Rng& rng,
                                            const Dataset* test = nullptr, const FineTuneCallback& on_epoch = {}) {
    params.validate();
    d.validate();
    detail::require(train.size() > 0, "fine_tune: empty training set");
    detail::require(train.images.cols() == d.num_inputs(), "fine_tune: image width does not match the network");
    ensure_head(d);

    std::vector<FineTuneEpoch> log;
    const std::size_t total = params.head_only_epochs + params.epochs;
    for (std::size_t epoch = 0; epoch < total; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const bool head_only = epoch < params.head_only_epochs;
        for (const auto& idx : shuffle_split(train.size(), params.batch_size, rng)) {
            const Matrix images = select_rows(train.images, idx);
            std::vector<std::uint8_t> labels(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) labels[r] = train.labels[idx[r]];

            Objective obj;
            Dbn work = d;
            if (head_only) {
                const Matrix features = forward(d, images);
                obj = [&work, features, &labels](const Vector& p, Vector* g) {
                    std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(work.head->w_out.size()),
                              work.head->w_out.flat().begin());
                    std::copy(p.begin() + static_cast<std::ptrdiff_t>(work.head->w_out.size()), p.end(),
                              work.head->b_out.begin());
                    HeadLoss hl = head_cross_entropy(*work.head, features, labels);
                    if (g) {
                        const Matrix gw = matmul_tn(features, hl.d_logits);
                        const Vector gb = col_sums(hl.d_logits);
                        g->assign(gw.flat().begin(), gw.flat().end());
                        g->insert(g->end(), gb.begin(), gb.end());
                    }
                    return hl.loss;
                };
            } else {
                obj = [&work, &images, &labels](const Vector& p, Vector* g) {
                    unpack_parameters(work, p);
                    return network_loss(work, images, labels, g);
                };
            }

            Vector p = pack_parameters(d, head_only);
            if (params.use_cg) {
                CgOptions opt;
                opt.iterations = params.cg_iterations;
                minimize_cg(obj, p, opt);
            } else {
                minimize_gd(obj, p, params.cg_iterations, params.gd_learning_rate);
            }
            if (!all_finite(p)) throw numeric_error("fine_tune: non-finite parameters");
            unpack_parameters(d, p, head_only);
        }

        FineTuneEpoch e;
        e.epoch = epoch + 1;
        e.head_only = head_only;
        e.train_loss = network_loss(d, train.images, train.labels);
        e.train_accuracy = evaluate(d, train).accuracy;
        if (test) e.test_accuracy = evaluate(d, *test).accuracy;
        e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    return log;
}

}  // namespace mndbn
