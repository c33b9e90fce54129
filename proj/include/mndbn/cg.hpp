#pragma once

// Nonlinear conjugate gradient (Polak-Ribiere+, Armijo backtracking) and a
// plain gradient-descent fallback over a flat parameter vector.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "mndbn/math.hpp"

namespace mndbn {

/// Returns f(x) and, when grad is non-null, writes df/dx into it.
using Objective = std::function<double(const Vector& x, Vector* grad)>;

struct CgOptions {
    std::size_t iterations = 3;
    double armijo_c1 = 1e-4;
    double wolfe_c2 = 0.1;
    double shrink = 0.5;
    double initial_step = 1.0;
    double max_step = 64.0;
    std::size_t max_backtracks = 40;
    std::size_t restart_every = 0;  ///< 0: restart every x.size() directions
};

struct CgReport {
    std::vector<double> values;  ///< f at the start and after every accepted step
    std::size_t evaluations = 0;
    std::size_t accepted = 0;
    bool line_search_failed = false;
};

inline CgReport minimize_cg(const Objective& f, Vector& x, const CgOptions& opt = {}) {
    CgReport rep;
    Vector g(x.size());
    double fx = f(x, &g);
    ++rep.evaluations;
    rep.values.push_back(fx);

    const std::size_t restart = opt.restart_every ? opt.restart_every : std::max<std::size_t>(x.size(), 1);
    Vector d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = -g[i];
    double step = opt.initial_step;
    std::size_t since_restart = 0;
    double prev_decrease = 0.0;

    Vector trial(x.size()), g_new(x.size()), best_x, best_g;
    for (std::size_t it = 0; it < opt.iterations; ++it) {
        double slope = dot(g, d);
        if (!(slope < 0.0)) {  // not a descent direction: steepest descent
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = -g[i];
            slope = dot(g, d);
            since_restart = 0;
        }
        if (slope == 0.0) break;  // stationary
        // Initial step: assume the same first-order decrease as last time.
        if (prev_decrease < 0.0) step = std::min(opt.max_step, prev_decrease / slope);

        // Weak Wolfe bracketing: shrink (quadratic interpolation) on an
        // Armijo failure, grow while the slope is still steep.
        double t = step, lo = 0.0, hi = 0.0;
        double f_trial = 0.0, f_best = 0.0, t_best = 0.0;
        bool have_best = false, accepted = false;
        for (std::size_t bt = 0; bt <= opt.max_backtracks; ++bt) {
            for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] + t * d[i];
            f_trial = f(trial, &g_new);
            ++rep.evaluations;
            if (!std::isfinite(f_trial) || f_trial > fx + opt.armijo_c1 * t * slope) {
                hi = t;
                const double q = std::isfinite(f_trial) ? -slope * t * t / (2.0 * (f_trial - fx - slope * t)) : 0.0;
                const double fallback = lo + opt.shrink * (hi - lo);
                t = (q > lo + 0.1 * (hi - lo) && q < lo + 0.9 * (hi - lo)) ? q : fallback;
                continue;
            }
            have_best = true;
            f_best = f_trial;
            t_best = t;
            best_x = trial;
            best_g = g_new;
            if (dot(g_new, d) >= opt.wolfe_c2 * slope) {
                accepted = true;
                break;
            }
            lo = t;
            t = hi > 0.0 ? 0.5 * (lo + hi) : std::min(2.0 * t, opt.max_step);
            if (hi == 0.0 && t_best >= opt.max_step) {
                accepted = true;
                break;
            }
        }
        if (!accepted && have_best) {
            trial = best_x;
            g_new = best_g;
            f_trial = f_best;
            t = t_best;
            accepted = true;
        } else if (accepted) {
            t = t_best;
            f_trial = f_best;
        }
        if (!accepted) {
            rep.line_search_failed = true;
            break;
        }

        // Polak-Ribiere+, restarted every `restart` directions.
        double num = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) num += g_new[i] * (g_new[i] - g[i]);
        const double den = dot(g, g);
        double beta = den > 0.0 ? std::max(0.0, num / den) : 0.0;
        if (++since_restart >= restart) {
            beta = 0.0;
            since_restart = 0;
        }
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g_new[i] + beta * d[i];

        x.swap(trial);
        g.swap(g_new);
        fx = f_trial;
        rep.values.push_back(fx);
        ++rep.accepted;
        prev_decrease = t * slope;
    }
    return rep;
}

/// Fixed-step gradient descent; the debugging path next to minimize_cg.
inline CgReport minimize_gd(const Objective& f, Vector& x, std::size_t iterations, double lr) {
    CgReport rep;
    Vector g(x.size());
    for (std::size_t it = 0; it < iterations; ++it) {
        const double fx = f(x, &g);
        ++rep.evaluations;
        rep.values.push_back(fx);
        axpy(-lr, g, x);
        ++rep.accepted;
    }
    rep.values.push_back(f(x, nullptr));
    ++rep.evaluations;
    return rep;
}

}  // namespace mndbn
