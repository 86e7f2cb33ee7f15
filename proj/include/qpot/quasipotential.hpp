#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qpot/common.hpp"
#include "qpot/laws.hpp"
#include "qpot/limit_solver.hpp"

namespace qpot {

// Finite-horizon variational problem: minimize the control cost subject to the forward
// map hitting the target level x at time T. Terminal constraint by quadratic penalty
// continuation, positive part smoothed on early stages.
struct VariationalProblem {
    Law service = Law::exponential(1.0);
    double sigma = 1.0;
    double beta = 1.0;
    double mu = 1.0;
    double x = 1.0;
    double T = 8.0;
    double dt = 0.0;  // 0: T/800
    std::size_t cells = 32;
    std::vector<double> phi;  // optional extra forcing on the grid
};

struct MinimizeOptions {
    std::size_t lbfgs_memory = 8;
    std::size_t max_iterations = 500;  // per penalty stage
    double grad_tol = 1e-8;
    double feasibility_tol = 1e-4;  // on |q(T) - x| with the exact positive part
    std::vector<double> penalty_stages;  // default 10^1 .. 10^6
    double smoothing_floor = 1e-4;
    bool final_projection = true;
};

struct MinimizeResult {
    ControlPair controls;
    std::vector<double> t;
    std::vector<double> q;  // exact-positive-part trajectory under the returned controls
    double cost = 0.0;
    double terminal_residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    // best feasible cost known at the end of each penalty stage (inf until one exists)
    std::vector<double> stage_costs;
};

namespace detail {

inline void pack_controls(const ControlPair& c, std::vector<double>& v) {
    v.clear();
    v.reserve(c.w.size() + c.m.size() * c.cells());
    v.insert(v.end(), c.w.begin(), c.w.end());
    for (const auto& row : c.m) v.insert(v.end(), row.begin(), row.end());
}

inline void unpack_controls(const std::vector<double>& v, std::size_t steps, std::size_t cells,
                            double dt, ControlPair& c) {
    c.dt = dt;
    c.w.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(steps));
    c.m.assign(steps, std::vector<double>(cells));
    std::size_t p = steps;
    for (std::size_t j = 0; j < steps; ++j)
        for (std::size_t cc = 0; cc < cells; ++cc) c.m[j][cc] = v[p++];
    c.project_rows();
}

// objective and adjoint gradient at a row-projected control point; the path starts
// at the rest point x0 = -beta and is penalized toward the target x at T
struct PenaltyObjective {
    const ForwardTables* tb = nullptr;
    const std::vector<double>* phi = nullptr;
    double x0 = 0.0;
    double x = 0.0;
    double rho = 0.0;
    double eps = 0.0;

    double operator()(const std::vector<double>& v, std::vector<double>& grad) const {
        const std::size_t n = tb->steps;
        const std::size_t cells = tb->cells;
        ControlPair c;
        unpack_controls(v, n, cells, tb->dt, c);
        InitialTerms init;
        init.x = x0;
        if (phi) init.phi = *phi;
        const std::vector<double> q = forward_core(*tb, init, c, eps);
        const double resid = q[n] - x;
        const double obj = control_cost(c) + rho * sqr(resid);

        std::vector<double> lam(n + 1, 0.0);
        lam[n] = 2.0 * rho * resid;
        std::vector<double> gw(n, 0.0);
        std::vector<std::vector<double>> gm_diff(cells ? n : 0,
                                                 std::vector<double>(cells + 1, 0.0));
        std::vector<std::vector<double>> gm_pt(cells ? n : 0, std::vector<double>(cells, 0.0));
        for (std::size_t i = n; i >= 1; --i) {
            const double li = lam[i];
            if (li == 0.0) continue;
            for (std::size_t j = 1; j <= i; ++j)
                lam[i - j] += li * tb->df[j - 1] * smoothed_pos_deriv(q[i - j], eps);
            for (std::size_t j = 0; j < i; ++j) {
                const std::size_t d = i - j - 1;
                gw[j] += li * tb->a_w[d];
                if (cells) {
                    const std::size_t full = tb->k_full[d];
                    if (full > 0) {
                        gm_diff[j][0] += li * tb->k_fac;
                        gm_diff[j][full] -= li * tb->k_fac;
                    }
                    if (full < cells) gm_pt[j][full] += li * tb->k_rem[d];
                }
            }
        }
        grad.assign(v.size(), 0.0);
        for (std::size_t j = 0; j < n; ++j) grad[j] = c.w[j] * tb->dt + gw[j];
        if (cells) {
            const double cell_w = tb->dx * tb->dt;
            std::size_t p = n;
            for (std::size_t j = 0; j < n; ++j) {
                double run = 0.0;
                double mean = 0.0;
                std::vector<double> row(cells);
                for (std::size_t cc = 0; cc < cells; ++cc) {
                    run += gm_diff[j][cc];
                    row[cc] = c.m[j][cc] * cell_w + run + gm_pt[j][cc];
                    mean += row[cc];
                }
                mean /= static_cast<double>(cells);
                for (std::size_t cc = 0; cc < cells; ++cc) grad[p++] = row[cc] - mean;
            }
        }
        return obj;
    }
};

struct LbfgsSettings {
    std::size_t memory = 8;
    std::size_t max_iters = 300;
    double grad_tol = 1e-7;
};

template <typename FG, typename OnAccept>
std::size_t lbfgs_minimize(FG&& fg, std::vector<double>& x, const LbfgsSettings& st,
                           OnAccept&& on_accept) {
    const std::size_t dim = x.size();
    std::vector<double> g(dim), g_new(dim), x_new(dim), dir(dim);
    double f = fg(x, g);
    std::deque<std::pair<std::vector<double>, std::vector<double>>> hist;  // (s, y)
    std::size_t iters = 0;
    std::size_t flat = 0;
    for (; iters < st.max_iters; ++iters) {
        double gmax = 0.0;
        for (double v : g) gmax = std::max(gmax, std::abs(v));
        if (gmax < st.grad_tol) break;

        // two-loop recursion
        dir = g;
        std::vector<double> alpha(hist.size());
        for (std::size_t h = hist.size(); h-- > 0;) {
            const auto& [s, y] = hist[h];
            double sy = 0.0, sd = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                sy += s[i] * y[i];
                sd += s[i] * dir[i];
            }
            alpha[h] = sd / sy;
            for (std::size_t i = 0; i < dim; ++i) dir[i] -= alpha[h] * y[i];
        }
        if (!hist.empty()) {
            const auto& [s, y] = hist.back();
            double sy = 0.0, yy = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                sy += s[i] * y[i];
                yy += y[i] * y[i];
            }
            const double gamma = sy / yy;
            for (double& v : dir) v *= gamma;
        }
        for (std::size_t h = 0; h < hist.size(); ++h) {
            const auto& [s, y] = hist[h];
            double sy = 0.0, yd = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                sy += s[i] * y[i];
                yd += y[i] * dir[i];
            }
            const double beta = yd / sy;
            for (std::size_t i = 0; i < dim; ++i) dir[i] += (alpha[h] - beta) * s[i];
        }
        for (double& v : dir) v = -v;
        double gd = 0.0;
        for (std::size_t i = 0; i < dim; ++i) gd += g[i] * dir[i];
        if (!(gd < 0)) {
            dir = g;
            for (double& v : dir) v = -v;
            gd = 0.0;
            for (std::size_t i = 0; i < dim; ++i) gd += g[i] * dir[i];
            if (!(gd < 0)) break;
        }

        double step = hist.empty() ? std::min(1.0, 1.0 / (1.0 + std::sqrt(-gd))) : 1.0;
        bool accepted = false;
        double f_new = f;
        for (int ls = 0; ls < 40; ++ls) {
            for (std::size_t i = 0; i < dim; ++i) x_new[i] = x[i] + step * dir[i];
            f_new = fg(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * gd) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        std::vector<double> s(dim), y(dim);
        double sy = 0.0, ss = 0.0, yy = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
            sy += s[i] * y[i];
            ss += s[i] * s[i];
            yy += y[i] * y[i];
        }
        if (sy > 1e-12 * std::sqrt(ss * yy)) {
            hist.emplace_back(std::move(s), std::move(y));
            if (hist.size() > st.memory) hist.pop_front();
        }
        const double df = std::abs(f - f_new);
        x.swap(x_new);
        g.swap(g_new);
        f = f_new;
        on_accept(x);
        flat = df <= 1e-14 * (1.0 + std::abs(f)) ? flat + 1 : 0;
        if (flat >= 2) break;
    }
    return iters;
}

}  // namespace detail

[[nodiscard]] inline ControlPair relax_then_hold_initializer(const VariationalProblem& pb) {
    const double dt = pb.dt > 0 ? pb.dt : pb.T / 800.0;
    const auto steps = static_cast<std::size_t>(std::max<long long>(1, std::llround(pb.T / dt)));
    ControlPair c;
    c.dt = pb.T / static_cast<double>(steps);
    c.w.assign(steps, 0.0);
    c.m.assign(steps, std::vector<double>(pb.cells, 0.0));
    if (pb.sigma > 0) {
        const double drive_len = std::min(1.0, pb.T);
        const double f0 = equilibrium_cdf(pb.service, drive_len);
        if (f0 > 0) {
            const double wbar = (pb.x + pb.beta) * pb.mu / (pb.sigma * f0);
            for (std::size_t j = 0; j < steps; ++j) {
                const double t_mid = (static_cast<double>(j) + 0.5) * c.dt;
                if (t_mid >= pb.T - drive_len) c.w[j] = wbar;
            }
        }
    }
    return c;
}

[[nodiscard]] inline MinimizeResult minimize_finite_horizon(const VariationalProblem& pb,
                                                            const MinimizeOptions& opts = {},
                                                            const ControlPair* warm = nullptr) {
    if (pb.sigma <= 0 && pb.cells == 0)
        throw std::invalid_argument("minimize_finite_horizon: no active control channel");
    const double dt = pb.dt > 0 ? pb.dt : pb.T / 800.0;
    const detail::ForwardTables tb =
        detail::make_forward_tables(pb.service, pb.sigma, pb.beta, pb.mu, pb.T, dt, pb.cells);
    const std::size_t n = tb.steps;

    ControlPair start;
    if (warm) {
        start = *warm;
        if (start.w.size() != n || (!start.m.empty() && start.cells() != pb.cells))
            throw std::invalid_argument("minimize_finite_horizon: warm start shape mismatch");
        if (start.m.empty()) start.m.assign(n, std::vector<double>(pb.cells, 0.0));
    } else {
        start = relax_then_hold_initializer(pb);
        if (start.w.size() != n) start.w.assign(n, 0.0);
    }
    start.dt = tb.dt;
    start.project_rows();

    InitialTerms init;
    init.x = -pb.beta;
    init.phi = pb.phi;

    bool have_best = false;
    double best_cost = std::numeric_limits<double>::infinity();
    ControlPair best;
    const auto track = [&](const std::vector<double>& v) {
        ControlPair c;
        detail::unpack_controls(v, n, pb.cells, tb.dt, c);
        const std::vector<double> q = detail::forward_core(tb, init, c, 0.0);
        if (std::abs(q[n] - pb.x) < opts.feasibility_tol) {
            const double cost = control_cost(c);
            if (cost < best_cost) {
                best_cost = cost;
                best = c;
                have_best = true;
            }
        }
    };

    std::vector<double> v;
    detail::pack_controls(start, v);
    track(v);

    std::vector<double> stages = opts.penalty_stages;
    if (stages.empty())
        for (int k = 0; k < 6; ++k) stages.push_back(std::pow(10.0, 1 + k));
    std::size_t total_iters = 0;
    std::vector<double> stage_costs;
    for (std::size_t k = 0; k < stages.size(); ++k) {
        detail::PenaltyObjective obj;
        obj.tb = &tb;
        obj.phi = pb.phi.empty() ? nullptr : &pb.phi;
        obj.x0 = -pb.beta;
        obj.x = pb.x;
        obj.rho = stages[k];
        obj.eps = std::max(std::pow(10.0, -1.0 - static_cast<double>(k)), opts.smoothing_floor);
        detail::LbfgsSettings st;
        st.memory = opts.lbfgs_memory;
        st.max_iters = opts.max_iterations;
        st.grad_tol = opts.grad_tol;
        total_iters += detail::lbfgs_minimize(obj, v, st, track);
        stage_costs.push_back(best_cost);
    }

    ControlPair final_c;
    if (have_best) {
        final_c = best;
    } else {
        detail::unpack_controls(v, n, pb.cells, tb.dt, final_c);
    }

    std::vector<double> q = detail::forward_core(tb, init, final_c, 0.0);
    double resid = q[n] - pb.x;
    bool projected = false;
    if (opts.final_projection && std::abs(resid) > 0) {
        // the last w cell acts on q(T) alone and linearly, so one exact Newton step lands
        if (pb.sigma > 0 && tb.a_w[0] > 1e-300) {
            final_c.w[n - 1] += -resid / tb.a_w[0];
            projected = true;
        } else if (pb.cells > 0) {
            std::vector<double> coef(pb.cells, 0.0);
            const std::size_t full = tb.k_full[0];
            for (std::size_t cc = 0; cc < std::min(full, pb.cells); ++cc) coef[cc] = tb.k_fac;
            if (full < pb.cells) coef[full] = tb.k_rem[0];
            double mean = 0.0;
            for (double cv : coef) mean += cv;
            mean /= static_cast<double>(pb.cells);
            double norm2 = 0.0;
            for (double cv : coef) norm2 += sqr(cv - mean);
            if (norm2 > 1e-300) {
                const double scale = -resid / norm2;
                for (std::size_t cc = 0; cc < pb.cells; ++cc)
                    final_c.m[n - 1][cc] += scale * (coef[cc] - mean);
                projected = true;
            }
        }
        if (projected) {
            q = detail::forward_core(tb, init, final_c, 0.0);
            resid = q[n] - pb.x;
        }
    }

    MinimizeResult res;
    res.controls = final_c;
    res.q = std::move(q);
    res.t.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) res.t[i] = static_cast<double>(i) * tb.dt;
    res.cost = control_cost(final_c);
    res.terminal_residual = resid;
    res.iterations = total_iters;
    res.converged = std::abs(resid) < opts.feasibility_tol;
    res.stage_costs = std::move(stage_costs);
    return res;
}

struct CurvePoint {
    double x = 0.0;
    double T = 0.0;
    double cost = 0.0;
    double terminal_residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

struct CurveSummary {
    double x = 0.0;
    double value = 0.0;  // inf over the T grid
    double argmin_T = 0.0;
    bool converged = false;
};

struct QuasipotentialCurve {
    std::vector<CurvePoint> points;
    std::vector<CurveSummary> summary;
    std::vector<ControlPair> best_controls;  // per x, at the summarized horizon
};

// J_T(x) over the (x, T) grid, warm-starting each horizon from the previous one at the
// same x (idle prefix prepended). One grid spacing shared by all horizons.
[[nodiscard]] inline QuasipotentialCurve quasipotential_curve(const std::vector<double>& x_grid,
                                                              const std::vector<double>& T_grid,
                                                              VariationalProblem base,
                                                              const MinimizeOptions& opts = {},
                                                              unsigned threads = 0) {
    if (x_grid.empty() || T_grid.empty())
        throw std::invalid_argument("quasipotential_curve: empty grid");
    for (std::size_t i = 1; i < T_grid.size(); ++i)
        if (!(T_grid[i] > T_grid[i - 1]))
            throw std::invalid_argument("quasipotential_curve: T_grid must be increasing");
    const double dt = base.dt > 0 ? base.dt : T_grid.back() / 800.0;

    std::vector<std::vector<CurvePoint>> rows(x_grid.size());
    std::vector<ControlPair> bests(x_grid.size());
    parallel_for(x_grid.size(), threads, [&](std::size_t xi) {
        VariationalProblem pb = base;
        pb.x = x_grid[xi];
        pb.dt = dt;
        ControlPair warm;
        bool have_warm = false;
        double best_cost = std::numeric_limits<double>::infinity();
        bool best_conv = false;
        for (double T : T_grid) {
            pb.T = T;
            const auto steps =
                static_cast<std::size_t>(std::max<long long>(1, std::llround(T / dt)));
            MinimizeResult r;
            if (have_warm) {
                ControlPair w2;
                w2.dt = dt;
                w2.w.assign(steps, 0.0);
                w2.m.assign(steps, std::vector<double>(pb.cells, 0.0));
                const std::size_t off = steps - warm.w.size();
                for (std::size_t j = 0; j < warm.w.size(); ++j) {
                    w2.w[off + j] = warm.w[j];
                    w2.m[off + j] = warm.m[j];
                }
                r = minimize_finite_horizon(pb, opts, &w2);
            } else {
                r = minimize_finite_horizon(pb, opts);
            }
            CurvePoint pt;
            pt.x = pb.x;
            pt.T = T;
            pt.cost = r.cost;
            pt.terminal_residual = r.terminal_residual;
            pt.iterations = r.iterations;
            pt.converged = r.converged;
            rows[xi].push_back(pt);
            if ((r.converged && !best_conv) ||
                (r.converged == best_conv && r.cost < best_cost)) {
                best_cost = r.cost;
                best_conv = r.converged;
                bests[xi] = r.controls;
            }
            warm = r.controls;
            have_warm = true;
        }
    });

    QuasipotentialCurve out;
    for (std::size_t xi = 0; xi < x_grid.size(); ++xi) {
        CurveSummary s;
        s.x = x_grid[xi];
        s.value = std::numeric_limits<double>::infinity();
        for (const CurvePoint& pt : rows[xi]) {
            out.points.push_back(pt);
            if (pt.converged && pt.cost < s.value) {
                s.value = pt.cost;
                s.argmin_T = pt.T;
                s.converged = true;
            }
        }
        if (!s.converged) {
            // nothing hit the target; report the cheapest attempt, flagged
            for (const CurvePoint& pt : rows[xi]) {
                if (pt.cost < s.value) {
                    s.value = pt.cost;
                    s.argmin_T = pt.T;
                }
            }
        }
        out.summary.push_back(s);
        out.best_controls.push_back(std::move(bests[xi]));
    }
    return out;
}

// max relative error between the adjoint directional derivative and a central difference,
// over a few random directions
[[nodiscard]] inline double gradient_check(const VariationalProblem& pb, const ControlPair& at,
                                           double rho, double eps, double h = 1e-6,
                                           std::uint64_t seed = 1, int directions = 4) {
    const double dt = pb.dt > 0 ? pb.dt : pb.T / 800.0;
    const detail::ForwardTables tb =
        detail::make_forward_tables(pb.service, pb.sigma, pb.beta, pb.mu, pb.T, dt, pb.cells);
    detail::PenaltyObjective obj;
    obj.tb = &tb;
    obj.phi = pb.phi.empty() ? nullptr : &pb.phi;
    obj.x0 = -pb.beta;
    obj.x = pb.x;
    obj.rho = rho;
    obj.eps = eps;

    std::vector<double> v;
    detail::pack_controls(at, v);
    std::vector<double> g(v.size());
    obj(v, g);
    Rng rng(seed);
    double worst = 0.0;
    std::vector<double> dir(v.size()), tmp(v.size()), gd(v.size());
    for (int d = 0; d < directions; ++d) {
        double norm = 0.0;
        for (double& dv : dir) {
            dv = rng.normal();
            norm += dv * dv;
        }
        norm = std::sqrt(norm);
        for (double& dv : dir) dv /= norm;
        double lin = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) lin += g[i] * dir[i];
        for (std::size_t i = 0; i < v.size(); ++i) tmp[i] = v[i] + h * dir[i];
        const double fp = obj(tmp, gd);
        for (std::size_t i = 0; i < v.size(); ++i) tmp[i] = v[i] - h * dir[i];
        const double fm = obj(tmp, gd);
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - lin) / std::max(1.0, std::abs(fd)));
    }
    return worst;
}

}  // namespace qpot
