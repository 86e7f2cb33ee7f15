#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qpot/common.hpp"
#include "qpot/laws.hpp"

namespace qpot {

// g(t) = f(t) + int_0^t g^+(t-s) dF(s) on [0,T], product-integration trapezoid in the
// dF masses, Picard sweeps from g = f.
struct RenewalSolution {
    std::vector<double> t;
    std::vector<double> g;
    std::size_t iterations = 0;
    bool converged = false;
    double residual = 0.0;  // last sup-distance between Picard iterates
};

template <typename Forcing, typename Cdf>
[[nodiscard]] RenewalSolution solve_nonlinear_renewal(Forcing&& f, Cdf&& F, double T, double dt,
                                                      double tol = 1e-10,
                                                      std::size_t max_iter = 10000) {
    if (!(T > 0) || !(dt > 0)) throw std::invalid_argument("solve_nonlinear_renewal: T, dt > 0");
    const auto n = static_cast<std::size_t>(std::max<long long>(1, std::llround(T / dt)));
    const double h = T / static_cast<double>(n);

    RenewalSolution sol;
    sol.t.resize(n + 1);
    std::vector<double> fv(n + 1), df(n);
    for (std::size_t i = 0; i <= n; ++i) {
        sol.t[i] = static_cast<double>(i) * h;
        fv[i] = f(sol.t[i]);
    }
    double f_prev = F(0.0);
    for (std::size_t j = 1; j <= n; ++j) {
        const double f_cur = F(sol.t[j]);
        df[j - 1] = f_cur - f_prev;
        f_prev = f_cur;
    }

    sol.g = fv;
    std::vector<double> next(n + 1), gp(n + 1);
    for (sol.iterations = 1; sol.iterations <= max_iter; ++sol.iterations) {
        for (std::size_t i = 0; i <= n; ++i) gp[i] = std::max(sol.g[i], 0.0);
        double sup = 0.0;
        next[0] = fv[0];
        sup = std::abs(next[0] - sol.g[0]);
        for (std::size_t i = 1; i <= n; ++i) {
            KahanSum conv;
            for (std::size_t j = 1; j <= i; ++j)
                conv.add(df[j - 1] * 0.5 * (gp[i - j] + gp[i - j + 1]));
            next[i] = fv[i] + conv.value();
            sup = std::max(sup, std::abs(next[i] - sol.g[i]));
        }
        sol.g.swap(next);
        sol.residual = sup;
        if (sup < tol) {
            sol.converged = true;
            break;
        }
    }
    sol.iterations = std::min(sol.iterations, max_iter);
    return sol;
}

// Controls of the reduced rate function: wdot piecewise constant per step, and the
// occupancy control m(u,s) on cells x steps, each time row mean-zero in u (the bridge
// constraint; without it the minimization is degenerate).
struct ControlPair {
    double dt = 0.0;
    std::vector<double> w;                // wdot on [t_j, t_{j+1})
    std::vector<std::vector<double>> m;   // m[j][c]

    [[nodiscard]] std::size_t steps() const { return w.size(); }
    [[nodiscard]] std::size_t cells() const { return m.empty() ? 0 : m.front().size(); }

    void project_rows() {
        for (auto& row : m) {
            if (row.empty()) continue;
            double mean = 0.0;
            for (double v : row) mean += v;
            mean /= static_cast<double>(row.size());
            for (double& v : row) v -= mean;
        }
    }
};

[[nodiscard]] inline double control_cost(const ControlPair& c) {
    KahanSum acc;
    for (double v : c.w) acc.add(0.5 * v * v * c.dt);
    if (!c.m.empty()) {
        const double dx = 1.0 / static_cast<double>(c.cells());
        for (const auto& row : c.m)
            for (double v : row) acc.add(0.5 * v * v * dx * c.dt);
    }
    return acc.value();
}

// Initial data: scalar x plus an optional extra forcing phi on the grid (general
// initial conditions enter the equation through such a term).
struct InitialTerms {
    double x = 0.0;
    std::vector<double> phi;  // empty or size steps+1
};

struct Trajectory {
    std::vector<double> t;
    std::vector<double> q;
};

namespace detail {

[[nodiscard]] inline double smoothed_pos(double v, double eps) {
    if (eps <= 0.0) return std::max(v, 0.0);
    return v > 0 ? v + eps * std::log1p(std::exp(-v / eps))
                 : eps * std::log1p(std::exp(v / eps));
}

[[nodiscard]] inline double smoothed_pos_deriv(double v, double eps) {
    if (eps <= 0.0) return v > 0 ? 1.0 : 0.0;
    return 1.0 / (1.0 + std::exp(-v / eps));
}

// Everything the forward map needs, precomputed once per (law, T, dt, cells).
struct ForwardTables {
    double dt = 0.0;
    double dx = 0.0;
    double sigma = 0.0;
    double beta = 0.0;
    double mu = 1.0;
    std::size_t steps = 0;
    std::size_t cells = 0;
    std::vector<double> ftab;   // F(t_i), i = 0..steps
    std::vector<double> f0tab;  // F^(0)(t_i)
    std::vector<double> df;     // df[d] = F(t_{d+1}) - F(t_d)
    std::vector<double> a_w;    // a_w[d] = sigma (F0(t_{d+1}) - F0(t_d)) / mu, exact step kernel
    std::vector<std::size_t> k_full;  // cells fully below F at midpoint lag d
    std::vector<double> k_rem;        // partial-cell overlap weight, already scaled
    double k_fac = 0.0;               // sqrt(mu) dt dx
};

[[nodiscard]] inline ForwardTables make_forward_tables(const Law& service, double sigma,
                                                       double beta, double mu, double T,
                                                       double dt, std::size_t cells) {
    if (!(T > 0) || !(dt > 0)) throw std::invalid_argument("make_forward_tables: T, dt > 0");
    if (!(mu > 0)) throw std::invalid_argument("make_forward_tables: mu > 0");
    ForwardTables tb;
    tb.steps = static_cast<std::size_t>(std::max<long long>(1, std::llround(T / dt)));
    tb.dt = T / static_cast<double>(tb.steps);
    tb.cells = cells;
    tb.dx = cells ? 1.0 / static_cast<double>(cells) : 0.0;
    tb.sigma = sigma;
    tb.beta = beta;
    tb.mu = mu;
    tb.ftab.resize(tb.steps + 1);
    tb.f0tab.resize(tb.steps + 1);
    for (std::size_t i = 0; i <= tb.steps; ++i) {
        const double t = static_cast<double>(i) * tb.dt;
        tb.ftab[i] = service.cdf(t);
        tb.f0tab[i] = equilibrium_cdf(service, t);
    }
    tb.df.resize(tb.steps);
    tb.a_w.resize(tb.steps);
    for (std::size_t d = 0; d < tb.steps; ++d) {
        tb.df[d] = tb.ftab[d + 1] - tb.ftab[d];
        tb.a_w[d] = sigma * (tb.f0tab[d + 1] - tb.f0tab[d]) / mu;
    }
    if (cells) {
        tb.k_fac = std::sqrt(mu) * tb.dt * tb.dx;
        tb.k_full.resize(tb.steps);
        tb.k_rem.resize(tb.steps);
        for (std::size_t d = 0; d < tb.steps; ++d) {
            const double fm = service.cdf((static_cast<double>(d) + 0.5) * tb.dt);
            auto full = static_cast<std::size_t>(std::floor(fm / tb.dx));
            full = std::min(full, cells);
            tb.k_full[d] = full;
            tb.k_rem[d] = full < cells
                              ? std::sqrt(mu) * tb.dt * (fm - static_cast<double>(full) * tb.dx)
                              : 0.0;
        }
    }
    return tb;
}

[[nodiscard]] inline double base_at(const ForwardTables& tb, double x, std::size_t i) {
    return -tb.beta * tb.f0tab[i] + std::max(x, 0.0) * (1.0 - tb.ftab[i]) -
           std::max(-x, 0.0) * (1.0 - tb.f0tab[i]);
}

// prefix sums of each m row, P[j][c] = sum_{c' < c} m[j][c']
inline void row_prefixes(const ControlPair& c, std::vector<std::vector<double>>& pref) {
    const std::size_t mcells = c.cells();
    pref.assign(c.m.size(), {});
    for (std::size_t j = 0; j < c.m.size(); ++j) {
        pref[j].resize(mcells + 1);
        pref[j][0] = 0.0;
        for (std::size_t cc = 0; cc < mcells; ++cc) pref[j][cc + 1] = pref[j][cc] + c.m[j][cc];
    }
}

[[nodiscard]] inline std::vector<double> forward_core(const ForwardTables& tb,
                                                      const InitialTerms& init,
                                                      const ControlPair& c, double eps) {
    const std::size_t n = tb.steps;
    if (c.w.size() != n) throw std::invalid_argument("forward_core: w size mismatch");
    if (!c.m.empty() && c.m.size() != n)
        throw std::invalid_argument("forward_core: m rows mismatch");
    if (!c.m.empty() && c.cells() != tb.cells)
        throw std::invalid_argument("forward_core: m cells mismatch");
    if (!init.phi.empty() && init.phi.size() != n + 1)
        throw std::invalid_argument("forward_core: phi size mismatch");

    std::vector<std::vector<double>> pref;
    const bool with_k = !c.m.empty() && tb.cells > 0;
    if (with_k) row_prefixes(c, pref);

    std::vector<double> q(n + 1);
    q[0] = base_at(tb, init.x, 0) + (init.phi.empty() ? 0.0 : init.phi[0]);
    for (std::size_t i = 1; i <= n; ++i) {
        KahanSum acc;
        acc.add(base_at(tb, init.x, i));
        if (!init.phi.empty()) acc.add(init.phi[i]);
        for (std::size_t j = 0; j < i; ++j) {
            const std::size_t d = i - j - 1;
            acc.add(tb.a_w[d] * c.w[j]);
            if (with_k) {
                const std::size_t full = tb.k_full[d];
                acc.add(tb.k_fac * pref[j][full]);
                if (full < tb.cells) acc.add(tb.k_rem[d] * c.m[j][full]);
            }
        }
        for (std::size_t j = 1; j <= i; ++j) acc.add(tb.df[j - 1] * smoothed_pos(q[i - j], eps));
        q[i] = acc.value();
    }
    return q;
}

}  // namespace detail

// Explicit forward map of the limit equation under the given controls, exact positive
// part unless a smoothing width is supplied.
[[nodiscard]] inline Trajectory forward_trajectory(const InitialTerms& init,
                                                   const ControlPair& controls,
                                                   const Law& service, double sigma, double beta,
                                                   double mu, double T, double dt,
                                                   double smoothing = 0.0) {
    const detail::ForwardTables tb =
        detail::make_forward_tables(service, sigma, beta, mu, T, dt, controls.cells());
    if (controls.w.size() != tb.steps)
        throw std::invalid_argument("forward_trajectory: controls do not match T/dt");
    for (double v : controls.w)
        if (!std::isfinite(v)) throw std::invalid_argument("forward_trajectory: non-finite wdot");
    for (const auto& row : controls.m)
        for (double v : row)
            if (!std::isfinite(v))
                throw std::invalid_argument("forward_trajectory: non-finite kdot");
    Trajectory tr;
    tr.q = detail::forward_core(tb, init, controls, smoothing);
    tr.t.resize(tb.steps + 1);
    for (std::size_t i = 0; i <= tb.steps; ++i) tr.t[i] = static_cast<double>(i) * tb.dt;
    return tr;
}

}  // namespace qpot
