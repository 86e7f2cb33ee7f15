#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qpot/common.hpp"
#include "qpot/laws.hpp"
#include "qpot/quasipotential.hpp"
#include "qpot/queue_sim.hpp"

namespace qpot {

// Exact M/M/n stationary law in log domain. Beyond K the birth/death ratio is the
// constant lambda/(n mu), so the tail is exactly geometric; folding that tail into the
// normalizer makes sum(pi) + tail = 1 to machine precision without a giant K.
struct BirthDeathLaw {
    std::uint64_t n = 1;
    double lambda = 0.0;
    double mu = 1.0;
    std::uint64_t K = 0;
    std::vector<double> log_pi;  // normalized, indices 0..K
    double tail_mass = 0.0;      // exact geometric mass beyond K
    double tail_ratio = 0.0;     // lambda/(n mu)

    [[nodiscard]] double pi(std::uint64_t k) const {
        if (k <= K) return std::exp(log_pi[k]);
        return std::exp(log_pi[K] + static_cast<double>(k - K) * std::log(tail_ratio));
    }

    // P(Q >= k0), exact including the geometric tail.
    [[nodiscard]] double tail_prob(std::uint64_t k0) const {
        if (k0 == 0) return 1.0;
        if (k0 > K) {
            // pi(k0) * (1 + q + q^2 + ...) with q = tail_ratio
            return std::exp(log_pi[K] + static_cast<double>(k0 - K) * std::log(tail_ratio)) /
                   (1.0 - tail_ratio);
        }
        std::vector<double> logs;
        for (std::uint64_t k = k0; k <= K; ++k) logs.push_back(log_pi[k]);
        return std::min(std::exp(log_sum_exp(logs)) + tail_mass, 1.0);
    }

    [[nodiscard]] double mean() const {
        KahanSum s;
        for (std::uint64_t k = 1; k <= K; ++k) s.add(static_cast<double>(k) * std::exp(log_pi[k]));
        // tail mean: sum_{j>=1} (K+j) pi_K q^j = pi_K (K q/(1-q) + q/(1-q)^2)
        const double q = tail_ratio;
        const double pk = std::exp(log_pi[K]);
        s.add(pk * (static_cast<double>(K) * q / (1.0 - q) + q / sqr(1.0 - q)));
        return s.value();
    }
};

[[nodiscard]] inline BirthDeathLaw birth_death_stationary(std::uint64_t n, double lambda,
                                                          double mu, std::uint64_t K) {
    if (!(lambda < static_cast<double>(n) * mu))
        throw std::invalid_argument("birth_death_stationary: unstable (lambda >= n mu)");
    if (K < n) K = n;
    BirthDeathLaw bd;
    bd.n = n;
    bd.lambda = lambda;
    bd.mu = mu;
    bd.K = K;
    bd.tail_ratio = lambda / (static_cast<double>(n) * mu);
    bd.log_pi.resize(K + 1);
    bd.log_pi[0] = 0.0;
    for (std::uint64_t k = 0; k < K; ++k)
        bd.log_pi[k + 1] = bd.log_pi[k] + std::log(lambda) -
                           std::log(mu * static_cast<double>(std::min<std::uint64_t>(k + 1, n)));
    const double log_z_head = log_sum_exp(bd.log_pi);
    // tail sum beyond K: pi~_K * q/(1-q)
    const double log_tail = bd.log_pi[K] + std::log(bd.tail_ratio) - std::log1p(-bd.tail_ratio);
    const double log_z = log_sum_exp({log_z_head, log_tail});
    for (auto& lp : bd.log_pi) lp -= log_z;
    bd.tail_mass = std::exp(log_tail - log_z);
    return bd;
}

// Erlang C delay probability, independent of the birth-death recursion (oracle).
[[nodiscard]] inline double erlang_c(std::uint64_t n, double a) {
    const double rho = a / static_cast<double>(n);
    if (!(rho < 1.0)) throw std::invalid_argument("erlang_c: requires a < n");
    std::vector<double> logs;
    for (std::uint64_t k = 0; k < n; ++k)
        logs.push_back(static_cast<double>(k) * std::log(a) - std::lgamma(static_cast<double>(k) + 1.0));
    const double log_top = static_cast<double>(n) * std::log(a) -
                           std::lgamma(static_cast<double>(n) + 1.0) - std::log1p(-rho);
    logs.push_back(log_top);
    return std::exp(log_top - log_sum_exp(logs));
}

struct RateEstimate {
    double x = 0.0;
    double rate = std::numeric_limits<double>::quiet_NaN();
    std::string source;
    bool has_band = false;
    double band_low = std::numeric_limits<double>::quiet_NaN();
    double band_high = std::numeric_limits<double>::quiet_NaN();
    bool lower_bound_only = false;  // zero empirical counts: rate is a lower bound, not an estimate
};

// -ln P(X >= x) / b_n^2 per x. For simulation sources pass hit counts so the binomial
// CI can be transformed; zero counts become an explicit lower-bound flag.
[[nodiscard]] inline std::vector<RateEstimate> rate_from_tail(
    const std::vector<double>& tail_probabilities, double b_n, const std::vector<double>& x_grid,
    const std::string& source = "exact",
    const std::optional<std::vector<std::pair<std::uint64_t, std::uint64_t>>>& counts = {}) {
    if (tail_probabilities.size() != x_grid.size())
        throw std::invalid_argument("rate_from_tail: grid size mismatch");
    if (!(b_n > 0)) throw std::invalid_argument("rate_from_tail: b_n must be > 0");
    const double b2 = b_n * b_n;
    std::vector<RateEstimate> out;
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
        RateEstimate e;
        e.x = x_grid[i];
        e.source = source;
        const double p = tail_probabilities[i];
        if (!(p > 0.0) || p > 1.0) {
            if (counts) {
                // zero hits: Wilson upper limit still gives a defensible rate lower bound
                const auto [hits, trials] = (*counts)[i];
                if (trials > 0 && hits == 0) {
                    const CiScalar ci = wilson_interval(0, trials);
                    e.lower_bound_only = true;
                    e.rate = -std::log(ci.hi) / b2;
                    out.push_back(e);
                    continue;
                }
            }
            throw std::invalid_argument("rate_from_tail: probabilities must lie in (0,1]");
        }
        e.rate = -std::log(p) / b2;
        if (counts) {
            const auto [hits, trials] = (*counts)[i];
            if (hits == 0) {
                e.lower_bound_only = true;
                const CiScalar ci = wilson_interval(0, trials);
                e.rate = -std::log(ci.hi) / b2;
            } else {
                const CiScalar ci = wilson_interval(hits, trials);
                e.has_band = true;
                e.band_low = -std::log(ci.hi) / b2;
                e.band_high = -std::log(std::max(ci.lo, 1e-300)) / b2;
            }
        }
        out.push_back(e);
    }
    return out;
}

// Exact stationary tails of the scaled M/M/n state X = (Q-n)/(b sqrt n) at the given
// x grid: P(X >= x) = P(Q >= ceil(n + x b sqrt n)).
[[nodiscard]] inline std::vector<double> mmn_scaled_tails(const ScalingRegime& r,
                                                          const std::vector<double>& x_grid) {
    const BirthDeathLaw bd = birth_death_stationary(
        r.n, r.lambda_n, r.mu, 20 * r.n + static_cast<std::uint64_t>(200.0 * r.scale()));
    std::vector<double> out;
    for (double x : x_grid) {
        const double thr = static_cast<double>(r.n) + x * r.scale();
        out.push_back(bd.tail_prob(static_cast<std::uint64_t>(std::ceil(thr))));
    }
    return out;
}

// One queue family swept over n at fixed beta, with b_n = n^b_exponent.
struct PanelFamily {
    Law service = Law::exponential(1.0);
    Law interarrival_template = Law::exponential(1.0);
    double mu = 1.0;
    double beta = 1.0;
    double b_exponent = 0.1;

    [[nodiscard]] bool markovian() const {
        return service.family == LawFamily::exponential &&
               interarrival_template.family == LawFamily::exponential;
    }
};

struct PanelOptions {
    std::size_t sim_samples = 0;  // 0: no simulation source
    double sim_spacing = 1.0;
    double burn_in_multiplier = 50.0;  // burn-in = multiplier * n / mu
    std::uint64_t seed = 1;
    unsigned threads = 0;
    bool include_limit = true;
    std::size_t cells = 16;
    std::vector<double> T_grid;  // default {2,4,8,16,32}/mu
    double dt = 0.0;             // 0: T_max/800
    std::size_t lbfgs_iterations = 150;
    std::size_t gg_replications = 0;  // 0: no gg-implied-rate source
};

struct PanelRow {
    std::uint64_t n = 0;  // 0 for the limit rows
    double b_n = 0.0;
    double x = 0.0;
    std::string source;
    double rate = std::numeric_limits<double>::quiet_NaN();
    bool has_band = false;
    double band_low = std::numeric_limits<double>::quiet_NaN();
    double band_high = std::numeric_limits<double>::quiet_NaN();
    std::string flag;
};

struct PanelTrend {
    double x = 0.0;
    std::string basis_source;
    std::vector<double> gaps;  // |rate_n - rate_limit| in n order
    bool monotone = false;
    std::string flag;
};

struct ConvergencePanel {
    std::vector<PanelRow> rows;
    std::vector<PanelTrend> trends;
    bool trend_pass = false;  // all x rows monotone toward the limit
};

// Finite-n rates next to the limit rate, one row per (n, x, source). Rates are reported
// as computed; the verdict only checks that gaps to the limit shrink as n grows, it
// never extrapolates.
[[nodiscard]] inline ConvergencePanel convergence_panel(const PanelFamily& family,
                                                        const std::vector<std::uint64_t>& n_list,
                                                        const std::vector<double>& x_grid,
                                                        const PanelOptions& opts = {}) {
    if (n_list.empty() || x_grid.empty())
        throw std::invalid_argument("convergence_panel: empty n_list or x_grid");
    for (double x : x_grid)
        if (!(x > 0)) throw std::invalid_argument("convergence_panel: x_grid must be positive");
    if (std::abs(family.service.mean() * family.mu - 1.0) > 1e-9)
        throw std::invalid_argument("convergence_panel: service mean must equal 1/mu");

    ConvergencePanel out;

    std::vector<double> limit_rate(x_grid.size(), std::numeric_limits<double>::quiet_NaN());
    if (opts.include_limit) {
        VariationalProblem base;
        base.service = family.service;
        base.sigma = arrival_sigma(family.interarrival_template, family.mu);
        base.beta = family.beta;
        base.mu = family.mu;
        base.cells = opts.cells;
        base.dt = opts.dt;
        std::vector<double> t_grid = opts.T_grid;
        if (t_grid.empty())
            for (double t : {2.0, 4.0, 8.0, 16.0, 32.0}) t_grid.push_back(t / family.mu);
        MinimizeOptions mopts;
        mopts.max_iterations = opts.lbfgs_iterations;
        const QuasipotentialCurve curve =
            quasipotential_curve(x_grid, t_grid, base, mopts, opts.threads);
        for (std::size_t i = 0; i < x_grid.size(); ++i) {
            const CurveSummary& s = curve.summary[i];
            limit_rate[i] = s.value;
            PanelRow row;
            row.x = x_grid[i];
            row.source = "limit";
            row.rate = s.value;
            if (!s.converged) row.flag = "gap: variational solve did not reach the target";
            out.rows.push_back(row);
        }
    }

    struct FiniteRate {
        std::uint64_t n;
        double rate;
        bool usable;
    };
    std::vector<std::vector<FiniteRate>> exact_by_x(x_grid.size());
    std::vector<std::vector<FiniteRate>> sim_by_x(x_grid.size());

    for (std::uint64_t n : n_list) {
        const ScalingRegime regime =
            ScalingRegime::make(n, family.beta, family.mu, family.b_exponent);
        if (family.markovian()) {
            const std::vector<double> tails = mmn_scaled_tails(regime, x_grid);
            const std::vector<RateEstimate> rates =
                rate_from_tail(tails, regime.b_n, x_grid, "exact");
            for (std::size_t i = 0; i < rates.size(); ++i) {
                PanelRow row;
                row.n = n;
                row.b_n = regime.b_n;
                row.x = rates[i].x;
                row.source = "exact";
                row.rate = rates[i].rate;
                out.rows.push_back(row);
                exact_by_x[i].push_back({n, rates[i].rate, true});
            }
        }
        if (opts.sim_samples > 0) {
            QueueModel model =
                QueueModel::make(regime, family.service, family.interarrival_template);
            const double burn = opts.burn_in_multiplier * static_cast<double>(n) / family.mu;
            const StationarySample ss =
                stationary_sample(model, burn, opts.sim_samples, opts.sim_spacing,
                                  derive_stream_seed(opts.seed, n));
            const auto eff_trials = static_cast<std::uint64_t>(
                std::max(1.0, std::floor(std::min(ss.ess, static_cast<double>(ss.q.size())))));
            std::vector<double> tails(x_grid.size());
            std::vector<std::pair<std::uint64_t, std::uint64_t>> counts(x_grid.size());
            for (std::size_t i = 0; i < x_grid.size(); ++i) {
                const auto thr = static_cast<std::uint64_t>(
                    std::ceil(static_cast<double>(n) + x_grid[i] * regime.scale()));
                std::uint64_t hits = 0;
                for (std::uint64_t qv : ss.q)
                    if (qv >= thr) ++hits;
                const double frac =
                    static_cast<double>(hits) / static_cast<double>(ss.q.size());
                tails[i] = frac;
                counts[i] = {static_cast<std::uint64_t>(
                                 std::llround(frac * static_cast<double>(eff_trials))),
                             eff_trials};
            }
            const std::vector<RateEstimate> rates =
                rate_from_tail(tails, regime.b_n, x_grid, "simulation", counts);
            for (std::size_t i = 0; i < rates.size(); ++i) {
                PanelRow row;
                row.n = n;
                row.b_n = regime.b_n;
                row.x = rates[i].x;
                row.source = "simulation";
                row.rate = rates[i].rate;
                row.has_band = rates[i].has_band;
                row.band_low = rates[i].band_low;
                row.band_high = rates[i].band_high;
                if (rates[i].lower_bound_only)
                    row.flag = "gap: no tail hits, rate is a lower bound";
                else if (!ss.warning.empty())
                    row.flag = ss.warning;
                out.rows.push_back(row);
                sim_by_x[i].push_back({n, rates[i].rate, !rates[i].lower_bound_only});
            }
        }
        if (opts.gg_replications > 0) {
            // implied-rate minorant from the supremum upper bound: bigger probability,
            // smaller rate, so these rows sit at or below the exact rates
            const QueueModel model =
                QueueModel::make(regime, family.service, family.interarrival_template);
            std::vector<double> r_grid = x_grid;
            std::sort(r_grid.begin(), r_grid.end());
            r_grid.erase(std::unique(r_grid.begin(), r_grid.end()), r_grid.end());
            const double i_max =
                std::ceil(20.0 * static_cast<double>(n) * r_grid.back() * regime.rho_n /
                          regime.beta_n());
            const double horizon = (1.5 * i_max + 20.0) / regime.lambda_n;
            const GgTailResult gg = gg_supremum_tail(
                model, r_grid, opts.gg_replications, horizon,
                derive_stream_seed(derive_stream_seed(opts.seed, 2), n), opts.threads);
            const double b2 = sqr(regime.b_n);
            for (double x : x_grid) {
                const GgTailRow* g = nullptr;
                for (const GgTailRow& cand : gg.rows)
                    if (cand.r == x) g = &cand;
                if (!g) continue;
                PanelRow row;
                row.n = n;
                row.b_n = regime.b_n;
                row.x = x;
                row.source = "gg";
                const double p_hi = std::min(1.0, g->ci_high + g->truncation_bound);
                if (g->hits == 0) {
                    row.rate = -std::log(std::max(p_hi, 1e-300)) / b2 + 0.0;
                    row.flag = "gap: supremum never exceeded r, rate is a lower bound";
                } else {
                    row.rate = -std::log(g->estimate) / b2;
                    row.has_band = true;
                    row.band_low = -std::log(std::max(p_hi, 1e-300)) / b2 + 0.0;
                    row.band_high = -std::log(std::max(g->ci_low, 1e-300)) / b2;
                    if (g->truncation_flag) row.flag = "truncation bound above 10% of the estimate";
                }
                out.rows.push_back(row);
            }
        }
        // infinite-server majorant: breve Q <= Q pathwise, so its (Poisson) tail is a
        // probability lower bound and the implied rate an upper bound on the exact rate
        for (double x : x_grid) {
            PanelRow row;
            row.n = n;
            row.b_n = regime.b_n;
            row.x = x;
            row.source = "infinite-server";
            if (family.interarrival_template.family == LawFamily::exponential) {
                const double a = static_cast<double>(n) * regime.rho_n;
                const double thr = std::ceil(static_cast<double>(n) + x * regime.scale());
                const double p = detail::gamma_p(thr, a);
                row.rate = -std::log(std::max(p, 1e-300)) / sqr(regime.b_n);
            } else {
                row.flag = "gap: stationary law closed-form needs Poisson arrivals";
            }
            out.rows.push_back(row);
        }
    }

    out.trend_pass = true;
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
        PanelTrend tr;
        tr.x = x_grid[i];
        const auto& basis = !exact_by_x[i].empty() ? exact_by_x[i] : sim_by_x[i];
        tr.basis_source = !exact_by_x[i].empty() ? "exact" : "simulation";
        if (basis.empty() || std::isnan(limit_rate[i])) {
            tr.flag = "gap: no finite-n source or no limit rate";
            tr.monotone = false;
        } else {
            bool all_usable = true;
            for (const FiniteRate& fr : basis) {
                if (!fr.usable) all_usable = false;
                tr.gaps.push_back(std::abs(fr.rate - limit_rate[i]));
            }
            tr.monotone = all_usable && tr.gaps.size() >= 2;
            if (tr.monotone) {
                // trend, not exactness: tolerate one widening step per three
                std::size_t bad = 0;
                for (std::size_t k = 0; k + 1 < tr.gaps.size(); ++k)
                    if (tr.gaps[k + 1] > tr.gaps[k] * (1.0 + 1e-12) + 1e-12) ++bad;
                tr.monotone = bad <= (tr.gaps.size() - 1) / 3;
            }
            if (!all_usable) tr.flag = "gap: lower-bound-only rates excluded";
        }
        out.trend_pass = out.trend_pass && tr.monotone;
        out.trends.push_back(tr);
    }
    return out;
}

}  // namespace qpot
