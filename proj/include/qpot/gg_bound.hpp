#pragma once

#include "qpot/queue_sim.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qpot {

// Tail of the Gaussian-free upper bound: P(sup_i (i - sum_k N'_k(tau_i))/(b_n sqrt n) > r),
// the discrete supremum representation of the comparison system. The Monte Carlo estimate
// covers i <= i_max; everything beyond is closed analytically (truncation_bound).
struct GgTailRow {
    double r = 0.0;
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double truncation_bound = 0.0;
    bool truncation_flag = false;  // residual not negligible next to the estimate
    std::uint64_t hits = 0;
    std::uint64_t trials = 0;
};

struct GgTailResult {
    std::vector<GgTailRow> rows;
    std::uint64_t i_max = 0;
    std::uint64_t horizon_truncated = 0;  // replications that ran out of horizon before i_max
};

namespace detail {

// Polynomial in t with nonnegative coefficients, kept as log coefficients. Used to push
// moment bounds through E p(tau_i) with E tau_i^j <= i^j E xi^j.
class PolyLog {
  public:
    explicit PolyLog(std::size_t degree)
        : lc_(degree + 1, -std::numeric_limits<double>::infinity()) {}

    void add_term(std::size_t j, double logc) { lc_[j] = log_sum_exp(lc_[j], logc); }

    // front * (1 + e^{log_mu} t)^p
    void add_scaled_binomial(unsigned p, double log_mu, double log_front) {
        for (unsigned j = 0; j <= p; ++j) {
            const double log_binom = std::lgamma(p + 1.0) - std::lgamma(j + 1.0) -
                                     std::lgamma(p - j + 1.0);
            add_term(j, log_front + log_binom + j * log_mu);
        }
    }

    template <typename LogEtj>
    [[nodiscard]] double expect_log(LogEtj&& log_etj) const {
        double acc = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lc_.size(); ++j) {
            if (std::isinf(lc_[j]) && lc_[j] < 0) continue;
            acc = log_sum_exp(acc, lc_[j] + log_etj(j));
        }
        return acc;
    }

  private:
    std::vector<double> lc_;
};

// Rosenthal-type inequality, eq. (95):
// E|S_N|^p <= (p/2+1)^p N E|X|^p + p (p/2+1)^{p/2} e^{p/2+1} (N Var X)^{p/2}
[[nodiscard]] inline double log_petrov(unsigned p, double log_count, double log_abs_moment_p,
                                       double log_var) {
    const double hp = p / 2.0;
    const double t1 = p * std::log(hp + 1.0) + log_count + log_abs_moment_p;
    const double t2 = std::log(static_cast<double>(p)) + hp * std::log(hp + 1.0) + (hp + 1.0) +
                      hp * (log_count + log_var);
    return log_sum_exp(t1, t2);
}

struct GgTruncationContext {
    double n = 1.0;
    double mu = 1.0;
    double beta_over_rho = 0.0;
    double b_sqrt_n = 1.0;
    Law arrival = Law::exponential(1.0);  // scaled interarrival law
    Law service = Law::exponential(1.0);
    bool equilibrium_arrivals = true;
    double c_tilde = 12.0;
};

// log E|W_i|^p for W_i = i - sum_k N'_k(tau_i), centered as
// W_i = -(n mu) taubar_i - sum_k Nbar'_k(tau_i) - i (1-rho)/rho, drift handled by the caller.
[[nodiscard]] inline double log_gg_w_moment(const GgTruncationContext& ctx, unsigned p,
                                            double i) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    const double log2 = std::log(2.0);
    const double log_i = std::log(i);
    const double lm1 = ctx.arrival.log_moment(1);
    const double lmp = ctx.arrival.log_moment(p);
    // E|xibar|^p <= 2^{p-1}(E xi^p + (E xi)^p)
    double log_abs_p = (p - 1.0) * log2 + log_sum_exp(lmp, p * lm1);
    const double var_xi = ctx.arrival.variance();
    double log_var = var_xi > 0 ? std::log(var_xi) : neg_inf;
    double log_shift = neg_inf;
    if (ctx.equilibrium_arrivals) {
        // first gap has the stationary-excess law: cap its moments alongside the
        // ordinary ones and carry the mean offset E xi0 - E xi as a shift term
        const auto lm0 = [&](double q) {
            return -lm1 + ctx.arrival.log_moment(q + 1.0) - std::log(q + 1.0);
        };
        log_abs_p = std::max(log_abs_p, (p - 1.0) * log2 + log_sum_exp(lm0(p), p * lm0(1.0)));
        log_var = std::max(log_var, lm0(2.0));
        const double d = std::abs(std::exp(lm0(1.0)) - ctx.arrival.mean());
        if (d > 0) log_shift = p * std::log(d);
    }
    const double log_taubar =
        (p - 1.0) * log2 + log_sum_exp(log_petrov(p, log_i, log_abs_p, log_var), log_shift);
    const double arrival_part = p * std::log(ctx.n * ctx.mu) + log_taubar;

    // per-stream central moment via eq. (91a) with lambda -> mu, xi -> eta; across the
    // n streams via eq. (95); per-stream variance via eq. (214). Central (not raw) moments
    // are what make the doubling blocks summable: growth tau^{p/2+1} against threshold^p.
    const double e2 = ctx.mu * ctx.mu * ctx.service.moment(2);  // E(mu eta)^2
    const double log_mu = std::log(ctx.mu);
    const double log_emeta_p1 = (p + 1.0) * log_mu + ctx.service.log_moment(p + 1.0);
    PolyLog poly(p / 2 + 1);
    const double front =
        p * std::log(p / 2.0 + 1.0) + std::log(ctx.n) + p * std::log(ctx.c_tilde);
    poly.add_scaled_binomial(1, log_mu, front + log_emeta_p1);
    poly.add_scaled_binomial(p / 2 + 1, log_mu,
                             front + (p / 2.0 + 1.0) * std::log(static_cast<double>(p)) +
                                 1.5 * p * std::log(e2));
    poly.add_term(p / 2, std::log(static_cast<double>(p)) + (p / 2.0) * std::log(p / 2.0 + 1.0) +
                             (p / 2.0 + 1.0) +
                             (p / 2.0) * std::log(2.0 * ctx.n * ctx.mu * (e2 + 0.5)));
    // E tau_i^j via Minkowski: the first gap has the stationary-excess law when the
    // arrival stream runs in equilibrium timing, and its high moments need not be
    // dominated by the ordinary ones.
    const double lambda = 1.0 / ctx.arrival.mean();
    const double service_part = poly.expect_log([&](std::size_t j) {
        if (j == 0) return 0.0;
        const double jd = static_cast<double>(j);
        const double log_ord = ctx.arrival.log_moment(jd) / jd + log_i;
        if (!ctx.equilibrium_arrivals) return jd * log_ord;
        const double log_delay =
            (std::log(lambda) + ctx.arrival.log_moment(jd + 1.0) - std::log(jd + 1.0)) / jd;
        return jd * log_sum_exp(log_ord, log_delay);
    });
    return (p - 1.0) * log2 + log_sum_exp(arrival_part, service_part);
}

// sum over i > i_max of P(W_i scaled > r), grouped into doubling blocks per eq. (87):
// block l covers [2^l, 2^{l+1}) with threshold a_l = r + (2^l/n) beta/rho at the block floor
// and moments at the block ceiling. Chebyshev in the best even power p <= 16 per block.
[[nodiscard]] inline std::pair<double, bool> gg_truncation_bound(const GgTruncationContext& ctx,
                                                                 double r,
                                                                 std::uint64_t i_max) {
    if (!(r > 0)) throw std::invalid_argument("gg_truncation_bound: r must be > 0");
    int l = 0;
    while ((1ull << (l + 1)) <= i_max + 1) ++l;
    KahanSum total;
    double prev_block = std::numeric_limits<double>::infinity();
    double last_ratio = 0.0;
    bool converged = false;
    for (int steps = 0; steps < 400; ++steps, ++l) {
        const double i_lo = std::pow(2.0, l);
        const double i_hi = std::pow(2.0, l + 1);
        const double a_l = r + (i_lo / ctx.n) * ctx.beta_over_rho;
        double best = std::numeric_limits<double>::infinity();
        for (unsigned p = 2; p <= 16; p += 2) {
            const double v =
                log_gg_w_moment(ctx, p, i_hi) - p * std::log(a_l * ctx.b_sqrt_n);
            best = std::min(best, v);
        }
        const double block = std::exp(l * std::log(2.0) + best);
        if (!std::isfinite(block)) break;
        total.add(block);
        last_ratio = block / prev_block;
        prev_block = block;
        if (block < 1e-300 || block < 1e-18 * total.value()) {
            converged = true;
            break;
        }
    }
    double out = total.value();
    if (!converged && last_ratio < 0.95) {
        // geometric closure of the remaining blocks
        out += prev_block * last_ratio / (1.0 - last_ratio);
        converged = true;
    }
    return {out, converged};
}

}  // namespace detail

[[nodiscard]] inline GgTailResult gg_supremum_tail(const QueueModel& model,
                                                   const std::vector<double>& r_grid,
                                                   std::size_t replications, double horizon,
                                                   std::uint64_t seed, unsigned threads = 0) {
    if (r_grid.empty() || replications == 0)
        throw std::invalid_argument("gg_supremum_tail: empty r_grid or zero replications");
    for (std::size_t i = 0; i < r_grid.size(); ++i) {
        if (!(r_grid[i] > 0) || (i > 0 && !(r_grid[i] > r_grid[i - 1])))
            throw std::invalid_argument("gg_supremum_tail: r_grid must be positive increasing");
    }
    const ScalingRegime& rg = model.regime;
    const Law arrival_law = model.interarrival_template.scaled_to_rate(rg.lambda_n);
    const double max_r = r_grid.back();
    const auto i_max = static_cast<std::uint64_t>(
        std::ceil(20.0 * static_cast<double>(rg.n) * max_r * rg.rho_n / rg.beta));

    const RenewalProcess arrivals(arrival_law, model.equilibrium_arrivals);
    const RenewalProcess stations(model.service, true);
    const double scale = rg.scale();

    std::vector<double> maxima(replications, 0.0);
    std::vector<std::uint8_t> truncated(replications, 0);
    parallel_for(replications, threads, [&](std::size_t rep) {
        const std::uint64_t rep_seed = derive_stream_seed(seed, rep);
        Rng a_rng = Rng::stream(rep_seed, 0);
        std::vector<double> tau = arrivals.jump_times(a_rng, horizon);
        if (tau.size() < i_max) {
            truncated[rep] = 1;
        } else {
            tau.resize(i_max);
        }
        if (tau.empty()) {
            maxima[rep] = -std::numeric_limits<double>::infinity();
            return;
        }
        const double t_last = tau.back();
        Rng s_rng = Rng::stream(rep_seed, 1);
        std::vector<double> jumps;
        jumps.reserve(static_cast<std::size_t>(
            static_cast<double>(rg.n) * rg.mu * t_last * 1.25 + 16.0));
        for (std::uint64_t k = 0; k < rg.n; ++k) {
            const std::vector<double> js = stations.jump_times(s_rng, t_last);
            jumps.insert(jumps.end(), js.begin(), js.end());
        }
        std::sort(jumps.begin(), jumps.end());
        double m = -std::numeric_limits<double>::infinity();
        std::size_t jp = 0;
        for (std::size_t i = 0; i < tau.size(); ++i) {
            while (jp < jumps.size() && jumps[jp] <= tau[i]) ++jp;
            const double w =
                (static_cast<double>(i + 1) - static_cast<double>(jp)) / scale;
            m = std::max(m, w);
        }
        maxima[rep] = m;
    });

    detail::GgTruncationContext ctx;
    ctx.n = static_cast<double>(rg.n);
    ctx.mu = rg.mu;
    ctx.beta_over_rho = rg.beta_n() / rg.rho_n;
    ctx.b_sqrt_n = scale;
    ctx.arrival = arrival_law;
    ctx.service = model.service;
    ctx.equilibrium_arrivals = model.equilibrium_arrivals;

    GgTailResult res;
    res.i_max = i_max;
    for (std::uint8_t f : truncated) res.horizon_truncated += f;
    res.rows.reserve(r_grid.size());
    for (double r : r_grid) {
        GgTailRow row;
        row.r = r;
        row.trials = replications;
        for (double m : maxima)
            if (m > r) ++row.hits;
        const CiScalar ci = wilson_interval(row.hits, replications);
        row.estimate = ci.mean;
        row.ci_low = ci.lo;
        row.ci_high = ci.hi;
        const auto [trunc, ok] = detail::gg_truncation_bound(ctx, r, i_max);
        row.truncation_bound = trunc;
        const double floor_scale =
            std::max(row.estimate, 1.0 / static_cast<double>(replications));
        row.truncation_flag = !ok || trunc > 0.1 * floor_scale;
        res.rows.push_back(row);
    }
    return res;
}

// Thinning coupling for load monotonicity: the thinned system keeps each arrival with
// probability thin_prob and every kept customer carries its own service time, so queue
// lengths compare pathwise at every sample point.
struct ThinnedPair {
    EventTrace full;
    EventTrace thinned;
    double thin_prob = 1.0;
};

[[nodiscard]] inline ThinnedPair thinned_coupling(const QueueModel& model, double thin_prob,
                                                  double horizon,
                                                  const std::vector<double>& sample_grid,
                                                  std::uint64_t seed) {
    if (!(thin_prob > 0.0) || !(thin_prob <= 1.0))
        throw std::invalid_argument("thinned_coupling: thin_prob must lie in (0,1]");
    if (model.q0 > model.regime.n)
        throw std::invalid_argument("thinned_coupling: requires q0 <= n (per-arrival service)");
    EngineInputs full = draw_engine_inputs(model, horizon, seed);
    full.eta_by_arrival = true;
    full.eta.resize(full.arrival_times.size());

    EngineInputs thin = full;
    thin.arrival_times.clear();
    thin.eta.clear();
    Rng u_rng = Rng::stream(seed, 3);
    for (std::size_t i = 0; i < full.arrival_times.size(); ++i) {
        const bool keep = u_rng.uniform() < thin_prob;
        if (keep) {
            thin.arrival_times.push_back(full.arrival_times[i]);
            thin.eta.push_back(full.eta[i]);
        }
    }
    EngineOptions opts;
    opts.sample_grid = sample_grid;
    ThinnedPair out;
    out.thin_prob = thin_prob;
    out.full = run_engine(full, horizon, opts);
    out.thinned = run_engine(thin, horizon, opts);
    return out;
}

}  // namespace qpot
