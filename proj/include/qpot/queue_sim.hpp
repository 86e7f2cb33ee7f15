#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qpot/common.hpp"
#include "qpot/laws.hpp"
#include "qpot/renewal.hpp"

namespace qpot {

// G/G/n FCFS model in the paper's scaling: arrivals at rate lambda_n = n mu rho_n,
// service times eta ~ service, capacity n anonymous servers.
struct QueueModel {
    ScalingRegime regime;
    Law service = Law::exponential(1.0);
    Law interarrival_template = Law::exponential(1.0);  // unit-rate shape, scaled to lambda_n
    std::uint64_t q0 = 0;
    bool equilibrium_arrivals = true;
    bool equilibrium_init_residuals = true;
    std::optional<std::vector<double>> init_residuals;  // overrides the equilibrium draw

    [[nodiscard]] static QueueModel make(const ScalingRegime& r, Law service,
                                         Law interarrival_template) {
        QueueModel m;
        m.regime = r;
        m.service = std::move(service);
        m.interarrival_template = std::move(interarrival_template);
        m.q0 = r.n;
        return m;
    }
};

enum class EventKind : std::uint8_t { departure = 0, arrival = 1, enter_service = 2 };

struct TraceEvent {
    EventKind kind;
    double time;
    std::uint64_t id;
};

struct ResidualSnapshot {
    double t = 0.0;
    std::uint64_t n = 1;
    std::vector<double> residuals;  // ascending; in-service customers only

    // S_n(x,t) = (1/n) #[chi > x], eq. (10''')
    [[nodiscard]] double s_at(double x) const {
        const auto it = std::upper_bound(residuals.begin(), residuals.end(), x);
        return static_cast<double>(residuals.end() - it) / static_cast<double>(n);
    }
};

// Deterministic inputs: the engine is a pure function of these arrays, which is what
// the coupling wrappers (infinite-server, thinning) rely on.
struct EngineInputs {
    std::uint64_t n = 1;
    std::uint64_t q0 = 0;
    std::vector<double> init_residuals;  // size q0 ^ n
    std::vector<double> arrival_times;   // strictly positive, sorted
    std::vector<double> eta;             // consumed in entering-service order by default
    bool eta_by_arrival = false;         // instead: eta[i] belongs to arrival i
};

struct EngineOptions {
    std::vector<double> sample_grid;     // sorted
    std::vector<double> snapshot_times;  // sorted
    bool capture_events = false;
    bool capture_enter_records = false;
    bool check_balance = true;          // eq. (40), integer arithmetic, every event
    bool check_reconstruction = false;  // eqs. (107)/(79) at sample/snapshot times
    bool accumulate_occupancy = false;  // time-weighted histogram of Q
    std::uint64_t q_cap = 0;            // 0: uncapped; else overflow -> partial trace
};

struct EventTrace {
    std::uint64_t n = 1;
    std::uint64_t q0 = 0;
    std::vector<TraceEvent> events;
    std::vector<double> sample_t;
    std::vector<std::uint64_t> sample_q;
    std::vector<ResidualSnapshot> snapshots;
    std::vector<std::pair<double, double>> enter_records;  // (tau_hat, eta) in entering order
    std::vector<double> occupancy_time;
    std::uint64_t arrivals = 0;
    std::uint64_t enters = 0;
    std::uint64_t departures = 0;
    std::uint64_t departures_initial = 0;
    std::uint64_t q_end = 0;
    std::uint64_t balance_violations = 0;
    std::uint64_t reconstruction_violations = 0;
    bool overflow = false;
    double end_time = 0.0;
};

namespace detail {

struct DepartureOrder {
    bool operator()(const std::pair<double, std::uint64_t>& a,
                    const std::pair<double, std::uint64_t>& b) const {
        return a > b;
    }
};

}  // namespace detail

inline EventTrace run_engine(const EngineInputs& in, double horizon, const EngineOptions& opts) {
    if (!(horizon >= 0)) throw std::invalid_argument("run_engine: horizon must be >= 0");
    const std::uint64_t k0 = std::min(in.q0, in.n);
    if (in.init_residuals.size() != k0)
        throw std::invalid_argument("run_engine: init_residuals size must be q0 ^ n");

    EventTrace tr;
    tr.n = in.n;
    tr.q0 = in.q0;

    std::uint64_t q = in.q0;
    std::priority_queue<std::pair<double, std::uint64_t>, std::vector<std::pair<double, std::uint64_t>>,
                        detail::DepartureOrder>
        dep_heap;
    std::unordered_map<std::uint64_t, double> in_service;
    std::deque<std::uint64_t> waiting;
    in_service.reserve(static_cast<std::size_t>(in.n) * 2);

    for (std::uint64_t i = 0; i < k0; ++i) {
        dep_heap.emplace(in.init_residuals[i], i + 1);
        in_service.emplace(i + 1, in.init_residuals[i]);
    }
    for (std::uint64_t i = k0; i < in.q0; ++i) waiting.push_back(i + 1);

    std::size_t next_arrival = 0;
    std::size_t eta_cursor = 0;
    std::size_t sample_ptr = 0;
    std::size_t snap_ptr = 0;
    double now = 0.0;

    const auto next_eta = [&](std::uint64_t id) -> double {
        const std::size_t idx =
            in.eta_by_arrival ? static_cast<std::size_t>(id - in.q0 - 1) : eta_cursor++;
        if (idx >= in.eta.size()) throw std::runtime_error("run_engine: eta pool exhausted");
        return in.eta[idx];
    };

    const auto emit_snapshot = [&](double t) {
        ResidualSnapshot s;
        s.t = t;
        s.n = in.n;
        s.residuals.reserve(in_service.size());
        for (const auto& [id, dep] : in_service) s.residuals.push_back(dep - t);
        std::sort(s.residuals.begin(), s.residuals.end());
        tr.snapshots.push_back(std::move(s));
    };

    const auto reconstruct_check = [&](double t) {
        if (!opts.check_reconstruction) return;
        // eq. (79): departures of post-0 enterers by t, from entering records
        std::uint64_t sumrec = 0;
        for (const auto& [tau_hat, eta] : tr.enter_records)
            if (tau_hat + eta <= t) ++sumrec;
        const std::uint64_t d_post = tr.departures - tr.departures_initial;
        if (sumrec != d_post) ++tr.reconstruction_violations;
        // eq. (107): Q(t) = Q0_alive(t) + (q0-n)+ + A(t) - sumrec
        std::uint64_t q0_alive = 0;
        for (double r : in.init_residuals)
            if (r > t) ++q0_alive;
        const std::uint64_t spill = in.q0 > in.n ? in.q0 - in.n : 0;
        if (q0_alive + spill + tr.arrivals < sumrec ||
            q0_alive + spill + tr.arrivals - sumrec != q) {
            ++tr.reconstruction_violations;
        }
    };

    const auto flush_observers = [&](double upto_exclusive) {
        while (sample_ptr < opts.sample_grid.size() && opts.sample_grid[sample_ptr] < upto_exclusive) {
            const double s = opts.sample_grid[sample_ptr++];
            if (s > horizon) continue;
            tr.sample_t.push_back(s);
            tr.sample_q.push_back(q);
            reconstruct_check(s);
        }
        while (snap_ptr < opts.snapshot_times.size() && opts.snapshot_times[snap_ptr] < upto_exclusive) {
            const double s = opts.snapshot_times[snap_ptr++];
            if (s > horizon) continue;
            emit_snapshot(s);
            reconstruct_check(s);
        }
    };

    const auto balance_check = [&] {
        if (!opts.check_balance) return;
        const std::uint64_t lhs = (in.q0 > in.n ? in.q0 - in.n : 0) + tr.arrivals;
        const std::uint64_t rhs = (q > in.n ? q - in.n : 0) + tr.enters;
        if (lhs != rhs) ++tr.balance_violations;
    };

    const auto occupancy_add = [&](double dt) {
        if (!opts.accumulate_occupancy || dt <= 0) return;
        if (tr.occupancy_time.size() <= q) tr.occupancy_time.resize(q + 1, 0.0);
        tr.occupancy_time[q] += dt;
    };

    const auto enter_service = [&](std::uint64_t id, double t) {
        const double eta = next_eta(id);
        dep_heap.emplace(t + eta, id);
        in_service.emplace(id, t + eta);
        ++tr.enters;
        if (opts.capture_enter_records || opts.check_reconstruction)
            tr.enter_records.emplace_back(t, eta);
        if (opts.capture_events) tr.events.push_back({EventKind::enter_service, t, id});
    };

    for (;;) {
        const double t_dep =
            dep_heap.empty() ? std::numeric_limits<double>::infinity() : dep_heap.top().first;
        const double t_arr = next_arrival < in.arrival_times.size()
                                 ? in.arrival_times[next_arrival]
                                 : std::numeric_limits<double>::infinity();
        // ties resolved departure-first per the calendar ordering rule
        const bool is_dep = t_dep <= t_arr;
        const double te = is_dep ? t_dep : t_arr;
        if (te > horizon || !std::isfinite(te)) break;
        flush_observers(te);
        occupancy_add(te - now);
        now = te;
        if (is_dep) {
            const auto [t, id] = dep_heap.top();
            dep_heap.pop();
            in_service.erase(id);
            --q;
            ++tr.departures;
            if (id <= k0) ++tr.departures_initial;
            if (opts.capture_events) tr.events.push_back({EventKind::departure, t, id});
            if (!waiting.empty()) {
                const std::uint64_t wid = waiting.front();
                waiting.pop_front();
                enter_service(wid, t);
            }
        } else {
            ++next_arrival;
            ++tr.arrivals;
            ++q;
            const std::uint64_t id = in.q0 + tr.arrivals;
            if (opts.capture_events) tr.events.push_back({EventKind::arrival, te, id});
            if (in_service.size() < in.n) {
                enter_service(id, te);
            } else {
                waiting.push_back(id);
            }
            if (opts.q_cap && q > opts.q_cap) {
                tr.overflow = true;
                balance_check();
                break;
            }
        }
        balance_check();
    }
    if (!tr.overflow) {
        flush_observers(std::nextafter(horizon, std::numeric_limits<double>::infinity()));
        occupancy_add(horizon - now);
        tr.end_time = horizon;
    } else {
        tr.end_time = now;
    }
    tr.q_end = q;
    return tr;
}

// Stream layout (manifest-documented): 0 arrivals, 1 service draws, 2 initial residuals.
[[nodiscard]] inline EngineInputs draw_engine_inputs(const QueueModel& model, double horizon,
                                                     std::uint64_t seed) {
    EngineInputs in;
    in.n = model.regime.n;
    in.q0 = model.q0;
    const Law arrival_law = model.interarrival_template.scaled_to_rate(model.regime.lambda_n);
    const RenewalProcess arrivals(arrival_law, model.equilibrium_arrivals);
    Rng arr_rng = Rng::stream(seed, 0);
    in.arrival_times = arrivals.jump_times(arr_rng, horizon);

    const std::uint64_t k0 = std::min(in.q0, in.n);
    const std::uint64_t spill = in.q0 - k0;
    Rng eta_rng = Rng::stream(seed, 1);
    in.eta.reserve(in.arrival_times.size() + spill);
    for (std::size_t i = 0; i < in.arrival_times.size() + spill; ++i)
        in.eta.push_back(model.service.sample(eta_rng));

    if (model.init_residuals) {
        in.init_residuals = *model.init_residuals;
    } else {
        Rng res_rng = Rng::stream(seed, 2);
        in.init_residuals.reserve(k0);
        if (model.equilibrium_init_residuals) {
            const EquilibriumSampler eq(model.service);
            for (std::uint64_t i = 0; i < k0; ++i) in.init_residuals.push_back(eq.sample(res_rng));
        } else {
            for (std::uint64_t i = 0; i < k0; ++i)
                in.init_residuals.push_back(model.service.sample(res_rng));
        }
    }
    return in;
}

[[nodiscard]] inline EventTrace simulate(const QueueModel& model, double horizon,
                                         const std::vector<double>& sample_grid,
                                         std::uint64_t seed, EngineOptions opts = {}) {
    opts.sample_grid = sample_grid;
    return run_engine(draw_engine_inputs(model, horizon, seed), horizon, opts);
}

inline void write_trace(const std::string& path, const std::vector<TraceEvent>& events) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_trace: cannot open " + path);
    for (const auto& e : events) {
        const auto kind = static_cast<std::uint8_t>(e.kind);
        out.write(reinterpret_cast<const char*>(&kind), 1);
        out.write(reinterpret_cast<const char*>(&e.time), 8);
        out.write(reinterpret_cast<const char*>(&e.id), 8);
    }
}

struct StationarySample {
    std::vector<double> t;
    std::vector<std::uint64_t> q;
    std::vector<double> x;  // (Q - n)/(b_n sqrt n)
    std::vector<ResidualSnapshot> snapshots;
    double ess = 0.0;
    double geweke_z = 0.0;
    std::uint64_t balance_violations = 0;
    std::string warning;
};

namespace detail {

// Geyer initial-positive-sequence ESS on a possibly autocorrelated series.
[[nodiscard]] inline double ess_autocorr(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    if (n < 8) return static_cast<double>(n);
    double mean = 0.0;
    for (double v : xs) mean += v;
    mean /= static_cast<double>(n);
    std::vector<double> c(n / 2, 0.0);
    for (std::size_t lag = 0; lag < n / 2; ++lag) {
        double acc = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) acc += (xs[i] - mean) * (xs[i + lag] - mean);
        c[lag] = acc / static_cast<double>(n);
    }
    if (c[0] <= 0.0) return static_cast<double>(n);
    double tau = 1.0;
    for (std::size_t k = 1; k + 1 < c.size(); k += 2) {
        const double pair = (c[k] + c[k + 1]) / c[0];
        if (pair <= 0.0) break;
        tau += 2.0 * pair;
    }
    return static_cast<double>(n) / tau;
}

[[nodiscard]] inline double geweke_z(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    if (n < 20) return 0.0;
    const std::size_t n1 = n / 10;
    const std::size_t n2 = n / 2;
    const auto window_stats = [](const double* p, std::size_t len) {
        double mean = 0.0;
        for (std::size_t i = 0; i < len; ++i) mean += p[i];
        mean /= static_cast<double>(len);
        // batch SE to absorb autocorrelation
        const std::size_t nb = std::min<std::size_t>(10, len);
        const std::size_t per = len / nb;
        double var = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            double bm = 0.0;
            for (std::size_t i = b * per; i < (b + 1) * per; ++i) bm += p[i];
            bm /= static_cast<double>(per);
            var += sqr(bm - mean);
        }
        var /= static_cast<double>(nb) * static_cast<double>(nb - 1);
        return std::pair<double, double>{mean, var};
    };
    const auto [m1, v1] = window_stats(xs.data(), n1);
    const auto [m2, v2] = window_stats(xs.data() + (n - n2), n2);
    const double denom = std::sqrt(v1 + v2);
    return denom > 0 ? (m1 - m2) / denom : 0.0;
}

}  // namespace detail

[[nodiscard]] inline StationarySample stationary_sample(const QueueModel& model, double burn_in,
                                                        std::size_t count, double spacing,
                                                        std::uint64_t seed,
                                                        std::uint64_t q_cap_override = 0) {
    if (!(model.regime.rho_n < 1.0)) throw std::invalid_argument("stationary_sample: rho_n >= 1");
    if (!(burn_in > 0) || !(spacing > 0))
        throw std::invalid_argument("stationary_sample: burn_in and spacing must be > 0");
    std::vector<double> grid;
    grid.reserve(count);
    for (std::size_t j = 1; j <= count; ++j)
        grid.push_back(burn_in + static_cast<double>(j) * spacing);
    const double horizon = grid.empty() ? burn_in : grid.back();

    EngineOptions opts;
    opts.sample_grid = grid;
    opts.snapshot_times = grid;
    opts.q_cap = q_cap_override ? q_cap_override
                                : 20 * model.regime.n +
                                      static_cast<std::uint64_t>(200.0 * model.regime.scale()) + 1000;
    const EventTrace tr = run_engine(draw_engine_inputs(model, horizon, seed), horizon, opts);
    if (tr.overflow)
        throw std::runtime_error(
            "stationary_sample: instability detected, queue exceeded cap " +
            std::to_string(opts.q_cap) + " at t=" + std::to_string(tr.end_time) +
            " (rho_n=" + std::to_string(model.regime.rho_n) + ")");

    StationarySample out;
    out.t = tr.sample_t;
    out.q = tr.sample_q;
    out.x.reserve(tr.sample_q.size());
    const double scale = model.regime.scale();
    for (std::uint64_t qv : tr.sample_q)
        out.x.push_back((static_cast<double>(qv) - static_cast<double>(model.regime.n)) / scale);
    out.snapshots = tr.snapshots;
    out.ess = detail::ess_autocorr(out.x);
    out.geweke_z = detail::geweke_z(out.x);
    out.balance_violations = tr.balance_violations;
    if (std::abs(out.geweke_z) > 3.0)
        out.warning = "geweke drift |z| = " + std::to_string(std::abs(out.geweke_z)) +
                      " > 3: burn-in may be short";
    return out;
}

// Infinite-server comparison system of eq. (89): every arrival enters service at its
// arrival epoch. Coupled on the same arrays as the queue (primed setup, Q'(0)=n, where
// entering order equals arrival order), breve Q <= Q' pathwise.
struct InfiniteServerResult {
    std::vector<double> times;          // union of both systems' jump times
    std::vector<std::uint64_t> breve_q;  // breve Q right-continuous at times
    std::vector<std::uint64_t> queue_q;  // coupled queue Q at the same times
    bool coupled_ok = true;
    std::uint64_t violations = 0;
};

[[nodiscard]] inline InfiniteServerResult simulate_infinite_server_bound(const QueueModel& model,
                                                                         double horizon,
                                                                         std::uint64_t seed) {
    if (!model.equilibrium_arrivals)
        throw std::invalid_argument("simulate_infinite_server_bound: equilibrium arrival mode required");
    QueueModel primed = model;
    primed.q0 = model.regime.n;  // the primed system starts fully occupied
    EngineInputs in = draw_engine_inputs(primed, horizon, seed);

    EngineOptions opts;
    opts.capture_events = true;
    const EventTrace qtr = run_engine(in, horizon, opts);

    // breve system: departure at tau_i + eta_i, initial customers keep their residuals
    std::vector<std::pair<double, int>> jumps;  // (time, +1/-1)
    jumps.reserve(2 * in.arrival_times.size() + in.init_residuals.size());
    for (double r : in.init_residuals)
        if (r <= horizon) jumps.emplace_back(r, -1);
    for (std::size_t i = 0; i < in.arrival_times.size(); ++i) {
        jumps.emplace_back(in.arrival_times[i], +1);
        const double dep = in.arrival_times[i] + in.eta[i];
        if (dep <= horizon) jumps.emplace_back(dep, -1);
    }
    std::sort(jumps.begin(), jumps.end(), [](const auto& a, const auto& b) {
        // departures before arrivals at ties, matching the queue's calendar rule
        return a.first != b.first ? a.first < b.first : a.second < b.second;
    });

    // merged jump times of both systems
    std::vector<double> times;
    times.reserve(jumps.size() + qtr.events.size());
    for (const auto& [t, d] : jumps) times.push_back(t);
    for (const auto& e : qtr.events)
        if (e.kind != EventKind::enter_service) times.push_back(e.time);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    InfiniteServerResult res;
    res.times = times;
    res.breve_q.reserve(times.size());
    res.queue_q.reserve(times.size());

    std::uint64_t bq = model.regime.n;
    std::size_t jp = 0;
    std::uint64_t qq = primed.q0;
    std::size_t ep = 0;
    for (double t : times) {
        while (jp < jumps.size() && jumps[jp].first <= t) {
            bq = static_cast<std::uint64_t>(static_cast<std::int64_t>(bq) + jumps[jp].second);
            ++jp;
        }
        while (ep < qtr.events.size() && qtr.events[ep].time <= t) {
            if (qtr.events[ep].kind == EventKind::arrival) ++qq;
            if (qtr.events[ep].kind == EventKind::departure) --qq;
            ++ep;
        }
        res.breve_q.push_back(bq);
        res.queue_q.push_back(qq);
        if (bq > qq) ++res.violations;
    }
    res.coupled_ok = res.violations == 0;
    return res;
}

}  // namespace qpot

#include "qpot/gg_bound.hpp"
