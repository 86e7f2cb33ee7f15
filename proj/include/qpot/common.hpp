#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qpot {

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream derivation rule (recorded in run manifests): engine seed =
// splitmix64(splitmix64(master) ^ splitmix64(stream_index + 1)).
[[nodiscard]] constexpr std::uint64_t derive_stream_seed(std::uint64_t master,
                                                        std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(master) ^ splitmix64(stream + 1));
}

// mt19937_64 is bit-exact by the standard; std::*_distribution is not, so all
// variate generation below works from raw uniforms only.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    [[nodiscard]] static Rng stream(std::uint64_t master, std::uint64_t index) {
        return Rng(derive_stream_seed(master, index));
    }

    // uniform on [0,1)
    [[nodiscard]] double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    // uniform on (0,1), symmetric, never returns an endpoint
    [[nodiscard]] double uniform_pos() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }
    [[nodiscard]] double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform_pos();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }
    [[nodiscard]] std::uint64_t raw() { return engine_(); }

  private:
    std::mt19937_64 engine_;
};

struct KahanSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double v) noexcept {
        const double y = v - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    [[nodiscard]] double value() const noexcept { return sum; }
};

[[nodiscard]] inline double log_sum_exp(const std::vector<double>& xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    KahanSum s;
    for (double x : xs) s.add(std::exp(x - m));
    return m + std::log(s.value());
}

[[nodiscard]] inline double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    if (!std::isfinite(m)) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

[[nodiscard]] constexpr double sqr(double x) noexcept { return x * x; }

struct CiScalar {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

inline constexpr double kZ99 = 2.5758293035489004;  // two-sided 99% normal quantile

// Batch-means interval: robust for heavy-tailed per-replication values (high moments).
[[nodiscard]] inline CiScalar batch_means_ci(const std::vector<double>& values,
                                             std::size_t n_batches = 100, double z = kZ99) {
    if (values.empty()) throw std::invalid_argument("batch_means_ci: empty sample");
    n_batches = std::min(n_batches, values.size());
    const std::size_t per = values.size() / n_batches;
    std::vector<double> means;
    means.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        KahanSum s;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) s.add(values[i]);
        means.push_back(s.value() / static_cast<double>(per));
    }
    KahanSum tot;
    for (double m : means) tot.add(m);
    const double mean = tot.value() / static_cast<double>(means.size());
    KahanSum var;
    for (double m : means) var.add(sqr(m - mean));
    const double se = means.size() > 1
                          ? std::sqrt(var.value() / (static_cast<double>(means.size()) *
                                                     static_cast<double>(means.size() - 1)))
                          : 0.0;
    return {mean, mean - z * se, mean + z * se};
}

[[nodiscard]] inline CiScalar wilson_interval(std::uint64_t hits, std::uint64_t trials,
                                              double z = kZ99) {
    if (trials == 0) throw std::invalid_argument("wilson_interval: zero trials");
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(hits) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {p, std::max(0.0, center - half), std::min(1.0, center + half)};
}

// Deterministic work distribution: worker w owns tasks {w, w+threads, ...}; results
// must be written to task-indexed slots so the merge order never depends on timing.
inline void parallel_for(std::size_t n_tasks, unsigned threads,
                         const std::function<void(std::size_t)>& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n_tasks, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n_tasks; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n_tasks; i += threads) {
                if (failed.load(std::memory_order_relaxed)) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!failed.exchange(true)) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

namespace detail {

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

[[nodiscard]] inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                                             double b, double tol = 1e-10, int max_depth = 48) {
    if (!(b > a)) return 0.0;
    const double fa = f(a);
    const double m = 0.5 * (a + b);
    const double fm = f(m);
    const double fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

[[nodiscard]] inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace qpot
