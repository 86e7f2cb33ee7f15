#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "qpot/laws.hpp"
#include "qpot/ldp_lab.hpp"

namespace qpot {

// Config rejection carries every problem found, not just the first one.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(std::vector<std::string> errors)
        : std::runtime_error(join(errors)), errors_(std::move(errors)) {}

    [[nodiscard]] const std::vector<std::string>& errors() const { return errors_; }

  private:
    static std::string join(const std::vector<std::string>& errors) {
        std::string s = "invalid config:";
        for (const auto& e : errors) s += "\n  - " + e;
        return s;
    }
    std::vector<std::string> errors_;
};

[[nodiscard]] inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

enum class RunKind {
    simulate,
    stationary,
    bounds,
    renewal_bounds,
    limit_solve,
    quasipotential,
    panel
};

[[nodiscard]] inline std::string run_kind_name(RunKind k) {
    switch (k) {
        case RunKind::simulate: return "simulate";
        case RunKind::stationary: return "stationary";
        case RunKind::bounds: return "bounds";
        case RunKind::renewal_bounds: return "renewal-bounds";
        case RunKind::limit_solve: return "limit-solve";
        case RunKind::quasipotential: return "quasipotential";
        case RunKind::panel: return "panel";
    }
    return "?";
}

struct SimulateCfg {
    ScalingRegime regime;
    Law service = Law::exponential(1.0);
    Law interarrival = Law::exponential(1.0);
    std::uint64_t q0 = 0;
    bool equilibrium_arrivals = true;
    bool equilibrium_init = true;
    double horizon = 1.0;
    std::size_t samples = 200;
    bool events = false;
};

struct StationaryCfg {
    ScalingRegime regime;
    Law service = Law::exponential(1.0);
    Law interarrival = Law::exponential(1.0);
    double burn_in = 0.0;  // 0: 50 n / mu
    std::size_t count = 0;
    double spacing = 0.0;
    std::vector<double> residual_grid;
};

struct BoundsCfg {
    ScalingRegime regime;
    Law service = Law::exponential(1.0);
    Law interarrival = Law::exponential(1.0);
    std::vector<double> r_grid;
    std::size_t replications = 0;
    double horizon = 0.0;           // 0: sized from i_max
    double coupling_horizon = 0.0;  // 0: 10/mu
};

struct RenewalBoundsCfg {
    Law law = Law::exponential(1.0);
    bool equilibrium = false;
    int m_max = 4;
    std::vector<double> t_list;
    std::size_t replications = 0;
};

struct LimitSolveCfg {
    Law service = Law::exponential(1.0);
    double beta = 1.0;
    double mu = 1.0;
    double T = 8.0;
    double dt = 0.0;  // 0: T/800
    std::string forcing = "beta-drift";
    double slope = 0.0;      // forcing = "linear": f(t) = intercept + slope t
    double intercept = 0.0;
};

struct QuasipotentialCfg {
    Law service = Law::exponential(1.0);
    double sigma = 1.0;
    double beta = 1.0;
    double mu = 1.0;
    std::vector<double> x_grid;
    std::vector<double> T_grid;  // empty: {2,4,8,16,32}/mu
    std::size_t cells = 32;
    double dt = 0.0;
    std::size_t max_iterations = 300;
};

struct PanelCfg {
    PanelFamily family;
    std::vector<std::uint64_t> n_list;
    std::vector<double> x_grid;
    PanelOptions options;
};

struct RunConfig {
    RunKind kind = RunKind::simulate;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    bool emit_plot_data = false;
    std::string hash_hex;
    std::variant<SimulateCfg, StationaryCfg, BoundsCfg, RenewalBoundsCfg, LimitSolveCfg,
                 QuasipotentialCfg, PanelCfg>
        body;
};

namespace detail {

struct CfgErrors {
    std::vector<std::string> v;
    void add(const std::string& path, const std::string& msg) { v.push_back(path + ": " + msg); }
};

inline void check_keys(const nlohmann::json& j, const std::string& path,
                       const std::vector<std::string>& allowed, CfgErrors& errs) {
    if (!j.is_object()) {
        errs.add(path, "expected an object");
        return;
    }
    for (const auto& [key, val] : j.items()) {
        bool known = false;
        for (const auto& a : allowed)
            if (key == a) known = true;
        if (!known) errs.add(path, "unknown key \"" + key + "\"");
    }
}

[[nodiscard]] inline std::optional<double> get_num(const nlohmann::json& j, const std::string& key,
                                                   const std::string& path, CfgErrors& errs,
                                                   bool required,
                                                   std::optional<double> fallback = {}) {
    if (!j.contains(key)) {
        if (required) errs.add(path + "." + key, "missing");
        return fallback;
    }
    if (!j[key].is_number()) {
        errs.add(path + "." + key, "expected a number");
        return fallback;
    }
    return j[key].get<double>();
}

[[nodiscard]] inline std::optional<bool> get_bool(const nlohmann::json& j, const std::string& key,
                                                  const std::string& path, CfgErrors& errs,
                                                  std::optional<bool> fallback = {}) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_boolean()) {
        errs.add(path + "." + key, "expected a boolean");
        return fallback;
    }
    return j[key].get<bool>();
}

[[nodiscard]] inline std::vector<double> get_num_list(const nlohmann::json& j,
                                                      const std::string& key,
                                                      const std::string& path, CfgErrors& errs,
                                                      bool required) {
    if (!j.contains(key)) {
        if (required) errs.add(path + "." + key, "missing");
        return {};
    }
    if (!j[key].is_array()) {
        errs.add(path + "." + key, "expected an array of numbers");
        return {};
    }
    std::vector<double> out;
    for (const auto& v : j[key]) {
        if (!v.is_number()) {
            errs.add(path + "." + key, "expected an array of numbers");
            return {};
        }
        out.push_back(v.get<double>());
    }
    return out;
}

[[nodiscard]] inline Law law_from_json(const nlohmann::json& j, const std::string& path,
                                       CfgErrors& errs) {
    Law fallback = Law::exponential(1.0);
    if (!j.is_object()) {
        errs.add(path, "expected a law object");
        return fallback;
    }
    if (!j.contains("family") || !j["family"].is_string()) {
        errs.add(path + ".family", "missing or not a string");
        return fallback;
    }
    const std::string fam = j["family"].get<std::string>();
    const std::size_t before = errs.v.size();
    try {
        if (fam == "exponential") {
            check_keys(j, path, {"family", "rate"}, errs);
            const auto rate = get_num(j, "rate", path, errs, true);
            if (errs.v.size() == before) return Law::exponential(*rate);
        } else if (fam == "gamma") {
            check_keys(j, path, {"family", "shape", "rate"}, errs);
            const auto shape = get_num(j, "shape", path, errs, true);
            const auto rate = get_num(j, "rate", path, errs, true);
            if (errs.v.size() == before) return Law::gamma(*shape, *rate);
        } else if (fam == "uniform") {
            check_keys(j, path, {"family", "lo", "hi"}, errs);
            const auto lo = get_num(j, "lo", path, errs, true);
            const auto hi = get_num(j, "hi", path, errs, true);
            if (errs.v.size() == before) return Law::uniform(*lo, *hi);
        } else if (fam == "deterministic") {
            check_keys(j, path, {"family", "value"}, errs);
            const auto v = get_num(j, "value", path, errs, true);
            if (errs.v.size() == before) return Law::deterministic(*v);
        } else if (fam == "lognormal") {
            check_keys(j, path, {"family", "log_mean", "log_sd"}, errs);
            const auto lm = get_num(j, "log_mean", path, errs, true);
            const auto ls = get_num(j, "log_sd", path, errs, true);
            if (errs.v.size() == before) return Law::lognormal(*lm, *ls);
        } else {
            errs.add(path + ".family", "unknown family \"" + fam + "\"");
        }
    } catch (const std::exception& e) {
        errs.add(path, e.what());
    }
    return fallback;
}

[[nodiscard]] inline ScalingRegime regime_from_json(const nlohmann::json& j,
                                                    const std::string& path, CfgErrors& errs) {
    ScalingRegime fallback = ScalingRegime::make(16, 1.0, 1.0);
    if (!j.is_object()) {
        errs.add(path, "expected a regime object");
        return fallback;
    }
    check_keys(j, path, {"n", "beta", "mu", "b_exponent"}, errs);
    const std::size_t before = errs.v.size();
    const auto n = get_num(j, "n", path, errs, true);
    const auto beta = get_num(j, "beta", path, errs, true);
    const auto mu = get_num(j, "mu", path, errs, false, 1.0);
    const auto bexp = get_num(j, "b_exponent", path, errs, false, 0.1);
    if (errs.v.size() != before) return fallback;
    if (*n < 1 || *n != std::floor(*n)) {
        errs.add(path + ".n", "expected a positive integer");
        return fallback;
    }
    try {
        return ScalingRegime::make(static_cast<std::uint64_t>(*n), *beta, *mu, *bexp);
    } catch (const std::exception& e) {
        errs.add(path, e.what());
        return fallback;
    }
}

// the kernels take mu separately from the service law, so insist they agree
inline void check_service_mu(const Law& service, double mu, const std::string& path,
                             CfgErrors& errs) {
    if (!errs.v.empty()) return;  // law or mu already rejected; avoid cascading noise
    if (std::abs(service.mean() * mu - 1.0) > 1e-9)
        errs.add(path, "service mean must equal 1/mu (got mean " + fmt_g17(service.mean()) +
                           ", mu " + fmt_g17(mu) + ")");
}

[[nodiscard]] inline std::size_t get_count(const nlohmann::json& j, const std::string& key,
                                           const std::string& path, CfgErrors& errs, bool required,
                                           std::size_t fallback) {
    const auto v = get_num(j, key, path, errs, required);
    if (!v) return fallback;
    if (*v < 0 || *v != std::floor(*v)) {
        errs.add(path + "." + key, "expected a nonnegative integer");
        return fallback;
    }
    return static_cast<std::size_t>(*v);
}

}  // namespace detail

[[nodiscard]] inline nlohmann::json law_to_json(const Law& law) {
    nlohmann::json j;
    j["family"] = family_name(law.family);
    switch (law.family) {
        case LawFamily::exponential: j["rate"] = law.a; break;
        case LawFamily::gamma: j["shape"] = law.a; j["rate"] = law.b; break;
        case LawFamily::uniform: j["lo"] = law.a; j["hi"] = law.b; break;
        case LawFamily::deterministic: j["value"] = law.a; break;
        case LawFamily::lognormal: j["log_mean"] = law.a; j["log_sd"] = law.b; break;
    }
    return j;
}

[[nodiscard]] inline nlohmann::json regime_to_json(const ScalingRegime& r) {
    return {{"n", r.n}, {"beta", r.beta}, {"mu", r.mu}, {"b_exponent", r.b_exponent}};
}

// Canonical form of a parsed config: every default made explicit, keys sorted by
// nlohmann's object ordering. The config hash is taken over this serialization, so
// spelling a default out in the input JSON does not change the hash.
[[nodiscard]] inline nlohmann::json resolved_config_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["kind"] = run_kind_name(cfg.kind);
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["emit_plot_data"] = cfg.emit_plot_data;
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SimulateCfg>) {
                j["regime"] = regime_to_json(c.regime);
                j["service"] = law_to_json(c.service);
                j["interarrival"] = law_to_json(c.interarrival);
                j["q0"] = c.q0;
                j["equilibrium_arrivals"] = c.equilibrium_arrivals;
                j["equilibrium_init"] = c.equilibrium_init;
                j["horizon"] = c.horizon;
                j["samples"] = c.samples;
                j["events"] = c.events;
            } else if constexpr (std::is_same_v<T, StationaryCfg>) {
                j["regime"] = regime_to_json(c.regime);
                j["service"] = law_to_json(c.service);
                j["interarrival"] = law_to_json(c.interarrival);
                j["burn_in"] = c.burn_in;
                j["count"] = c.count;
                j["spacing"] = c.spacing;
                j["residual_grid"] = c.residual_grid;
            } else if constexpr (std::is_same_v<T, BoundsCfg>) {
                j["regime"] = regime_to_json(c.regime);
                j["service"] = law_to_json(c.service);
                j["interarrival"] = law_to_json(c.interarrival);
                j["r_grid"] = c.r_grid;
                j["replications"] = c.replications;
                j["horizon"] = c.horizon;
                j["coupling_horizon"] = c.coupling_horizon;
            } else if constexpr (std::is_same_v<T, RenewalBoundsCfg>) {
                j["law"] = law_to_json(c.law);
                j["equilibrium"] = c.equilibrium;
                j["m_max"] = c.m_max;
                j["t_list"] = c.t_list;
                j["replications"] = c.replications;
            } else if constexpr (std::is_same_v<T, LimitSolveCfg>) {
                j["service"] = law_to_json(c.service);
                j["beta"] = c.beta;
                j["mu"] = c.mu;
                j["T"] = c.T;
                j["dt"] = c.dt;
                j["forcing"] = c.forcing;
                j["slope"] = c.slope;
                j["intercept"] = c.intercept;
            } else if constexpr (std::is_same_v<T, QuasipotentialCfg>) {
                j["service"] = law_to_json(c.service);
                j["sigma"] = c.sigma;
                j["beta"] = c.beta;
                j["mu"] = c.mu;
                j["x_grid"] = c.x_grid;
                j["T_grid"] = c.T_grid;
                j["cells"] = c.cells;
                j["dt"] = c.dt;
                j["max_iterations"] = c.max_iterations;
            } else if constexpr (std::is_same_v<T, PanelCfg>) {
                j["service"] = law_to_json(c.family.service);
                j["interarrival"] = law_to_json(c.family.interarrival_template);
                j["mu"] = c.family.mu;
                j["beta"] = c.family.beta;
                j["b_exponent"] = c.family.b_exponent;
                j["n_list"] = c.n_list;
                j["x_grid"] = c.x_grid;
                j["sim_samples"] = c.options.sim_samples;
                j["sim_spacing"] = c.options.sim_spacing;
                j["burn_in_multiplier"] = c.options.burn_in_multiplier;
                j["cells"] = c.options.cells;
                j["T_grid"] = c.options.T_grid;
                j["dt"] = c.options.dt;
                j["lbfgs_iterations"] = c.options.lbfgs_iterations;
                j["gg_replications"] = c.options.gg_replications;
                j["include_limit"] = c.options.include_limit;
            }
        },
        cfg.body);
    return j;
}

[[nodiscard]] inline std::string config_hash(const RunConfig& cfg) {
    return hex64(fnv1a64(resolved_config_json(cfg).dump()));
}

[[nodiscard]] inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::CfgErrors errs;
    RunConfig cfg;
    if (!j.is_object()) {
        errs.add("$", "top level must be an object");
        throw ConfigError(errs.v);
    }
    if (!j.contains("kind") || !j["kind"].is_string()) {
        errs.add("$.kind", "missing or not a string");
        throw ConfigError(errs.v);
    }
    const std::string kind = j["kind"].get<std::string>();
    const auto seed = detail::get_num(j, "seed", "$", errs, false, 1.0);
    if (seed && (*seed < 0 || *seed != std::floor(*seed)))
        errs.add("$.seed", "expected a nonnegative integer");
    else if (seed)
        cfg.seed = static_cast<std::uint64_t>(*seed);
    cfg.threads = static_cast<unsigned>(detail::get_count(j, "threads", "$", errs, false, 0));
    cfg.emit_plot_data = *detail::get_bool(j, "emit_plot_data", "$", errs, false);

    const std::vector<std::string> common = {"kind", "seed", "threads", "emit_plot_data"};
    const auto with_common = [&](std::vector<std::string> extra) {
        extra.insert(extra.end(), common.begin(), common.end());
        return extra;
    };

    if (kind == "simulate") {
        cfg.kind = RunKind::simulate;
        detail::check_keys(j, "$",
                           with_common({"regime", "service", "interarrival", "q0",
                                        "equilibrium_arrivals", "equilibrium_init", "horizon",
                                        "samples", "events"}),
                           errs);
        SimulateCfg c;
        c.regime = detail::regime_from_json(j.value("regime", nlohmann::json()), "$.regime", errs);
        c.service = detail::law_from_json(j.value("service", nlohmann::json()), "$.service", errs);
        c.interarrival =
            detail::law_from_json(j.value("interarrival", nlohmann::json()), "$.interarrival", errs);
        c.q0 = detail::get_count(j, "q0", "$", errs, false, c.regime.n);
        c.equilibrium_arrivals = *detail::get_bool(j, "equilibrium_arrivals", "$", errs, true);
        c.equilibrium_init = *detail::get_bool(j, "equilibrium_init", "$", errs, true);
        const auto horizon = detail::get_num(j, "horizon", "$", errs, true);
        if (horizon && !(*horizon > 0)) errs.add("$.horizon", "must be > 0");
        c.horizon = horizon.value_or(1.0);
        c.samples = detail::get_count(j, "samples", "$", errs, false, 200);
        c.events = *detail::get_bool(j, "events", "$", errs, false);
        detail::check_service_mu(c.service, c.regime.mu, "$.service", errs);
        cfg.body = c;
    } else if (kind == "stationary") {
        cfg.kind = RunKind::stationary;
        detail::check_keys(j, "$",
                           with_common({"regime", "service", "interarrival", "burn_in", "count",
                                        "spacing", "residual_grid"}),
                           errs);
        StationaryCfg c;
        c.regime = detail::regime_from_json(j.value("regime", nlohmann::json()), "$.regime", errs);
        c.service = detail::law_from_json(j.value("service", nlohmann::json()), "$.service", errs);
        c.interarrival =
            detail::law_from_json(j.value("interarrival", nlohmann::json()), "$.interarrival", errs);
        c.burn_in = detail::get_num(j, "burn_in", "$", errs, false, 0.0).value_or(0.0);
        c.count = detail::get_count(j, "count", "$", errs, true, 0);
        if (c.count == 0) errs.add("$.count", "must be >= 1");
        const auto spacing = detail::get_num(j, "spacing", "$", errs, true);
        if (spacing && !(*spacing > 0)) errs.add("$.spacing", "must be > 0");
        c.spacing = spacing.value_or(1.0);
        c.residual_grid = detail::get_num_list(j, "residual_grid", "$", errs, false);
        detail::check_service_mu(c.service, c.regime.mu, "$.service", errs);
        cfg.body = c;
    } else if (kind == "bounds") {
        cfg.kind = RunKind::bounds;
        detail::check_keys(j, "$",
                           with_common({"regime", "service", "interarrival", "r_grid",
                                        "replications", "horizon", "coupling_horizon"}),
                           errs);
        BoundsCfg c;
        c.regime = detail::regime_from_json(j.value("regime", nlohmann::json()), "$.regime", errs);
        c.service = detail::law_from_json(j.value("service", nlohmann::json()), "$.service", errs);
        c.interarrival =
            detail::law_from_json(j.value("interarrival", nlohmann::json()), "$.interarrival", errs);
        c.r_grid = detail::get_num_list(j, "r_grid", "$", errs, true);
        for (std::size_t i = 0; i < c.r_grid.size(); ++i)
            if (!(c.r_grid[i] > 0) || (i > 0 && c.r_grid[i] <= c.r_grid[i - 1]))
                errs.add("$.r_grid", "must be positive and strictly increasing");
        c.replications = detail::get_count(j, "replications", "$", errs, true, 0);
        if (c.replications == 0) errs.add("$.replications", "must be >= 1");
        c.horizon = detail::get_num(j, "horizon", "$", errs, false, 0.0).value_or(0.0);
        c.coupling_horizon =
            detail::get_num(j, "coupling_horizon", "$", errs, false, 0.0).value_or(0.0);
        detail::check_service_mu(c.service, c.regime.mu, "$.service", errs);
        cfg.body = c;
    } else if (kind == "renewal-bounds") {
        cfg.kind = RunKind::renewal_bounds;
        detail::check_keys(
            j, "$", with_common({"law", "equilibrium", "m_max", "t_list", "replications"}), errs);
        RenewalBoundsCfg c;
        c.law = detail::law_from_json(j.value("law", nlohmann::json()), "$.law", errs);
        c.equilibrium = *detail::get_bool(j, "equilibrium", "$", errs, false);
        c.m_max = static_cast<int>(detail::get_count(j, "m_max", "$", errs, false, 4));
        if (c.m_max < 1) errs.add("$.m_max", "must be >= 1");
        c.t_list = detail::get_num_list(j, "t_list", "$", errs, true);
        for (double t : c.t_list)
            if (!(t > 0)) errs.add("$.t_list", "entries must be > 0");
        c.replications = detail::get_count(j, "replications", "$", errs, true, 0);
        if (c.replications == 0) errs.add("$.replications", "must be >= 1");
        cfg.body = c;
    } else if (kind == "limit-solve") {
        cfg.kind = RunKind::limit_solve;
        detail::check_keys(
            j, "$",
            with_common({"service", "beta", "mu", "T", "dt", "forcing", "slope", "intercept"}),
            errs);
        LimitSolveCfg c;
        c.service = detail::law_from_json(j.value("service", nlohmann::json()), "$.service", errs);
        c.beta = detail::get_num(j, "beta", "$", errs, true).value_or(1.0);
        c.mu = detail::get_num(j, "mu", "$", errs, false, 1.0).value_or(1.0);
        const auto T = detail::get_num(j, "T", "$", errs, true);
        if (T && !(*T > 0)) errs.add("$.T", "must be > 0");
        c.T = T.value_or(1.0);
        c.dt = detail::get_num(j, "dt", "$", errs, false, 0.0).value_or(0.0);
        if (j.contains("forcing")) {
            if (!j["forcing"].is_string())
                errs.add("$.forcing", "expected a string");
            else
                c.forcing = j["forcing"].get<std::string>();
        }
        if (c.forcing != "beta-drift" && c.forcing != "linear")
            errs.add("$.forcing", "must be \"beta-drift\" or \"linear\"");
        c.slope = detail::get_num(j, "slope", "$", errs, false, 0.0).value_or(0.0);
        c.intercept = detail::get_num(j, "intercept", "$", errs, false, 0.0).value_or(0.0);
        detail::check_service_mu(c.service, c.mu, "$.service", errs);
        cfg.body = c;
    } else if (kind == "quasipotential") {
        cfg.kind = RunKind::quasipotential;
        detail::check_keys(j, "$",
                           with_common({"service", "sigma", "beta", "mu", "x_grid", "T_grid",
                                        "cells", "dt", "max_iterations"}),
                           errs);
        QuasipotentialCfg c;
        c.service = detail::law_from_json(j.value("service", nlohmann::json()), "$.service", errs);
        c.sigma = detail::get_num(j, "sigma", "$", errs, true).value_or(1.0);
        c.beta = detail::get_num(j, "beta", "$", errs, true).value_or(1.0);
        c.mu = detail::get_num(j, "mu", "$", errs, false, 1.0).value_or(1.0);
        c.x_grid = detail::get_num_list(j, "x_grid", "$", errs, true);
        if (c.x_grid.empty()) errs.add("$.x_grid", "must be nonempty");
        c.T_grid = detail::get_num_list(j, "T_grid", "$", errs, false);
        c.cells = detail::get_count(j, "cells", "$", errs, false, 32);
        c.dt = detail::get_num(j, "dt", "$", errs, false, 0.0).value_or(0.0);
        c.max_iterations = detail::get_count(j, "max_iterations", "$", errs, false, 300);
        detail::check_service_mu(c.service, c.mu, "$.service", errs);
        cfg.body = c;
    } else if (kind == "panel") {
        cfg.kind = RunKind::panel;
        detail::check_keys(j, "$",
                           with_common({"service", "interarrival", "mu", "beta", "b_exponent",
                                        "n_list", "x_grid", "sim_samples", "sim_spacing",
                                        "burn_in_multiplier", "cells", "T_grid", "dt",
                                        "lbfgs_iterations", "gg_replications", "include_limit"}),
                           errs);
        PanelCfg c;
        c.family.service =
            detail::law_from_json(j.value("service", nlohmann::json()), "$.service", errs);
        c.family.interarrival_template =
            detail::law_from_json(j.value("interarrival", nlohmann::json()), "$.interarrival", errs);
        c.family.mu = detail::get_num(j, "mu", "$", errs, false, 1.0).value_or(1.0);
        c.family.beta = detail::get_num(j, "beta", "$", errs, true).value_or(1.0);
        c.family.b_exponent = detail::get_num(j, "b_exponent", "$", errs, false, 0.1).value_or(0.1);
        const std::vector<double> ns = detail::get_num_list(j, "n_list", "$", errs, true);
        for (double nv : ns) {
            if (nv < 1 || nv != std::floor(nv))
                errs.add("$.n_list", "entries must be positive integers");
            else
                c.n_list.push_back(static_cast<std::uint64_t>(nv));
        }
        if (c.n_list.empty()) errs.add("$.n_list", "must be nonempty");
        c.x_grid = detail::get_num_list(j, "x_grid", "$", errs, true);
        if (c.x_grid.empty()) errs.add("$.x_grid", "must be nonempty");
        c.options.sim_samples = detail::get_count(j, "sim_samples", "$", errs, false, 0);
        c.options.sim_spacing =
            detail::get_num(j, "sim_spacing", "$", errs, false, 1.0).value_or(1.0);
        c.options.burn_in_multiplier =
            detail::get_num(j, "burn_in_multiplier", "$", errs, false, 50.0).value_or(50.0);
        c.options.cells = detail::get_count(j, "cells", "$", errs, false, 16);
        c.options.T_grid = detail::get_num_list(j, "T_grid", "$", errs, false);
        c.options.dt = detail::get_num(j, "dt", "$", errs, false, 0.0).value_or(0.0);
        c.options.lbfgs_iterations =
            detail::get_count(j, "lbfgs_iterations", "$", errs, false, 150);
        c.options.gg_replications = detail::get_count(j, "gg_replications", "$", errs, false, 0);
        c.options.include_limit = *detail::get_bool(j, "include_limit", "$", errs, true);
        detail::check_service_mu(c.family.service, c.family.mu, "$.service", errs);
        cfg.body = c;
    } else {
        errs.add("$.kind", "unknown kind \"" + kind + "\"");
    }

    if (!errs.v.empty()) throw ConfigError(errs.v);
    cfg.hash_hex = config_hash(cfg);
    return cfg;
}

[[nodiscard]] inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file " + path});
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError({std::string("JSON parse error: ") + e.what()});
    }
    return parse_run_config(j);
}

// CSV with a config-hash comment line, %.17g numeric cells.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::string& config_hash_hex,
              const std::vector<std::string>& header)
        : out_(path) {
        if (!out_) throw std::runtime_error("cannot open output file " + path);
        out_ << "# config " << config_hash_hex << "\n";
        write_row_strings(header);
    }

    void write_row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ",";
            out_ << cells[i];
        }
        out_ << "\n";
    }

    void cell(const std::string& s) { cells_.push_back(s); }
    void cell(double v) { cells_.push_back(fmt_g17(v)); }
    void cell(std::uint64_t v) { cells_.push_back(std::to_string(v)); }
    void cell(int v) { cells_.push_back(std::to_string(v)); }
    void end_row() {
        write_row_strings(cells_);
        cells_.clear();
    }

  private:
    std::ofstream out_;
    std::vector<std::string> cells_;
};

struct CsvFile {
    std::string config_hash;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

[[nodiscard]] inline CsvFile read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    CsvFile f;
    std::string line;
    bool first_data = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind("# config ", 0) == 0) {
            f.config_hash = line.substr(9);
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        cells.push_back(cur);
        if (first_data) {
            f.header = cells;
            first_data = false;
        } else {
            f.rows.push_back(cells);
        }
    }
    return f;
}

// Long-form plotting rows: every primary output can be reshaped into these and back.
struct PlotRow {
    std::string series;
    double x = 0.0;
    double y = 0.0;
    double band_low = std::numeric_limits<double>::quiet_NaN();
    double band_high = std::numeric_limits<double>::quiet_NaN();
    std::string tag;
};

inline void write_plot_csv(const std::string& path, const std::string& hash,
                           const std::vector<PlotRow>& rows) {
    CsvWriter w(path, hash, {"series", "x", "y", "band_low", "band_high", "tag"});
    for (const auto& r : rows) {
        w.cell(r.series);
        w.cell(r.x);
        w.cell(r.y);
        w.cell(r.band_low);
        w.cell(r.band_high);
        w.cell(r.tag);
        w.end_row();
    }
}

[[nodiscard]] inline std::vector<PlotRow> read_plot_csv(const std::string& path) {
    const CsvFile f = read_csv(path);
    std::vector<PlotRow> rows;
    for (const auto& cells : f.rows) {
        if (cells.size() != 6) throw std::runtime_error("malformed plot row in " + path);
        PlotRow r;
        r.series = cells[0];
        r.x = std::strtod(cells[1].c_str(), nullptr);
        r.y = std::strtod(cells[2].c_str(), nullptr);
        r.band_low = std::strtod(cells[3].c_str(), nullptr);
        r.band_high = std::strtod(cells[4].c_str(), nullptr);
        r.tag = cells[5];
        rows.push_back(r);
    }
    return rows;
}

// panel.csv rows <-> plot rows, losslessly (tag keeps the columns the axes drop)
[[nodiscard]] inline std::vector<PlotRow> panel_to_plot(const std::vector<PanelRow>& rows) {
    std::vector<PlotRow> out;
    for (const auto& r : rows) {
        PlotRow p;
        p.series = r.source + "/n=" + std::to_string(r.n);
        p.x = r.x;
        p.y = r.rate;
        if (r.has_band) {
            p.band_low = r.band_low;
            p.band_high = r.band_high;
        }
        p.tag = "b_n=" + fmt_g17(r.b_n) + ";flag=" + r.flag;
        out.push_back(p);
    }
    return out;
}

[[nodiscard]] inline std::vector<PanelRow> panel_from_plot(const std::vector<PlotRow>& rows) {
    std::vector<PanelRow> out;
    for (const auto& p : rows) {
        PanelRow r;
        const auto slash = p.series.find("/n=");
        if (slash == std::string::npos) throw std::runtime_error("malformed panel series");
        r.source = p.series.substr(0, slash);
        r.n = std::strtoull(p.series.c_str() + slash + 3, nullptr, 10);
        r.x = p.x;
        r.rate = p.y;
        r.has_band = !std::isnan(p.band_low) || !std::isnan(p.band_high);
        if (r.has_band) {
            r.band_low = p.band_low;
            r.band_high = p.band_high;
        }
        const auto semi = p.tag.find(";flag=");
        if (p.tag.rfind("b_n=", 0) != 0 || semi == std::string::npos)
            throw std::runtime_error("malformed panel tag");
        r.b_n = std::strtod(p.tag.c_str() + 4, nullptr);
        r.flag = p.tag.substr(semi + 6);
        out.push_back(r);
    }
    return out;
}

}  // namespace qpot
