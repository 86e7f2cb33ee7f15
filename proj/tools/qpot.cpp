#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qpot/gg_bound.hpp"
#include "qpot/ldp_lab.hpp"
#include "qpot/limit_solver.hpp"
#include "qpot/quasipotential.hpp"
#include "qpot/queue_sim.hpp"
#include "qpot/renewal.hpp"
#include "qpot/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double num(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

struct OutDir {
    fs::path dir;
    std::vector<std::string> written;

    [[nodiscard]] std::string file(const std::string& name) {
        written.push_back(name);
        return (dir / name).string();
    }
};

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << content;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_manifest(OutDir& od, const qpot::RunConfig& cfg) {
    json m;
    m["tool"] = "qpot";
    m["version"] = "1.0.0";
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    m["generated_at"] = stamp;  // informational; byte-identity covers the CSVs
    m["kind"] = qpot::run_kind_name(cfg.kind);
    m["config_hash"] = cfg.hash_hex;
    m["config"] = qpot::resolved_config_json(cfg);
    m["seed"] = cfg.seed;
    m["threads"] = cfg.threads;
    m["rng"] = {{"engine", "mt19937_64"},
                {"stream_rule", "stream k of master s: splitmix64(splitmix64(s) ^ splitmix64(k+1))"}};
    m["outputs"] = od.written;
    write_json((od.dir / "manifest.json").string(), m);
}

std::vector<double> default_t_grid(double mu) {
    std::vector<double> tg;
    for (double t : {2.0, 4.0, 8.0, 16.0, 32.0}) tg.push_back(t / mu);
    return tg;
}

void run_simulate(const qpot::RunConfig& cfg, const qpot::SimulateCfg& c, OutDir& od,
                  std::string& summary) {
    qpot::QueueModel model = qpot::QueueModel::make(c.regime, c.service, c.interarrival);
    model.q0 = c.q0;
    model.equilibrium_arrivals = c.equilibrium_arrivals;
    model.equilibrium_init_residuals = c.equilibrium_init;
    std::vector<double> grid;
    for (std::size_t j = 1; j <= c.samples; ++j)
        grid.push_back(c.horizon * static_cast<double>(j) / static_cast<double>(c.samples));
    qpot::EngineOptions opts;
    opts.capture_events = c.events;
    const qpot::EventTrace tr = qpot::simulate(model, c.horizon, grid, cfg.seed, opts);

    qpot::CsvWriter w(od.file("path.csv"), cfg.hash_hex, {"t", "Q", "X"});
    const double scale = c.regime.scale();
    for (std::size_t i = 0; i < tr.sample_t.size(); ++i) {
        w.cell(tr.sample_t[i]);
        w.cell(tr.sample_q[i]);
        w.cell((static_cast<double>(tr.sample_q[i]) - static_cast<double>(c.regime.n)) / scale);
        w.end_row();
    }
    if (c.events) qpot::write_trace(od.file("events.bin"), tr.events);

    summary += "arrivals " + std::to_string(tr.arrivals) + "\n";
    summary += "departures " + std::to_string(tr.departures) + "\n";
    summary += "q_end " + std::to_string(tr.q_end) + "\n";
    summary += "balance_violations " + std::to_string(tr.balance_violations) + "\n";
    summary += std::string("overflow ") + (tr.overflow ? "yes" : "no") + "\n";

    if (tr.balance_violations > 0)
        throw std::runtime_error("balance identity violated at " +
                                 std::to_string(tr.balance_violations) + " events");
    if (tr.overflow) throw std::runtime_error("state cap exceeded during simulation");
}

void run_stationary(const qpot::RunConfig& cfg, const qpot::StationaryCfg& c, OutDir& od,
                    std::string& summary) {
    qpot::QueueModel model = qpot::QueueModel::make(c.regime, c.service, c.interarrival);
    const double burn = c.burn_in > 0
                            ? c.burn_in
                            : 50.0 * static_cast<double>(c.regime.n) / c.regime.mu;
    const qpot::StationarySample ss =
        qpot::stationary_sample(model, burn, c.count, c.spacing, cfg.seed);

    qpot::CsvWriter w(od.file("samples.csv"), cfg.hash_hex, {"t", "Q", "X"});
    for (std::size_t i = 0; i < ss.t.size(); ++i) {
        w.cell(ss.t[i]);
        w.cell(ss.q[i]);
        w.cell(ss.x[i]);
        w.end_row();
    }

    std::vector<double> xg = c.residual_grid;
    if (xg.empty()) {
        const double hi = c.service.upper_quantile(1e-3);
        for (int j = 0; j <= 24; ++j) xg.push_back(hi * static_cast<double>(j) / 24.0);
    }
    qpot::CsvWriter rw(od.file("residuals.csv"), cfg.hash_hex, {"t", "x", "S"});
    for (const auto& snap : ss.snapshots) {
        for (double x : xg) {
            rw.cell(snap.t);
            rw.cell(x);
            rw.cell(snap.s_at(x));
            rw.end_row();
        }
    }

    json diag;
    diag["config_hash"] = cfg.hash_hex;
    diag["ess"] = ss.ess;
    diag["geweke_z"] = ss.geweke_z;
    diag["warning"] = ss.warning;
    diag["balance_violations"] = ss.balance_violations;
    diag["burn_in"] = burn;
    diag["count"] = c.count;
    diag["spacing"] = c.spacing;
    write_json(od.file("diagnostics.json"), diag);

    summary += "samples " + std::to_string(ss.t.size()) + "\n";
    summary += "ess " + qpot::fmt_g17(ss.ess) + "\n";
    summary += "geweke_z " + qpot::fmt_g17(ss.geweke_z) + "\n";
    if (!ss.warning.empty()) summary += "warning " + ss.warning + "\n";

    if (ss.balance_violations > 0)
        throw std::runtime_error("balance identity violated at " +
                                 std::to_string(ss.balance_violations) + " events");
}

void run_bounds(const qpot::RunConfig& cfg, const qpot::BoundsCfg& c, OutDir& od,
                std::string& summary) {
    qpot::QueueModel model = qpot::QueueModel::make(c.regime, c.service, c.interarrival);
    const double max_r = c.r_grid.back();
    const auto i_max = static_cast<std::uint64_t>(std::ceil(
        20.0 * static_cast<double>(c.regime.n) * max_r * c.regime.rho_n / c.regime.beta));
    const double horizon =
        c.horizon > 0 ? c.horizon
                      : (1.5 * static_cast<double>(i_max) + 20.0) / c.regime.lambda_n;
    const qpot::GgTailResult gg =
        qpot::gg_supremum_tail(model, c.r_grid, c.replications, horizon, cfg.seed, cfg.threads);

    qpot::CsvWriter w(od.file("gg_tail.csv"), cfg.hash_hex,
                      {"r", "hits", "trials", "estimate", "ci_low", "ci_high",
                       "truncation_bound", "truncation_flag"});
    for (const auto& row : gg.rows) {
        w.cell(row.r);
        w.cell(row.hits);
        w.cell(row.trials);
        w.cell(row.estimate);
        w.cell(row.ci_low);
        w.cell(row.ci_high);
        w.cell(row.truncation_bound);
        w.cell(std::string(row.truncation_flag ? "1" : "0"));
        w.end_row();
    }

    const double ch = c.coupling_horizon > 0 ? c.coupling_horizon : 10.0 / c.regime.mu;
    const qpot::InfiniteServerResult isr = qpot::simulate_infinite_server_bound(
        model, ch, qpot::derive_stream_seed(cfg.seed, 101));
    qpot::CsvWriter cw(od.file("coupling.csv"), cfg.hash_hex, {"t", "breve_q", "queue_q"});
    for (std::size_t i = 0; i < isr.times.size(); ++i) {
        cw.cell(isr.times[i]);
        cw.cell(isr.breve_q[i]);
        cw.cell(isr.queue_q[i]);
        cw.end_row();
    }

    summary += "i_max " + std::to_string(gg.i_max) + "\n";
    summary += "horizon_truncated " + std::to_string(gg.horizon_truncated) + "\n";
    summary += "coupling_violations " + std::to_string(isr.violations) + "\n";

    if (isr.violations > 0)
        throw std::runtime_error("infinite-server coupling inequality violated at " +
                                 std::to_string(isr.violations) + " events");
}

void run_renewal_bounds(const qpot::RunConfig& cfg, const qpot::RenewalBoundsCfg& c, OutDir& od,
                        std::string& summary) {
    const std::vector<qpot::MomentBoundRow> rows = qpot::mc_moment_study(
        c.law, c.equilibrium, c.m_max, c.t_list, c.replications, cfg.seed, cfg.threads);
    qpot::CsvWriter w(od.file("moment_bounds.csv"), cfg.hash_hex,
                      {"family", "mode", "m", "t", "bound", "estimate", "ci_low", "ci_high",
                       "pass"});
    std::size_t passed = 0;
    for (const auto& r : rows) {
        w.cell(r.family);
        w.cell(r.mode);
        w.cell(r.m);
        w.cell(r.t);
        w.cell(r.bound);
        w.cell(r.estimate);
        w.cell(r.ci_low);
        w.cell(r.ci_high);
        w.cell(std::string(r.pass ? "1" : "0"));
        w.end_row();
        if (r.pass) ++passed;
    }
    summary += "cells " + std::to_string(rows.size()) + "\n";
    summary += "passed " + std::to_string(passed) + "\n";
}

void run_limit_solve(const qpot::RunConfig& cfg, const qpot::LimitSolveCfg& c, OutDir& od,
                     std::string& summary) {
    const double dt = c.dt > 0 ? c.dt : c.T / 800.0;
    const qpot::Law service = c.service;
    const auto cdf = [&](double t) { return service.cdf(t); };
    qpot::RenewalSolution sol;
    if (c.forcing == "beta-drift") {
        const auto f = [&](double t) { return -c.beta * qpot::equilibrium_cdf(service, t); };
        sol = qpot::solve_nonlinear_renewal(f, cdf, c.T, dt);
    } else {
        const auto f = [&](double t) { return c.intercept + c.slope * t; };
        sol = qpot::solve_nonlinear_renewal(f, cdf, c.T, dt);
    }
    qpot::CsvWriter w(od.file("g.csv"), cfg.hash_hex, {"t", "value"});
    for (std::size_t i = 0; i < sol.t.size(); ++i) {
        w.cell(sol.t[i]);
        w.cell(sol.g[i]);
        w.end_row();
    }
    summary += "iterations " + std::to_string(sol.iterations) + "\n";
    summary += std::string("converged ") + (sol.converged ? "yes" : "no") + "\n";
    summary += "g_T " + qpot::fmt_g17(sol.g.back()) + "\n";

    if (!sol.converged)
        throw std::runtime_error("renewal fixed point not reached, residual " +
                                 qpot::fmt_g17(sol.residual));
}

void run_quasipotential(const qpot::RunConfig& cfg, const qpot::QuasipotentialCfg& c, OutDir& od,
                        std::string& summary) {
    qpot::VariationalProblem base;
    base.service = c.service;
    base.sigma = c.sigma;
    base.beta = c.beta;
    base.mu = c.mu;
    base.cells = c.cells;
    base.dt = c.dt;
    const std::vector<double> tg = c.T_grid.empty() ? default_t_grid(c.mu) : c.T_grid;
    qpot::MinimizeOptions mo;
    mo.max_iterations = c.max_iterations;
    const qpot::QuasipotentialCurve curve =
        qpot::quasipotential_curve(c.x_grid, tg, base, mo, cfg.threads);

    qpot::CsvWriter w(od.file("curve.csv"), cfg.hash_hex,
                      {"x", "T", "J_T", "terminal_residual", "iterations", "converged"});
    for (const auto& pt : curve.points) {
        w.cell(pt.x);
        w.cell(pt.T);
        w.cell(pt.cost);
        w.cell(pt.terminal_residual);
        w.cell(static_cast<std::uint64_t>(pt.iterations));
        w.cell(std::string(pt.converged ? "1" : "0"));
        w.end_row();
    }

    json sj;
    sj["config_hash"] = cfg.hash_hex;
    sj["points"] = json::array();
    for (const auto& s : curve.summary) {
        sj["points"].push_back({{"x", s.x},
                                {"I_s", s.value},
                                {"argmin_T", s.argmin_T},
                                {"converged", s.converged}});
    }
    write_json(od.file("summary.json"), sj);

    // per-x argmin controls as a two-file bundle, replayable through the forward map:
    // w_<i>.csv is the wdot grid function, k_<i>.csv the kdot density over (t, u) cells
    for (std::size_t xi = 0; xi < curve.best_controls.size(); ++xi) {
        const qpot::ControlPair& cp = curve.best_controls[xi];
        qpot::CsvWriter ww(od.file("w_" + std::to_string(xi) + ".csv"), cfg.hash_hex,
                           {"t", "value"});
        for (std::size_t jr = 0; jr < cp.w.size(); ++jr) {
            ww.cell(static_cast<double>(jr) * cp.dt);
            ww.cell(cp.w[jr]);
            ww.end_row();
        }
        qpot::CsvWriter kw(od.file("k_" + std::to_string(xi) + ".csv"), cfg.hash_hex,
                           {"t", "u", "value"});
        const double du = cp.cells() > 0 ? 1.0 / static_cast<double>(cp.cells()) : 0.0;
        for (std::size_t jr = 0; jr < cp.m.size(); ++jr) {
            for (std::size_t cc = 0; cc < cp.cells(); ++cc) {
                kw.cell(static_cast<double>(jr) * cp.dt);
                kw.cell((static_cast<double>(cc) + 0.5) * du);
                kw.cell(cp.m[jr][cc]);
                kw.end_row();
            }
        }
    }

    for (const auto& s : curve.summary)
        summary += "x " + qpot::fmt_g17(s.x) + "  I_s " + qpot::fmt_g17(s.value) +
                   "  argmin_T " + qpot::fmt_g17(s.argmin_T) + "\n";
}

void run_panel(const qpot::RunConfig& cfg, const qpot::PanelCfg& c, OutDir& od,
               std::string& summary) {
    qpot::PanelOptions opts = c.options;
    opts.seed = cfg.seed;
    opts.threads = cfg.threads;
    const qpot::ConvergencePanel panel =
        qpot::convergence_panel(c.family, c.n_list, c.x_grid, opts);

    qpot::CsvWriter w(od.file("panel.csv"), cfg.hash_hex,
                      {"n", "b_n", "x", "source", "rate", "band_low", "band_high", "flag"});
    for (const auto& r : panel.rows) {
        w.cell(r.n);
        w.cell(r.b_n);
        w.cell(r.x);
        w.cell(r.source);
        w.cell(r.rate);
        w.cell(r.band_low);
        w.cell(r.band_high);
        w.cell(r.flag);
        w.end_row();
    }

    json vj;
    vj["config_hash"] = cfg.hash_hex;
    vj["trend_pass"] = panel.trend_pass;
    vj["trends"] = json::array();
    for (const auto& tr : panel.trends) {
        vj["trends"].push_back({{"x", tr.x},
                                {"basis_source", tr.basis_source},
                                {"gaps", tr.gaps},
                                {"monotone", tr.monotone},
                                {"flag", tr.flag}});
    }
    write_json(od.file("verdict.json"), vj);

    summary += std::string("trend_pass ") + (panel.trend_pass ? "yes" : "no") + "\n";
    summary += "rows " + std::to_string(panel.rows.size()) + "\n";
}

// plot_data.csv is produced by reshaping the written CSVs, so the emitted rows always
// agree with what a later plot-data invocation would produce.
std::vector<qpot::PlotRow> reshape_outputs(const qpot::RunConfig& cfg, const fs::path& dir) {
    std::vector<qpot::PlotRow> rows;
    const auto read = [&](const std::string& name) { return qpot::read_csv((dir / name).string()); };
    switch (cfg.kind) {
        case qpot::RunKind::simulate: {
            for (const auto& cells : read("path.csv").rows) {
                qpot::PlotRow r;
                r.series = "X";
                r.x = num(cells[0]);
                r.y = num(cells[2]);
                r.tag = "Q=" + cells[1];
                rows.push_back(r);
            }
            break;
        }
        case qpot::RunKind::stationary: {
            for (const auto& cells : read("samples.csv").rows) {
                qpot::PlotRow r;
                r.series = "X";
                r.x = num(cells[0]);
                r.y = num(cells[2]);
                r.tag = "Q=" + cells[1];
                rows.push_back(r);
            }
            break;
        }
        case qpot::RunKind::bounds: {
            for (const auto& cells : read("gg_tail.csv").rows) {
                qpot::PlotRow r;
                r.series = "gg_tail";
                r.x = num(cells[0]);
                r.y = num(cells[3]);
                r.band_low = num(cells[4]);
                r.band_high = num(cells[5]);
                r.tag = "hits=" + cells[1] + ";trials=" + cells[2] + ";trunc=" + cells[6] +
                        ";flag=" + cells[7];
                rows.push_back(r);
            }
            break;
        }
        case qpot::RunKind::renewal_bounds: {
            for (const auto& cells : read("moment_bounds.csv").rows) {
                qpot::PlotRow r;
                r.series = cells[0] + "/" + cells[1] + "/m=" + cells[2];
                r.x = num(cells[3]);
                r.y = num(cells[5]);
                r.band_low = num(cells[6]);
                r.band_high = num(cells[7]);
                r.tag = "bound=" + cells[4] + ";pass=" + cells[8];
                rows.push_back(r);
            }
            break;
        }
        case qpot::RunKind::limit_solve: {
            for (const auto& cells : read("g.csv").rows) {
                qpot::PlotRow r;
                r.series = "g";
                r.x = num(cells[0]);
                r.y = num(cells[1]);
                rows.push_back(r);
            }
            break;
        }
        case qpot::RunKind::quasipotential: {
            for (const auto& cells : read("curve.csv").rows) {
                qpot::PlotRow r;
                r.series = "J_T/T=" + cells[1];
                r.x = num(cells[0]);
                r.y = num(cells[2]);
                r.tag = "resid=" + cells[3] + ";iters=" + cells[4] + ";converged=" + cells[5];
                rows.push_back(r);
            }
            std::ifstream in((dir / "summary.json").string());
            if (in) {
                json sj;
                in >> sj;
                for (const auto& s : sj["points"]) {
                    qpot::PlotRow r;
                    r.series = "I_s";
                    r.x = s["x"].get<double>();
                    r.y = s["I_s"].get<double>();
                    r.tag = "argmin_T=" + qpot::fmt_g17(s["argmin_T"].get<double>()) +
                            ";converged=" + (s["converged"].get<bool>() ? "1" : "0");
                    rows.push_back(r);
                }
            }
            break;
        }
        case qpot::RunKind::panel: {
            std::vector<qpot::PanelRow> prows;
            for (const auto& cells : read("panel.csv").rows) {
                qpot::PanelRow r;
                r.n = std::strtoull(cells[0].c_str(), nullptr, 10);
                r.b_n = num(cells[1]);
                r.x = num(cells[2]);
                r.source = cells[3];
                r.rate = num(cells[4]);
                r.band_low = num(cells[5]);
                r.band_high = num(cells[6]);
                r.has_band = !std::isnan(r.band_low) || !std::isnan(r.band_high);
                r.flag = cells[7];
                prows.push_back(r);
            }
            rows = qpot::panel_to_plot(prows);
            break;
        }
    }
    return rows;
}

int do_run(const qpot::RunConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    OutDir od{out, {}};
    std::string summary = "kind " + qpot::run_kind_name(cfg.kind) + "\n";
    summary += "config " + cfg.hash_hex + "\n";
    summary += "seed " + std::to_string(cfg.seed) + "\n";

    try {
        std::visit(
            [&](const auto& body) {
                using T = std::decay_t<decltype(body)>;
                if constexpr (std::is_same_v<T, qpot::SimulateCfg>) {
                    run_simulate(cfg, body, od, summary);
                } else if constexpr (std::is_same_v<T, qpot::StationaryCfg>) {
                    run_stationary(cfg, body, od, summary);
                } else if constexpr (std::is_same_v<T, qpot::BoundsCfg>) {
                    run_bounds(cfg, body, od, summary);
                } else if constexpr (std::is_same_v<T, qpot::RenewalBoundsCfg>) {
                    run_renewal_bounds(cfg, body, od, summary);
                } else if constexpr (std::is_same_v<T, qpot::LimitSolveCfg>) {
                    run_limit_solve(cfg, body, od, summary);
                } else if constexpr (std::is_same_v<T, qpot::QuasipotentialCfg>) {
                    run_quasipotential(cfg, body, od, summary);
                } else {
                    run_panel(cfg, body, od, summary);
                }
            },
            cfg.body);
    } catch (const std::exception& e) {
        // leave a diagnostics trail next to whatever partial outputs landed
        summary += std::string("error ") + e.what() + "\n";
        write_text(od.file("error.txt"), std::string(e.what()) + "\n");
        write_text(od.file("summary.txt"), summary);
        write_manifest(od, cfg);
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    if (cfg.emit_plot_data)
        qpot::write_plot_csv(od.file("plot_data.csv"), cfg.hash_hex, reshape_outputs(cfg, out));

    write_text(od.file("summary.txt"), summary);
    write_manifest(od, cfg);
    return 0;
}

int do_plot_data(const qpot::RunConfig& cfg, const fs::path& out) {
    const std::vector<qpot::PlotRow> rows = reshape_outputs(cfg, out);
    qpot::write_plot_csv((out / "plot_data.csv").string(), cfg.hash_hex, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moderate-deviations toolkit for many-server queues"};
    app.require_subcommand(1);

    std::string run_config_path;
    std::string run_out = ".";
    std::uint64_t seed_ov = 0;
    unsigned threads_ov = 0;
    CLI::App* run = app.add_subcommand("run", "execute a run config");
    run->add_option("--config", run_config_path, "JSON run config")->required();
    run->add_option("--out", run_out, "output directory");
    CLI::Option* seed_opt = run->add_option("--seed-override", seed_ov, "replace the config seed");
    CLI::Option* thr_opt = run->add_option("--threads", threads_ov, "worker threads, 0 = serial");

    std::string pd_config_path;
    std::string pd_out = ".";
    CLI::App* pd = app.add_subcommand("plot-data", "reshape a finished run into plot_data.csv");
    pd->add_option("--config", pd_config_path, "JSON run config of the finished run")->required();
    pd->add_option("--out", pd_out, "directory holding the run outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (run->parsed()) {
            qpot::RunConfig cfg = qpot::load_run_config(run_config_path);
            if (seed_opt->count()) cfg.seed = seed_ov;
            if (thr_opt->count()) cfg.threads = threads_ov;
            cfg.hash_hex = qpot::config_hash(cfg);  // overrides are part of the resolved config
            return do_run(cfg, run_out);
        }
        qpot::RunConfig cfg = qpot::load_run_config(pd_config_path);
        return do_plot_data(cfg, pd_out);
    } catch (const qpot::ConfigError& e) {
        for (const auto& msg : e.errors()) std::cerr << "config error: " << msg << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
