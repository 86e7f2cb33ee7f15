#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "qpot/ldp_lab.hpp"

using namespace qpot;
using Catch::Approx;

TEST_CASE("single server stationary law is geometric", "[birth-death]") {
    const BirthDeathLaw bd = birth_death_stationary(1, 0.5, 1.0, 60);
    for (std::uint64_t k = 0; k <= 20; ++k)
        CHECK(bd.pi(k) == Approx(0.5 * std::pow(0.5, static_cast<double>(k))).epsilon(1e-12));
    for (std::uint64_t k0 : {0ull, 1ull, 5ull, 30ull, 70ull})
        CHECK(bd.tail_prob(k0) == Approx(std::pow(0.5, static_cast<double>(k0))).epsilon(1e-12));
    CHECK(bd.mean() == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stationary law normalizes and balances", "[birth-death]") {
    const BirthDeathLaw bd = birth_death_stationary(100, 95.0, 1.0, 1000);
    KahanSum total;
    for (std::uint64_t k = 0; k <= bd.K; ++k) total.add(bd.pi(k));
    total.add(bd.tail_mass);
    CHECK(total.value() == Approx(1.0).epsilon(1e-12));
    for (std::uint64_t k = 0; k < bd.K; k += 7) {
        const double up = bd.lambda * bd.pi(k);
        const double down = bd.mu * static_cast<double>(std::min<std::uint64_t>(k + 1, 100)) *
                            bd.pi(k + 1);
        CHECK(up == Approx(down).epsilon(1e-12));
    }
    CHECK_THROWS_AS(birth_death_stationary(10, 10.0, 1.0, 100), std::invalid_argument);
}

TEST_CASE("Erlang C agrees with its frozen value", "[birth-death]") {
    CHECK(erlang_c(20, 18.0) == Approx(0.5507690048161185).epsilon(1e-10));
    // M/M/1: delay probability is the load itself
    CHECK(erlang_c(1, 0.3) == Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(erlang_c(4, 4.0), std::invalid_argument);
}

TEST_CASE("mean matches the frozen many-server value", "[birth-death]") {
    const BirthDeathLaw bd = birth_death_stationary(20, 18.0, 1.0, 2000);
    CHECK(bd.mean() == Approx(22.95692104334516).epsilon(1e-10));
}

TEST_CASE("rate transform inverts the exponential tail", "[rates]") {
    const double b = 1.3;
    const std::vector<double> tails{1.0, std::exp(-b * b)};
    const std::vector<RateEstimate> rates = rate_from_tail(tails, b, {0.5, 1.0});
    REQUIRE(rates.size() == 2);
    CHECK(rates[0].rate == Approx(0.0).margin(1e-15));
    CHECK(rates[1].rate == Approx(1.0).epsilon(1e-12));
    CHECK(rates[0].source == "exact");
    CHECK_FALSE(rates[0].has_band);

    // nonincreasing tails map to nondecreasing rates
    const std::vector<double> mono{0.5, 0.2, 0.01};
    const std::vector<RateEstimate> mr = rate_from_tail(mono, b, {0.5, 1.0, 2.0});
    CHECK(mr[0].rate <= mr[1].rate);
    CHECK(mr[1].rate <= mr[2].rate);

    CHECK_THROWS_AS(rate_from_tail({0.5}, b, {0.5, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(rate_from_tail({0.0}, b, {0.5}), std::invalid_argument);
    CHECK_THROWS_AS(rate_from_tail({0.5}, 0.0, {0.5}), std::invalid_argument);
}

TEST_CASE("zero counts degrade to an explicit lower bound", "[rates]") {
    const double b = 1.5;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> counts{{0, 500}, {25, 500}};
    const std::vector<RateEstimate> rates =
        rate_from_tail({0.0, 0.05}, b, {1.0, 0.5}, "simulation", counts);
    REQUIRE(rates.size() == 2);
    CHECK(rates[0].lower_bound_only);
    CHECK_FALSE(rates[0].has_band);
    CHECK(std::isfinite(rates[0].rate));
    CHECK(rates[0].rate > 0.0);
    CHECK_FALSE(rates[1].lower_bound_only);
    CHECK(rates[1].has_band);
    CHECK(rates[1].band_low <= rates[1].rate);
    CHECK(rates[1].rate <= rates[1].band_high);
}

TEST_CASE("scaled exact tails give sane rates", "[rates]") {
    const ScalingRegime r = ScalingRegime::make(100, 1.0, 1.0);
    const std::vector<double> x_grid{0.5, 1.0, 2.0};
    const std::vector<double> tails = mmn_scaled_tails(r, x_grid);
    const std::vector<RateEstimate> rates = rate_from_tail(tails, r.b_n, x_grid);
    double prev = 0.0;
    for (const RateEstimate& e : rates) {
        CHECK(std::isfinite(e.rate));
        CHECK(e.rate > 0.0);
        CHECK(e.rate >= prev);
        prev = e.rate;
    }
}

TEST_CASE("panel produces every source and a shrinking trend", "[panel]") {
    PanelFamily family;  // exponential/exponential at beta 1
    PanelOptions opts;
    opts.sim_samples = 400;
    opts.burn_in_multiplier = 20.0;
    opts.seed = 5;
    opts.cells = 8;
    opts.T_grid = {2.0, 4.0};
    opts.dt = 0.05;
    opts.lbfgs_iterations = 60;
    opts.gg_replications = 200;
    const std::vector<std::uint64_t> n_list{25, 100};
    const std::vector<double> x_grid{0.5, 1.0};
    const ConvergencePanel panel = convergence_panel(family, n_list, x_grid, opts);

    std::set<std::string> sources;
    for (const PanelRow& row : panel.rows) sources.insert(row.source);
    CHECK(sources ==
          std::set<std::string>{"limit", "exact", "simulation", "gg", "infinite-server"});

    const auto find_rate = [&](std::uint64_t n, double x, const std::string& src) {
        for (const PanelRow& row : panel.rows)
            if (row.n == n && row.x == x && row.source == src) return row.rate;
        FAIL("missing row " << src << " n=" << n << " x=" << x);
        return 0.0;
    };
    for (std::uint64_t n : n_list) {
        for (double x : x_grid) {
            const double exact = find_rate(n, x, "exact");
            const double gg = find_rate(n, x, "gg");
            const double is = find_rate(n, x, "infinite-server");
            INFO("n " << n << " x " << x << ": gg " << gg << " exact " << exact << " is " << is);
            CHECK(gg <= exact + 0.2);   // supremum tail over-counts: rate minorant
            CHECK(is >= exact - 0.2);   // pathwise domination: rate majorant
            CHECK(std::isfinite(find_rate(n, x, "simulation")));
        }
    }

    REQUIRE(panel.trends.size() == 2);
    for (const PanelTrend& tr : panel.trends) {
        CHECK(tr.basis_source == "exact");
        REQUIRE(tr.gaps.size() == 2);
        CHECK(tr.gaps[1] < tr.gaps[0]);
        CHECK(tr.monotone);
    }
    CHECK(panel.trend_pass);

    // exact rows are the birth-death tails, independently recomputed
    const ScalingRegime r25 = ScalingRegime::make(25, 1.0, 1.0);
    const std::vector<RateEstimate> again =
        rate_from_tail(mmn_scaled_tails(r25, x_grid), r25.b_n, x_grid);
    CHECK(find_rate(25, 0.5, "exact") == again[0].rate);
    CHECK(find_rate(25, 1.0, "exact") == again[1].rate);
}

TEST_CASE("non-Poisson arrivals flag the closed-form gaps", "[panel]") {
    PanelFamily family;
    family.interarrival_template = Law::gamma(2.0, 2.0);
    PanelOptions opts;
    opts.include_limit = false;
    const ConvergencePanel panel = convergence_panel(family, {10}, {0.5}, opts);
    REQUIRE(panel.rows.size() == 1);
    CHECK(panel.rows[0].source == "infinite-server");
    CHECK(panel.rows[0].flag == "gap: stationary law closed-form needs Poisson arrivals");
    CHECK(std::isnan(panel.rows[0].rate));
    REQUIRE(panel.trends.size() == 1);
    CHECK_FALSE(panel.trends[0].monotone);
    CHECK(panel.trends[0].flag == "gap: no finite-n source or no limit rate");
    CHECK_FALSE(panel.trend_pass);
}

TEST_CASE("panel rejects malformed requests", "[panel]") {
    PanelFamily family;
    CHECK_THROWS_AS(convergence_panel(family, {}, {0.5}), std::invalid_argument);
    CHECK_THROWS_AS(convergence_panel(family, {10}, {}), std::invalid_argument);
    CHECK_THROWS_AS(convergence_panel(family, {10}, {-0.5}), std::invalid_argument);
    family.service = Law::exponential(2.0);  // mean 1/2 but mu says 1
    CHECK_THROWS_AS(convergence_panel(family, {10}, {0.5}), std::invalid_argument);
}

TEST_CASE("panel output is deterministic in the seed", "[panel]") {
    PanelFamily family;
    PanelOptions opts;
    opts.include_limit = false;
    opts.sim_samples = 200;
    opts.burn_in_multiplier = 10.0;
    opts.gg_replications = 100;
    opts.seed = 9;
    const ConvergencePanel a = convergence_panel(family, {25}, {0.5, 1.0}, opts);
    const ConvergencePanel b = convergence_panel(family, {25}, {0.5, 1.0}, opts);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].source == b.rows[i].source);
        if (std::isnan(a.rows[i].rate))
            CHECK(std::isnan(b.rows[i].rate));
        else
            CHECK(a.rows[i].rate == b.rows[i].rate);
    }
}
