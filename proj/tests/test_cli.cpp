#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    int code = -1;
    std::string output;
};

std::string qpot_bin() {
    if (const char* bin = std::getenv("QPOT_BIN")) return bin;
#ifdef QPOT_BIN
    return QPOT_BIN;
#else
    FAIL("QPOT_BIN is not set");
    return {};
#endif
}

CmdResult run_cmd(const std::string& args) {
    const std::string cmd = qpot_bin() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult res;
    char buf[512];
    while (std::fgets(buf, sizeof buf, pipe)) res.output += buf;
    const int status = pclose(pipe);
    res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("qpot_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string write_config(const fs::path& dir, const std::string& name, const std::string& body) {
    const fs::path p = dir / name;
    std::ofstream out(p);
    out << body;
    return p.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string first_line(const fs::path& p) {
    const std::string all = slurp(p);
    return all.substr(0, all.find('\n'));
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
    std::size_t count = 0;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos;
         pos = hay.find(needle, pos + needle.size()))
        ++count;
    return count;
}

const std::string kSimBody =
    R"({"kind":"simulate","seed":7,"regime":{"n":5,"beta":1.0,"mu":1.0},)"
    R"("service":{"family":"exponential","rate":1.0},)"
    R"("interarrival":{"family":"exponential","rate":1.0},)"
    R"("horizon":20.0,"samples":10,"events":true})";

const std::string kStatBody =
    R"({"kind":"stationary","seed":3,"regime":{"n":5,"beta":1.0,"mu":1.0},)"
    R"("service":{"family":"exponential","rate":1.0},)"
    R"("interarrival":{"family":"exponential","rate":1.0},)"
    R"("burn_in":50.0,"count":40,"spacing":0.5})";

}  // namespace

TEST_CASE("bad invocations exit with the config code", "[cli]") {
    const fs::path dir = fresh_dir("bad");
    CHECK(run_cmd("run --config " + (dir / "missing.json").string()).code == 2);
    CHECK(run_cmd("run --config " + write_config(dir, "junk.json", "{nope")).code == 2);
    CHECK(run_cmd("run --config " +
                  write_config(dir, "kind.json", R"({"kind":"frobnicate","seed":1})"))
              .code == 2);
    CHECK(run_cmd("").code == 2);          // a subcommand is required
    CHECK(run_cmd("--nope").code == 2);    // unknown flag

    const CmdResult unknown_key = run_cmd(
        "run --config " + write_config(dir, "key.json", kSimBody.substr(0, kSimBody.size() - 1) +
                                                            R"(,"horizn":5})"));
    CHECK(unknown_key.code == 2);
    CHECK(unknown_key.output.find("horizn") != std::string::npos);

    // an empty body is missing several required fields; all are reported at once
    const CmdResult multi =
        run_cmd("run --config " + write_config(dir, "empty.json", R"({"kind":"simulate"})"));
    CHECK(multi.code == 2);
    CHECK(count_occurrences(multi.output, "config error:") >= 2);
}

TEST_CASE("simulate run writes the documented bundle", "[cli]") {
    const fs::path dir = fresh_dir("sim");
    const std::string cfg = write_config(dir, "cfg.json", kSimBody);
    const CmdResult res = run_cmd("run --config " + cfg + " --out " + (dir / "out").string());
    INFO(res.output);
    REQUIRE(res.code == 0);

    const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
    const std::string hash = manifest["config_hash"].get<std::string>();
    CHECK(hash.size() == 16);
    CHECK(manifest["kind"] == "simulate");
    CHECK(manifest["config"]["seed"] == 7);

    CHECK(first_line(dir / "out" / "path.csv") == "# config " + hash);
    CHECK(fs::exists(dir / "out" / "events.bin"));
    const std::string summary = slurp(dir / "out" / "summary.txt");
    CHECK(summary.find("kind simulate") != std::string::npos);
    CHECK(summary.find("config " + hash) != std::string::npos);
    CHECK(summary.find("balance_violations 0") != std::string::npos);

    bool lists_path_csv = false;
    for (const auto& name : manifest["outputs"])
        if (name == "path.csv") lists_path_csv = true;
    CHECK(lists_path_csv);
}

TEST_CASE("reruns are byte-identical", "[cli]") {
    const fs::path dir = fresh_dir("rerun");
    const std::string cfg = write_config(dir, "cfg.json", kStatBody);
    REQUIRE(run_cmd("run --config " + cfg + " --out " + (dir / "a").string()).code == 0);
    REQUIRE(run_cmd("run --config " + cfg + " --out " + (dir / "b").string()).code == 0);

    for (const char* name : {"samples.csv", "residuals.csv", "diagnostics.json", "summary.txt"})
        CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));

    json ma = json::parse(slurp(dir / "a" / "manifest.json"));
    json mb = json::parse(slurp(dir / "b" / "manifest.json"));
    ma.erase("generated_at");
    mb.erase("generated_at");
    CHECK(ma == mb);

    const json diag = json::parse(slurp(dir / "a" / "diagnostics.json"));
    CHECK(diag["config_hash"] == ma["config_hash"]);
    CHECK(diag["balance_violations"] == 0);
}

TEST_CASE("seed override is part of the resolved config", "[cli]") {
    const fs::path dir = fresh_dir("seedov");
    const std::string cfg7 = write_config(dir, "cfg7.json", kSimBody);
    std::string body999 = kSimBody;
    body999.replace(body999.find("\"seed\":7"), 8, "\"seed\":999");
    const std::string cfg999 = write_config(dir, "cfg999.json", body999);

    REQUIRE(run_cmd("run --config " + cfg7 + " --out " + (dir / "base").string()).code == 0);
    REQUIRE(run_cmd("run --config " + cfg7 + " --seed-override 999 --out " +
                    (dir / "ov").string())
                .code == 0);
    REQUIRE(run_cmd("run --config " + cfg999 + " --out " + (dir / "inline").string()).code == 0);

    const auto hash_of = [&](const char* sub) {
        return json::parse(slurp(dir / sub / "manifest.json"))["config_hash"]
            .get<std::string>();
    };
    CHECK(hash_of("base") != hash_of("ov"));
    CHECK(hash_of("ov") == hash_of("inline"));
    CHECK(slurp(dir / "ov" / "path.csv") == slurp(dir / "inline" / "path.csv"));
}

TEST_CASE("thread count changes the hash but not the numbers", "[cli]") {
    const fs::path dir = fresh_dir("threads");
    const std::string cfg = write_config(
        dir, "cfg.json",
        R"({"kind":"renewal-bounds","seed":1,"law":{"family":"exponential","rate":1.0},)"
        R"("equilibrium":false,"m_max":2,"t_list":[0.5,1.0],"replications":2000})");
    REQUIRE(run_cmd("run --config " + cfg + " --out " + (dir / "serial").string()).code == 0);
    REQUIRE(run_cmd("run --config " + cfg + " --threads 3 --out " + (dir / "par").string())
                .code == 0);
    const std::string serial = slurp(dir / "serial" / "moment_bounds.csv");
    const std::string par = slurp(dir / "par" / "moment_bounds.csv");
    // identical apart from the config-hash line (threads are resolved config)
    CHECK(serial.substr(serial.find('\n')) == par.substr(par.find('\n')));
    CHECK(serial.substr(0, serial.find('\n')) != par.substr(0, par.find('\n')));
}

TEST_CASE("limit solve and quasipotential bundles", "[cli]") {
    const fs::path dir = fresh_dir("solvers");
    const std::string ls = write_config(
        dir, "ls.json",
        R"({"kind":"limit-solve","seed":1,"service":{"family":"exponential","rate":1.0},)"
        R"("beta":1.0,"T":5.0,"forcing":"beta-drift"})");
    const CmdResult lr = run_cmd("run --config " + ls + " --out " + (dir / "ls").string());
    INFO(lr.output);
    REQUIRE(lr.code == 0);
    CHECK(fs::exists(dir / "ls" / "g.csv"));
    CHECK(slurp(dir / "ls" / "summary.txt").find("converged yes") != std::string::npos);

    const std::string qp = write_config(
        dir, "qp.json",
        R"({"kind":"quasipotential","seed":1,"service":{"family":"exponential","rate":1.0},)"
        R"("sigma":1.0,"beta":1.0,"x_grid":[0.5],"T_grid":[2.0],"cells":4,"dt":0.1,)"
        R"("max_iterations":40})");
    const CmdResult qr = run_cmd("run --config " + qp + " --out " + (dir / "qp").string());
    INFO(qr.output);
    REQUIRE(qr.code == 0);
    const std::string hash =
        json::parse(slurp(dir / "qp" / "manifest.json"))["config_hash"].get<std::string>();
    for (const char* name : {"curve.csv", "w_0.csv", "k_0.csv"})
        CHECK(first_line(dir / "qp" / name) == "# config " + hash);
    const json sj = json::parse(slurp(dir / "qp" / "summary.json"));
    CHECK(sj["config_hash"] == hash);
    REQUIRE(sj["points"].size() == 1);
    CHECK(sj["points"][0]["x"] == 0.5);
}

TEST_CASE("bounds run writes tails and the coupling trace", "[cli]") {
    const fs::path dir = fresh_dir("bounds");
    const std::string cfg = write_config(
        dir, "cfg.json",
        R"({"kind":"bounds","seed":5,"regime":{"n":10,"beta":1.0,"mu":1.0},)"
        R"("service":{"family":"exponential","rate":1.0},)"
        R"("interarrival":{"family":"exponential","rate":1.0},)"
        R"("r_grid":[0.5,1.0],"replications":60})");
    const CmdResult res = run_cmd("run --config " + cfg + " --out " + (dir / "out").string());
    INFO(res.output);
    REQUIRE(res.code == 0);
    CHECK(fs::exists(dir / "out" / "gg_tail.csv"));
    CHECK(fs::exists(dir / "out" / "coupling.csv"));
    CHECK(slurp(dir / "out" / "summary.txt").find("coupling_violations 0") != std::string::npos);
}

TEST_CASE("panel run delivers the verdict", "[cli]") {
    const fs::path dir = fresh_dir("panel");
    const std::string cfg = write_config(
        dir, "cfg.json",
        R"({"kind":"panel","seed":3,"service":{"family":"exponential","rate":1.0},)"
        R"("interarrival":{"family":"exponential","rate":1.0},"beta":1.0,)"
        R"("n_list":[10,40],"x_grid":[0.5],"cells":4,"T_grid":[2.0,4.0],"dt":0.1,)"
        R"("lbfgs_iterations":40,"emit_plot_data":true})");
    const CmdResult res = run_cmd("run --config " + cfg + " --out " + (dir / "out").string());
    INFO(res.output);
    REQUIRE(res.code == 0);
    const json verdict = json::parse(slurp(dir / "out" / "verdict.json"));
    CHECK(verdict.contains("trend_pass"));
    REQUIRE(verdict["trends"].size() == 1);
    CHECK(verdict["trends"][0]["gaps"].size() == 2);
    const std::string hash =
        json::parse(slurp(dir / "out" / "manifest.json"))["config_hash"].get<std::string>();
    CHECK(verdict["config_hash"] == hash);
    CHECK(first_line(dir / "out" / "panel.csv") == "# config " + hash);
    CHECK(fs::exists(dir / "out" / "plot_data.csv"));
}

TEST_CASE("plot-data reproduces the emitted reshape", "[cli]") {
    const fs::path dir = fresh_dir("plotdata");
    const std::string cfg = write_config(
        dir, "cfg.json",
        R"({"kind":"limit-solve","seed":1,"service":{"family":"exponential","rate":1.0},)"
        R"("beta":0.5,"T":4.0,"forcing":"beta-drift","emit_plot_data":true})");
    REQUIRE(run_cmd("run --config " + cfg + " --out " + (dir / "out").string()).code == 0);
    const std::string emitted = slurp(dir / "out" / "plot_data.csv");
    fs::remove(dir / "out" / "plot_data.csv");
    REQUIRE(run_cmd("plot-data --config " + cfg + " --out " + (dir / "out").string()).code == 0);
    CHECK(slurp(dir / "out" / "plot_data.csv") == emitted);
}

TEST_CASE("failures leave a diagnostics trail", "[cli]") {
    const fs::path dir = fresh_dir("fail");
    const std::string cfg = write_config(
        dir, "cfg.json",
        R"({"kind":"quasipotential","seed":1,"service":{"family":"exponential","rate":1.0},)"
        R"("sigma":0.0,"beta":1.0,"x_grid":[0.5],"T_grid":[2.0],"cells":0,"dt":0.1})");
    const CmdResult res = run_cmd("run --config " + cfg + " --out " + (dir / "out").string());
    CHECK(res.code == 1);
    CHECK(res.output.find("error:") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "error.txt"));
    CHECK(slurp(dir / "out" / "error.txt").find("no active control channel") != std::string::npos);
    CHECK(slurp(dir / "out" / "summary.txt").find("error ") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "manifest.json"));
}
