#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

/// Runs the CLI with `args`; stdout and stderr go to `log`.
int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(SEPFIT_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::size_t line_count(const fs::path& p) {
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const char* kMixedFormula = "y ~ cond + x + (1 + cond | subj)";

/// Scenario JSON for the mixed design; optional injection into three groups.
std::string scenario_json(int n, int groups, bool inject) {
    json j;
    j["formula"] = kMixedFormula;
    j["n"] = n;
    j["covariates"] = json::array({{{"name", "x"}, {"distribution", "normal"}, {"mean", 0}, {"sd", 1}}});
    j["factors"] = json::array({{{"name", "cond"}, {"levels", {"A", "B"}}}});
    j["groups"] = json::array({{{"name", "subj"}, {"count", groups}, {"prefix", "s"}}});
    j["intercept"] = -0.5;
    j["beta"] = {0.8, -0.4};
    j["random"] = json::array({{{"group", "subj"}, {"sigma", {0.7, 0.5}}, {"corr", {{1, 0.3}, {0.3, 1}}}}});
    if (inject) j["injections"] = json::array({{{"where", {{"subj", {"s03", "s08", "s15"}}, {"cond", "B"}}}, {"y", 1}}});
    return j.dump();
}

/// Simulates a dataset through the CLI into `dir`.
void simulate(const fs::path& dir, int n, int groups, bool inject, int seed) {
    write(dir / "scenario.json", scenario_json(n, groups, inject));
    REQUIRE(run("simulate --scenario " + (dir / "scenario.json").string() + " --seed " + std::to_string(seed) +
                    " --out " + (dir / "sim").string(),
                dir / "sim.log") == 0);
}

std::string inputs(const fs::path& sim) {
    return "--formula \"" + std::string(kMixedFormula) + "\" --data " + (sim / "data.csv").string() + " --schema " +
           (sim / "schema.json").string();
}

void write_table1(const fs::path& dir, int n_a, int ones_a, int n_b, int ones_b) {
    write(dir / "data.csv", testutil::two_level_csv(n_a, ones_a, n_b, ones_b));
    write(dir / "schema.json", R"({"y": {"kind": "response", "levels": ["0", "1"]}, "f": {"kind": "factor", "levels": ["A", "B"]}})");
}

}  // namespace

TEST_CASE("simulate writes data, schema, truth and manifest") {
    const fs::path d = testutil::scratch_dir("cli-sim");
    simulate(d, 300, 6, false, 1);
    for (const char* f : {"data.csv", "schema.json", "truth.json", "manifest.json"}) CHECK(fs::exists(d / "sim" / f));
    CHECK(line_count(d / "sim" / "data.csv") == 301);
    const json m = read_json(d / "sim" / "manifest.json");
    CHECK(m["command"] == "simulate");
    CHECK(m["inputs"][0]["sha256"].get<std::string>().size() == 64);
}

TEST_CASE("check: separation verdicts and output layout") {
    const fs::path d = testutil::scratch_dir("cli-check");
    write_table1(d, 20, 20, 20, 0);
    CHECK(run("check --formula \"y ~ f\" --data " + (d / "data.csv").string() + " --schema " + (d / "schema.json").string() +
                  " --out " + (d / "out").string(),
              d / "check.log") == 0);
    for (const char* f : {"manifest.json", "separation.json", "separation.txt", "tree.json", "tree.txt"})
        CHECK(fs::exists(d / "out" / f));
    CHECK(read_json(d / "out" / "separation.json")["verdict"] == "Separation");

    write_table1(d, 30, 24, 20, 13);
    CHECK(run("check --formula \"y ~ f\" --data " + (d / "data.csv").string() + " --schema " + (d / "schema.json").string() +
                  " --out " + (d / "out2").string(),
              d / "check2.log") == 0);
    CHECK(read_json(d / "out2" / "separation.json")["verdict"] == "Overlap");
}

TEST_CASE("exit codes for formula, data and usage errors") {
    const fs::path d = testutil::scratch_dir("cli-errors");
    write_table1(d, 20, 15, 20, 5);
    const std::string data = " --data " + (d / "data.csv").string() + " --schema " + (d / "schema.json").string();
    CHECK(run("check --formula \"y ~ f + + f\"" + data + " --out " + (d / "o1").string(), d / "e1.log") == 2);
    CHECK(slurp(d / "e1.log").find("formula") != std::string::npos);
    CHECK(run("check --formula \"y ~ f\" --data " + (d / "data.csv").string() + " --schema " + (d / "missing.json").string() +
                  " --out " + (d / "o2").string(),
              d / "e2.log") == 3);
    CHECK(run("check --formula \"y ~ g\"" + data + " --out " + (d / "o3").string(), d / "e3.log") == 3);
    CHECK(run("fit --bogus-flag", d / "e4.log") == 1);
    CHECK(run("", d / "e5.log") == 1);
    // engine-specific options are rejected for other engines
    CHECK(run("fit --engine irls --chains 2 --formula \"y ~ f\"" + data + " --out " + (d / "o6").string(), d / "e6.log") == 1);
    CHECK(run("fit --engine nuts --irls-groups ignore --formula \"y ~ f\"" + data + " --out " + (d / "o7").string(),
              d / "e7.log") == 1);
    CHECK(run("fit --engine warp --formula \"y ~ f\"" + data + " --out " + (d / "o8").string(), d / "e8.log") == 1);
}

TEST_CASE("fit: too few observations for the parameter count exits 4") {
    const fs::path d = testutil::scratch_dir("cli-ident");
    simulate(d, 50, 27, false, 2);
    CHECK(run("fit --engine irls " + inputs(d / "sim") + " --out " + (d / "out").string(), d / "fit.log") == 4);
    const json ident = read_json(d / "out" / "identifiability.json");
    CHECK(ident["pass"] == false);
    CHECK(ident["parameters"] == 60);
    CHECK(fs::exists(d / "out" / "separation.json"));
}

TEST_CASE("fit: quasi-separated groups make IRLS diverge with exit 5") {
    const fs::path d = testutil::scratch_dir("cli-irls");
    simulate(d, 2000, 20, true, 3);
    CHECK(run("fit --engine irls " + inputs(d / "sim") + " --out " + (d / "out").string(), d / "fit.log") == 5);
    const json s = read_json(d / "out" / "fit" / "summary.json");
    CHECK(s["verdict"] == "diverging");
    CHECK(s["fit"].contains("norm_trajectory"));
}

TEST_CASE("fit: laplace engine on overlap data") {
    const fs::path d = testutil::scratch_dir("cli-laplace");
    simulate(d, 600, 10, false, 4);
    CHECK(run("fit --engine laplace " + inputs(d / "sim") + " --out " + (d / "out").string(), d / "fit.log") == 0);
    const json s = read_json(d / "out" / "fit" / "summary.json");
    CHECK(s["engine"] == "laplace");
    CHECK(s["reduced_to_random_intercept"] == true);
}

TEST_CASE("fit: nuts end to end with config file and flag override") {
    const fs::path d = testutil::scratch_dir("cli-nuts");
    simulate(d, 400, 6, false, 5);
    json cfg;
    cfg["formula"] = kMixedFormula;
    cfg["data"] = "sim/data.csv";  // relative to the config file
    cfg["schema"] = "sim/schema.json";
    cfg["engine"] = "nuts";
    cfg["chains"] = 3;
    cfg["iter"] = 400;
    cfg["warmup"] = 200;
    cfg["ppc_draws"] = 100;
    cfg["seed"] = 9;
    write(d / "run.json", cfg.dump(2));
    const int rc = run("fit --config " + (d / "run.json").string() + " --chains 2 --out " + (d / "out").string(), d / "fit.log");
    CHECK((rc == 0 || rc == 5));
    const fs::path out = d / "out";
    for (const char* f : {"manifest.json", "separation.json", "identifiability.json", "fit/summary.json", "fit/summary.txt",
                          "fit/chain-1.csv", "fit/chain-2.csv", "ppc/replicated.csv", "ppc/groups.csv", "ppc/fitted.csv",
                          "ppc/overall.csv", "plots/trace.csv", "plots/density.csv"})
        CHECK_MESSAGE(fs::exists(out / f), f);
    CHECK_FALSE(fs::exists(out / "fit" / "chain-3.csv"));
    CHECK(line_count(out / "fit" / "chain-1.csv") == 201);
    const std::string header = slurp(out / "fit" / "chain-1.csv").substr(0, 200);
    CHECK(header.rfind("b_Intercept,", 0) == 0);
    CHECK(slurp(out / "fit" / "chain-1.csv").find("divergent,treedepth,accept_stat,energy") != std::string::npos);
    const json m = read_json(out / "manifest.json");
    CHECK(m["config"]["chains"] == 2);
    CHECK(m["config"]["iter"] == 400);
    CHECK(m["seed"] == 9);
    CHECK(m["inputs"].size() == 2);
    const json s = read_json(out / "fit" / "summary.json");
    CHECK(s["chains"] == 2);
    CHECK(s["draws_per_chain"] == 200);
    CHECK((rc == 0) == (s["verdict"] == "pass"));
    CHECK(line_count(out / "ppc" / "replicated.csv") == 101);
}

TEST_CASE("fit: engine check delegates to the separation scan") {
    const fs::path d = testutil::scratch_dir("cli-fitcheck");
    write_table1(d, 26, 26, 24, 18);
    CHECK(run("fit --engine check --min-leaf 5 --formula \"y ~ f\" --data " + (d / "data.csv").string() + " --schema " +
                  (d / "schema.json").string() + " --out " + (d / "out").string(),
              d / "fit.log") == 0);
    CHECK(read_json(d / "out" / "separation.json")["verdict"] == "QuasiSeparation");
    CHECK(fs::exists(d / "out" / "tree.json"));
}
