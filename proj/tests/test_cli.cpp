#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "koopman/model_io.hpp"

// Spawns the installed binary; KOOPMAN_CLI_PATH and KOOPMAN_PRESET_DIR come
// from the build system.

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

const fs::path& tmp_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() /
                     ("koopman_cli_" + std::to_string(::getpid()));
        fs::create_directories(p);
        return p;
    }();
    return root;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = tmp_root() / name;
    fs::create_directories(p);
    return p;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    REQUIRE(out.good());
    out << content;
}

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path base = tmp_root() / ("run_" + std::to_string(counter++));
    fs::path out_f = base.string() + ".out";
    fs::path err_f = base.string() + ".err";
    std::string cmd = std::string(KOOPMAN_CLI_PATH) + " " + args + " > '" +
                      out_f.string() + "' 2> '" + err_f.string() + "'";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_text(out_f);
    r.err = read_text(err_f);
    fs::remove(out_f);
    fs::remove(err_f);
    return r;
}

// small example1 run: 10x10 collocation, truth for the stable pair
std::string quick_config(const fs::path& out_dir,
                         const std::string& extra = "") {
    return std::string(R"({
  "system": {"builtin": "example1"},
  "domain": {"min": [-1, -1], "max": [1, 1]},
  "sampling": {"grid": [10, 10]},
  "sigma": [2, 2],
  "pair": {"lambda": -1},
  "truth": "x1 - x2^2",
  "eval": [{"n": 12}, {"n": 12}],
)") + extra +
           "  \"out\": \"" + out_dir.string() + "\"\n}\n";
}

nlohmann::json load_json(const fs::path& p) {
    return nlohmann::json::parse(read_text(p));
}

double num(const nlohmann::json& j) {
    return std::strtod(j.get<std::string>().c_str(), nullptr);
}

}  // namespace

TEST_CASE("list prints the builtin systems deterministically") {
    RunResult r = run_cli("list");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("example1  d=2  x_e=(0.000000, 0.000000)  "
                     "eigenvalues: 3.000000, -1.000000") !=
          std::string::npos);
    CHECK(r.out.find("example2  d=2") != std::string::npos);
    CHECK(r.out.find("0.780776, -1.280776") != std::string::npos);  // duffing
    CHECK(r.out.find("gradient3d  d=3") != std::string::npos);
    RunResult again = run_cli("list");
    CHECK(again.out == r.out);
}

TEST_CASE("solve writes the model and an honest diagnostics file") {
    fs::path dir = fresh_dir("solve_basic");
    fs::path cfg = dir / "config.json";
    write_text(cfg, quick_config(dir / "out"));

    RunResult r = run_cli("solve --config '" + cfg.string() + "'");
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(dir / "out" / "model.json"));
    REQUIRE(fs::exists(dir / "out" / "diagnostics.json"));

    nlohmann::json d = load_json(dir / "out" / "diagnostics.json");
    CHECK(d.at("system") == "example1");
    CHECK(num(d.at("lambda")) == Catch::Approx(-1.0).margin(1e-9));
    CHECK(d.at("N") == 100);
    CHECK(d.at("n") == 103);
    CHECK(d.at("sampling") == "grid(10x10)");
    std::string path = d.at("solver_path");
    CHECK((path == "ldlt" || path == "ldlt_escalated" ||
           path == "least_squares"));
    CHECK(num(d.at("eta_used")) > 0.0);
    CHECK(num(d.at("rho")) == Catch::Approx(std::sqrt(2.0) / 9.0).margin(2e-3));
    CHECK(num(d.at("representer_residual_inf")) >= 0.0);
}

TEST_CASE("repeated solves are byte identical") {
    fs::path dir = fresh_dir("solve_determinism");
    write_text(dir / "a.json", quick_config(dir / "out_a"));
    write_text(dir / "b.json", quick_config(dir / "out_b"));
    REQUIRE(run_cli("solve --config '" + (dir / "a.json").string() + "'")
                .code == 0);
    REQUIRE(run_cli("solve --config '" + (dir / "b.json").string() + "'")
                .code == 0);
    CHECK(read_text(dir / "out_a" / "model.json") ==
          read_text(dir / "out_b" / "model.json"));
    CHECK(read_text(dir / "out_a" / "diagnostics.json") ==
          read_text(dir / "out_b" / "diagnostics.json"));
}

TEST_CASE("eta and out flags override the config") {
    fs::path dir = fresh_dir("overrides");
    fs::path cfg = dir / "config.json";
    write_text(cfg, quick_config(dir / "ignored"));

    fs::path out2 = dir / "actual";
    RunResult r = run_cli("solve --config '" + cfg.string() + "' --out '" +
                          out2.string() + "' --eta 1e-8");
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(out2 / "diagnostics.json"));
    CHECK_FALSE(fs::exists(dir / "ignored" / "model.json"));
    nlohmann::json d = load_json(out2 / "diagnostics.json");
    CHECK(num(d.at("eta")) == 1e-8);
    CHECK(num(d.at("eta_used")) >= 1e-8);

    RunResult bad = run_cli("solve --config '" + cfg.string() + "' --eta -1");
    CHECK(bad.code == 2);
    CHECK(bad.err.find("ConfigError") != std::string::npos);
}

TEST_CASE("shipped preset solves cleanly") {
    fs::path out = fresh_dir("preset_quick") / "out";
    fs::path preset =
        fs::path(KOOPMAN_PRESET_DIR) / "example1-lambda1-quick.json";
    REQUIRE(fs::exists(preset));
    RunResult r = run_cli("solve --config '" + preset.string() + "' --out '" +
                          out.string() + "'");
    REQUIRE(r.code == 0);
    nlohmann::json d = load_json(out / "diagnostics.json");
    CHECK(d.at("sampling") == "grid(30x30)");
    CHECK(num(d.at("h0_abs")) < 1e-4);
}

TEST_CASE("grid evaluates the stored model with exact csv headers") {
    fs::path dir = fresh_dir("grid_truth");
    fs::path cfg = dir / "config.json";
    write_text(cfg, quick_config(dir / "out"));
    REQUIRE(run_cli("solve --config '" + cfg.string() + "'").code == 0);
    REQUIRE(run_cli("grid --config '" + cfg.string() + "'").code == 0);

    std::string phi = read_text(dir / "out" / "phi.csv");
    CHECK(phi.rfind("x1,x2,phi_star,phi_true,abs_err,rel_err,excluded\n",
                    0) == 0);
    // header plus one row per grid point
    CHECK(std::count(phi.begin(), phi.end(), '\n') == 1 + 12 * 12);
    std::string truth = read_text(dir / "out" / "truth.csv");
    CHECK(truth.rfind("x1,x2,phi_true\n", 0) == 0);
    std::string err = read_text(dir / "out" / "error.csv");
    CHECK(err.rfind("x1,x2,abs_err,rel_err,excluded\n", 0) == 0);

    nlohmann::json s = load_json(dir / "out" / "summary.json");
    CHECK(s.at("points") == 144);
    CHECK(s.at("included").get<long long>() +
              s.at("excluded").get<long long>() ==
          144);
    CHECK(num(s.at("median_rel")) < 1e-2);
    CHECK(num(s.at("alpha")) == 1.0);  // align not requested
}

TEST_CASE("grid without truth reports plain values") {
    fs::path dir = fresh_dir("grid_plain");
    fs::path cfg = dir / "config.json";
    // same run minus the truth line
    std::string text = std::string(R"({
  "system": {"builtin": "example1"},
  "domain": {"min": [-1, -1], "max": [1, 1]},
  "sampling": {"grid": [10, 10]},
  "sigma": [2, 2],
  "pair": {"lambda": -1},
  "eval": [{"n": 7}, {"n": 5}],
)") + "  \"out\": \"" + (dir / "out").string() + "\"\n}\n";
    write_text(cfg, text);
    REQUIRE(run_cli("solve --config '" + cfg.string() + "'").code == 0);
    REQUIRE(run_cli("grid --config '" + cfg.string() + "'").code == 0);

    std::string phi = read_text(dir / "out" / "phi.csv");
    CHECK(phi.rfind("x1,x2,phi_star\n", 0) == 0);
    CHECK(std::count(phi.begin(), phi.end(), '\n') == 1 + 7 * 5);
    CHECK_FALSE(fs::exists(dir / "out" / "truth.csv"));
    nlohmann::json s = load_json(dir / "out" / "summary.json");
    CHECK(s.at("points") == 35);
    CHECK_FALSE(s.contains("median_rel"));
}

TEST_CASE("grid accepts an explicit model path") {
    fs::path dir = fresh_dir("grid_model_flag");
    write_text(dir / "a.json", quick_config(dir / "out_a"));
    write_text(dir / "b.json", quick_config(dir / "out_b"));
    REQUIRE(run_cli("solve --config '" + (dir / "a.json").string() + "'")
                .code == 0);
    RunResult r = run_cli("grid --config '" + (dir / "b.json").string() +
                          "' --model '" +
                          (dir / "out_a" / "model.json").string() + "'");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "out_b" / "phi.csv"));
}

TEST_CASE("kernel lengthscales survive the model file exactly") {
    fs::path dir = fresh_dir("sigma_exact");
    fs::path cfg = dir / "config.json";
    std::string text = std::string(R"({
  "system": {"builtin": "example1"},
  "domain": {"min": [-1, -1], "max": [1, 1]},
  "sampling": {"grid": [8, 8]},
  "sigma": [2.5, 3],
  "pair": {"lambda": -1},
)") + "  \"out\": \"" + (dir / "out").string() + "\"\n}\n";
    write_text(cfg, text);
    REQUIRE(run_cli("solve --config '" + cfg.string() + "'").code == 0);

    koopman::EigenfunctionModel model =
        koopman::load_model((dir / "out" / "model.json").string());
    CHECK(model.spec().sigma(0) == 2.5);
    CHECK(model.spec().sigma(1) == 3.0);
    CHECK(model.functionals().size() == 1 + 2 + 64);
}

TEST_CASE("traj checks the semigroup property of the stored model") {
    fs::path dir = fresh_dir("traj_basic");
    fs::path cfg = dir / "config.json";
    std::string extra = R"(  "traj": {
    "starts": [[0.5, 0.5], [-0.3, 0.2]],
    "T": 0.5,
    "dt": 0.01
  },
)";
    write_text(cfg, quick_config(dir / "out", extra));
    REQUIRE(run_cli("solve --config '" + cfg.string() + "'").code == 0);
    REQUIRE(run_cli("traj --config '" + cfg.string() + "'").code == 0);

    nlohmann::json p = load_json(dir / "out" / "property.json");
    CHECK(num(p.at("lambda")) == Catch::Approx(-1.0).margin(1e-9));
    CHECK(num(p.at("T")) == 0.5);
    CHECK(num(p.at("horizon_used")) == 0.5);  // stable pair, no cap
    REQUIRE(p.at("trajectories").size() == 2);
    for (const auto& t : p.at("trajectories")) {
        CHECK(t.at("blowup") == false);
        CHECK(t.at("steps_used").get<long long>() > 0);
        CHECK(num(t.at("max_deviation")) >= 0.0);
    }
    CHECK(num(p.at("max_deviation")) < 0.1);
}

TEST_CASE("traj rejects a model solved for a different eigenpair") {
    fs::path dir = fresh_dir("traj_mismatch");
    write_text(dir / "stable.json", quick_config(dir / "out"));
    std::string unstable = quick_config(dir / "out");
    auto pos = unstable.find("\"lambda\": -1");
    REQUIRE(pos != std::string::npos);
    unstable.replace(pos, 12, "\"lambda\": 3");
    write_text(dir / "unstable.json", unstable);

    REQUIRE(run_cli("solve --config '" + (dir / "stable.json").string() +
                    "'")
                .code == 0);
    RunResult r =
        run_cli("traj --config '" + (dir / "unstable.json").string() + "'");
    CHECK(r.code == 4);
    CHECK(r.err.find("DomainError") != std::string::npos);
}

TEST_CASE("converge writes rows sorted by fill distance") {
    fs::path dir = fresh_dir("converge_basic");
    fs::path cfg = dir / "config.json";
    std::string extra = R"(  "eta": 1e-10,
  "convergence": {"grids": [[10, 10], [6, 6], [14, 14]], "holdout": 150},
)";
    write_text(cfg, quick_config(dir / "out", extra));
    RunResult r = run_cli("converge --config '" + cfg.string() + "'");
    REQUIRE(r.code == 0);

    std::string csv = read_text(dir / "out" / "convergence.csv");
    REQUIRE(csv.rfind("N,rho,residual_rms,rel_err_median,status\n", 0) == 0);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    std::vector<long long> ns;
    while (std::getline(lines, line)) {
        ns.push_back(std::strtoll(line.c_str(), nullptr, 10));
        CHECK(line.find(",ok") != std::string::npos);
    }
    CHECK(ns == std::vector<long long>{36, 100, 196});

    nlohmann::json s = load_json(dir / "out" / "summary.json");
    CHECK(s.at("rows") == 3);
    CHECK(s.at("rows_ok") == 3);
    CHECK(s.at("slope_valid") == true);
    CHECK(num(s.at("slope")) > 0.0);
    CHECK(num(s.at("eta")) == 1e-10);
}

TEST_CASE("converge needs a grid list and two surviving rows") {
    fs::path dir = fresh_dir("converge_bad");
    write_text(dir / "nogrids.json", quick_config(dir / "out"));
    RunResult r =
        run_cli("converge --config '" + (dir / "nogrids.json").string() + "'");
    CHECK(r.code == 2);
    CHECK(r.err.find("ConfigError") != std::string::npos);

    std::string extra = R"(  "eta": 1e-10,
  "convergence": {"grids": [[5, 5], [0, 0]], "holdout": 50},
)";
    write_text(dir / "onerow.json", quick_config(dir / "out", extra));
    RunResult one =
        run_cli("converge --config '" + (dir / "onerow.json").string() + "'");
    CHECK(one.code == 3);
    CHECK(one.err.find("fewer than two") != std::string::npos);
}

TEST_CASE("error reporting maps the failure class to the exit code") {
    fs::path dir = fresh_dir("exit_codes");

    write_text(dir / "unknown.json",
               R"({"system": {"builtin": "lorenz"}, "domain": {"min": [-1], "max": [1]}, "sampling": {"grid": [5]}, "sigma": [1]})");
    RunResult unknown =
        run_cli("solve --config '" + (dir / "unknown.json").string() + "'");
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("UnknownSystem") != std::string::npos);

    write_text(dir / "repeated.json",
               R"({"system": {"expressions": ["x1", "x2"], "dimension": 2}, "domain": {"min": [-1, -1], "max": [1, 1]}, "sampling": {"grid": [5, 5]}, "sigma": [1, 1]})");
    RunResult repeated =
        run_cli("solve --config '" + (dir / "repeated.json").string() + "'");
    CHECK(repeated.code == 3);
    CHECK(repeated.err.find("RepeatedEigenvalue") != std::string::npos);

    write_text(dir / "rotation.json",
               R"({"system": {"expressions": ["x2", "-x1"], "dimension": 2}, "domain": {"min": [-1, -1], "max": [1, 1]}, "sampling": {"grid": [5, 5]}, "sigma": [1, 1]})");
    RunResult rotation =
        run_cli("solve --config '" + (dir / "rotation.json").string() + "'");
    CHECK(rotation.code == 3);
    CHECK(rotation.err.find("NonHyperbolic") != std::string::npos);

    RunResult missing = run_cli("solve --config '" +
                                (dir / "does_not_exist.json").string() + "'");
    CHECK(missing.code == 2);
    CHECK(missing.err.find("ConfigError") != std::string::npos);

    write_text(dir / "malformed.json", "{not json");
    RunResult malformed =
        run_cli("solve --config '" + (dir / "malformed.json").string() + "'");
    CHECK(malformed.code == 2);

    fs::path syntax = dir / "syntax.json";
    write_text(syntax, quick_config(dir / "out",
                                    "  \"truth_broken\": true,\n"));
    std::string bad_truth = read_text(syntax);
    auto tpos = bad_truth.find("x1 - x2^2");
    REQUIRE(tpos != std::string::npos);
    bad_truth.replace(tpos, 9, "(x1 +");
    write_text(syntax, bad_truth);
    RunResult syn = run_cli("solve --config '" + syntax.string() + "'");
    CHECK(syn.code == 2);
    CHECK(syn.err.find("SyntaxError") != std::string::npos);

    CHECK(run_cli("").code == 2);             // no subcommand
    CHECK(run_cli("frobnicate").code == 2);   // unknown subcommand
    CHECK(run_cli("solve").code == 2);        // missing required --config
    CHECK(run_cli("list --bogus-flag").code == 2);
}
