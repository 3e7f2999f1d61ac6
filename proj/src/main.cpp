// koopman: principal Koopman eigenfunctions of smooth dynamical systems at
// hyperbolic equilibria, recovered by RKHS kernel collocation.
//
// Subcommands: solve (fit + serialize a model), grid (evaluate on a tensor
// grid, optionally against an analytic truth), converge (fill-distance
// convergence study), traj (semigroup identity along RK4 trajectories),
// list (builtin systems).
//
// Exit codes: 0 success, 2 configuration error, 3 solver/spectrum failure,
// 4 evaluation/property failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "koopman/collocation.hpp"
#include "koopman/config.hpp"
#include "koopman/dynsys.hpp"
#include "koopman/errors.hpp"
#include "koopman/metrics.hpp"
#include "koopman/model_io.hpp"
#include "koopman/trajectory.hpp"

namespace {

using namespace koopman;

// Shortest decimal string that parses back to exactly the same double;
// keeps CSV artifacts diff-able without losing precision.
std::string shortest_repr(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content) {
    std::filesystem::path dir = path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw ConfigError("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out)
            throw ConfigError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json string_vec_json(const Eigen::VectorXd& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        arr.push_back(real_to_string(v(i)));
    return arr;
}

struct CommonArgs {
    std::string config_path;
    std::optional<double> eta_override;
    std::optional<std::string> out_override;
    std::optional<std::string> model_path;
};

RunConfig load_with_overrides(const CommonArgs& args) {
    RunConfig cfg = load_config(args.config_path);
    if (args.eta_override) {
        if (*args.eta_override < 0.0)
            throw ConfigError("eta must be nonnegative");
        cfg.eta_abs = *args.eta_override;
    }
    if (args.out_override) cfg.out_dir = *args.out_override;
    return cfg;
}

std::filesystem::path model_file_for(const CommonArgs& args,
                                     const RunConfig& cfg) {
    if (args.model_path) return *args.model_path;
    return std::filesystem::path(cfg.out_dir) / "model.json";
}

EigenfunctionModel solve_from_config(const RunConfig& cfg, double* rho_out) {
    CollocationSet Z = sample(cfg.domain, cfg.sampling);
    if (rho_out != nullptr)
        *rho_out = fill_distance(
            Z.points, cfg.domain,
            default_probe_resolution(cfg.domain.dimension()));
    GramSystem gs =
        build(cfg.vf, cfg.lin, cfg.pair_index, Z, cfg.kernel(), 0.0);
    gs.eta = cfg.resolve_eta(gs);
    return solve(gs);
}

int cmd_solve(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    double rho = 0.0;
    EigenfunctionModel model = solve_from_config(cfg, &rho);
    const SolveDiagnostics& d = model.diagnostics();

    std::filesystem::path out_dir(cfg.out_dir);
    write_file_atomic(out_dir / "model.json",
                      model_to_json(model).dump(2) + "\n");

    nlohmann::json diag;
    diag["system"] = cfg.vf.name;
    diag["lambda"] = real_to_string(model.lambda());
    diag["w"] = string_vec_json(model.w());
    diag["sigma"] = string_vec_json(cfg.sigma);
    diag["sampling"] = cfg.sampling.describe();
    diag["N"] = static_cast<long long>(model.functionals().size()) - 1 -
                cfg.vf.dimension;
    diag["n"] = static_cast<long long>(model.functionals().size());
    diag["rho"] = real_to_string(rho);
    diag["eta"] = real_to_string(model.eta());
    diag["eta_used"] = real_to_string(d.eta_used);
    diag["solver_path"] = d.solver_path;
    diag["refinement_iterations"] = d.refinement_iterations;
    diag["representer_residual_inf"] =
        real_to_string(d.representer_residual_inf);
    diag["h0_abs"] = real_to_string(d.h0_abs);
    diag["grad_h0_inf"] = real_to_string(d.grad_h0_inf);
    diag["max_pde_residual_rel"] = real_to_string(d.max_pde_residual_rel);
    diag["warnings"] = d.warnings;
    for (const std::string& warning : cfg.lin.warnings)
        diag["warnings"].push_back(warning);
    write_file_atomic(out_dir / "diagnostics.json", diag.dump(2) + "\n");

    for (const std::string& warning : d.warnings)
        std::cerr << "warning: " << warning << "\n";
    return 0;
}

int cmd_grid(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    EigenfunctionModel model =
        load_model(model_file_for(args, cfg).string());
    const int d = cfg.vf.dimension;
    if (static_cast<int>(model.equilibrium().size()) != d)
        throw DomainError("model dimension does not match config system");

    std::vector<Eigen::VectorXd> grid = make_eval_grid(cfg);
    std::filesystem::path out_dir(cfg.out_dir);
    nlohmann::json summary;
    summary["points"] = static_cast<long long>(grid.size());

    std::ostringstream phi_csv;
    for (int a = 1; a <= d; ++a) phi_csv << "x" << a << ",";
    phi_csv << "phi_star";

    if (cfg.truth) {
        ErrorReport rep = error_field(model, *cfg.truth, grid,
                                      cfg.eps_floor, cfg.align);
        phi_csv << ",phi_true,abs_err,rel_err,excluded\n";
        for (std::size_t i = 0; i < grid.size(); ++i) {
            for (int a = 0; a < d; ++a)
                phi_csv << shortest_repr(grid[i](a)) << ",";
            phi_csv << shortest_repr(rep.phi_star[i]) << ","
                    << shortest_repr(rep.phi_true[i]) << ","
                    << shortest_repr(rep.abs_err[i]) << ","
                    << shortest_repr(rep.rel_err[i]) << ","
                    << (rep.excluded[i] ? 1 : 0) << "\n";
        }
        // companion files mirroring the truth and error panels
        std::ostringstream truth_csv, err_csv;
        for (int a = 1; a <= d; ++a) truth_csv << "x" << a << ",";
        truth_csv << "phi_true\n";
        for (int a = 1; a <= d; ++a) err_csv << "x" << a << ",";
        err_csv << "abs_err,rel_err,excluded\n";
        for (std::size_t i = 0; i < grid.size(); ++i) {
            for (int a = 0; a < d; ++a) {
                truth_csv << shortest_repr(grid[i](a)) << ",";
                err_csv << shortest_repr(grid[i](a)) << ",";
            }
            truth_csv << shortest_repr(rep.phi_true[i]) << "\n";
            err_csv << shortest_repr(rep.abs_err[i]) << ","
                    << shortest_repr(rep.rel_err[i]) << ","
                    << (rep.excluded[i] ? 1 : 0) << "\n";
        }
        write_file_atomic(out_dir / "truth.csv", truth_csv.str());
        write_file_atomic(out_dir / "error.csv", err_csv.str());

        summary["alpha"] = real_to_string(rep.alpha);
        summary["median_rel"] = real_to_string(rep.median_rel);
        summary["mean_rel"] = real_to_string(rep.mean_rel);
        summary["max_rel"] = real_to_string(rep.max_rel);
        summary["max_abs"] = real_to_string(rep.max_abs);
        summary["included"] = static_cast<long long>(rep.included_count);
        summary["excluded"] =
            static_cast<long long>(grid.size() - rep.included_count);
    } else {
        phi_csv << "\n";
        std::vector<double> values = model.batch_eval(grid);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            for (int a = 0; a < d; ++a)
                phi_csv << shortest_repr(grid[i](a)) << ",";
            phi_csv << shortest_repr(values[i]) << "\n";
        }
    }
    summary["extrapolation_seen"] = model.extrapolation_seen();
    write_file_atomic(out_dir / "phi.csv", phi_csv.str());
    write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
    return 0;
}

int cmd_converge(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    if (cfg.conv_grids.empty())
        throw ConfigError("config has no convergence.grids list");
    double eta = cfg.eta_abs;  // convergence_study resolves relative eta
    const Expr* truth = cfg.truth ? &*cfg.truth : nullptr;

    // For relative eta, resolve against the first grid's Gram scale so all
    // entries share one eta, as the study contract expects.
    if (eta < 0.0) {
        CollocationSet Z0 =
            sample(cfg.domain, SamplingScheme::grid(cfg.conv_grids.front()));
        GramSystem gs0 =
            build(cfg.vf, cfg.lin, cfg.pair_index, Z0, cfg.kernel(), 0.0);
        eta = cfg.eta_rel * gs0.gram.diagonal().mean();
    }

    ConvergenceRecord rec = convergence_study(
        cfg.vf, cfg.lin, cfg.pair_index, cfg.domain, cfg.kernel(), eta,
        cfg.conv_grids, truth, cfg.conv_holdout);

    std::ostringstream csv;
    csv << "N,rho,residual_rms,rel_err_median,status\n";
    int ok_rows = 0;
    for (const ConvergenceEntry& e : rec.entries) {
        if (e.status == "ok") ++ok_rows;
        csv << e.N << "," << shortest_repr(e.rho) << ","
            << shortest_repr(e.residual_rms) << ","
            << shortest_repr(e.rel_err_median) << "," << e.status << "\n";
    }
    nlohmann::json summary;
    summary["rows"] = static_cast<long long>(rec.entries.size());
    summary["rows_ok"] = ok_rows;
    summary["eta"] = real_to_string(eta);
    summary["slope_valid"] = rec.slope_valid;
    if (rec.slope_valid) summary["slope"] = real_to_string(rec.slope);

    std::filesystem::path out_dir(cfg.out_dir);
    write_file_atomic(out_dir / "convergence.csv", csv.str());
    write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
    if (ok_rows < 2) {
        std::cerr << "error: fewer than two convergence rows succeeded\n";
        return 3;
    }
    return 0;
}

int cmd_traj(const CommonArgs& args) {
    RunConfig cfg = load_with_overrides(args);
    EigenfunctionModel model =
        load_model(model_file_for(args, cfg).string());
    double expected =
        cfg.lin.pairs[static_cast<std::size_t>(cfg.pair_index)].lambda;
    if (std::abs(model.lambda() - expected) > 1e-6)
        throw DomainError(
            "model lambda " + std::to_string(model.lambda()) +
            " does not match the configured eigenpair " +
            std::to_string(expected));

    std::vector<Eigen::VectorXd> starts = make_traj_starts(cfg);
    PropertyReport rep = koopman_property_check(
        model, cfg.vf, starts, cfg.traj.T, cfg.traj.dt, cfg.traj.floor_rel);

    nlohmann::json out;
    out["lambda"] = real_to_string(model.lambda());
    out["T"] = real_to_string(cfg.traj.T);
    out["dt"] = real_to_string(cfg.traj.dt);
    out["horizon_used"] = real_to_string(rep.horizon_used);
    out["floor_used"] = real_to_string(rep.floor_used);
    out["max_deviation"] = real_to_string(rep.max_deviation);
    out["median_deviation"] = real_to_string(rep.median_deviation);
    nlohmann::json trajs = nlohmann::json::array();
    for (const TrajectoryRecord& rec : rep.per_trajectory) {
        nlohmann::json t;
        t["x0"] = string_vec_json(rec.x0);
        t["max_deviation"] = real_to_string(rec.max_deviation);
        t["truncated_at"] = real_to_string(rec.truncated_at);
        t["blowup"] = rec.blowup;
        t["steps_used"] = rec.steps_used;
        trajs.push_back(std::move(t));
    }
    out["trajectories"] = std::move(trajs);
    write_file_atomic(std::filesystem::path(cfg.out_dir) / "property.json",
                      out.dump(2) + "\n");
    return 0;
}

int cmd_list() {
    static const char* names[] = {"example1", "example2", "duffing",
                                  "gradient3d"};
    std::ostringstream out;
    for (const char* name : names) {
        VectorField vf = builtin(name);
        Linearization lin = linearize(vf);
        char buf[64];
        out << name << "  d=" << vf.dimension << "  x_e=(";
        for (Eigen::Index i = 0; i < vf.equilibrium.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.6f", vf.equilibrium(i));
            out << (i ? ", " : "") << buf;
        }
        out << ")  eigenvalues: ";
        for (std::size_t i = 0; i < lin.pairs.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.6f", lin.pairs[i].lambda);
            out << (i ? ", " : "") << buf;
        }
        out << "\n";
    }
    std::cout << out.str();
    return 0;
}

int exit_code_for(const Error& e) {
    if (dynamic_cast<const ConfigError*>(&e) != nullptr ||
        dynamic_cast<const UnknownSystem*>(&e) != nullptr ||
        dynamic_cast<const InvalidDomain*>(&e) != nullptr ||
        dynamic_cast<const SyntaxError*>(&e) != nullptr ||
        dynamic_cast<const UnknownIdentifier*>(&e) != nullptr ||
        dynamic_cast<const IndexOutOfRange*>(&e) != nullptr)
        return 2;
    if (dynamic_cast<const SingularSystem*>(&e) != nullptr ||
        dynamic_cast<const RepeatedEigenvalue*>(&e) != nullptr ||
        dynamic_cast<const NonHyperbolic*>(&e) != nullptr ||
        dynamic_cast<const ComplexEigenvalue*>(&e) != nullptr)
        return 3;
    return 4;  // evaluation/property failures
}

const char* error_name(const Error& e) {
    if (dynamic_cast<const UnknownSystem*>(&e)) return "UnknownSystem";
    if (dynamic_cast<const InvalidDomain*>(&e)) return "InvalidDomain";
    if (dynamic_cast<const SyntaxError*>(&e)) return "SyntaxError";
    if (dynamic_cast<const UnknownIdentifier*>(&e))
        return "UnknownIdentifier";
    if (dynamic_cast<const IndexOutOfRange*>(&e)) return "IndexOutOfRange";
    if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
    if (dynamic_cast<const SingularSystem*>(&e)) return "SingularSystem";
    if (dynamic_cast<const RepeatedEigenvalue*>(&e))
        return "RepeatedEigenvalue";
    if (dynamic_cast<const NonHyperbolic*>(&e)) return "NonHyperbolic";
    if (dynamic_cast<const ComplexEigenvalue*>(&e))
        return "ComplexEigenvalue";
    if (dynamic_cast<const DomainError*>(&e)) return "DomainError";
    if (dynamic_cast<const Blowup*>(&e)) return "Blowup";
    if (dynamic_cast<const EmptySet*>(&e)) return "EmptySet";
    if (dynamic_cast<const DegenerateTruth*>(&e)) return "DegenerateTruth";
    return "Error";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "principal Koopman eigenfunctions via RKHS kernel collocation"};
    app.require_subcommand(1);

    CommonArgs args;
    double eta_flag = -1.0;
    std::string out_flag, model_flag;

    auto add_common = [&](CLI::App* cmd, bool with_model) {
        cmd->add_option("--config", args.config_path, "JSON run config")
            ->required();
        cmd->add_option("--eta", eta_flag,
                        "override regularization (absolute)");
        cmd->add_option("--out", out_flag, "override output directory");
        if (with_model)
            cmd->add_option("--model", model_flag,
                            "model file (default: <out>/model.json)");
    };

    CLI::App* c_solve = app.add_subcommand(
        "solve", "fit an eigenfunction model and serialize it");
    add_common(c_solve, false);
    CLI::App* c_grid = app.add_subcommand(
        "grid", "evaluate a model on the evaluation grid");
    add_common(c_grid, true);
    CLI::App* c_conv = app.add_subcommand(
        "converge", "fill-distance convergence study");
    add_common(c_conv, false);
    CLI::App* c_traj = app.add_subcommand(
        "traj", "check the semigroup identity along trajectories");
    add_common(c_traj, true);
    app.add_subcommand("list", "list builtin systems");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    // sign checks live in load_with_overrides; only presence matters here
    for (CLI::App* cmd : {c_solve, c_grid, c_conv, c_traj})
        if (cmd->parsed() && cmd->count("--eta") > 0)
            args.eta_override = eta_flag;
    if (!out_flag.empty()) args.out_override = out_flag;
    if (!model_flag.empty()) args.model_path = model_flag;

    try {
        if (c_solve->parsed()) return cmd_solve(args);
        if (c_grid->parsed()) return cmd_grid(args);
        if (c_conv->parsed()) return cmd_converge(args);
        if (c_traj->parsed()) return cmd_traj(args);
        return cmd_list();
    } catch (const Error& e) {
        std::cerr << "error: " << error_name(e) << ": " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
