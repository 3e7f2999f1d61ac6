#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "koopman/collocation.hpp"
#include "koopman/dynsys.hpp"
#include "koopman/errors.hpp"
#include "koopman/expr.hpp"
#include "koopman/kernel.hpp"

// Run configuration: one JSON document per experiment. Numbers here are
// plain JSON numbers (model files use 17-digit strings instead, where exact
// round-tripping matters). All sampling is deterministic; there is no seed.

namespace koopman {

struct EvalAxis {
    bool fixed = false;
    int n = 100;         // grid points along this axis when not fixed
    double value = 0.0;  // pinned coordinate when fixed (slice plots)
};

struct TrajConfig {
    int halton_starts = 20;
    std::optional<Box> box;  // start-sampling box; defaults to the domain
    std::vector<Eigen::VectorXd> explicit_starts;
    double T = 2.0;
    double dt = 0.005;
    double floor_rel = 1e-6;
};

struct RunConfig {
    VectorField vf;
    Linearization lin;
    int pair_index = 0;
    Box domain;
    SamplingScheme sampling;
    Eigen::VectorXd sigma;
    double eta_abs = -1.0;   // >= 0 means absolute eta from config/flag
    double eta_rel = 1e-12;  // otherwise eta = eta_rel * mean Gram diagonal
    std::vector<EvalAxis> eval_axes;
    std::optional<Expr> truth;
    bool align = false;
    double eps_floor = 1e-2;
    std::string out_dir = "out";
    TrajConfig traj;
    std::vector<std::vector<int>> conv_grids;
    int conv_holdout = 500;

    KernelSpec kernel() const { return KernelSpec(sigma); }

    double resolve_eta(const GramSystem& gs) const {
        if (eta_abs >= 0.0) return eta_abs;
        return eta_rel * gs.gram.diagonal().mean();
    }
};

namespace detail {

inline Eigen::VectorXd num_vec(const nlohmann::json& arr,
                               const char* what) {
    if (!arr.is_array() || arr.empty())
        throw ConfigError(std::string(what) + " must be a non-empty array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number())
            throw ConfigError(std::string(what) + " entries must be numbers");
        v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    }
    return v;
}

inline Box box_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_object() || !j.contains("min") || !j.contains("max"))
        throw ConfigError(std::string(what) + " needs min and max arrays");
    Box box{num_vec(j.at("min"), what), num_vec(j.at("max"), what)};
    box.validate();
    return box;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    RunConfig cfg;

    // system
    if (!j.contains("system"))
        throw ConfigError("config needs a 'system' section");
    const auto& sys = j.at("system");
    if (sys.contains("builtin")) {
        cfg.vf = builtin(sys.at("builtin").get<std::string>());
    } else {
        if (!sys.contains("expressions") || !sys.contains("dimension"))
            throw ConfigError(
                "system needs 'builtin' or 'expressions' + 'dimension'");
        int d = sys.at("dimension").get<int>();
        auto exprs = sys.at("expressions").get<std::vector<std::string>>();
        if (static_cast<int>(exprs.size()) != d)
            throw ConfigError("expression count must equal dimension");
        Eigen::VectorXd x_e = Eigen::VectorXd::Zero(d);
        if (sys.contains("equilibrium"))
            x_e = detail::num_vec(sys.at("equilibrium"), "equilibrium");
        if (x_e.size() != d)
            throw ConfigError("equilibrium length must equal dimension");
        cfg.vf = make_vector_field(exprs, x_e);
    }
    const int d = cfg.vf.dimension;
    cfg.lin = linearize(cfg.vf);
    if (cfg.lin.pairs.empty())
        throw ConfigError("system has no real eigenpairs to solve for");

    // domain
    if (!j.contains("domain"))
        throw ConfigError("config needs a 'domain' section");
    cfg.domain = detail::box_from_json(j.at("domain"), "domain");
    if (cfg.domain.dimension() != d)
        throw ConfigError("domain dimension does not match system");

    // sampling
    if (!j.contains("sampling"))
        throw ConfigError("config needs a 'sampling' section");
    const auto& samp = j.at("sampling");
    if (samp.contains("grid")) {
        auto shape = samp.at("grid").get<std::vector<int>>();
        if (static_cast<int>(shape.size()) != d)
            throw ConfigError("sampling grid rank must equal dimension");
        cfg.sampling = SamplingScheme::grid(shape);
    } else if (samp.contains("halton")) {
        cfg.sampling = SamplingScheme::halton(samp.at("halton").get<int>());
    } else {
        throw ConfigError("sampling needs 'grid' or 'halton'");
    }

    // kernel
    if (!j.contains("sigma"))
        throw ConfigError("config needs 'sigma' lengthscales");
    cfg.sigma = detail::num_vec(j.at("sigma"), "sigma");
    if (cfg.sigma.size() != d)
        throw ConfigError("sigma length must equal dimension");

    if (j.contains("eta")) {
        cfg.eta_abs = j.at("eta").get<double>();
        if (cfg.eta_abs < 0.0) throw ConfigError("eta must be nonnegative");
    }
    if (j.contains("eta_rel")) {
        cfg.eta_rel = j.at("eta_rel").get<double>();
        if (cfg.eta_rel < 0.0)
            throw ConfigError("eta_rel must be nonnegative");
    }

    // eigenpair selector: index into the descending-lambda list, or an
    // explicit lambda target matched to 1e-6
    if (j.contains("pair")) {
        const auto& pair = j.at("pair");
        if (pair.contains("index")) {
            cfg.pair_index = pair.at("index").get<int>();
            if (cfg.pair_index < 0 ||
                cfg.pair_index >= static_cast<int>(cfg.lin.pairs.size()))
                throw ConfigError("pair index out of range");
        } else if (pair.contains("lambda")) {
            double target = pair.at("lambda").get<double>();
            int found = -1;
            for (std::size_t i = 0; i < cfg.lin.pairs.size(); ++i) {
                if (std::abs(cfg.lin.pairs[i].lambda - target) <= 1e-6) {
                    if (found >= 0)
                        throw ConfigError(
                            "pair lambda target matches several eigenvalues");
                    found = static_cast<int>(i);
                }
            }
            if (found < 0)
                throw ConfigError(
                    "no eigenvalue within 1e-6 of the requested lambda");
            cfg.pair_index = found;
        } else {
            throw ConfigError("pair needs 'index' or 'lambda'");
        }
    }

    // evaluation grid (defaults to 100 points per axis)
    cfg.eval_axes.assign(static_cast<std::size_t>(d), EvalAxis{});
    if (j.contains("eval")) {
        const auto& ev = j.at("eval");
        if (!ev.is_array() || static_cast<int>(ev.size()) != d)
            throw ConfigError("eval must list one entry per axis");
        for (int a = 0; a < d; ++a) {
            const auto& e = ev[static_cast<std::size_t>(a)];
            auto ai = static_cast<std::size_t>(a);
            if (e.contains("value")) {
                cfg.eval_axes[ai].fixed = true;
                cfg.eval_axes[ai].value = e.at("value").get<double>();
            } else if (e.contains("n")) {
                cfg.eval_axes[ai].n = e.at("n").get<int>();
                if (cfg.eval_axes[ai].n < 1)
                    throw ConfigError("eval axis count must be positive");
            } else {
                throw ConfigError("eval axis needs 'n' or 'value'");
            }
        }
    }

    if (j.contains("truth"))
        cfg.truth = parse(j.at("truth").get<std::string>(), d);
    if (j.contains("align")) cfg.align = j.at("align").get<bool>();
    if (j.contains("epsilon_floor"))
        cfg.eps_floor = j.at("epsilon_floor").get<double>();
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();

    if (j.contains("traj")) {
        const auto& t = j.at("traj");
        if (t.contains("starts")) {
            const auto& st = t.at("starts");
            if (st.is_array()) {
                for (const auto& p : st)
                    cfg.traj.explicit_starts.push_back(
                        detail::num_vec(p, "traj start"));
            } else if (st.contains("halton")) {
                cfg.traj.halton_starts = st.at("halton").get<int>();
                if (st.contains("box"))
                    cfg.traj.box =
                        detail::box_from_json(st.at("box"), "traj box");
            } else {
                throw ConfigError(
                    "traj starts must be an array or {halton, box}");
            }
        }
        if (t.contains("T")) cfg.traj.T = t.at("T").get<double>();
        if (t.contains("dt")) cfg.traj.dt = t.at("dt").get<double>();
        if (t.contains("floor_rel"))
            cfg.traj.floor_rel = t.at("floor_rel").get<double>();
    }

    if (j.contains("convergence")) {
        const auto& c = j.at("convergence");
        if (c.contains("grids"))
            cfg.conv_grids =
                c.at("grids").get<std::vector<std::vector<int>>>();
        if (c.contains("holdout"))
            cfg.conv_holdout = c.at("holdout").get<int>();
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config JSON: " + std::string(e.what()));
    }
    return parse_config(j);
}

// Tensor evaluation grid over the domain; fixed axes contribute the pinned
// value (slice plots). Last axis varies fastest, matching sample().
inline std::vector<Eigen::VectorXd> make_eval_grid(const RunConfig& cfg) {
    const int d = cfg.vf.dimension;
    long long total = 1;
    for (int a = 0; a < d; ++a)
        if (!cfg.eval_axes[static_cast<std::size_t>(a)].fixed)
            total *= cfg.eval_axes[static_cast<std::size_t>(a)].n;

    std::vector<Eigen::VectorXd> grid;
    grid.reserve(static_cast<std::size_t>(total));
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (long long flat = 0; flat < total; ++flat) {
        Eigen::VectorXd p(d);
        for (int a = 0; a < d; ++a) {
            const EvalAxis& ax = cfg.eval_axes[static_cast<std::size_t>(a)];
            if (ax.fixed) {
                p(a) = ax.value;
            } else {
                double t = (ax.n == 1)
                    ? 0.5
                    : static_cast<double>(idx[static_cast<std::size_t>(a)]) /
                          (ax.n - 1);
                p(a) = cfg.domain.lo(a) +
                       t * (cfg.domain.hi(a) - cfg.domain.lo(a));
            }
        }
        grid.push_back(std::move(p));
        for (int a = d - 1; a >= 0; --a) {
            auto ai = static_cast<std::size_t>(a);
            if (cfg.eval_axes[ai].fixed) continue;
            if (++idx[ai] < cfg.eval_axes[ai].n) break;
            idx[ai] = 0;
        }
    }
    return grid;
}

inline std::vector<Eigen::VectorXd> make_traj_starts(const RunConfig& cfg) {
    if (!cfg.traj.explicit_starts.empty()) return cfg.traj.explicit_starts;
    const Box& box = cfg.traj.box ? *cfg.traj.box : cfg.domain;
    return sample(box, SamplingScheme::halton(cfg.traj.halton_starts)).points;
}

}  // namespace koopman
