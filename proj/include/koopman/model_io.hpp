#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "koopman/collocation.hpp"
#include "koopman/errors.hpp"

// Model serialization. Every real number is written as a decimal string with
// 17 significant digits, which round-trips IEEE doubles exactly, so a loaded
// model reproduces eval_phi bit for bit.

namespace koopman {

inline std::string real_to_string(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double string_to_real(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ConfigError("malformed real literal '" + s + "'");
    return v;
}

namespace detail {

inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        arr.push_back(real_to_string(v(i)));
    return arr;
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& arr) {
    if (!arr.is_array()) throw ConfigError("expected an array of reals");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
        v(static_cast<Eigen::Index>(i)) =
            string_to_real(arr[i].get<std::string>());
    return v;
}

}  // namespace detail

inline nlohmann::json model_to_json(const EigenfunctionModel& model) {
    nlohmann::json j;
    j["format"] = "koopman-eigenfunction-model";
    j["version"] = 1;
    j["lambda"] = real_to_string(model.lambda());
    j["w"] = detail::vec_to_json(model.w());
    j["equilibrium"] = detail::vec_to_json(model.equilibrium());
    j["sigma"] = detail::vec_to_json(model.spec().sigma);
    j["eta"] = real_to_string(model.eta());
    j["domain"] = {{"lo", detail::vec_to_json(model.domain().lo)},
                   {"hi", detail::vec_to_json(model.domain().hi)}};

    nlohmann::json fns = nlohmann::json::array();
    for (const Functional& f : model.functionals()) {
        nlohmann::json e;
        switch (f.kind) {
            case Functional::Kind::PointEval:
                e["kind"] = "point_eval";
                break;
            case Functional::Kind::PointDeriv:
                e["kind"] = "point_deriv";
                e["axis"] = f.axis;
                break;
            case Functional::Kind::PdeOp:
                e["kind"] = "pde_op";
                e["velocity"] = detail::vec_to_json(f.velocity);
                e["lambda"] = real_to_string(f.lambda);
                break;
        }
        e["z"] = detail::vec_to_json(f.z);
        fns.push_back(std::move(e));
    }
    j["functionals"] = std::move(fns);
    j["coefficients"] = detail::vec_to_json(model.coefficients());

    const SolveDiagnostics& d = model.diagnostics();
    j["diagnostics"] = {
        {"eta_used", real_to_string(d.eta_used)},
        {"solver_path", d.solver_path},
        {"refinement_iterations", d.refinement_iterations},
        {"representer_residual_inf", real_to_string(d.representer_residual_inf)},
        {"h0_abs", real_to_string(d.h0_abs)},
        {"grad_h0_inf", real_to_string(d.grad_h0_inf)},
        {"max_pde_residual_rel", real_to_string(d.max_pde_residual_rel)},
        {"warnings", d.warnings}};
    return j;
}

inline EigenfunctionModel model_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") !=
                              "koopman-eigenfunction-model")
        throw ConfigError("not an eigenfunction model document");

    double lambda = string_to_real(j.at("lambda").get<std::string>());
    Eigen::VectorXd w = detail::vec_from_json(j.at("w"));
    Eigen::VectorXd x_e = detail::vec_from_json(j.at("equilibrium"));
    KernelSpec spec(detail::vec_from_json(j.at("sigma")));
    double eta = string_to_real(j.at("eta").get<std::string>());
    Box domain{detail::vec_from_json(j.at("domain").at("lo")),
               detail::vec_from_json(j.at("domain").at("hi"))};

    std::vector<Functional> fns;
    for (const auto& e : j.at("functionals")) {
        std::string kind = e.at("kind").get<std::string>();
        Eigen::VectorXd z = detail::vec_from_json(e.at("z"));
        if (kind == "point_eval") {
            fns.push_back(Functional::point_eval(std::move(z)));
        } else if (kind == "point_deriv") {
            fns.push_back(
                Functional::point_deriv(std::move(z), e.at("axis").get<int>()));
        } else if (kind == "pde_op") {
            fns.push_back(Functional::pde_op(
                std::move(z), detail::vec_from_json(e.at("velocity")),
                string_to_real(e.at("lambda").get<std::string>())));
        } else {
            throw ConfigError("unknown functional kind '" + kind + "'");
        }
    }
    Eigen::VectorXd c = detail::vec_from_json(j.at("coefficients"));
    if (c.size() != static_cast<Eigen::Index>(fns.size()))
        throw ConfigError("coefficient count does not match functionals");

    SolveDiagnostics diag;
    if (j.contains("diagnostics")) {
        const auto& d = j.at("diagnostics");
        diag.eta_used = string_to_real(d.at("eta_used").get<std::string>());
        diag.solver_path = d.at("solver_path").get<std::string>();
        diag.refinement_iterations =
            d.at("refinement_iterations").get<int>();
        diag.representer_residual_inf = string_to_real(
            d.at("representer_residual_inf").get<std::string>());
        diag.h0_abs = string_to_real(d.at("h0_abs").get<std::string>());
        diag.grad_h0_inf =
            string_to_real(d.at("grad_h0_inf").get<std::string>());
        diag.max_pde_residual_rel = string_to_real(
            d.at("max_pde_residual_rel").get<std::string>());
        diag.warnings =
            d.at("warnings").get<std::vector<std::string>>();
    }

    return EigenfunctionModel(lambda, std::move(w), std::move(x_e),
                              std::move(spec), std::move(fns), std::move(c),
                              eta, std::move(domain), std::move(diag));
}

inline void save_model(const EigenfunctionModel& model,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << model_to_json(model).dump(2) << "\n";
}

inline EigenfunctionModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed model JSON: " + std::string(e.what()));
    }
    return model_from_json(j);
}

}  // namespace koopman
