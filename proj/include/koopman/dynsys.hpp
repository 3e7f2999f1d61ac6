#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "koopman/errors.hpp"
#include "koopman/expr.hpp"

// Dynamical systems x' = f(x): builtin example fields, linearization at the
// equilibrium, real simple left eigenpairs, and the nonlinear remainder
// G(u) = f(x_e + u) - E u in coordinates shifted so the equilibrium is the
// origin. Everything downstream (collocation, evaluation) works in shifted
// coordinates; user-facing I/O stays in original coordinates.

namespace koopman {

struct VectorField {
    int dimension = 0;
    std::vector<Expr> components;
    Eigen::VectorXd equilibrium;
    std::string name;  // builtin name, or "custom"

    Eigen::VectorXd f(const Eigen::VectorXd& x) const {
        Eigen::VectorXd out(dimension);
        for (int i = 0; i < dimension; ++i) out(i) = components[i].eval(x);
        return out;
    }

    // Jacobian rows from one dual-number pass per component.
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const {
        Eigen::MatrixXd J(dimension, dimension);
        for (int i = 0; i < dimension; ++i) {
            Dual row = components[i].eval_dual(x);
            J.row(i) = row.grad().transpose();
        }
        return J;
    }
};

inline VectorField make_vector_field(const std::vector<std::string>& exprs,
                                     const Eigen::VectorXd& equilibrium,
                                     const std::string& name = "custom") {
    VectorField vf;
    vf.dimension = static_cast<int>(exprs.size());
    if (vf.dimension < 1)
        throw ConfigError("vector field needs at least one component");
    if (equilibrium.size() != vf.dimension)
        throw ConfigError("equilibrium dimension does not match field");
    for (const auto& s : exprs)
        vf.components.push_back(parse(s, vf.dimension));
    vf.equilibrium = equilibrium;
    vf.name = name;
    double residual = vf.f(equilibrium).cwiseAbs().maxCoeff();
    if (residual > 1e-8)
        throw ConfigError("supplied equilibrium is not one: |f(x_e)|_inf = " +
                          std::to_string(residual));
    return vf;
}

// The four reference systems carried as expression strings so linearization,
// remainder, and serialization share one code path with user-defined fields.
inline VectorField builtin(const std::string& name) {
    auto zeros = [](int d) { return Eigen::VectorXd::Zero(d); };
    if (name == "example1") {
        // Planar polynomial field with eigenvalues -1 and 3 at the origin;
        // both principal eigenfunctions are known in closed form.
        return make_vector_field(
            {"-6*x2*(x1^2 - x2 - 2*x1*x2^2 + x2^4) - "
             "(x1 + 4*x1^2*x2 - x2^2 - 8*x1*x2^3 + 4*x2^5)",
             "-2*(x1 - x2^2)^2 - 3*(x1^2 - x2 - 2*x1*x2^2 + x2^4)"},
            zeros(2), name);
    }
    if (name == "example2") {
        // Rational field, saddle at the origin, eigenvalues -1 and 2.5.
        const std::string den =
            "(9*x1^2*x2^2 + 6*x1^2 + 3*x2^2 + cos(x2) + 2)";
        return make_vector_field(
            {"((7.5*x2^2 + 5.0)*(x1^3 + x1 + sin(x2)) + "
             "(-x1 + x2^3 + 2*x2)*cos(x2))/" + den,
             "(2.5*x1^3 + 2.5*x1 - (3*x1^2 + 1)*(-x1 + x2^3 + 2*x2) + "
             "2.5*sin(x2))/" + den},
            zeros(2), name);
    }
    if (name == "duffing") {
        // Unforced Duffing oscillator, delta=0.5, beta=-1, alpha=1; saddle at
        // the origin between the attractors (+-1, 0).
        return make_vector_field({"x2", "-0.5*x2 + x1 - x1^3"}, zeros(2),
                                 name);
    }
    if (name == "gradient3d") {
        // Gradient flow of V(x) = x'Px + exp(-(x1-x2)^2); f = -dV/dx.
        return make_vector_field(
            {"-2*(0.2*x1 + 0.1*x2 + 0.05*x3) + 2*(x1 - x2)*exp(-(x1 - x2)^2)",
             "-2*(0.1*x1 + 0.3*x2 + 0.05*x3) - 2*(x1 - x2)*exp(-(x1 - x2)^2)",
             "-2*(0.05*x1 + 0.05*x2 + 0.2*x3)"},
            zeros(3), name);
    }
    throw UnknownSystem("unknown builtin system '" + name + "'");
}

struct EigenPair {
    double lambda = 0.0;
    Eigen::VectorXd w;  // left eigenvector: w'E = lambda w'
};

struct Linearization {
    Eigen::MatrixXd E;
    std::vector<EigenPair> pairs;       // real simple pairs, descending lambda
    std::vector<std::string> warnings;  // skipped complex pairs
};

namespace detail {

// Unit norm with the first component above 1e-12 in magnitude made positive.
inline Eigen::VectorXd normalize_sign(Eigen::VectorXd w) {
    w.normalize();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (std::abs(w(i)) > 1e-12) {
            if (w(i) < 0.0) w = -w;
            break;
        }
    }
    return w;
}

}  // namespace detail

inline Linearization linearize(const VectorField& vf) {
    Linearization lin;
    lin.E = vf.jacobian(vf.equilibrium);

    // Left eigenvectors of E are right eigenvectors of E'.
    Eigen::EigenSolver<Eigen::MatrixXd> solver(lin.E.transpose());
    if (solver.info() != Eigen::Success)
        throw SingularSystem("eigendecomposition of the linearization failed");
    Eigen::VectorXcd values = solver.eigenvalues();
    Eigen::MatrixXcd vectors = solver.eigenvectors();

    const int d = vf.dimension;
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            double sep = std::abs(values(i) - values(j));
            if (sep <= 1e-8)
                throw RepeatedEigenvalue(
                    "eigenvalues separated by <= 1e-8; spectrum must be "
                    "simple");
            // behavior under near-degeneracy is unspecified; report, don't
            // guess
            if (sep <= 1e-4)
                lin.warnings.push_back(
                    "near-degenerate eigenvalues " +
                    std::to_string(values(i).real()) + " and " +
                    std::to_string(values(j).real()) + " (separation " +
                    std::to_string(sep) + ")");
        }
    for (int i = 0; i < d; ++i)
        if (std::abs(values(i).real()) <= 1e-8)
            throw NonHyperbolic(
                "eigenvalue with |Re| <= 1e-8; equilibrium must be "
                "hyperbolic");

    for (int i = 0; i < d; ++i) {
        if (std::abs(values(i).imag()) > 1e-8) {
            lin.warnings.push_back(
                "skipping complex eigenvalue " +
                std::to_string(values(i).real()) + " + " +
                std::to_string(values(i).imag()) + "i");
            continue;
        }
        EigenPair p;
        p.lambda = values(i).real();
        p.w = detail::normalize_sign(vectors.col(i).real());
        lin.pairs.push_back(std::move(p));
    }
    std::sort(lin.pairs.begin(), lin.pairs.end(),
              [](const EigenPair& a, const EigenPair& b) {
                  return a.lambda > b.lambda;
              });
    return lin;
}

// Evaluators for the shifted system. G is the purely nonlinear remainder:
// G(0) = 0 and dG/du(0) = 0.
class Remainder {
public:
    Remainder(VectorField vf, const Linearization& lin)
        : vf_(std::move(vf)), E_(lin.E) {}

    const Eigen::MatrixXd& E() const { return E_; }
    const Eigen::VectorXd& equilibrium() const { return vf_.equilibrium; }
    int dimension() const { return vf_.dimension; }
    const VectorField& field() const { return vf_; }

    // Full field in shifted coordinates: u' = f(x_e + u).
    Eigen::VectorXd f_shifted(const Eigen::VectorXd& u) const {
        return vf_.f(vf_.equilibrium + u);
    }

    Eigen::VectorXd G(const Eigen::VectorXd& u) const {
        return f_shifted(u) - E_ * u;
    }

private:
    VectorField vf_;
    Eigen::MatrixXd E_;
};

inline Remainder remainder(const VectorField& vf, const Linearization& lin) {
    return Remainder(vf, lin);
}

}  // namespace koopman
