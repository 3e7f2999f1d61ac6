#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "koopman/errors.hpp"

// Anisotropic Gaussian kernel K(x,y) = exp(-sum_i (x_i-y_i)^2 / (2 s_i^2))
// with analytic first and mixed-second derivatives, plus the bilinear pairing
// <a, K, b> between constraint functionals that fills Gram matrices and
// evaluation rows.
//
// Writing u_i = (x_i - y_i)/s_i^2, the closed forms are
//   grad_x K = -K u,   grad_y K = +K u,
//   d2K/dx_i dy_j = K (delta_ij / s_j^2 - u_i u_j),
// so every pairing reduces to K, u, and a few inner products.

namespace koopman {

struct KernelSpec {
    Eigen::VectorXd sigma;  // per-axis lengthscales, all positive

    explicit KernelSpec(Eigen::VectorXd s) : sigma(std::move(s)) {
        for (Eigen::Index i = 0; i < sigma.size(); ++i)
            if (!(sigma(i) > 0.0))
                throw ConfigError("kernel lengthscales must be positive");
    }
};

// Constraint functionals applied to one argument of K. PdeOp carries its
// velocity f(z) so pairing never re-evaluates the vector field.
struct Functional {
    enum class Kind { PointEval, PointDeriv, PdeOp };

    Kind kind = Kind::PointEval;
    Eigen::VectorXd z;        // anchor point (shifted coordinates)
    int axis = 0;             // 1-based, PointDeriv only
    Eigen::VectorXd velocity; // f(z), PdeOp only
    double lambda = 0.0;      // PdeOp only

    static Functional point_eval(Eigen::VectorXd z) {
        Functional f;
        f.kind = Kind::PointEval;
        f.z = std::move(z);
        return f;
    }
    static Functional point_deriv(Eigen::VectorXd z, int axis) {
        Functional f;
        f.kind = Kind::PointDeriv;
        f.z = std::move(z);
        f.axis = axis;
        return f;
    }
    static Functional pde_op(Eigen::VectorXd z, Eigen::VectorXd velocity,
                             double lambda) {
        Functional f;
        f.kind = Kind::PdeOp;
        f.z = std::move(z);
        f.velocity = std::move(velocity);
        f.lambda = lambda;
        return f;
    }
};

inline double k(const KernelSpec& spec, const Eigen::VectorXd& x,
                const Eigen::VectorXd& y) {
    double q = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double d = x(i) - y(i);
        q += d * d / (2.0 * spec.sigma(i) * spec.sigma(i));
    }
    return std::exp(-q);
}

inline Eigen::VectorXd grad_x(const KernelSpec& spec, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y) {
    double kv = k(spec, x, y);
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        g(i) = -kv * (x(i) - y(i)) / (spec.sigma(i) * spec.sigma(i));
    return g;
}

inline Eigen::VectorXd grad_y(const KernelSpec& spec, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y) {
    return -grad_x(spec, x, y);
}

inline Eigen::MatrixXd hess_xy(const KernelSpec& spec,
                               const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y) {
    const Eigen::Index d = x.size();
    double kv = k(spec, x, y);
    Eigen::VectorXd u(d);
    for (Eigen::Index i = 0; i < d; ++i)
        u(i) = (x(i) - y(i)) / (spec.sigma(i) * spec.sigma(i));
    Eigen::MatrixXd H(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            double diag = (i == j) ? 1.0 / (spec.sigma(j) * spec.sigma(j))
                                   : 0.0;
            H(i, j) = kv * (diag - u(i) * u(j));
        }
    return H;
}

namespace detail {

// Shared intermediates for one (x, y) pair.
struct PairCore {
    double kv;
    Eigen::VectorXd u;  // (x_i - y_i) / s_i^2
};

inline PairCore pair_core(const KernelSpec& spec, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& y) {
    const Eigen::Index d = x.size();
    PairCore c;
    c.u.resize(d);
    double q = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        double diff = x(i) - y(i);
        double s2 = spec.sigma(i) * spec.sigma(i);
        q += diff * diff / (2.0 * s2);
        c.u(i) = diff / s2;
    }
    c.kv = std::exp(-q);
    return c;
}

// a acts on the x slot of K as (f_a . grad_x - lambda_a), b likewise on the
// y slot; plain evaluations and single derivatives are special cases.
inline double pairing_impl(const KernelSpec& spec, const Functional& a,
                           const Functional& b) {
    using Kind = Functional::Kind;
    const PairCore core = pair_core(spec, a.z, b.z);
    const double kv = core.kv;
    const Eigen::VectorXd& u = core.u;

    auto sigma2 = [&spec](int axis1based) {
        double s = spec.sigma(axis1based - 1);
        return s * s;
    };

    switch (a.kind) {
        case Kind::PointEval:
            switch (b.kind) {
                case Kind::PointEval:
                    return kv;
                case Kind::PointDeriv:
                    return kv * u(b.axis - 1);  // dK/dy_j = +K u_j
                case Kind::PdeOp: {
                    // f_b . grad_y - lambda_b = K (f_b . u) - lambda_b K
                    return kv * (b.velocity.dot(u) - b.lambda);
                }
            }
            break;
        case Kind::PointDeriv:
            switch (b.kind) {
                case Kind::PointEval:
                    return -kv * u(a.axis - 1);  // dK/dx_i = -K u_i
                case Kind::PointDeriv: {
                    int i = a.axis - 1, j = b.axis - 1;
                    double diag = (i == j) ? 1.0 / sigma2(b.axis) : 0.0;
                    return kv * (diag - u(i) * u(j));
                }
                case Kind::PdeOp: {
                    // row i of Hxy applied to f_b, minus lambda_b dK/dx_i
                    int i = a.axis - 1;
                    double hf = b.velocity(i) / sigma2(a.axis) -
                                u(i) * b.velocity.dot(u);
                    return kv * (hf + b.lambda * u(i));
                }
            }
            break;
        case Kind::PdeOp:
            switch (b.kind) {
                case Kind::PointEval:
                    // f_a . grad_x - lambda_a = -K (f_a . u) - lambda_a K
                    return kv * (-a.velocity.dot(u) - a.lambda);
                case Kind::PointDeriv: {
                    int j = b.axis - 1;
                    double fh = a.velocity(j) / sigma2(b.axis) -
                                a.velocity.dot(u) * u(j);
                    return kv * (fh - a.lambda * u(j));
                }
                case Kind::PdeOp: {
                    double fa_u = a.velocity.dot(u);
                    double fb_u = b.velocity.dot(u);
                    double fafb = 0.0;
                    for (Eigen::Index i = 0; i < u.size(); ++i)
                        fafb += a.velocity(i) * b.velocity(i) /
                                (spec.sigma(i) * spec.sigma(i));
                    // f_a'H f_b - lambda_b f_a.grad_x - lambda_a f_b.grad_y
                    // + lambda_a lambda_b K
                    return kv * (fafb - fa_u * fb_u + b.lambda * fa_u -
                                 a.lambda * fb_u + a.lambda * b.lambda);
                }
            }
            break;
    }
    throw Error("unreachable");
}

}  // namespace detail

inline double pairing(const KernelSpec& spec, const Functional& a,
                      const Functional& b) {
    return detail::pairing_impl(spec, a, b);
}

// Entry i is functional_i applied to K(x, .) in its second argument;
// identical to pairing(PointEval(x), functional_i).
inline Eigen::VectorXd eval_row(const KernelSpec& spec,
                                const Eigen::VectorXd& x,
                                const std::vector<Functional>& functionals) {
    Eigen::VectorXd row(static_cast<Eigen::Index>(functionals.size()));
    Functional probe = Functional::point_eval(x);
    for (std::size_t i = 0; i < functionals.size(); ++i)
        row(static_cast<Eigen::Index>(i)) =
            detail::pairing_impl(spec, probe, functionals[i]);
    return row;
}

// Column i is the x-gradient of eval_row entry i; this is the analytic
// derivative of the representer sum, used for PDE residuals and the
// generator relation.
inline Eigen::MatrixXd eval_row_grad(const KernelSpec& spec,
                                     const Eigen::VectorXd& x,
                                     const std::vector<Functional>& fns) {
    using Kind = Functional::Kind;
    const Eigen::Index d = x.size();
    Eigen::MatrixXd out(d, static_cast<Eigen::Index>(fns.size()));
    for (std::size_t col = 0; col < fns.size(); ++col) {
        const Functional& fn = fns[col];
        const detail::PairCore core = detail::pair_core(spec, x, fn.z);
        const double kv = core.kv;
        const Eigen::VectorXd& u = core.u;
        Eigen::VectorXd g(d);
        switch (fn.kind) {
            case Kind::PointEval:
                g = -kv * u;  // grad_x K
                break;
            case Kind::PointDeriv: {
                // column j of Hxy
                int j = fn.axis - 1;
                double s2 = spec.sigma(j) * spec.sigma(j);
                for (Eigen::Index i = 0; i < d; ++i) {
                    double diag = (i == j) ? 1.0 / s2 : 0.0;
                    g(i) = kv * (diag - u(i) * u(j));
                }
                break;
            }
            case Kind::PdeOp: {
                // Hxy(x,z) f(z) - lambda grad_x K
                double f_u = fn.velocity.dot(u);
                for (Eigen::Index i = 0; i < d; ++i) {
                    double s2 = spec.sigma(i) * spec.sigma(i);
                    double hf = fn.velocity(i) / s2 - u(i) * f_u;
                    g(i) = kv * (hf + fn.lambda * u(i));
                }
                break;
            }
        }
        out.col(static_cast<Eigen::Index>(col)) = g;
    }
    return out;
}

}  // namespace koopman
