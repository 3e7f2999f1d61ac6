#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "koopman/errors.hpp"

// Forward-mode automatic differentiation with a d-wide tangent vector.
// One evaluation of an expression on Dual inputs seeded with unit tangents
// yields the value together with the full gradient; vector fields reuse the
// same pass per component to obtain Jacobian rows.

namespace koopman {

class Dual {
public:
    Dual() : value_(0.0), grad_() {}
    Dual(double value, Eigen::VectorXd grad)
        : value_(value), grad_(std::move(grad)) {}

    // Constant with a given tangent dimension.
    static Dual constant(double value, Eigen::Index dim) {
        return Dual(value, Eigen::VectorXd::Zero(dim));
    }

    // Independent variable: seeds tangent slot `index`.
    static Dual variable(double value, Eigen::Index index, Eigen::Index dim) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
        g(index) = 1.0;
        return Dual(value, std::move(g));
    }

    double value() const { return value_; }
    const Eigen::VectorXd& grad() const { return grad_; }

    Dual operator-() const { return Dual(-value_, -grad_); }

    friend Dual operator+(const Dual& a, const Dual& b) {
        return Dual(a.value_ + b.value_, a.grad_ + b.grad_);
    }
    friend Dual operator-(const Dual& a, const Dual& b) {
        return Dual(a.value_ - b.value_, a.grad_ - b.grad_);
    }
    friend Dual operator*(const Dual& a, const Dual& b) {
        return Dual(a.value_ * b.value_,
                    a.value_ * b.grad_ + b.value_ * a.grad_);
    }
    friend Dual operator/(const Dual& a, const Dual& b) {
        if (b.value_ == 0.0) throw DomainError("division by zero");
        // Value divides directly so it matches a plain-double evaluation bit
        // for bit; only the tangent uses the derived quotient rule.
        double v = a.value_ / b.value_;
        return Dual(v, (a.grad_ - v * b.grad_) / b.value_);
    }

    friend Dual operator+(const Dual& a, double b) {
        return Dual(a.value_ + b, a.grad_);
    }
    friend Dual operator+(double a, const Dual& b) { return b + a; }
    friend Dual operator-(const Dual& a, double b) {
        return Dual(a.value_ - b, a.grad_);
    }
    friend Dual operator-(double a, const Dual& b) {
        return Dual(a - b.value_, -b.grad_);
    }
    friend Dual operator*(const Dual& a, double b) {
        return Dual(a.value_ * b, a.grad_ * b);
    }
    friend Dual operator*(double a, const Dual& b) { return b * a; }
    friend Dual operator/(const Dual& a, double b) {
        if (b == 0.0) throw DomainError("division by zero");
        return Dual(a.value_ / b, a.grad_ / b);
    }
    friend Dual operator/(double a, const Dual& b) {
        return Dual::constant(a, b.grad_.size()) / b;
    }

private:
    double value_;
    Eigen::VectorXd grad_;
};

inline Dual sin(const Dual& x) {
    return Dual(std::sin(x.value()), std::cos(x.value()) * x.grad());
}
inline Dual cos(const Dual& x) {
    return Dual(std::cos(x.value()), -std::sin(x.value()) * x.grad());
}
inline Dual exp(const Dual& x) {
    double v = std::exp(x.value());
    return Dual(v, v * x.grad());
}
inline Dual sqrt(const Dual& x) {
    if (x.value() < 0.0)
        throw DomainError("sqrt of a negative value");
    double v = std::sqrt(x.value());
    return Dual(v, (0.5 / v) * x.grad());
}
inline Dual tanh(const Dual& x) {
    double v = std::tanh(x.value());
    return Dual(v, (1.0 - v * v) * x.grad());
}

// Integer power by repeated multiplication keeps negative bases valid.
inline Dual pow_int(const Dual& x, long long e) {
    const Eigen::Index dim = x.grad().size();
    if (e == 0) return Dual::constant(1.0, dim);
    bool negative = e < 0;
    unsigned long long n = negative
        ? static_cast<unsigned long long>(-(e + 1)) + 1ull
        : static_cast<unsigned long long>(e);
    Dual acc = Dual::constant(1.0, dim);
    Dual base = x;
    while (n > 0) {
        if (n & 1ull) acc = acc * base;
        base = base * base;
        n >>= 1;
    }
    if (negative) {
        if (x.value() == 0.0) throw DomainError("zero raised to a negative power");
        return Dual::constant(1.0, dim) / acc;
    }
    return acc;
}

// Real exponents go through exp(e*log(x)), which requires a positive base.
inline Dual pow_real(const Dual& x, double e) {
    if (x.value() <= 0.0)
        throw DomainError("nonpositive base raised to a non-integer power");
    double v = std::pow(x.value(), e);
    return Dual(v, (e * v / x.value()) * x.grad());
}

// -- double overload set so templated evaluation works on plain scalars --

inline double pow_int(double x, long long e) {
    if (e == 0) return 1.0;
    bool negative = e < 0;
    unsigned long long n = negative
        ? static_cast<unsigned long long>(-(e + 1)) + 1ull
        : static_cast<unsigned long long>(e);
    double acc = 1.0;
    double base = x;
    while (n > 0) {
        if (n & 1ull) acc *= base;
        base *= base;
        n >>= 1;
    }
    if (negative) {
        if (x == 0.0) throw DomainError("zero raised to a negative power");
        return 1.0 / acc;
    }
    return acc;
}

inline double pow_real(double x, double e) {
    if (x <= 0.0)
        throw DomainError("nonpositive base raised to a non-integer power");
    return std::pow(x, e);
}

}  // namespace koopman
