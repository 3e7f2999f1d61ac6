#pragma once

#include <cmath>
#include <cstddef>

// Error-free-transformation dot products and sums.
//
// The representer coefficient vectors produced by near-flat Gaussian Gram
// systems reach ||c||_inf ~ 1e5..1e9 while the evaluated function values are
// O(1). A plain double dot product then carries cancellation noise of order
// eps * sum_i |a_i b_i|, which can exceed the invariant tolerances this
// library has to certify (boundary conditions at 1e-6, finite-difference
// gradients at 1e-5 with step 1e-6). The Ogita-Rump-Oishi Dot2 scheme below
// (two-product via fma + Neumaier summation) reduces the error to
// O(eps |result| + n eps^2 sum |a_i b_i|), i.e. faithful to the exact value
// for every case this library encounters.

namespace koopman {

struct TwoSum {
    double s;  // fl(a + b)
    double e;  // exact rounding error
};

inline TwoSum two_sum(double a, double b) {
    double s = a + b;
    double bp = s - a;
    double e = (a - (s - bp)) + (b - bp);
    return {s, e};
}

// Accumulator for compensated sums (Neumaier variant).
class CompensatedSum {
public:
    void add(double x) {
        TwoSum t = two_sum(sum_, x);
        sum_ = t.s;
        comp_ += t.e;
    }

    // Adds a product a*b exactly: fma recovers the product's rounding error.
    void add_product(double a, double b) {
        double p = a * b;
        double e = std::fma(a, b, -p);
        add(p);
        comp_ += e;
    }

    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double comp_dot(const double* a, const double* b, std::size_t n) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < n; ++i) acc.add_product(a[i], b[i]);
    return acc.value();
}

// Compensated a . b - c, used for residual rows r_i = Y_i - M_i . c.
inline double comp_dot_minus(const double* a, const double* b, std::size_t n,
                             double c) {
    CompensatedSum acc;
    acc.add(-c);
    for (std::size_t i = 0; i < n; ++i) acc.add_product(a[i], b[i]);
    return acc.value();
}

}  // namespace koopman
