#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>
#include <vector>

#include "koopman/kernel.hpp"

using namespace koopman;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

struct RandomTriples {
    std::mt19937 rng{20240613};
    std::uniform_real_distribution<double> point{-2.0, 2.0};
    std::uniform_real_distribution<double> scale{0.5, 3.0};

    void next(int d, Eigen::VectorXd& x, Eigen::VectorXd& y,
              Eigen::VectorXd& sigma) {
        x.resize(d);
        y.resize(d);
        sigma.resize(d);
        for (int i = 0; i < d; ++i) {
            x(i) = point(rng);
            y(i) = point(rng);
            sigma(i) = scale(rng);
        }
    }
};

}  // namespace

TEST_CASE("kernel is 1 at coincidence and symmetric") {
    KernelSpec spec(vec({2.0, 2.0}));
    RandomTriples gen;
    Eigen::VectorXd x, y, s;
    for (int trial = 0; trial < 50; ++trial) {
        gen.next(2, x, y, s);
        CHECK(k(spec, x, x) == 1.0);
        CHECK(k(spec, x, y) == k(spec, y, x));
        CHECK(k(spec, x, y) > 0.0);
        CHECK(k(spec, x, y) <= 1.0);
    }
}

TEST_CASE("kernel gradient vanishes at coincidence") {
    KernelSpec spec(vec({1.3, 0.7, 2.0}));
    Eigen::VectorXd x = vec({0.4, -1.1, 0.9});
    CHECK(grad_x(spec, x, x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(grad_y(spec, x, x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mixed second derivative at coincidence is diag(1/sigma^2)") {
    KernelSpec spec(vec({2.0, 3.0}));
    Eigen::VectorXd x = vec({0.3, -0.8});
    Eigen::MatrixXd H = hess_xy(spec, x, x);
    CHECK(H(0, 0) == Catch::Approx(0.25).margin(1e-15));
    CHECK(H(1, 1) == Catch::Approx(1.0 / 9.0).margin(1e-15));
    CHECK(H(0, 1) == Catch::Approx(0.0).margin(1e-15));
    CHECK(H(1, 0) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("analytic derivatives match central differences at 500 triples") {
    RandomTriples gen;
    const double step = 1e-5;
    for (int trial = 0; trial < 500; ++trial) {
        int d = 1 + static_cast<int>(gen.rng() % 3);
        Eigen::VectorXd x, y, s;
        gen.next(d, x, y, s);
        KernelSpec spec(s);
        Eigen::VectorXd gx = grad_x(spec, x, y);
        Eigen::VectorXd gy = grad_y(spec, x, y);
        Eigen::MatrixXd H = hess_xy(spec, x, y);
        for (int i = 0; i < d; ++i) {
            Eigen::VectorXd xp = x, xm = x;
            xp(i) += step;
            xm(i) -= step;
            double fd = (k(spec, xp, y) - k(spec, xm, y)) / (2.0 * step);
            CAPTURE(trial, i, d);
            CHECK(std::abs(gx(i) - fd) <= 1e-6 * (1.0 + std::abs(gx(i))));

            Eigen::VectorXd yp = y, ym = y;
            yp(i) += step;
            ym(i) -= step;
            fd = (k(spec, x, yp) - k(spec, x, ym)) / (2.0 * step);
            CHECK(std::abs(gy(i) - fd) <= 1e-6 * (1.0 + std::abs(gy(i))));

            // row i of the mixed Hessian is d(grad_y)/dx_i
            Eigen::VectorXd hrow =
                (grad_y(spec, xp, y) - grad_y(spec, xm, y)) / (2.0 * step);
            for (int j = 0; j < d; ++j)
                CHECK(std::abs(H(i, j) - hrow(j)) <=
                      1e-6 * (1.0 + std::abs(H(i, j))));
        }
    }
}

TEST_CASE("pairing closed-form examples") {
    KernelSpec spec(vec({2.0, 2.0}));
    Eigen::VectorXd z = vec({0.7, -0.2});
    CHECK(pairing(spec, Functional::point_eval(z),
                  Functional::point_eval(z)) == 1.0);

    // zero velocity at the equilibrium kills the gradient part of the
    // operator, leaving -lambda K
    Eigen::VectorXd origin = vec({0.0, 0.0});
    Eigen::VectorXd b = vec({0.5, 1.1});
    double lambda = -1.7;
    double got = pairing(
        spec, Functional::pde_op(origin, vec({0.0, 0.0}), lambda),
        Functional::point_eval(b));
    CHECK(got == Catch::Approx(-lambda * k(spec, origin, b)).margin(1e-15));

    CHECK(pairing(spec, Functional::point_deriv(origin, 1),
                  Functional::point_deriv(origin, 1)) ==
          Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("pairing is symmetric for random functional pairs") {
    RandomTriples gen;
    std::uniform_real_distribution<double> lam(-3.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        int d = 2;
        Eigen::VectorXd za, zb, s;
        gen.next(d, za, zb, s);
        KernelSpec spec(s);
        Eigen::VectorXd fa = vec({lam(gen.rng), lam(gen.rng)});
        Eigen::VectorXd fb = vec({lam(gen.rng), lam(gen.rng)});
        std::vector<Functional> fs = {
            Functional::point_eval(za),
            Functional::point_deriv(za, 1 + static_cast<int>(gen.rng() % 2)),
            Functional::pde_op(za, fa, lam(gen.rng)),
            Functional::point_eval(zb),
            Functional::point_deriv(zb, 1 + static_cast<int>(gen.rng() % 2)),
            Functional::pde_op(zb, fb, lam(gen.rng))};
        for (const Functional& a : fs)
            for (const Functional& b : fs) {
                CAPTURE(trial);
                CHECK(std::abs(pairing(spec, a, b) - pairing(spec, b, a)) <=
                      1e-12);
            }
    }
}

TEST_CASE("operator pairing matches applying the operator twice") {
    // independent oracle: apply L_b = f_b . grad - lambda_b in the second
    // argument by finite differences to g(y) = L_a K(., y) at z_a
    RandomTriples gen;
    std::uniform_real_distribution<double> lam(-2.0, 2.0);
    const double step = 1e-5;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd za, zb, s;
        gen.next(2, za, zb, s);
        KernelSpec spec(s);
        Eigen::VectorXd fa = vec({lam(gen.rng), lam(gen.rng)});
        Eigen::VectorXd fb = vec({lam(gen.rng), lam(gen.rng)});
        double la = lam(gen.rng), lb = lam(gen.rng);

        auto g = [&](const Eigen::VectorXd& y) {
            return fa.dot(grad_x(spec, za, y)) - la * k(spec, za, y);
        };
        Eigen::VectorXd gg(2);
        for (int i = 0; i < 2; ++i) {
            Eigen::VectorXd yp = zb, ym = zb;
            yp(i) += step;
            ym(i) -= step;
            gg(i) = (g(yp) - g(ym)) / (2.0 * step);
        }
        double oracle = fb.dot(gg) - lb * g(zb);
        double got = pairing(spec, Functional::pde_op(za, fa, la),
                             Functional::pde_op(zb, fb, lb));
        CAPTURE(trial);
        CHECK(std::abs(got - oracle) <= 1e-6 * (1.0 + std::abs(got)));
    }
}

TEST_CASE("eval_row basics") {
    KernelSpec spec(vec({2.0, 3.0}));
    Eigen::VectorXd x = vec({0.4, -0.6});
    std::vector<Functional> fs = {Functional::point_eval(x)};
    Eigen::VectorXd row = eval_row(spec, x, fs);
    REQUIRE(row.size() == 1);
    CHECK(row(0) == 1.0);

    Eigen::VectorXd xe = vec({0.0, 0.0});
    for (int j = 1; j <= 2; ++j) {
        std::vector<Functional> fd = {Functional::point_deriv(xe, j)};
        CHECK(eval_row(spec, xe, fd)(0) == 0.0);
    }
}

TEST_CASE("eval_row equals pairing against a point evaluation") {
    RandomTriples gen;
    std::uniform_real_distribution<double> lam(-2.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd x, z, s;
        gen.next(2, x, z, s);
        KernelSpec spec(s);
        std::vector<Functional> fs = {
            Functional::point_eval(z), Functional::point_deriv(z, 1),
            Functional::point_deriv(z, 2),
            Functional::pde_op(z, vec({lam(gen.rng), lam(gen.rng)}),
                               lam(gen.rng))};
        Eigen::VectorXd row = eval_row(spec, x, fs);
        Functional px = Functional::point_eval(x);
        for (std::size_t i = 0; i < fs.size(); ++i) {
            CAPTURE(trial, i);
            CHECK(std::abs(row(static_cast<Eigen::Index>(i)) -
                           pairing(spec, px, fs[i])) <= 1e-14);
        }
    }
}

TEST_CASE("eval_row gradient columns match finite differences") {
    RandomTriples gen;
    std::uniform_real_distribution<double> lam(-2.0, 2.0);
    const double step = 1e-6;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd x, z, s;
        gen.next(2, x, z, s);
        KernelSpec spec(s);
        std::vector<Functional> fs = {
            Functional::point_eval(z), Functional::point_deriv(z, 1),
            Functional::point_deriv(z, 2),
            Functional::pde_op(z, vec({lam(gen.rng), lam(gen.rng)}),
                               lam(gen.rng))};
        Eigen::MatrixXd grad = eval_row_grad(spec, x, fs);
        REQUIRE(grad.rows() == 2);
        REQUIRE(grad.cols() == static_cast<Eigen::Index>(fs.size()));
        for (int a = 0; a < 2; ++a) {
            Eigen::VectorXd xp = x, xm = x;
            xp(a) += step;
            xm(a) -= step;
            Eigen::VectorXd fd =
                (eval_row(spec, xp, fs) - eval_row(spec, xm, fs)) /
                (2.0 * step);
            for (Eigen::Index i = 0; i < fd.size(); ++i) {
                CAPTURE(trial, a, i);
                CHECK(std::abs(grad(a, i) - fd(i)) <=
                      1e-6 * (1.0 + std::abs(grad(a, i))));
            }
        }
    }
}

TEST_CASE("Gram matrices of random functional sets are PSD") {
    RandomTriples gen;
    std::uniform_real_distribution<double> lam(-2.0, 2.0);
    for (int rep = 0; rep < 3; ++rep) {
        int d = 2 + rep % 2;
        Eigen::VectorXd s(d);
        for (int i = 0; i < d; ++i) s(i) = gen.scale(gen.rng);
        KernelSpec spec(s);
        std::vector<Functional> fs;
        int n = 60 + 70 * rep;  // up to 200
        while (static_cast<int>(fs.size()) < n) {
            Eigen::VectorXd z(d), f(d);
            for (int i = 0; i < d; ++i) {
                z(i) = gen.point(gen.rng);
                f(i) = lam(gen.rng);
            }
            switch (gen.rng() % 3) {
                case 0: fs.push_back(Functional::point_eval(z)); break;
                case 1:
                    fs.push_back(Functional::point_deriv(
                        z, 1 + static_cast<int>(gen.rng() % d)));
                    break;
                default:
                    fs.push_back(Functional::pde_op(z, f, lam(gen.rng)));
            }
        }
        Eigen::MatrixXd gram(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                gram(i, j) = pairing(spec, fs[static_cast<std::size_t>(i)],
                                     fs[static_cast<std::size_t>(j)]);
                gram(j, i) = gram(i, j);
            }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        REQUIRE(es.info() == Eigen::Success);
        double max_diag = gram.diagonal().maxCoeff();
        CAPTURE(rep, n, max_diag);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * max_diag);
    }
}
