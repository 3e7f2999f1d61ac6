#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "koopman/collocation.hpp"
#include "koopman/compensated.hpp"
#include "koopman/dynsys.hpp"
#include "koopman/errors.hpp"
#include "koopman/expr.hpp"
#include "koopman/parallel.hpp"

// Accuracy metrics: pointwise error fields against an analytic truth with
// zero-set exclusion, fill-distance estimation, PDE residuals on held-out
// points, and the fill-distance-vs-error convergence study.

namespace koopman {

struct ErrorReport {
    std::vector<Eigen::VectorXd> points;
    std::vector<double> phi_star;
    std::vector<double> phi_true;
    std::vector<double> abs_err;   // |alpha phi* - truth|
    std::vector<double> rel_err;   // abs_err / |truth|, NaN where excluded
    std::vector<bool> excluded;    // |truth| < eps_floor * max|truth|
    double alpha = 1.0;
    double median_rel = 0.0;
    double mean_rel = 0.0;
    double max_rel = 0.0;
    double max_abs = 0.0;
    std::size_t included_count = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// alpha is the least-squares scale <phi*, truth>/<phi*, phi*> when align is
// requested; eigenfunctions are only defined up to scale.
inline ErrorReport error_field(const EigenfunctionModel& model,
                               const Expr& truth,
                               const std::vector<Eigen::VectorXd>& grid,
                               double eps_floor = 1e-2, bool align = false) {
    ErrorReport rep;
    rep.points = grid;
    rep.phi_star = model.batch_eval(grid);
    rep.phi_true.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        rep.phi_true[i] = truth.eval(grid[i]);

    double max_true = 0.0;
    for (double t : rep.phi_true) max_true = std::max(max_true, std::abs(t));
    if (max_true == 0.0)
        throw DegenerateTruth("truth vanishes on the whole evaluation grid");

    rep.alpha = 1.0;
    if (align) {
        CompensatedSum num, den;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            num.add_product(rep.phi_star[i], rep.phi_true[i]);
            den.add_product(rep.phi_star[i], rep.phi_star[i]);
        }
        if (den.value() != 0.0) rep.alpha = num.value() / den.value();
    }

    const double floor = eps_floor * max_true;
    rep.abs_err.resize(grid.size());
    rep.rel_err.resize(grid.size());
    rep.excluded.resize(grid.size());
    std::vector<double> included_rel;
    included_rel.reserve(grid.size());
    double mean_acc = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double err = std::abs(rep.alpha * rep.phi_star[i] - rep.phi_true[i]);
        rep.abs_err[i] = err;
        rep.max_abs = std::max(rep.max_abs, err);
        bool excl = std::abs(rep.phi_true[i]) < floor;
        rep.excluded[i] = excl;
        if (excl) {
            rep.rel_err[i] = std::numeric_limits<double>::quiet_NaN();
        } else {
            double rel = err / std::abs(rep.phi_true[i]);
            rep.rel_err[i] = rel;
            included_rel.push_back(rel);
            mean_acc += rel;
            rep.max_rel = std::max(rep.max_rel, rel);
        }
    }
    rep.included_count = included_rel.size();
    rep.median_rel = detail::median_of(included_rel);
    rep.mean_rel = included_rel.empty()
                       ? std::numeric_limits<double>::quiet_NaN()
                       : mean_acc / static_cast<double>(included_rel.size());
    return rep;
}

// Probe-grid estimator of sup_{x in box} min_{z in Z} |x - z|; approaches
// the true fill distance from below as the probe resolution grows.
inline double fill_distance(const std::vector<Eigen::VectorXd>& Z,
                            const Box& box, int probe_resolution) {
    if (Z.empty()) throw EmptySet("fill distance of an empty point set");
    if (probe_resolution < 2)
        throw InvalidDomain("probe resolution must be at least 2 per axis");
    box.validate();
    const int d = box.dimension();

    long long total = 1;
    for (int a = 0; a < d; ++a) total *= probe_resolution;

    const auto nz = Z.size();
    std::vector<double> flat(nz * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < nz; ++i)
        for (int a = 0; a < d; ++a)
            flat[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(a)] =
                Z[i](a);

    const unsigned workers = thread_count();
    std::vector<double> worker_max(std::max(1u, workers), 0.0);
    auto probe_of = [&](long long flat_idx, double* coords) {
        long long rest = flat_idx;
        for (int a = d - 1; a >= 0; --a) {
            int k = static_cast<int>(rest % probe_resolution);
            rest /= probe_resolution;
            double t =
                static_cast<double>(k) / (probe_resolution - 1);
            coords[a] = box.lo(a) + t * (box.hi(a) - box.lo(a));
        }
    };

    // Chunked over probes; deterministic because max() is order-free.
    std::size_t chunks = worker_max.size();
    parallel_for(chunks, [&](std::size_t wi) {
        long long lo = static_cast<long long>(wi) * total /
                       static_cast<long long>(chunks);
        long long hi = static_cast<long long>(wi + 1) * total /
                       static_cast<long long>(chunks);
        double coords[8];
        double local_max = 0.0;
        for (long long p = lo; p < hi; ++p) {
            probe_of(p, coords);
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < nz; ++i) {
                const double* z = &flat[i * static_cast<std::size_t>(d)];
                double dist2 = 0.0;
                for (int a = 0; a < d; ++a) {
                    double diff = coords[a] - z[a];
                    dist2 += diff * diff;
                }
                if (dist2 < best) best = dist2;
            }
            if (best > local_max) local_max = best;
        }
        worker_max[wi] = local_max;
    });
    double m = 0.0;
    for (double v : worker_max) m = std::max(m, v);
    return std::sqrt(m);
}

inline int default_probe_resolution(int dimension) {
    return dimension >= 3 ? 80 : 600;
}

struct ResidualSummary {
    double rms = 0.0;
    double max = 0.0;
};

// Generator-relation residual grad(phi*) . f - lambda phi* on held-out
// points. The gradient is the analytic derivative of the representer sum; a
// finite-difference probe at step 1e-5 reads the third-derivative wiggle of
// the kernel expansion (|c| is huge) instead of the actual constraint
// quality, and even inverts the convergence trend as N grows.
inline ResidualSummary pde_residual(const EigenfunctionModel& model,
                                    const VectorField& vf,
                                    const std::vector<Eigen::VectorXd>& pts) {
    ResidualSummary out;
    if (pts.empty()) return out;
    std::vector<double> r(pts.size());
    parallel_for(pts.size(), [&](std::size_t i) {
        const Eigen::VectorXd& x = pts[i];
        Eigen::VectorXd g = model.grad_phi(x);
        Eigen::VectorXd f = vf.f(x);
        r[i] = g.dot(f) - model.lambda() * model.eval_phi(x);
    });
    double acc = 0.0;
    for (double v : r) {
        acc += v * v;
        out.max = std::max(out.max, std::abs(v));
    }
    out.rms = std::sqrt(acc / static_cast<double>(r.size()));
    return out;
}

struct ConvergenceEntry {
    long long N = 0;
    double rho = 0.0;
    double residual_rms = 0.0;
    double rel_err_median = std::numeric_limits<double>::quiet_NaN();
    std::string status = "ok";  // or the error message
};

struct ConvergenceRecord {
    std::vector<ConvergenceEntry> entries;  // sorted by decreasing rho
    double slope = 0.0;      // d log(residual_rms) / d log(rho)
    bool slope_valid = false;
};

// One row per grid shape: sample, build, solve, then PDE residual on a fixed
// Halton holdout. Failures mark the row and the study continues.
inline ConvergenceRecord convergence_study(
    const VectorField& vf, const Linearization& lin, int pair_index,
    const Box& domain, const KernelSpec& spec, double eta,
    const std::vector<std::vector<int>>& grid_shapes,
    const Expr* truth = nullptr, int holdout_count = 500) {
    ConvergenceRecord rec;

    // Holdout from deeper Halton indices so it stays clear of grid nodes.
    std::vector<Eigen::VectorXd> holdout;
    {
        CollocationSet deep = sample(
            domain, SamplingScheme::halton(holdout_count + 100));
        holdout.assign(deep.points.begin() + 100, deep.points.end());
    }

    for (const auto& shape : grid_shapes) {
        ConvergenceEntry entry;
        try {
            CollocationSet Z = sample(domain, SamplingScheme::grid(shape));
            entry.N = static_cast<long long>(Z.points.size());
            entry.rho = fill_distance(
                Z.points, domain,
                default_probe_resolution(domain.dimension()));
            GramSystem gs = build(vf, lin, pair_index, Z, spec, eta);
            EigenfunctionModel model = solve(gs);
            entry.residual_rms = pde_residual(model, vf, holdout).rms;
            if (truth != nullptr)
                entry.rel_err_median =
                    error_field(model, *truth, holdout).median_rel;
        } catch (const Error& e) {
            entry.status = e.what();
        }
        rec.entries.push_back(std::move(entry));
    }

    std::sort(rec.entries.begin(), rec.entries.end(),
              [](const ConvergenceEntry& a, const ConvergenceEntry& b) {
                  return a.rho > b.rho;
              });

    // log-log regression of residual on fill distance over successful rows
    std::vector<double> lx, ly;
    for (const auto& e : rec.entries)
        if (e.status == "ok" && e.rho > 0.0 && e.residual_rms > 0.0) {
            lx.push_back(std::log(e.rho));
            ly.push_back(std::log(e.residual_rms));
        }
    if (lx.size() >= 2) {
        double n = static_cast<double>(lx.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sx += lx[i];
            sy += ly[i];
            sxx += lx[i] * lx[i];
            sxy += lx[i] * ly[i];
        }
        double denom = n * sxx - sx * sx;
        if (denom != 0.0) {
            rec.slope = (n * sxy - sx * sy) / denom;
            rec.slope_valid = true;
        }
    }
    return rec;
}

}  // namespace koopman
