#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "koopman/collocation.hpp"
#include "koopman/dynsys.hpp"
#include "koopman/errors.hpp"
#include "koopman/metrics.hpp"
#include "koopman/parallel.hpp"

// Fixed-step RK4 flow and the semigroup check phi(s_t(x)) = e^{lambda t}
// phi(x), the defining property of a Koopman eigenfunction.

namespace koopman {

struct Trajectory {
    Eigen::VectorXd x0;
    double dt = 0.0;
    std::vector<double> times;            // t_0 = 0 .. t_last = T
    std::vector<Eigen::VectorXd> states;  // states[k] = s_{t_k}(x0)
};

namespace detail {

inline Eigen::VectorXd rk4_step(const VectorField& vf,
                                const Eigen::VectorXd& x, double dt) {
    Eigen::VectorXd k1 = vf.f(x);
    Eigen::VectorXd k2 = vf.f(x + (0.5 * dt) * k1);
    Eigen::VectorXd k3 = vf.f(x + (0.5 * dt) * k2);
    Eigen::VectorXd k4 = vf.f(x + dt * k3);
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

inline Trajectory integrate_rk4(const VectorField& vf,
                                const Eigen::VectorXd& x0, double T,
                                double dt) {
    if (!(T > 0.0) || !(dt > 0.0) || dt > T * (1.0 + 1e-12))
        throw ConfigError("need 0 < dt <= T for integration");

    Trajectory traj;
    traj.x0 = x0;
    traj.dt = dt;
    traj.times.push_back(0.0);
    traj.states.push_back(x0);

    auto n_full = static_cast<long long>(std::floor(T / dt + 1e-12));
    double remainder = T - static_cast<double>(n_full) * dt;
    if (remainder < 1e-12 * std::max(1.0, T)) remainder = 0.0;

    Eigen::VectorXd x = x0;
    for (long long k = 1; k <= n_full; ++k) {
        x = detail::rk4_step(vf, x, dt);
        if (!x.allFinite() || x.norm() > 1e8)
            throw Blowup("trajectory norm exceeded 1e8");
        traj.times.push_back(static_cast<double>(k) * dt);
        traj.states.push_back(x);
    }
    if (remainder > 0.0) {
        x = detail::rk4_step(vf, x, remainder);
        if (!x.allFinite() || x.norm() > 1e8)
            throw Blowup("trajectory norm exceeded 1e8");
        traj.times.push_back(T);
        traj.states.push_back(x);
    }
    return traj;
}

struct TrajectoryRecord {
    Eigen::VectorXd x0;
    double max_deviation = 0.0;
    double truncated_at = -1.0;  // time of validity-box exit, else -1
    bool blowup = false;
    long long steps_used = 0;
};

struct PropertyReport {
    std::vector<TrajectoryRecord> per_trajectory;
    double max_deviation = 0.0;
    double median_deviation = 0.0;
    double floor_used = 0.0;
    double horizon_used = 0.0;  // possibly capped for unstable lambda
};

// Relative deviation |phi*(s_t(x0)) - e^{lambda t} phi*(x0)| / denom per
// step, denom = max(|phi*(x0)|, floor). Trajectories are truncated at the
// validity box: the model is only claimed accurate on the learned domain.
// For unstable lambda the horizon is capped so e^{lambda T} <= 1e3, keeping
// the relative measure meaningful.
inline PropertyReport koopman_property_check(
    const EigenfunctionModel& model, const VectorField& vf,
    const std::vector<Eigen::VectorXd>& starts, double T, double dt,
    double floor_rel = 1e-6, const Box* validity = nullptr) {
    if (starts.empty()) throw EmptySet("no trajectory start points");
    const Box& box = (validity != nullptr) ? *validity : model.domain();

    PropertyReport rep;
    rep.horizon_used = T;
    if (model.lambda() > 0.0)
        rep.horizon_used =
            std::min(T, std::log(1e3) / model.lambda());

    std::vector<double> phi0(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i)
        phi0[i] = model.eval_phi(starts[i]);
    double max_phi0 = 0.0;
    for (double v : phi0) max_phi0 = std::max(max_phi0, std::abs(v));
    rep.floor_used = floor_rel * max_phi0;

    rep.per_trajectory.resize(starts.size());
    parallel_for(starts.size(), [&](std::size_t i) {
        TrajectoryRecord rec;
        rec.x0 = starts[i];
        const double denom = std::max(std::abs(phi0[i]), rep.floor_used);

        auto n_full = static_cast<long long>(
            std::floor(rep.horizon_used / dt + 1e-12));
        double remainder =
            rep.horizon_used - static_cast<double>(n_full) * dt;
        if (remainder < 1e-12 * std::max(1.0, rep.horizon_used))
            remainder = 0.0;

        Eigen::VectorXd x = starts[i];
        double t = 0.0;
        for (long long k = 1; k <= n_full + (remainder > 0.0 ? 1 : 0); ++k) {
            double step = (k <= n_full) ? dt : remainder;
            x = detail::rk4_step(vf, x, step);
            t = (k <= n_full) ? static_cast<double>(k) * dt
                              : rep.horizon_used;
            if (!x.allFinite() || x.norm() > 1e8) {
                rec.blowup = true;
                break;
            }
            if (!box.contains(x)) {
                rec.truncated_at = t;
                break;
            }
            double predicted = std::exp(model.lambda() * t) * phi0[i];
            double dev = std::abs(model.eval_phi(x) - predicted) / denom;
            rec.max_deviation = std::max(rec.max_deviation, dev);
            ++rec.steps_used;
        }
        rep.per_trajectory[i] = std::move(rec);
    });

    std::vector<double> maxes;
    maxes.reserve(rep.per_trajectory.size());
    for (const auto& rec : rep.per_trajectory) {
        rep.max_deviation = std::max(rep.max_deviation, rec.max_deviation);
        maxes.push_back(rec.max_deviation);
    }
    rep.median_deviation = detail::median_of(maxes);
    return rep;
}

}  // namespace koopman
