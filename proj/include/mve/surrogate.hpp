#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mve/errors.hpp"
#include "mve/rng.hpp"
#include "mve/timeseries.hpp"

namespace mve {

enum class SystemKind { lorenz63, lorenz96 };

inline std::string system_name(SystemKind s) {
    return s == SystemKind::lorenz63 ? "lorenz63" : "lorenz96";
}

inline SystemKind system_from_name(const std::string& name) {
    if (name == "lorenz63") return SystemKind::lorenz63;
    if (name == "lorenz96") return SystemKind::lorenz96;
    throw ConfigError("unknown system '" + name + "' (expected lorenz63 or lorenz96)");
}

// lorenz63 theta = (sigma, rho, beta); lorenz96 theta = (forcing F, site
// count). The site count is carried as a real so the whole vector can live
// in a theta-ball; integrate() rounds it to the nearest integer.
struct DynamicsParams {
    SystemKind system = SystemKind::lorenz63;
    std::vector<double> theta{10.0, 28.0, 8.0 / 3.0};
    double dt = 0.01;
    std::int64_t steps = 0; // integration steps
    std::int64_t burn_in = 0; // leading samples discarded
    std::int64_t aggregate = 1; // samples averaged per output row

    std::size_t dimension() const {
        if (system == SystemKind::lorenz63) return 3;
        return static_cast<std::size_t>(std::llround(theta.at(1)));
    }

    void validate() const {
        if (system == SystemKind::lorenz63 && theta.size() != 3)
            throw ConfigError("lorenz63 takes theta = (sigma, rho, beta)");
        if (system == SystemKind::lorenz96) {
            if (theta.size() != 2)
                throw ConfigError("lorenz96 takes theta = (forcing, sites)");
            if (std::llround(theta[1]) < 4)
                throw ConfigError("lorenz96 needs at least 4 sites");
        }
        if (!(dt > 0.0)) throw ConfigError("dt must be positive");
        if (steps <= burn_in) throw ConfigError("steps must exceed burn_in");
        if (aggregate < 1) throw ConfigError("aggregate must be at least 1");
        if (steps - burn_in < aggregate)
            throw ConfigError("no complete aggregation block after burn-in");
        for (double v : theta)
            if (!std::isfinite(v)) throw ConfigError("theta must be finite");
    }
};

// Month index of 2000-01, the epoch surrogate panels start at.
inline constexpr std::int64_t kSurrogateEpoch = 24000;

namespace detail {

inline void lorenz63_deriv(const std::vector<double>& x, const std::vector<double>& th,
                           std::vector<double>& dx) {
    dx[0] = th[0] * (x[1] - x[0]);
    dx[1] = x[0] * (th[1] - x[2]) - x[1];
    dx[2] = x[0] * x[1] - th[2] * x[2];
}

inline void lorenz96_deriv(const std::vector<double>& x, double forcing,
                           std::vector<double>& dx) {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double xp1 = x[(i + 1) % n];
        const double xm1 = x[(i + n - 1) % n];
        const double xm2 = x[(i + n - 2) % n];
        dx[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
    }
}

} // namespace detail

// Fixed-step RK4 trajectory, burn-in discarded, consecutive blocks of
// `aggregate` samples averaged into one row (the monthly-average analogue).
// Deterministic; reproducibility is preferred over adaptive stepping.
inline SeriesPanel integrate(const DynamicsParams& params, const std::vector<double>& x0) {
    params.validate();
    const std::size_t d = params.dimension();
    if (x0.size() != d)
        throw ConfigError("integrate: x0 dimension " + std::to_string(x0.size()) +
                          ", system needs " + std::to_string(d));
    for (double v : x0)
        if (!std::isfinite(v)) throw ConfigError("integrate: non-finite x0");

    auto deriv = [&](const std::vector<double>& x, std::vector<double>& dx) {
        if (params.system == SystemKind::lorenz63)
            detail::lorenz63_deriv(x, params.theta, dx);
        else
            detail::lorenz96_deriv(x, params.theta[0], dx);
    };

    std::vector<double> x = x0, k1(d), k2(d), k3(d), k4(d), tmp(d);
    const std::int64_t rows = (params.steps - params.burn_in) / params.aggregate;
    std::vector<std::vector<double>> acc(d, std::vector<double>(static_cast<std::size_t>(rows), 0.0));

    for (std::int64_t step = 1; step <= params.steps; ++step) {
        const double h = params.dt;
        deriv(x, k1);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
        deriv(tmp, k2);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
        deriv(tmp, k3);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k3[i];
        deriv(tmp, k4);
        for (std::size_t i = 0; i < d; ++i) {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if (!std::isfinite(x[i]))
                throw NumericError("integrate: non-finite state at step " +
                                   std::to_string(step));
        }
        const std::int64_t sample = step - 1 - params.burn_in;
        if (sample < 0) continue;
        const std::int64_t row = sample / params.aggregate;
        if (row >= rows) break; // trailing partial block dropped
        for (std::size_t i = 0; i < d; ++i)
            acc[i][static_cast<std::size_t>(row)] += x[i];
    }

    SeriesPanel panel;
    panel.times.resize(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r)
        panel.times[static_cast<std::size_t>(r)] = kSurrogateEpoch + r;
    for (std::size_t i = 0; i < d; ++i) {
        std::string name;
        if (params.system == SystemKind::lorenz63)
            name = (i == 0) ? "x" : (i == 1) ? "y" : "z";
        else
            name = "s" + std::to_string(i + 1);
        for (auto& v : acc[i]) v /= static_cast<double>(params.aggregate);
        panel.add_variable(name, acc[i],
                           std::vector<std::uint8_t>(static_cast<std::size_t>(rows), 1));
    }
    panel.validate();
    return panel;
}

// n parameter vectors uniform in the closed L2 ball of the given radius
// around base.theta, with per-component relative scaling: component j is
// displaced by radius * u_j * |theta0_j|, so a radius of 0.01 keeps every
// component within 1% of theta0. Zero components stay fixed. For lorenz96
// the site count is nominally perturbed too but rounds back to the same
// integer at any sensible radius.
inline std::vector<DynamicsParams> sample_theta_ball(const DynamicsParams& base,
                                                     double radius, std::size_t n,
                                                     std::uint64_t seed) {
    if (radius < 0.0) throw ConfigError("sample_theta_ball: radius must be nonnegative");
    if (n < 1) throw ConfigError("sample_theta_ball: need at least 1 sample");
    base.validate();
    const std::size_t d = base.theta.size();
    std::vector<DynamicsParams> out(n, base);
    for (std::size_t s = 0; s < n; ++s) {
        Rng rng(derive_seed(seed, "theta-ball", s));
        std::vector<double> u(d);
        double norm2 = 0.0;
        for (auto& v : u) {
            v = rng.normal();
            norm2 += v * v;
        }
        const double norm = std::sqrt(norm2);
        if (norm > 0.0) {
            const double r = std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
            for (std::size_t j = 0; j < d; ++j)
                out[s].theta[j] = base.theta[j] +
                                  radius * (u[j] / norm) * r * std::abs(base.theta[j]);
        }
    }
    return out;
}

struct Experiment {
    std::vector<SeriesPanel> models; // noiseless runs, one per family member
    SeriesPanel real; // the "real" system, observation noise applied
    std::vector<DynamicsParams> family;
    DynamicsParams real_params;
    std::vector<double> x0; // shared initial state
};

namespace detail {

inline std::vector<double> experiment_x0(const DynamicsParams& p, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "x0"));
    std::vector<double> x0(p.dimension());
    if (p.system == SystemKind::lorenz63) {
        for (auto& v : x0) v = rng.uniform(-8.0, 8.0);
    } else {
        // small perturbation around the resting state; burn-in absorbs the transient
        for (auto& v : x0) v = p.theta[0] + rng.uniform(-1.0, 1.0);
    }
    return x0;
}

} // namespace detail

// Integrates every family member plus the "real" system from one shared
// initial state, then injects observation noise into the real panel only:
// model runs are clean simulations, reality is measured through error.
inline Experiment make_experiment(const std::vector<DynamicsParams>& family,
                                  const DynamicsParams& real_params, double obs_noise_sd,
                                  std::uint64_t seed) {
    if (family.empty()) throw ConfigError("make_experiment: empty family");
    if (obs_noise_sd < 0.0) throw ConfigError("make_experiment: negative obs_noise_sd");

    Experiment exp;
    exp.family = family;
    exp.real_params = real_params;
    exp.x0 = detail::experiment_x0(real_params, seed);

    for (std::size_t i = 0; i < family.size(); ++i) {
        try {
            exp.models.push_back(integrate(family[i], exp.x0));
        } catch (const std::exception& e) {
            throw NumericError("make_experiment: run " + std::to_string(i + 1) + ": " +
                               e.what());
        }
        if (exp.models[i].variables != exp.models[0].variables)
            throw ConfigError("make_experiment: run " + std::to_string(i + 1) +
                              " has a different variable schema");
    }
    try {
        exp.real = integrate(real_params, exp.x0);
    } catch (const std::exception& e) {
        throw NumericError(std::string("make_experiment: real system: ") + e.what());
    }
    if (exp.real.variables != exp.models[0].variables)
        throw ConfigError("make_experiment: real system has a different variable schema");
    if (obs_noise_sd > 0.0)
        exp.real = inject_noise(exp.real, obs_noise_sd, derive_seed(seed, "obs-noise"));
    return exp;
}

} // namespace mve
