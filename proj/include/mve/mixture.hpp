#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mve/errors.hpp"
#include "mve/rng.hpp"
#include "mve/stats.hpp"

namespace mve {

struct MixtureComponent {
    double weight = 0.0;
    double mean = 0.0;
    double sd = 0.0;
};

struct MixtureFit {
    std::vector<MixtureComponent> components;
    double loglik = 0.0;
    bool converged = false;
    std::vector<double> loglik_trace; // one entry per EM iteration
};

namespace detail {

// One EM run from a random initialization. Component means start at k
// distinct sample points, sds at the pooled MLE sd, weights uniform.
// Variances are floored at 1e-6 times the sample variance so no component
// can collapse onto a point.
inline MixtureFit em_run(std::span<const double> x, int k, Rng& rng, int max_iter,
                         double tol) {
    const std::size_t n = x.size();
    const GaussianFit pooled = fit_mle(x);
    const double floor_var = 1e-6 * pooled.sd * pooled.sd;

    MixtureFit fit;
    fit.components.resize(static_cast<std::size_t>(k));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (int j = 0; j < k; ++j) {
        const std::size_t pick =
            static_cast<std::size_t>(j) + rng.uniform_index(n - static_cast<std::size_t>(j));
        std::swap(idx[static_cast<std::size_t>(j)], idx[pick]);
        auto& c = fit.components[static_cast<std::size_t>(j)];
        c.weight = 1.0 / static_cast<double>(k);
        c.mean = x[idx[static_cast<std::size_t>(j)]];
        c.sd = pooled.sd;
    }

    const Eigen::Map<const Eigen::ArrayXd> xs(x.data(), static_cast<Eigen::Index>(n));
    Eigen::ArrayXXd resp(static_cast<Eigen::Index>(n), k);
    Eigen::ArrayXd mx(static_cast<Eigen::Index>(n)), srow(static_cast<Eigen::Index>(n));
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        // E step with log-sum-exp, one column of log-posteriors per component
        for (int j = 0; j < k; ++j) {
            const auto& c = fit.components[static_cast<std::size_t>(j)];
            const double lwc =
                std::log(c.weight) - 0.918938533204672742 - std::log(c.sd); // log w - log(sd sqrt(2 pi))
            const double inv_sd = 1.0 / c.sd;
            resp.col(j) = lwc - 0.5 * ((xs - c.mean) * inv_sd).square();
        }
        mx = resp.rowwise().maxCoeff();
        for (int j = 0; j < k; ++j) resp.col(j) = (resp.col(j) - mx).exp();
        srow = resp.rowwise().sum();
        const double ll = (mx + srow.log()).sum();
        if (ll < prev_ll - 1e-7 * (1.0 + std::abs(prev_ll)))
            throw NumericError("em_run: log-likelihood decreased");
        fit.loglik = ll;
        fit.loglik_trace.push_back(ll);
        if (std::abs(ll - prev_ll) < tol) {
            fit.converged = true;
            return fit;
        }
        prev_ll = ll;

        // M step
        for (int j = 0; j < k; ++j) resp.col(j) /= srow;
        for (int j = 0; j < k; ++j) {
            const double nk = resp.col(j).sum();
            if (nk <= 1e-12) {
                // starved component: freeze its location and scale so the
                // update stays finite; its weight keeps it out of the fit
                fit.components[static_cast<std::size_t>(j)].weight = nk / static_cast<double>(n);
                continue;
            }
            const double mu = (resp.col(j) * xs).sum() / nk;
            const double var =
                std::max((resp.col(j) * (xs - mu).square()).sum() / nk, floor_var);
            auto& c = fit.components[static_cast<std::size_t>(j)];
            c.weight = nk / static_cast<double>(n);
            c.mean = mu;
            c.sd = std::sqrt(var);
        }
    }
    return fit; // not converged
}

} // namespace detail

// Maximum-likelihood Gaussian mixture by EM over 10 seeded restarts with a
// fixed iteration budget, keeping the highest log-likelihood reached. On
// flat ridges no restart may meet the tolerance within the budget; the best
// truncated fit is then returned with converged = false. Callers comparing
// likelihoods (the LRT bootstrap) treat observed data and replicates
// identically either way, which is what keeps the bootstrap p-value valid.
// Components are reported sorted by mean.
inline MixtureFit fit_mixture(std::span<const double> x, int k, std::uint64_t seed,
                              int restarts = 10, int max_iter = 500, double tol = 1e-8) {
    if (k < 1 || k > 3) throw ConfigError("fit_mixture: components must be 1..3");
    if (x.size() < static_cast<std::size_t>(2 * k))
        throw NumericError("fit_mixture: sample too small for " + std::to_string(k) +
                           " components");
    if (detail::fit_mle(x).sd <= 0.0) throw NumericError("fit_mixture: zero spread");

    MixtureFit best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, "em-restart", static_cast<std::uint64_t>(r)));
        MixtureFit fit = detail::em_run(x, k, rng, max_iter, tol);
        if (!std::isfinite(fit.loglik)) continue;
        if (!have || fit.loglik > best.loglik) {
            best = std::move(fit);
            have = true;
        }
    }
    if (!have)
        throw NumericError("fit_mixture: no restart produced a finite likelihood");
    std::sort(best.components.begin(), best.components.end(),
              [](const MixtureComponent& a, const MixtureComponent& b) { return a.mean < b.mean; });
    return best;
}

struct MixtureLrt {
    double statistic = 0.0; // 2 (loglik best mixture - loglik single)
    double p = 1.0;
    MixtureFit single;
    std::vector<MixtureFit> alternatives; // fits for 2..max_components
};

namespace detail {

inline double lrt_statistic(std::span<const double> x, int max_components, std::uint64_t seed,
                            MixtureFit* single_out, std::vector<MixtureFit>* alts_out) {
    MixtureFit single = fit_mixture(x, 1, derive_seed(seed, "em-k", 1));
    double best_alt = -std::numeric_limits<double>::infinity();
    std::vector<MixtureFit> alts;
    for (int k = 2; k <= max_components; ++k) {
        alts.push_back(fit_mixture(x, k, derive_seed(seed, "em-k", static_cast<std::uint64_t>(k))));
        best_alt = std::max(best_alt, alts.back().loglik);
    }
    const double stat = 2.0 * (best_alt - single.loglik);
    if (single_out) *single_out = std::move(single);
    if (alts_out) *alts_out = std::move(alts);
    return stat;
}

} // namespace detail

// Likelihood ratio test of one Gaussian against the best mixture of up to
// max_components. The LRT statistic for mixtures has no chi-squared null,
// so the null distribution is built by a parametric bootstrap from the
// fitted single Gaussian, recomputing the statistic on each replicate.
inline MixtureLrt mixture_lrt_test(std::span<const double> x, int max_components,
                                   std::uint64_t seed, int replicates = 199) {
    if (x.size() < 10) throw NumericError("mixture_lrt_test: need at least 10 values");
    if (max_components < 2 || max_components > 3)
        throw ConfigError("mixture_lrt_test: max_components must be 2 or 3");
    if (replicates < 1) throw ConfigError("mixture_lrt_test: replicates must be positive");

    MixtureLrt res;
    res.statistic = detail::lrt_statistic(x, max_components, derive_seed(seed, "lrt-obs"),
                                          &res.single, &res.alternatives);

    const double mean = res.single.components[0].mean;
    const double sd = res.single.components[0].sd;
    int hits = 0;
    std::vector<double> sim(x.size());
    for (int b = 0; b < replicates; ++b) {
        const std::uint64_t bs = derive_seed(seed, "lrt-boot", static_cast<std::uint64_t>(b));
        Rng rng(bs);
        for (double& v : sim) v = rng.normal(mean, sd);
        if (detail::lrt_statistic(sim, max_components, bs, nullptr, nullptr) >= res.statistic)
            ++hits;
    }
    res.p = static_cast<double>(1 + hits) / static_cast<double>(replicates + 1);
    return res;
}

} // namespace mve
