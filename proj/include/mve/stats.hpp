#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mve/errors.hpp"
#include "mve/rng.hpp"

namespace mve {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

// Quantile with linear interpolation between order statistics (R type 7):
// h = (n-1)q, result = x[floor(h)] + frac(h) * (x[floor(h)+1] - x[floor(h)]).
inline double quantile(std::span<const double> x, double q) {
    if (x.empty()) throw NumericError("quantile: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw NumericError("quantile: q outside [0,1]");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    const double h = (static_cast<double>(s.size()) - 1.0) * q;
    const std::size_t lo = static_cast<std::size_t>(std::min(h, static_cast<double>(s.size() - 1)));
    if (lo + 1 >= s.size()) return s.back();
    return s[lo] + (h - static_cast<double>(lo)) * (s[lo + 1] - s[lo]);
}

inline double mean_of(std::span<const double> x) {
    if (x.empty()) throw NumericError("mean_of: empty sample");
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double median_of(std::span<const double> x) { return quantile(x, 0.5); }

namespace detail {

// Midranks in input order; ties share the average of the ranks they span.
inline std::vector<double> midranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t) r[idx[t]] = rank;
        i = j + 1;
    }
    return r;
}

// Sum of (t^3 - t) over tie groups, the shared variance correction term.
inline double tie_term(std::span<const double> v) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    double total = 0.0;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = i;
        while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        total += t * t * t - t;
        i = j + 1;
    }
    return total;
}

} // namespace detail

struct RankSumResult {
    double w = 0.0; // rank sum of the first sample
    double p = 1.0; // two-sided
    bool exact = false;
};

// Wilcoxon rank-sum test. Exact when the combined size is at most 12:
// every assignment of ranks to the first sample is enumerated and the
// two-sided p-value counts assignments at least as far from the null mean
// as observed. Larger samples use the normal approximation with tie
// correction and a 0.5 continuity correction.
inline RankSumResult rank_sum_test(std::span<const double> a, std::span<const double> b) {
    const std::size_t m = a.size(), n = b.size();
    if (m < 2 || n < 2) throw NumericError("rank_sum_test: need at least 2 values per sample");
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    const std::vector<double> ranks = detail::midranks(all);
    const std::size_t N = m + n;

    RankSumResult res;
    for (std::size_t i = 0; i < m; ++i) res.w += ranks[i];
    const double mu = static_cast<double>(m) * (static_cast<double>(N) + 1.0) / 2.0;
    const double obs_dev = std::abs(res.w - mu);
    const double eps = 1e-9;

    if (N <= 12) {
        res.exact = true;
        std::vector<std::size_t> comb(m);
        std::iota(comb.begin(), comb.end(), std::size_t{0});
        std::uint64_t hits = 0, total = 0;
        while (true) {
            double w = 0.0;
            for (std::size_t i : comb) w += ranks[i];
            ++total;
            if (std::abs(w - mu) >= obs_dev - eps) ++hits;
            // next combination of m indices out of N
            std::size_t k = m;
            while (k > 0 && comb[k - 1] == N - m + k - 1) --k;
            if (k == 0) break;
            ++comb[k - 1];
            for (std::size_t i = k; i < m; ++i) comb[i] = comb[i - 1] + 1;
        }
        res.p = static_cast<double>(hits) / static_cast<double>(total);
        return res;
    }

    const double dN = static_cast<double>(N);
    double var = (static_cast<double>(m) * static_cast<double>(n) / 12.0) *
                 ((dN + 1.0) - detail::tie_term(all) / (dN * (dN - 1.0)));
    if (var <= 0.0) {
        res.p = 1.0;
        return res;
    }
    const double z = std::max(0.0, obs_dev - 0.5) / std::sqrt(var);
    res.p = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    return res;
}

struct SignedRankResult {
    double w_plus = 0.0;
    double p = 1.0; // two-sided
    std::size_t n_used = 0; // nonzero differences
    bool exact = false;
};

// Wilcoxon signed-rank test on paired differences. Zero differences drop
// out. Exact when at most 20 nonzero differences remain: a dynamic program
// over doubled midranks (integers even under ties) counts the sign
// assignments at least as extreme as observed. Larger samples use the
// normal approximation with tie correction and continuity correction.
inline SignedRankResult signed_rank_test(std::span<const double> diffs) {
    std::vector<double> d;
    for (double v : diffs)
        if (v != 0.0) d.push_back(v);
    SignedRankResult res;
    res.n_used = d.size();
    if (d.empty()) return res; // all ties: no evidence either way, p = 1
    if (d.size() < 3)
        throw NumericError("signed_rank_test: need at least 3 nonzero differences, have " +
                           std::to_string(d.size()));

    const std::size_t n = d.size();
    std::vector<double> absd(n);
    for (std::size_t i = 0; i < n; ++i) absd[i] = std::abs(d[i]);
    const std::vector<double> ranks = detail::midranks(absd);
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0.0) res.w_plus += ranks[i];
    const double mu = static_cast<double>(n) * (static_cast<double>(n) + 1.0) / 4.0;
    const double eps = 1e-9;

    if (n <= 20) {
        res.exact = true;
        std::vector<long long> r2(n);
        long long sum2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            r2[i] = std::llround(2.0 * ranks[i]);
            sum2 += r2[i];
        }
        std::vector<double> ways(static_cast<std::size_t>(sum2) + 1, 0.0);
        ways[0] = 1.0;
        long long reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            reach += r2[i];
            for (long long s = reach; s >= r2[i]; --s)
                ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - r2[i])];
        }
        // work in doubled units: s = 2 W+, null mean sum2 / 2
        const double mu_s = static_cast<double>(sum2) / 2.0;
        const double obs_dev = std::abs(2.0 * res.w_plus - mu_s);
        double hits = 0.0;
        const double total = std::ldexp(1.0, static_cast<int>(n));
        for (long long s = 0; s <= sum2; ++s)
            if (std::abs(static_cast<double>(s) - mu_s) >= obs_dev - eps)
                hits += ways[static_cast<std::size_t>(s)];
        res.p = hits / total;
        return res;
    }

    const double dn = static_cast<double>(n);
    double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - detail::tie_term(absd) / 48.0;
    if (var <= 0.0) {
        res.p = 1.0;
        return res;
    }
    const double z = std::max(0.0, std::abs(res.w_plus - mu) - 0.5) / std::sqrt(var);
    res.p = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    return res;
}

// Benjamini-Hochberg step-up: reject the hypotheses with the s smallest
// p-values where s is the largest rank i with p_(i) <= alpha * i / m.
inline std::vector<bool> bh_reject(std::span<const double> pvals, double alpha) {
    const std::size_t m = pvals.size();
    if (m == 0) return {};
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("bh_reject: alpha outside (0,1)");
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
    std::size_t cutoff = 0; // number of rejections
    for (std::size_t i = 0; i < m; ++i)
        if (pvals[idx[i]] <= alpha * static_cast<double>(i + 1) / static_cast<double>(m))
            cutoff = i + 1;
    std::vector<bool> reject(m, false);
    for (std::size_t i = 0; i < cutoff; ++i) reject[idx[i]] = true;
    return reject;
}

struct GaussianFit {
    double mean = 0.0;
    double sd = 0.0; // maximum-likelihood (divide-by-n)
};

namespace detail {

inline GaussianFit fit_mle(std::span<const double> x) {
    GaussianFit g;
    g.mean = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - g.mean) * (v - g.mean);
    g.sd = std::sqrt(ss / static_cast<double>(x.size()));
    return g;
}

} // namespace detail

inline GaussianFit gaussian_fit(std::span<const double> x) {
    if (x.size() < 2) throw NumericError("gaussian_fit: need at least 2 values");
    GaussianFit g = detail::fit_mle(x);
    if (g.sd <= 0.0) throw NumericError("gaussian_fit: zero spread");
    return g;
}

namespace detail {

inline double ks_stat_normal(std::span<const double> x, const GaussianFit& g) {
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double f = normal_cdf((s[i] - g.mean) / g.sd);
        d = std::max(d, std::max(static_cast<double>(i + 1) / n - f,
                                 f - static_cast<double>(i) / n));
    }
    return d;
}

} // namespace detail

struct KsResult {
    double d = 0.0;
    double p = 1.0;
};

// Goodness-of-fit to a normal with estimated parameters. Because the
// parameters are fitted, the classical KS distribution does not apply; the
// null distribution of D is rebuilt by a parametric bootstrap that refits
// on every replicate (Lilliefors-type), and
// p = (1 + #{D* >= D_obs}) / (B + 1).
inline KsResult ks_normal_fit_test(std::span<const double> x, std::uint64_t seed,
                                   int replicates = 999) {
    if (x.size() < 5) throw NumericError("ks_normal_fit_test: need at least 5 values");
    if (replicates < 1) throw ConfigError("ks_normal_fit_test: replicates must be positive");
    const GaussianFit g = gaussian_fit(x);
    KsResult res;
    res.d = detail::ks_stat_normal(x, g);

    int hits = 0;
    std::vector<double> sim(x.size());
    for (int b = 0; b < replicates; ++b) {
        Rng rng(derive_seed(seed, "ks-boot", static_cast<std::uint64_t>(b)));
        for (double& v : sim) v = rng.normal(g.mean, g.sd);
        const GaussianFit gb = detail::fit_mle(sim);
        if (gb.sd <= 0.0 || detail::ks_stat_normal(sim, gb) >= res.d) ++hits;
    }
    res.p = static_cast<double>(1 + hits) / static_cast<double>(replicates + 1);
    return res;
}

// Two-sample KS with the asymptotic Kolmogorov tail, used where the null
// needs no parameter estimate (comparing two population samples directly).
inline KsResult ks_two_sample_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        throw NumericError("ks_two_sample_test: need at least 2 values per sample");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < sa.size() && j < sb.size()) {
        const double v = std::min(sa[i], sb[j]);
        while (i < sa.size() && sa[i] <= v) ++i;
        while (j < sb.size() && sb[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / static_cast<double>(sa.size()) -
                                 static_cast<double>(j) / static_cast<double>(sb.size())));
    }
    KsResult res;
    res.d = d;
    const double m = static_cast<double>(sa.size()), n = static_cast<double>(sb.size());
    const double ne = std::sqrt(m * n / (m + n));
    const double lam = (ne + 0.12 + 0.11 / ne) * d;
    // Kolmogorov tail Q(lam) = 2 sum (-1)^{k-1} exp(-2 k^2 lam^2). The
    // series only converges for moderate lam; where it fails lam is tiny
    // and the tail is 1.
    const double a2 = -2.0 * lam * lam;
    double p = 0.0, prev = 0.0;
    bool converged = false;
    for (int k = 1; k <= 100; ++k) {
        const double term = 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) *
                            std::exp(a2 * static_cast<double>(k) * static_cast<double>(k));
        p += term;
        if (std::abs(term) <= 1e-8 * prev || std::abs(term) <= 1e-12 * p) {
            converged = true;
            break;
        }
        prev = std::abs(term);
    }
    res.p = converged ? std::clamp(p, 0.0, 1.0) : 1.0;
    return res;
}

struct Kde {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
};

// Gaussian kernel density. Default bandwidth is Silverman's rule
// h = 0.9 min(sd, IQR/1.34) n^{-1/5} with the MLE sd; the 512-point grid
// extends 4 bandwidths past the sample range so edge-kernel mass is
// captured (a 3-bandwidth margin alone loses ~0.3% of a kernel).
inline Kde kde_density(std::span<const double> x,
                       std::optional<double> bandwidth = std::nullopt,
                       std::size_t grid_points = 512) {
    if (x.size() < 2) throw NumericError("kde_density: need at least 2 values");
    if (grid_points < 2) throw ConfigError("kde_density: need at least 2 grid points");
    const double n = static_cast<double>(x.size());
    Kde out;
    if (bandwidth) {
        if (!(*bandwidth > 0.0)) throw ConfigError("kde_density: bandwidth must be positive");
        out.bandwidth = *bandwidth;
    } else {
        const GaussianFit g = detail::fit_mle(x);
        const double iqr = quantile(x, 0.75) - quantile(x, 0.25);
        double spread = g.sd;
        if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
        if (spread <= 0.0)
            throw NumericError("kde_density: zero spread and no explicit bandwidth");
        out.bandwidth = 0.9 * spread * std::pow(n, -0.2);
    }

    const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
    const double lo = *mn - 4.0 * out.bandwidth;
    const double hi = *mx + 4.0 * out.bandwidth;
    out.grid.resize(grid_points);
    out.density.resize(grid_points);
    const double step = (hi - lo) / static_cast<double>(grid_points - 1);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double gx = lo + step * static_cast<double>(i);
        out.grid[i] = gx;
        double acc = 0.0;
        for (double v : x) acc += normal_pdf((gx - v) / out.bandwidth);
        out.density[i] = acc / (n * out.bandwidth);
    }
    return out;
}

namespace detail {

// Regularized incomplete beta by Lentz's continued fraction.
inline double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const double dm = static_cast<double>(m);
        double aa = dm * (b - dm) * x / ((qam + 2.0 * dm) * (a + 2.0 * dm));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + dm) * (qab + dm) * x / ((a + 2.0 * dm) * (qap + 2.0 * dm));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-14) break;
    }
    return h;
}

inline double inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

} // namespace detail

inline double student_t_cdf(double t, double dof) {
    if (dof <= 0.0) throw NumericError("student_t_cdf: dof must be positive");
    const double x = dof / (dof + t * t);
    const double half_tail = 0.5 * detail::inc_beta(dof / 2.0, 0.5, x);
    return t > 0.0 ? 1.0 - half_tail : half_tail;
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
};

// Welch two-sample t-test, two-sided; offered as the parametric
// alternative to the rank-sum location test.
inline TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        throw NumericError("welch_t_test: need at least 2 values per sample");
    const double m = static_cast<double>(a.size()), n = static_cast<double>(b.size());
    const double ma = mean_of(a), mb = mean_of(b);
    double va = 0.0, vb = 0.0;
    for (double v : a) va += (v - ma) * (v - ma);
    for (double v : b) vb += (v - mb) * (v - mb);
    va /= (m - 1.0);
    vb /= (n - 1.0);
    TTestResult res;
    const double se2 = va / m + vb / n;
    if (se2 <= 0.0) {
        res.p = (ma == mb) ? 1.0 : 0.0;
        res.t = (ma == mb) ? 0.0 : std::numeric_limits<double>::infinity();
        return res;
    }
    res.t = (ma - mb) / std::sqrt(se2);
    const double dof = se2 * se2 /
                       ((va / m) * (va / m) / (m - 1.0) + (vb / n) * (vb / n) / (n - 1.0));
    res.p = std::min(1.0, 2.0 * (1.0 - student_t_cdf(std::abs(res.t), dof)));
    return res;
}

// Paired t-test on differences; two-sided. A zero-variance difference
// vector yields p = 1 when centered at zero and p = 0 otherwise.
inline TTestResult paired_t_test(std::span<const double> diffs) {
    if (diffs.size() < 2) throw NumericError("paired_t_test: need at least 2 pairs");
    const double n = static_cast<double>(diffs.size());
    const double m = mean_of(diffs);
    double ss = 0.0;
    for (double v : diffs) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / (n - 1.0));
    TTestResult res;
    if (sd == 0.0) {
        res.p = (m == 0.0) ? 1.0 : 0.0;
        res.t = (m == 0.0) ? 0.0 : std::numeric_limits<double>::infinity();
        return res;
    }
    res.t = m / (sd / std::sqrt(n));
    res.p = std::min(1.0, 2.0 * (1.0 - student_t_cdf(std::abs(res.t), n - 1.0)));
    return res;
}

} // namespace mve
