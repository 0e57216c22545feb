#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mve/embedding.hpp"
#include "mve/errors.hpp"
#include "mve/predictor.hpp"
#include "mve/stats.hpp"
#include "mve/timeseries.hpp"

namespace mve {

// The embedding recipe shared by every inference procedure: one coordinate
// pool, one target/lead, and the view/neighbor settings applied uniformly
// to every train/query pairing so populations stay comparable.
struct EmbedSettings {
    std::vector<Coordinate> pool;
    std::string target;
    int lead = 1;
    std::size_t dim = 3;
    std::size_t n_views = 100;
    std::size_t k = 8; // default 2 (dim + 1)
    bool standardize = true;
};

struct CrossPrediction {
    PredictionSet preds; // in original (destandardized) units
    std::optional<double> correlation; // over observed query times; absent if undefined
};

// Trains on one panel, predicts another, in one call: both panels are
// mapped into the training panel's standardized frame (statistics estimated
// strictly before the origin), so systematic offsets between the panels stay
// visible to the neighbor search. Predictions and observations are mapped
// back to original units with those same statistics.
inline CrossPrediction cross_predict(const SeriesPanel& train, const SeriesPanel& query,
                                     const std::vector<View>& views, std::size_t k,
                                     std::int64_t origin, bool standardize,
                                     const PredictSpan& span = {}, int threads = 1) {
    if (views.empty()) throw ConfigError("cross_predict: no views");
    const std::string& target = views.front().target;

    CrossPrediction out;
    if (standardize) {
        auto train_stats = compute_stats(train, origin);
        SeriesPanel train_std = apply_stats(train, train_stats);
        const bool same = &train == &query;
        SeriesPanel query_std;
        if (!same) {
            // query variables outside the training schema are left as-is;
            // views never reference them
            query_std = query;
            for (std::size_t v = 0; v < query_std.variables.size(); ++v) {
                auto it = std::find(train_stats.variables.begin(), train_stats.variables.end(),
                                    query_std.variables[v]);
                if (it == train_stats.variables.end()) continue;
                const std::size_t s =
                    static_cast<std::size_t>(it - train_stats.variables.begin());
                for (std::size_t i = 0; i < query_std.times.size(); ++i)
                    if (query_std.mask[v][i])
                        query_std.values[v][i] =
                            (query_std.values[v][i] - train_stats.mean[s]) / train_stats.sd[s];
            }
        }
        // multiview_predict detects in-sample queries by panel identity
        const SeriesPanel& q = same ? train_std : query_std;
        out.preds = multiview_predict(train_std, q, views, k, origin, span, threads);

        for (std::size_t t = 0; t < out.preds.times.size(); ++t) {
            auto destd_train = [&](double& v) {
                if (std::isfinite(v)) v = destandardize_value(train_stats, target, v);
            };
            destd_train(out.preds.multiview_mean[t]);
            for (double& v : out.preds.ensemble[t]) destd_train(v);
            for (double& v : out.preds.per_view_fit[t]) destd_train(v);
            if (std::isfinite(out.preds.observed[t]))
                out.preds.observed[t] =
                    destandardize_value(train_stats, target, out.preds.observed[t]);
        }
    } else {
        out.preds = multiview_predict(train, query, views, k, origin, span, threads);
    }

    std::vector<double> p, o;
    for (std::size_t t = 0; t < out.preds.times.size(); ++t)
        if (std::isfinite(out.preds.observed[t])) {
            p.push_back(out.preds.multiview_mean[t]);
            o.push_back(out.preds.observed[t]);
        }
    if (p.size() >= 3) {
        try {
            out.correlation = predictive_correlation(p, o);
        } catch (const NumericError&) {
            // constant predictions or observations: leave correlation absent
        }
    }
    return out;
}

struct CorrelationPopulations {
    std::vector<double> sim_sim; // ordered pairs, run i trained -> run j predicted
    std::vector<double> sim_real; // run i trained -> real predicted
    std::optional<double> real_real; // real trained -> real predicted
    std::optional<double> augmented;
    std::vector<std::string> sim_sim_labels;
    std::vector<std::string> sim_real_labels;
};

enum class LocationTest { ranksum, ttest };

struct EnglobeResult {
    CorrelationPopulations pops;
    double p = 1.0; // location test, sim_sim vs sim_real
    double median_sim_sim = std::numeric_limits<double>::quiet_NaN();
    double median_sim_real = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> failures; // pairs whose sub-pipeline failed
};

// Topological englobement: if reality's attractor is englobed by the model
// family's, training on a model run should predict reality about as well
// as it predicts a different model run. The test compares the population
// of sim->sim predictive correlations against sim->real by location.
inline EnglobeResult englobement(const std::vector<SeriesPanel>& runs, const SeriesPanel& real,
                                 const EmbedSettings& es, std::int64_t origin,
                                 std::uint64_t seed, LocationTest lt = LocationTest::ranksum,
                                 int threads = 1) {
    if (runs.size() < 3) throw ConfigError("englobement: need at least 3 model runs");
    for (std::size_t r = 0; r < runs.size(); ++r)
        for (const auto& c : es.pool)
            if (!runs[r].has_variable(c.var))
                throw ConfigError("englobement: run " + std::to_string(r + 1) +
                                  " lacks variable '" + c.var + "'");
    for (const auto& c : es.pool)
        if (!real.has_variable(c.var))
            throw ConfigError("englobement: real panel lacks variable '" + c.var + "'");

    const std::vector<View> views = sample_views(es.pool, es.target, es.lead, es.dim,
                                                 es.n_views, derive_seed(seed, "views"));
    EnglobeResult out;
    auto attempt = [&](const SeriesPanel& tr, const SeriesPanel& qu, const std::string& label)
        -> std::optional<double> {
        try {
            CrossPrediction cp = cross_predict(tr, qu, views, es.k, origin, es.standardize,
                                               {}, threads);
            if (!cp.correlation)
                throw NumericError("correlation undefined over the test span");
            return *cp.correlation;
        } catch (const std::exception& e) {
            out.failures.push_back(label + ": " + e.what());
            return std::nullopt;
        }
    };

    for (std::size_t i = 0; i < runs.size(); ++i)
        for (std::size_t j = 0; j < runs.size(); ++j) {
            if (i == j) continue;
            const std::string label =
                "run" + std::to_string(i + 1) + "->run" + std::to_string(j + 1);
            if (auto c = attempt(runs[i], runs[j], label)) {
                out.pops.sim_sim.push_back(*c);
                out.pops.sim_sim_labels.push_back(label);
            }
        }
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::string label = "run" + std::to_string(i + 1) + "->real";
        if (auto c = attempt(runs[i], real, label)) {
            out.pops.sim_real.push_back(*c);
            out.pops.sim_real_labels.push_back(label);
        }
    }
    out.pops.real_real = attempt(real, real, "real->real");

    if (out.pops.sim_sim.size() < 2 || out.pops.sim_real.size() < 2) {
        std::string msg = "englobement: populations too small (sim_sim=" +
                          std::to_string(out.pops.sim_sim.size()) + ", sim_real=" +
                          std::to_string(out.pops.sim_real.size()) + ")";
        for (const auto& f : out.failures) msg += "; " + f;
        throw DataError(msg);
    }
    out.median_sim_sim = median_of(out.pops.sim_sim);
    out.median_sim_real = median_of(out.pops.sim_real);
    out.p = (lt == LocationTest::ranksum)
                ? rank_sum_test(out.pops.sim_sim, out.pops.sim_real).p
                : welch_t_test(out.pops.sim_sim, out.pops.sim_real).p;
    return out;
}

enum class Direction { first_better, second_better, none };

struct ImprovementResult {
    SignedRankResult rank;
    Direction direction = Direction::none;
    double median_abs_err_first = 0.0;
    double median_abs_err_second = 0.0;
    std::size_t n_pairs = 0;
};

// Paired per-time comparison of two prediction sets against the same
// observations: the signed-rank test runs on the differences of absolute
// errors, |obs - first| - |obs - second|. Direction reports which side had
// the smaller median absolute error, independent of significance.
inline ImprovementResult paired_improvement_test(const PredictionSet& first,
                                                 const PredictionSet& second) {
    if (first.times != second.times)
        throw DataError("paired_improvement_test: mismatched prediction times");
    std::vector<double> ea, eb, d;
    for (std::size_t t = 0; t < first.times.size(); ++t) {
        const double obs = first.observed[t];
        if (!std::isfinite(obs) || !std::isfinite(second.observed[t])) continue;
        ea.push_back(std::abs(obs - first.multiview_mean[t]));
        eb.push_back(std::abs(second.observed[t] - second.multiview_mean[t]));
        d.push_back(ea.back() - eb.back());
    }
    if (d.size() < 3)
        throw DataError("paired_improvement_test: fewer than 3 observed prediction times");
    ImprovementResult out;
    out.n_pairs = d.size();
    out.rank = signed_rank_test(d);
    out.median_abs_err_first = median_of(ea);
    out.median_abs_err_second = median_of(eb);
    if (out.median_abs_err_first < out.median_abs_err_second)
        out.direction = Direction::first_better;
    else if (out.median_abs_err_second < out.median_abs_err_first)
        out.direction = Direction::second_better;
    return out;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Empirical (alpha/2, 1-alpha/2) quantiles of a single-NN ensemble; the
// ergodic argument makes these asymptotically correct prediction bounds.
// Non-finite entries (skipped views) are ignored.
inline Interval prediction_bounds(std::span<const double> ensemble, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("prediction_bounds: alpha outside (0,1)");
    std::vector<double> vals;
    vals.reserve(ensemble.size());
    for (double v : ensemble)
        if (std::isfinite(v)) vals.push_back(v);
    const std::size_t need = static_cast<std::size_t>(std::ceil(2.0 / alpha));
    if (vals.size() < need)
        throw NumericError("prediction_bounds: need ensemble of at least " +
                           std::to_string(need) + ", have " + std::to_string(vals.size()));
    return {quantile(vals, alpha / 2.0), quantile(vals, 1.0 - alpha / 2.0)};
}

// Least-squares affine map from predictions to observations, used to
// rescale ensembles before taking bound quantiles when a model's units
// drift from the measurements'.
struct AffineCalibration {
    double intercept = 0.0;
    double slope = 1.0;

    static AffineCalibration fit(std::span<const double> pred, std::span<const double> obs) {
        if (pred.size() != obs.size()) throw NumericError("AffineCalibration: length mismatch");
        if (pred.size() < 2) throw NumericError("AffineCalibration: need at least 2 pairs");
        const double mp = mean_of(pred), mo = mean_of(obs);
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            sxx += (pred[i] - mp) * (pred[i] - mp);
            sxy += (pred[i] - mp) * (obs[i] - mo);
        }
        if (sxx == 0.0) throw NumericError("AffineCalibration: constant predictions");
        AffineCalibration c;
        c.slope = sxy / sxx;
        c.intercept = mo - c.slope * mp;
        return c;
    }

    double apply(double x) const { return intercept + slope * x; }
};

// Replication diagnostic for one prediction time: are single-NN ensembles
// from two independent view draws samples from the same distribution?
inline KsResult replication_test(std::span<const double> ensemble_a,
                                 std::span<const double> ensemble_b) {
    std::vector<double> a, b;
    for (double v : ensemble_a)
        if (std::isfinite(v)) a.push_back(v);
    for (double v : ensemble_b)
        if (std::isfinite(v)) b.push_back(v);
    if (a.size() < 10 || b.size() < 10)
        throw NumericError("replication_test: need at least 10 values per ensemble");
    return ks_two_sample_test(a, b);
}

} // namespace mve
