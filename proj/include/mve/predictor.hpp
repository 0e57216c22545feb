#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "mve/embedding.hpp"
#include "mve/errors.hpp"
#include "mve/lars.hpp"
#include "mve/parallel.hpp"
#include "mve/timeseries.hpp"

namespace mve {

struct NeighborSet {
    std::vector<std::size_t> indices; // train-row indices, nearest first
    std::vector<double> distances; // ascending
};

// Exact brute-force k nearest neighbors by Euclidean distance. Distance
// ties break toward the earlier target time stamp (rows are stored in
// time order, so the row index decides).
inline NeighborSet knn(const DelayMatrix& train, std::span<const double> query_x,
                       std::size_t k) {
    if (k > train.rows.size())
        throw NumericError("knn: k=" + std::to_string(k) + " exceeds " +
                           std::to_string(train.rows.size()) + " training rows");
    if (!train.rows.empty() && query_x.size() != train.rows.front().x.size())
        throw NumericError("knn: query dimension mismatch");

    std::vector<std::pair<double, std::size_t>> order(train.rows.size());
    for (std::size_t i = 0; i < train.rows.size(); ++i) {
        double d2 = 0.0;
        const auto& x = train.rows[i].x;
        for (std::size_t j = 0; j < x.size(); ++j) {
            double d = x[j] - query_x[j];
            d2 += d * d;
        }
        order[i] = {d2, i};
    }
    std::partial_sort(order.begin(), order.begin() + k, order.end());

    NeighborSet ns;
    ns.indices.reserve(k);
    ns.distances.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        ns.indices.push_back(order[i].second);
        ns.distances.push_back(std::sqrt(order[i].first));
    }
    return ns;
}

// The target value of the single nearest neighbor; always an element of
// the training Y multiset, never an interpolation.
inline double single_nn_predict(const DelayMatrix& train, std::span<const double> query_x) {
    if (train.rows.empty()) throw NumericError("single_nn_predict: empty training matrix");
    return train.rows[knn(train, query_x, 1).indices[0]].y;
}

// Local linear model on the k nearest neighbors: LARS path on their (X, Y)
// with the step chosen by Mallows' Cp, evaluated at the query point.
inline double local_linear_predict(const DelayMatrix& train, std::span<const double> query_x,
                                   std::size_t k) {
    const std::size_t dim = query_x.size();
    if (k < dim + 2)
        throw NumericError("local_linear_predict: k=" + std::to_string(k) +
                           " below dim+2=" + std::to_string(dim + 2));
    NeighborSet ns = knn(train, query_x, k);

    Eigen::MatrixXd X(k, dim);
    Eigen::VectorXd y(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto& row = train.rows[ns.indices[i]];
        for (std::size_t j = 0; j < dim; ++j) X(i, j) = row.x[j];
        y[i] = row.y;
    }
    CpSelection sel = cp_select(lars_path(X, y), X, y);
    double pred = sel.intercept;
    for (std::size_t j = 0; j < dim; ++j) pred += sel.beta[j] * query_x[j];
    return pred;
}

// Everything downstream inference consumes: per-time multiview mean,
// per-view single-NN ensemble and local-linear fits (NaN where a view was
// skipped), and observed targets where available.
struct PredictionSet {
    std::vector<std::int64_t> times;
    std::vector<double> multiview_mean;
    std::vector<std::vector<double>> ensemble; // [time][view] single-NN
    std::vector<std::vector<double>> per_view_fit; // [time][view] local linear
    std::vector<double> observed; // NaN when unobserved
    std::vector<int> views_used;
};

// Query target times default to the test span (target > origin); a wider
// span is used when building projection series over whole panels.
struct PredictSpan {
    std::optional<std::int64_t> from; // default origin + 1
    std::optional<std::int64_t> to; // inclusive
};

// Multiview prediction: per view, a local linear fit and a single-NN value
// from that view's training matrix; the multiview mean averages the local
// linear fits over usable views. Training rows keep every component time
// stamp <= origin. When train and query are the same panel, rows within
// one full lag window of the query time are excluded from the neighbor
// search so in-sample diagnostics cannot match a row against itself.
inline PredictionSet multiview_predict(const SeriesPanel& train_panel,
                                       const SeriesPanel& query_panel,
                                       const std::vector<View>& views, std::size_t k,
                                       std::int64_t origin, const PredictSpan& span = {},
                                       int threads = 1) {
    if (views.empty()) throw ConfigError("multiview_predict: no views");
    for (const auto& v : views) {
        v.validate();
        if (v.target != views.front().target || v.lead != views.front().lead)
            throw ConfigError("multiview_predict: views must share target and lead");
    }
    const bool same_panel = &train_panel == &query_panel;
    const std::int64_t q_from = span.from ? *span.from : origin + 1;
    const std::int64_t q_to = span.to ? *span.to : std::numeric_limits<std::int64_t>::max();

    struct ViewData {
        DelayMatrix train;
        std::map<std::int64_t, std::vector<double>> query; // time -> X
    };
    std::vector<ViewData> data(views.size());
    std::vector<std::int64_t> times;
    for (std::size_t v = 0; v < views.size(); ++v) {
        data[v].train.view = views[v];
        for (auto& row : detail::delay_rows(train_panel, views[v], /*require_target=*/true))
            if (row.time <= origin) data[v].train.rows.push_back(std::move(row));
        for (auto& row : detail::delay_rows(query_panel, views[v], /*require_target=*/false))
            if (row.time >= q_from && row.time <= q_to) {
                times.push_back(row.time);
                data[v].query.emplace(row.time, std::move(row.x));
            }
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    if (times.empty()) throw DataError("multiview_predict: no resolvable query times");

    const std::size_t target_idx = query_panel.var_index(views.front().target);

    PredictionSet out;
    out.times = times;
    out.multiview_mean.assign(times.size(), 0.0);
    out.observed.assign(times.size(), std::numeric_limits<double>::quiet_NaN());
    out.views_used.assign(times.size(), 0);
    out.ensemble.assign(times.size(),
                        std::vector<double>(views.size(), std::numeric_limits<double>::quiet_NaN()));
    out.per_view_fit.assign(times.size(),
                            std::vector<double>(views.size(), std::numeric_limits<double>::quiet_NaN()));

    parallel_for(times.size(), threads, [&](std::size_t ti) {
        const std::int64_t t = times[ti];
        if (auto pos = query_panel.time_pos(t); pos && query_panel.present(target_idx, *pos))
            out.observed[ti] = query_panel.at(target_idx, *pos);

        double sum = 0.0;
        int used = 0;
        for (std::size_t v = 0; v < views.size(); ++v) {
            auto qit = data[v].query.find(t);
            if (qit == data[v].query.end()) continue;

            const DelayMatrix* train = &data[v].train;
            DelayMatrix scratch;
            if (same_panel) {
                scratch.view = views[v];
                const int w = views[v].window();
                for (const auto& row : data[v].train.rows)
                    if (std::llabs(row.time - t) > w) scratch.rows.push_back(row);
                train = &scratch;
            }
            if (train->rows.size() < k) continue; // skipped view, counted below

            double fit = local_linear_predict(*train, qit->second, k);
            out.per_view_fit[ti][v] = fit;
            out.ensemble[ti][v] = single_nn_predict(*train, qit->second);
            sum += fit;
            ++used;
        }
        if (used == 0)
            throw DataError("multiview_predict: no usable views at time " + format_month(t));
        out.multiview_mean[ti] = sum / used;
        out.views_used[ti] = used;
    });
    return out;
}

// Pearson correlation between predictions and observations, the skill
// measure everywhere in this library.
inline double predictive_correlation(std::span<const double> pred,
                                     std::span<const double> obs) {
    if (pred.size() != obs.size())
        throw NumericError("predictive_correlation: length mismatch");
    const std::size_t n = pred.size();
    if (n < 3) throw NumericError("predictive_correlation: need at least 3 pairs");
    double mp = 0.0, mo = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mp += pred[i];
        mo += obs[i];
    }
    mp /= n;
    mo /= n;
    double spo = 0.0, spp = 0.0, soo = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        spo += (pred[i] - mp) * (obs[i] - mo);
        spp += (pred[i] - mp) * (pred[i] - mp);
        soo += (obs[i] - mo) * (obs[i] - mo);
    }
    // tolerance guard: round-off on an exactly constant series must not
    // produce a "defined" correlation
    const double tp = 1e-12 * (1.0 + std::abs(mp));
    const double to = 1e-12 * (1.0 + std::abs(mo));
    if (spp <= n * tp * tp || soo <= n * to * to)
        throw NumericError("predictive_correlation: undefined correlation (constant input)");
    return spo / std::sqrt(spp * soo);
}

// Extends a coordinate pool with lags of a derived series (typically the
// projection of real data onto a model run); downstream machinery is
// unchanged.
inline std::vector<Coordinate> augment_pool(const std::vector<Coordinate>& pool,
                                            const std::string& projection,
                                            const std::vector<int>& lags) {
    std::vector<Coordinate> out = pool;
    for (int lag : lags) {
        Coordinate c{projection, lag};
        if (std::find(out.begin(), out.end(), c) != out.end())
            throw ConfigError("augment_pool: duplicate coordinate (" + projection + ", " +
                              std::to_string(lag) + ")");
        out.push_back(c);
    }
    return out;
}

} // namespace mve
