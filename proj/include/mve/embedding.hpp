#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mve/errors.hpp"
#include "mve/rng.hpp"
#include "mve/timeseries.hpp"

namespace mve {

// One lagged coordinate. Lags are offsets from the coordinate's own slot,
// which sits `lead` months before the target: a view with lead 18 and lag
// -6 reads the variable 24 months before the target time.
struct Coordinate {
    std::string var;
    int lag = 0; // <= 0, 0 = newest usable information

    bool operator==(const Coordinate& o) const { return var == o.var && lag == o.lag; }
    bool operator<(const Coordinate& o) const {
        return var != o.var ? var < o.var : lag < o.lag;
    }
};

// One embedding's recipe: the X coordinates plus a future target.
struct View {
    std::vector<Coordinate> coords;
    std::string target;
    int lead = 1; // months between newest coordinate and target

    void validate() const {
        if (coords.empty()) throw ConfigError("view has no coordinates");
        if (lead < 1) throw ConfigError("view lead must be >= 1, got " + std::to_string(lead));
        for (const auto& c : coords)
            if (c.lag > 0)
                throw ConfigError("coordinate lag must be <= 0, got " + std::to_string(c.lag) +
                                  " for '" + c.var + "'");
        for (std::size_t i = 0; i < coords.size(); ++i)
            for (std::size_t j = i + 1; j < coords.size(); ++j)
                if (coords[i] == coords[j])
                    throw ConfigError("duplicate coordinate (" + coords[i].var + ", " +
                                      std::to_string(coords[i].lag) + ") in view");
    }

    // months from the oldest coordinate to the target
    int window() const {
        int deepest = 0;
        for (const auto& c : coords) deepest = std::max(deepest, -c.lag);
        return lead + deepest;
    }
};

struct DelayRow {
    std::int64_t time; // target time stamp
    std::vector<double> x;
    double y;
};

// Rows of lagged coordinate vectors with target values, sorted by target
// time. Rows touching any missing cell are dropped at construction.
struct DelayMatrix {
    View view;
    std::vector<DelayRow> rows;
};

namespace detail {

// Rows for every target time where the X vector resolves; the target value
// is optional (query rows may predict an unobserved future).
inline std::vector<DelayRow> delay_rows(const SeriesPanel& panel, const View& view,
                                        bool require_target) {
    std::vector<std::size_t> coord_idx;
    coord_idx.reserve(view.coords.size());
    for (const auto& c : view.coords) coord_idx.push_back(panel.var_index(c.var));
    std::size_t target_idx = panel.var_index(view.target);

    std::vector<DelayRow> rows;
    for (std::size_t pos = 0; pos < panel.length(); ++pos) {
        std::int64_t t = panel.times[pos];
        DelayRow row;
        row.time = t;
        row.x.reserve(view.coords.size());
        bool ok = true;
        for (std::size_t ci = 0; ci < view.coords.size(); ++ci) {
            auto cpos = panel.time_pos(t - view.lead + view.coords[ci].lag);
            if (!cpos || !panel.present(coord_idx[ci], *cpos)) {
                ok = false;
                break;
            }
            row.x.push_back(panel.at(coord_idx[ci], *cpos));
        }
        if (!ok) continue;
        if (panel.present(target_idx, pos)) {
            row.y = panel.at(target_idx, pos);
        } else if (require_target) {
            continue;
        } else {
            row.y = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace detail

inline DelayMatrix build_delay_matrix(const SeriesPanel& panel, const View& view) {
    view.validate();
    DelayMatrix m;
    m.view = view;
    m.rows = detail::delay_rows(panel, view, /*require_target=*/true);
    if (m.rows.empty()) throw DataError("empty delay matrix");
    return m;
}

// How many distinct E-subsets the pool admits, saturating at a large cap.
inline std::uint64_t subset_count(std::size_t pool, std::size_t e) {
    if (e > pool) return 0;
    const std::uint64_t cap = std::uint64_t(1) << 62;
    std::uint64_t c = 1;
    for (std::size_t i = 1; i <= e; ++i) {
        if (c > cap / (pool - e + i)) return cap;
        c = c * (pool - e + i) / i;
    }
    return c;
}

// n_views uniformly random E-subsets of the pool, pairwise distinct,
// deterministic given the seed.
inline std::vector<View> sample_views(const std::vector<Coordinate>& pool,
                                      const std::string& target, int lead, std::size_t dim,
                                      std::size_t n_views, std::uint64_t seed) {
    if (dim < 1 || pool.size() < dim)
        throw ConfigError("view dimension " + std::to_string(dim) +
                          " exceeds pool size " + std::to_string(pool.size()));
    if (n_views < 1) throw ConfigError("n_views must be >= 1");
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (std::size_t j = i + 1; j < pool.size(); ++j)
            if (pool[i] == pool[j])
                throw ConfigError("duplicate coordinate (" + pool[i].var + ", " +
                                  std::to_string(pool[i].lag) + ") in pool");

    std::uint64_t total = subset_count(pool.size(), dim);
    if (n_views > total)
        throw ConfigError("requested " + std::to_string(n_views) + " views but only " +
                          std::to_string(total) + " distinct " + std::to_string(dim) +
                          "-subsets exist");

    Rng rng(seed);
    std::set<std::vector<std::size_t>> seen;
    std::vector<View> views;
    views.reserve(n_views);
    std::vector<std::size_t> idx(pool.size());
    while (views.size() < n_views) {
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < dim; ++i) { // partial Fisher-Yates
            std::size_t j = i + rng.uniform_index(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        std::vector<std::size_t> pick(idx.begin(), idx.begin() + dim);
        std::sort(pick.begin(), pick.end());
        if (!seen.insert(pick).second) continue;
        View v;
        v.target = target;
        v.lead = lead;
        for (std::size_t i : pick) v.coords.push_back(pool[i]);
        v.validate();
        views.push_back(std::move(v));
    }
    return views;
}

// Train rows have every component time stamp (coordinates and target)
// <= origin; with lag <= 0 and lead >= 1 the target is the newest
// component, so that means target time <= origin. Test rows have target
// time > origin.
inline std::pair<DelayMatrix, DelayMatrix> split_by_origin(const DelayMatrix& matrix,
                                                           std::int64_t origin) {
    DelayMatrix train, test;
    train.view = matrix.view;
    test.view = matrix.view;
    for (const auto& row : matrix.rows)
        (row.time <= origin ? train : test).rows.push_back(row);
    if (train.rows.empty()) throw DataError("empty training split at origin " +
                                            std::to_string(origin));
    if (test.rows.empty()) throw DataError("empty test split at origin " +
                                           std::to_string(origin));
    return {std::move(train), std::move(test)};
}

// Debug export, `target_time,x1..xE,y`.
inline void write_delay_matrix_csv(const DelayMatrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "target_time";
    for (std::size_t i = 1; i <= m.view.coords.size(); ++i) out << ",x" << i;
    out << ",y\n";
    for (const auto& row : m.rows) {
        out << format_month(row.time);
        for (double v : row.x) out << ',' << format_value(v);
        out << ',' << format_value(row.y) << '\n';
    }
}

} // namespace mve
