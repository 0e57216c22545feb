#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mve/errors.hpp"
#include "mve/rng.hpp"

namespace mve {

// The canonical time axis is an integer month index, year*12 + (month-1).
// All lags and leads are whole months on this axis.

inline std::int64_t parse_month(const std::string& s) {
    if (s.size() != 7 || s[4] != '-')
        throw DataError("bad time value '" + s + "', expected YYYY-MM");
    for (int i : {0, 1, 2, 3, 5, 6})
        if (!std::isdigit(static_cast<unsigned char>(s[i])))
            throw DataError("bad time value '" + s + "', expected YYYY-MM");
    int year = std::stoi(s.substr(0, 4));
    int month = std::stoi(s.substr(5, 2));
    if (month < 1 || month > 12)
        throw DataError("bad month in time value '" + s + "'");
    return static_cast<std::int64_t>(year) * 12 + (month - 1);
}

inline std::string format_month(std::int64_t t) {
    if (t < 0 || t >= 10000 * 12)
        throw DataError("month index " + std::to_string(t) + " out of YYYY-MM range");
    char buf[8];
    std::snprintf(buf, sizeof buf, "%04d-%02d", static_cast<int>(t / 12),
                  static_cast<int>(t % 12) + 1);
    return buf;
}

// 12 significant digits, the panel writer's stated precision
inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// Aligned multivariate monthly series with a presence mask. Immutable by
// convention once built; cells absent in the mask hold NaN.
struct SeriesPanel {
    std::vector<std::string> variables;
    std::vector<std::int64_t> times; // strictly increasing, unit step
    std::vector<std::vector<double>> values; // [var][t]
    std::vector<std::vector<std::uint8_t>> mask; // [var][t], 1 = present

    std::size_t length() const { return times.size(); }

    std::size_t var_index(const std::string& name) const {
        for (std::size_t i = 0; i < variables.size(); ++i)
            if (variables[i] == name) return i;
        throw DataError("unknown variable '" + name + "'");
    }

    bool has_variable(const std::string& name) const {
        return std::find(variables.begin(), variables.end(), name) != variables.end();
    }

    // position of month t on the panel's axis, if covered
    std::optional<std::size_t> time_pos(std::int64_t t) const {
        if (times.empty() || t < times.front() || t > times.back()) return std::nullopt;
        return static_cast<std::size_t>(t - times.front());
    }

    bool present(std::size_t v, std::size_t pos) const { return mask[v][pos] != 0; }
    double at(std::size_t v, std::size_t pos) const { return values[v][pos]; }

    void add_variable(const std::string& name, std::vector<double> vals,
                      std::vector<std::uint8_t> m) {
        if (has_variable(name))
            throw DataError("duplicate variable '" + name + "'");
        if (vals.size() != times.size() || m.size() != times.size())
            throw DataError("variable '" + name + "' length does not match panel");
        variables.push_back(name);
        values.push_back(std::move(vals));
        mask.push_back(std::move(m));
    }

    void validate() const {
        for (std::size_t i = 0; i < variables.size(); ++i)
            for (std::size_t j = i + 1; j < variables.size(); ++j)
                if (variables[i] == variables[j])
                    throw DataError("duplicate variable '" + variables[i] + "'");
        for (std::size_t i = 1; i < times.size(); ++i) {
            if (times[i] <= times[i - 1])
                throw DataError("times not strictly increasing");
            if (times[i] != times[i - 1] + 1)
                throw DataError("non-consecutive months");
        }
        if (values.size() != variables.size() || mask.size() != variables.size())
            throw DataError("panel variable/value shape mismatch");
        for (std::size_t v = 0; v < values.size(); ++v)
            if (values[v].size() != times.size() || mask[v].size() != times.size())
                throw DataError("variable '" + variables[v] + "' length does not match panel");
    }
};

// Per-variable location/scale, population (divide-by-n) formula. Stats are
// computed on training spans only; test data reuses them unchanged.
struct StandardizationStats {
    std::vector<std::string> variables;
    std::vector<double> mean;
    std::vector<double> sd;

    std::size_t var_index(const std::string& name) const {
        for (std::size_t i = 0; i < variables.size(); ++i)
            if (variables[i] == name) return i;
        throw DataError("no standardization stats for variable '" + name + "'");
    }
};

// CSV format: header `time,<var1>,<var2>,...`, time as YYYY-MM, empty
// field = missing. Rejects non-monotone or non-consecutive months.
inline SeriesPanel load_csv(const std::string& path,
                            const std::vector<std::string>& required = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");

    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::stringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        return cells;
    };

    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "': empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split(line);
    if (header.empty() || header[0] != "time")
        throw DataError("'" + path + "': first header column must be 'time'");

    SeriesPanel panel;
    panel.variables.assign(header.begin() + 1, header.end());
    panel.values.resize(panel.variables.size());
    panel.mask.resize(panel.variables.size());

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != header.size())
            throw DataError("'" + path + "' row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));
        std::int64_t t = parse_month(cells[0]);
        if (!panel.times.empty()) {
            if (t == panel.times.back())
                throw DataError("'" + path + "' row " + std::to_string(row) +
                                ": duplicate month " + cells[0]);
            if (t < panel.times.back())
                throw DataError("'" + path + "' row " + std::to_string(row) +
                                ": non-monotone month " + cells[0]);
            if (t != panel.times.back() + 1)
                throw DataError("'" + path + "' row " + std::to_string(row) +
                                ": non-consecutive months");
        }
        panel.times.push_back(t);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            const std::string& cell = cells[c];
            if (cell.empty()) {
                panel.values[c - 1].push_back(std::numeric_limits<double>::quiet_NaN());
                panel.mask[c - 1].push_back(0);
                continue;
            }
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != cell.size())
                throw DataError("'" + path + "' row " + std::to_string(row) + " column '" +
                                header[c] + "': unparseable value '" + cell + "'");
            panel.values[c - 1].push_back(v);
            panel.mask[c - 1].push_back(1);
        }
    }
    panel.validate();
    for (const auto& name : required)
        if (!panel.has_variable(name))
            throw DataError("'" + path + "': required variable '" + name + "' missing");
    return panel;
}

inline void write_csv(const SeriesPanel& panel, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "time";
    for (const auto& v : panel.variables) out << ',' << v;
    out << '\n';
    for (std::size_t i = 0; i < panel.times.size(); ++i) {
        out << format_month(panel.times[i]);
        for (std::size_t v = 0; v < panel.variables.size(); ++v) {
            out << ',';
            if (panel.mask[v][i]) out << format_value(panel.values[v][i]);
        }
        out << '\n';
    }
}

// Stats from present cells with time <= up_to (whole panel if omitted).
inline StandardizationStats compute_stats(const SeriesPanel& panel,
                                          std::optional<std::int64_t> up_to = std::nullopt) {
    StandardizationStats stats;
    stats.variables = panel.variables;
    for (std::size_t v = 0; v < panel.variables.size(); ++v) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < panel.times.size(); ++i) {
            if (up_to && panel.times[i] > *up_to) break;
            if (!panel.mask[v][i]) continue;
            sum += panel.values[v][i];
            ++n;
        }
        if (n < 2)
            throw DataError("variable '" + panel.variables[v] +
                            "': fewer than 2 present values in training span");
        double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < panel.times.size(); ++i) {
            if (up_to && panel.times[i] > *up_to) break;
            if (!panel.mask[v][i]) continue;
            double d = panel.values[v][i] - mean;
            ss += d * d;
        }
        double sd = std::sqrt(ss / static_cast<double>(n));
        if (sd == 0.0)
            throw DataError("variable '" + panel.variables[v] + "' has zero variance");
        stats.mean.push_back(mean);
        stats.sd.push_back(sd);
    }
    return stats;
}

inline SeriesPanel apply_stats(const SeriesPanel& panel, const StandardizationStats& stats) {
    SeriesPanel out = panel;
    for (std::size_t v = 0; v < out.variables.size(); ++v) {
        std::size_t s = stats.var_index(out.variables[v]);
        for (std::size_t i = 0; i < out.times.size(); ++i)
            if (out.mask[v][i])
                out.values[v][i] = (out.values[v][i] - stats.mean[s]) / stats.sd[s];
    }
    return out;
}

// When stats are supplied (test data) they are applied unchanged;
// otherwise they are computed from this panel.
inline std::pair<SeriesPanel, StandardizationStats>
standardize(const SeriesPanel& panel,
            std::optional<StandardizationStats> stats = std::nullopt) {
    StandardizationStats s = stats ? *stats : compute_stats(panel);
    return {apply_stats(panel, s), s};
}

inline double destandardize_value(const StandardizationStats& stats,
                                  const std::string& var, double v) {
    std::size_t i = stats.var_index(var);
    return v * stats.sd[i] + stats.mean[i];
}

// Independent zero-mean Gaussian perturbations on present cells,
// deterministic given the seed. The mask is untouched.
inline SeriesPanel inject_noise(const SeriesPanel& panel, double sd, std::uint64_t seed) {
    if (sd < 0) throw ConfigError("noise sd must be >= 0, got " + std::to_string(sd));
    SeriesPanel out = panel;
    Rng rng(seed);
    for (std::size_t v = 0; v < out.variables.size(); ++v) {
        for (std::size_t i = 0; i < out.times.size(); ++i) {
            double z = rng.normal(); // drawn for every cell so the stream
                                     // does not depend on the mask
            if (sd > 0 && out.mask[v][i]) out.values[v][i] += sd * z;
        }
    }
    return out;
}

} // namespace mve
