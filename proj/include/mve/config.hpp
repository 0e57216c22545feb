#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mve/errors.hpp"
#include "mve/inference.hpp"
#include "mve/surrogate.hpp"
#include "mve/timeseries.hpp"

namespace mve {

struct SurrogateSpec {
    DynamicsParams base;
    std::size_t family_size = 5;
    double ball_radius = 0.01;
    std::optional<std::vector<double>> real_theta; // default: base.theta
    double obs_noise_sd = 0.0;
};

struct DataSpec {
    std::vector<std::string> model_paths;
    std::optional<std::string> real_path;
    std::optional<SurrogateSpec> surrogate;
};

// The held-out span is given either as an explicit origin month or as
// "the last N months" of the real panel.
struct TestSpan {
    std::optional<std::int64_t> origin;
    std::optional<int> last_months;

    std::int64_t resolve(const SeriesPanel& panel) const {
        if (panel.times.empty()) throw DataError("test span: empty panel");
        std::int64_t o;
        if (origin) {
            o = *origin;
        } else {
            o = panel.times.back() - *last_months;
        }
        if (o < panel.times.front() || o >= panel.times.back())
            throw ConfigError("test span: origin " + format_month(o) +
                              " leaves an empty train or test side of panel " +
                              format_month(panel.times.front()) + ".." +
                              format_month(panel.times.back()));
        return o;
    }
};

struct InferenceSettings {
    LocationTest location_test = LocationTest::ranksum;
    double alpha = 0.1; // prediction-bound level
    double fdr_q = 0.05;
    bool calibrate_bounds = false;
    int mixture_components = 2;
    std::vector<int> augment_lags{0};
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "out";
    int threads = 1;
    DataSpec data;
    EmbedSettings embedding;
    TestSpan span;
    InferenceSettings inference;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& path,
                           std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw ConfigError("config: '" + path + "' must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" +
                              (path.empty() ? item.key() : path + "." + item.key()) + "'");
    }
}

template <class T>
T get_as(const json& j, const std::string& key_path) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + key_path + "'");
    }
}

inline std::string join_path(const std::string& path, const char* key) {
    return path.empty() ? key : path + "." + key;
}

inline DynamicsParams parse_dynamics(const json& j, const std::string& path) {
    reject_unknown(j, path, {"system", "theta", "dt", "steps", "burn_in", "aggregate"});
    DynamicsParams p;
    p.system = system_from_name(
        j.contains("system") ? get_as<std::string>(j.at("system"), join_path(path, "system"))
                             : "lorenz63");
    if (j.contains("theta"))
        p.theta = get_as<std::vector<double>>(j.at("theta"), join_path(path, "theta"));
    else if (p.system == SystemKind::lorenz96)
        p.theta = {8.0, 40.0};
    if (j.contains("dt")) p.dt = get_as<double>(j.at("dt"), join_path(path, "dt"));
    p.steps = j.contains("steps")
                  ? get_as<std::int64_t>(j.at("steps"), join_path(path, "steps"))
                  : 30000;
    p.burn_in = j.contains("burn_in")
                    ? get_as<std::int64_t>(j.at("burn_in"), join_path(path, "burn_in"))
                    : 2500;
    p.aggregate = j.contains("aggregate")
                      ? get_as<std::int64_t>(j.at("aggregate"), join_path(path, "aggregate"))
                      : 25;
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw ConfigError("config: '" + path + "': " + e.what());
    }
    return p;
}

inline SurrogateSpec parse_surrogate(const json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"system", "theta", "dt", "steps", "burn_in", "aggregate", "family_size",
                    "ball_radius", "real_theta", "obs_noise_sd"});
    SurrogateSpec s;
    json dyn = json::object();
    for (const char* k : {"system", "theta", "dt", "steps", "burn_in", "aggregate"})
        if (j.contains(k)) dyn[k] = j.at(k);
    s.base = parse_dynamics(dyn, path);
    if (j.contains("family_size")) {
        const auto v = get_as<std::int64_t>(j.at("family_size"), join_path(path, "family_size"));
        if (v < 1) throw ConfigError("config: '" + join_path(path, "family_size") +
                                     "' must be at least 1");
        s.family_size = static_cast<std::size_t>(v);
    }
    if (j.contains("ball_radius")) {
        s.ball_radius = get_as<double>(j.at("ball_radius"), join_path(path, "ball_radius"));
        if (s.ball_radius < 0.0)
            throw ConfigError("config: '" + join_path(path, "ball_radius") +
                              "' must be nonnegative");
    }
    if (j.contains("real_theta"))
        s.real_theta = get_as<std::vector<double>>(j.at("real_theta"),
                                                   join_path(path, "real_theta"));
    if (j.contains("obs_noise_sd")) {
        s.obs_noise_sd = get_as<double>(j.at("obs_noise_sd"), join_path(path, "obs_noise_sd"));
        if (s.obs_noise_sd < 0.0)
            throw ConfigError("config: '" + join_path(path, "obs_noise_sd") +
                              "' must be nonnegative");
    }
    return s;
}

} // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    using detail::get_as;
    using detail::join_path;
    using detail::reject_unknown;

    reject_unknown(j, "",
                   {"seed", "out", "threads", "standardize", "data", "embedding", "test_span",
                    "inference"});
    RunConfig cfg;
    if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j.at("seed"), "seed");
    if (j.contains("out")) cfg.out = get_as<std::string>(j.at("out"), "out");
    if (j.contains("threads")) {
        cfg.threads = get_as<int>(j.at("threads"), "threads");
        if (cfg.threads < 1) throw ConfigError("config: 'threads' must be at least 1");
    }
    if (j.contains("standardize"))
        cfg.embedding.standardize = get_as<bool>(j.at("standardize"), "standardize");

    if (!j.contains("data")) throw ConfigError("config: missing 'data'");
    {
        const auto& d = j.at("data");
        reject_unknown(d, "data", {"real", "models", "surrogate"});
        if (d.contains("real"))
            cfg.data.real_path = get_as<std::string>(d.at("real"), "data.real");
        if (d.contains("models"))
            cfg.data.model_paths =
                get_as<std::vector<std::string>>(d.at("models"), "data.models");
        if (d.contains("surrogate"))
            cfg.data.surrogate = detail::parse_surrogate(d.at("surrogate"), "data.surrogate");
        const bool files = cfg.data.real_path || !cfg.data.model_paths.empty();
        if (files && cfg.data.surrogate)
            throw ConfigError("config: 'data' must give files or a surrogate, not both");
        if (!files && !cfg.data.surrogate)
            throw ConfigError("config: 'data' names no source");
    }

    if (!j.contains("embedding")) throw ConfigError("config: missing 'embedding'");
    {
        const auto& e = j.at("embedding");
        reject_unknown(e, "embedding", {"target", "lead", "pool", "dim", "n_views", "k"});
        if (!e.contains("target")) throw ConfigError("config: missing 'embedding.target'");
        cfg.embedding.target = get_as<std::string>(e.at("target"), "embedding.target");
        if (e.contains("lead")) {
            cfg.embedding.lead = get_as<int>(e.at("lead"), "embedding.lead");
            if (cfg.embedding.lead < 1)
                throw ConfigError("config: 'embedding.lead' must be at least 1");
        }
        if (!e.contains("pool")) throw ConfigError("config: missing 'embedding.pool'");
        if (!e.at("pool").is_array())
            throw ConfigError("config: 'embedding.pool' must be an array");
        std::size_t gi = 0;
        for (const auto& g : e.at("pool")) {
            const std::string gpath = "embedding.pool[" + std::to_string(gi++) + "]";
            reject_unknown(g, gpath, {"var", "lags"});
            if (!g.contains("var") || !g.contains("lags"))
                throw ConfigError("config: '" + gpath + "' needs 'var' and 'lags'");
            const auto var = get_as<std::string>(g.at("var"), gpath + ".var");
            for (int lag : get_as<std::vector<int>>(g.at("lags"), gpath + ".lags")) {
                if (lag > 0)
                    throw ConfigError("config: '" + gpath + ".lags' must be <= 0, got " +
                                      std::to_string(lag));
                cfg.embedding.pool.push_back({var, lag});
            }
        }
        if (cfg.embedding.pool.empty())
            throw ConfigError("config: 'embedding.pool' is empty");
        if (e.contains("dim")) {
            const auto v = get_as<std::int64_t>(e.at("dim"), "embedding.dim");
            if (v < 1) throw ConfigError("config: 'embedding.dim' must be at least 1");
            cfg.embedding.dim = static_cast<std::size_t>(v);
        }
        if (e.contains("n_views")) {
            const auto v = get_as<std::int64_t>(e.at("n_views"), "embedding.n_views");
            if (v < 1) throw ConfigError("config: 'embedding.n_views' must be at least 1");
            cfg.embedding.n_views = static_cast<std::size_t>(v);
        }
        if (e.contains("k")) {
            const auto v = get_as<std::int64_t>(e.at("k"), "embedding.k");
            if (v < 1) throw ConfigError("config: 'embedding.k' must be at least 1");
            cfg.embedding.k = static_cast<std::size_t>(v);
        } else {
            cfg.embedding.k = 2 * (cfg.embedding.dim + 1);
        }
        if (cfg.embedding.k < cfg.embedding.dim + 2)
            throw ConfigError("config: 'embedding.k' must be at least dim + 2 = " +
                              std::to_string(cfg.embedding.dim + 2) +
                              " so the Cp variance estimate exists");
    }

    if (!j.contains("test_span")) throw ConfigError("config: missing 'test_span'");
    {
        const auto& s = j.at("test_span");
        reject_unknown(s, "test_span", {"origin", "last_months"});
        if (s.contains("origin")) {
            try {
                cfg.span.origin = parse_month(get_as<std::string>(s.at("origin"),
                                                                  "test_span.origin"));
            } catch (const DataError& e) {
                throw ConfigError(std::string("config: 'test_span.origin': ") + e.what());
            }
        }
        if (s.contains("last_months")) {
            const int v = get_as<int>(s.at("last_months"), "test_span.last_months");
            if (v < 1)
                throw ConfigError("config: 'test_span.last_months' must be at least 1");
            cfg.span.last_months = v;
        }
        if (cfg.span.origin.has_value() == cfg.span.last_months.has_value())
            throw ConfigError(
                "config: 'test_span' needs exactly one of 'origin' or 'last_months'");
    }

    if (j.contains("inference")) {
        const auto& f = j.at("inference");
        reject_unknown(f, "inference",
                       {"location_test", "alpha", "fdr_q", "calibrate_bounds",
                        "mixture_components", "augment_lags"});
        if (f.contains("location_test")) {
            const auto v = get_as<std::string>(f.at("location_test"),
                                               "inference.location_test");
            if (v == "ranksum")
                cfg.inference.location_test = LocationTest::ranksum;
            else if (v == "ttest")
                cfg.inference.location_test = LocationTest::ttest;
            else
                throw ConfigError("config: 'inference.location_test' must be "
                                  "'ranksum' or 'ttest'");
        }
        if (f.contains("alpha")) {
            cfg.inference.alpha = get_as<double>(f.at("alpha"), "inference.alpha");
            if (!(cfg.inference.alpha > 0.0 && cfg.inference.alpha < 1.0))
                throw ConfigError("config: 'inference.alpha' must lie in (0,1)");
        }
        if (f.contains("fdr_q")) {
            cfg.inference.fdr_q = get_as<double>(f.at("fdr_q"), "inference.fdr_q");
            if (!(cfg.inference.fdr_q > 0.0 && cfg.inference.fdr_q < 1.0))
                throw ConfigError("config: 'inference.fdr_q' must lie in (0,1)");
        }
        if (f.contains("calibrate_bounds"))
            cfg.inference.calibrate_bounds =
                get_as<bool>(f.at("calibrate_bounds"), "inference.calibrate_bounds");
        if (f.contains("mixture_components")) {
            cfg.inference.mixture_components =
                get_as<int>(f.at("mixture_components"), "inference.mixture_components");
            if (cfg.inference.mixture_components < 2 || cfg.inference.mixture_components > 3)
                throw ConfigError("config: 'inference.mixture_components' must be 2 or 3");
        }
        if (f.contains("augment_lags")) {
            cfg.inference.augment_lags =
                get_as<std::vector<int>>(f.at("augment_lags"), "inference.augment_lags");
            if (cfg.inference.augment_lags.empty())
                throw ConfigError("config: 'inference.augment_lags' is empty");
            for (int lag : cfg.inference.augment_lags)
                if (lag > 0)
                    throw ConfigError("config: 'inference.augment_lags' must be <= 0");
        }
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/true,
                                  /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_config(j);
}

} // namespace mve
