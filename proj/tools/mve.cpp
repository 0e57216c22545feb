// mve: multiview embedding forecaster and inference toolkit.
//
// One JSON config drives every subcommand; --seed/--out/--threads override
// the corresponding config scalars. Exit codes: 0 success, 2 configuration
// error, 3 data error, 4 numeric error.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mve/config.hpp"
#include "mve/pipeline.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
};

mve::RunConfig load(const CliOptions& opt) {
    mve::RunConfig cfg = mve::load_config(opt.config_path);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.out) cfg.out = *opt.out;
    if (opt.threads) {
        if (*opt.threads < 1) throw mve::ConfigError("--threads must be at least 1");
        cfg.threads = *opt.threads;
    }
    return cfg;
}

void add_common(CLI::App* sub, CliOptions& opt) {
    sub->add_option("--config", opt.config_path, "run configuration (JSON)")
        ->required();
    sub->add_option("--seed", opt.seed, "override config seed");
    sub->add_option("--out", opt.out, "override output directory");
    sub->add_option("--threads", opt.threads, "override worker thread count");
}

std::string fmt_opt(const std::optional<double>& v) {
    return v ? mve::format_value(*v) : std::string("n/a");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"predictive multiview embedding"};
    app.require_subcommand(1);

    CliOptions opt;
    auto* sim = app.add_subcommand("simulate", "generate surrogate runs and a real panel");
    auto* pred = app.add_subcommand("predict", "multiview forecast of the held-out span");
    auto* eng = app.add_subcommand("englobe", "topological englobement test");
    auto* bnd = app.add_subcommand("bounds", "prediction bounds with manifold diagnostics");
    auto* cmp = app.add_subcommand("compare", "empirical vs model-augmented prediction");
    auto* val = app.add_subcommand("validate", "parse and sanity-check a config");
    for (auto* sub : {sim, pred, eng, bnd, cmp, val}) add_common(sub, opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const mve::RunConfig cfg = load(opt);
        if (sim->parsed()) {
            const auto files = mve::cmd_simulate(cfg);
            std::printf("simulate: wrote %zu files to %s\n", files.size(), cfg.out.c_str());
        } else if (pred->parsed()) {
            const auto res = mve::cmd_predict(cfg);
            std::printf("predict: origin %s, %zu forecasts, correlation %s\n",
                        mve::format_month(res.origin).c_str(), res.preds.times.size(),
                        fmt_opt(res.correlation).c_str());
        } else if (eng->parsed()) {
            const auto res = mve::cmd_englobe(cfg);
            std::printf("englobe: p = %s (sim-sim median %s, sim-real median %s, "
                        "%zu failures)\n",
                        mve::format_value(res.p).c_str(),
                        mve::format_value(res.median_sim_sim).c_str(),
                        mve::format_value(res.median_sim_real).c_str(),
                        res.failures.size());
        } else if (bnd->parsed()) {
            const auto res = mve::cmd_bounds(cfg);
            std::size_t covered = 0, scored = 0;
            for (std::size_t t = 0; t < res.preds.times.size(); ++t) {
                const double obs = res.preds.observed[t];
                if (!std::isfinite(obs)) continue;
                ++scored;
                if (obs >= res.bounds[t].lo && obs <= res.bounds[t].hi) ++covered;
            }
            std::printf("bounds: %zu forecasts, %zu/%zu observed inside\n",
                        res.preds.times.size(), covered, scored);
        } else if (cmp->parsed()) {
            const auto res = mve::cmd_compare(cfg);
            std::printf("compare: p = %s, direction %s (empirical corr %s, "
                        "augmented corr %s)\n",
                        mve::format_value(res.result.rank.p).c_str(), res.direction.c_str(),
                        fmt_opt(res.corr_empirical).c_str(),
                        fmt_opt(res.corr_augmented).c_str());
        } else if (val->parsed()) {
            mve::cmd_validate(cfg);
            std::printf("validate: ok\n");
        }
    } catch (const mve::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const mve::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const mve::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
