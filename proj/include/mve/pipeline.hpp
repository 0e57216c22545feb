#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mve/config.hpp"
#include "mve/embedding.hpp"
#include "mve/errors.hpp"
#include "mve/inference.hpp"
#include "mve/mixture.hpp"
#include "mve/parallel.hpp"
#include "mve/predictor.hpp"
#include "mve/stats.hpp"
#include "mve/surrogate.hpp"
#include "mve/timeseries.hpp"

namespace mve {

struct ResolvedData {
    std::vector<SeriesPanel> models;
    std::optional<SeriesPanel> real;
    std::optional<Experiment> experiment; // set when surrogate-generated
};

// Materializes the configured data source: CSV files are loaded as-is,
// a surrogate spec is expanded into a theta-ball family plus a noisy
// "real" system, all seeded from the master seed.
inline ResolvedData resolve_data(const RunConfig& cfg) {
    ResolvedData out;
    if (cfg.data.surrogate) {
        const SurrogateSpec& s = *cfg.data.surrogate;
        DynamicsParams real_params = s.base;
        if (s.real_theta) real_params.theta = *s.real_theta;
        real_params.validate();
        const auto family = sample_theta_ball(s.base, s.ball_radius, s.family_size,
                                              derive_seed(cfg.seed, "theta"));
        out.experiment = make_experiment(family, real_params, s.obs_noise_sd, cfg.seed);
        out.models = out.experiment->models;
        out.real = out.experiment->real;
        return out;
    }
    for (const auto& p : cfg.data.model_paths) out.models.push_back(load_csv(p));
    if (cfg.data.real_path) out.real = load_csv(*cfg.data.real_path);
    return out;
}

inline const SeriesPanel& require_real(const ResolvedData& data) {
    if (!data.real) throw ConfigError("this command needs a real panel (data.real "
                                      "or data.surrogate)");
    return *data.real;
}

namespace detail {

inline std::filesystem::path out_path(const RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out);
    return std::filesystem::path(cfg.out) / name;
}

inline std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
    const auto p = out_path(cfg, name);
    std::ofstream out(p);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    return out;
}

inline std::string csv_value(double v) {
    return std::isfinite(v) ? format_value(v) : std::string();
}

inline void write_predictions_csv(const RunConfig& cfg, const std::string& name,
                                  const PredictionSet& preds) {
    auto out = open_out(cfg, name);
    out << "time,multiview_mean,observed,n_views_used\n";
    for (std::size_t t = 0; t < preds.times.size(); ++t)
        out << format_month(preds.times[t]) << ',' << csv_value(preds.multiview_mean[t])
            << ',' << csv_value(preds.observed[t]) << ',' << preds.views_used[t] << '\n';
}

inline void write_ensemble_csv(const RunConfig& cfg, const std::string& name,
                               const PredictionSet& preds) {
    auto out = open_out(cfg, name);
    out << "time,view_id,single_nn,local_linear\n";
    for (std::size_t t = 0; t < preds.times.size(); ++t)
        for (std::size_t v = 0; v < preds.ensemble[t].size(); ++v)
            out << format_month(preds.times[t]) << ',' << (v + 1) << ','
                << csv_value(preds.ensemble[t][v]) << ','
                << csv_value(preds.per_view_fit[t][v]) << '\n';
}

inline nlohmann::json theta_json(const DynamicsParams& p) {
    nlohmann::json j;
    j["system"] = system_name(p.system);
    j["theta"] = p.theta;
    j["dt"] = p.dt;
    j["steps"] = p.steps;
    j["burn_in"] = p.burn_in;
    j["aggregate"] = p.aggregate;
    return j;
}

} // namespace detail

// simulate: expand the surrogate spec and write one CSV per run plus a
// manifest describing exactly how each panel was produced.
inline std::vector<std::string> cmd_simulate(const RunConfig& cfg) {
    if (!cfg.data.surrogate)
        throw ConfigError("simulate needs 'data.surrogate'");
    ResolvedData data = resolve_data(cfg);
    const Experiment& exp = *data.experiment;

    std::vector<std::string> files;
    nlohmann::json manifest;
    manifest["seed"] = cfg.seed;
    manifest["obs_noise_sd"] = cfg.data.surrogate->obs_noise_sd;
    manifest["ball_radius"] = cfg.data.surrogate->ball_radius;
    manifest["x0"] = exp.x0;
    manifest["runs"] = nlohmann::json::array();
    for (std::size_t i = 0; i < exp.models.size(); ++i) {
        const std::string name = "run" + std::to_string(i + 1) + ".csv";
        write_csv(exp.models[i], detail::out_path(cfg, name).string());
        nlohmann::json r = detail::theta_json(exp.family[i]);
        r["file"] = name;
        manifest["runs"].push_back(r);
        files.push_back(name);
    }
    write_csv(exp.real, detail::out_path(cfg, "real.csv").string());
    nlohmann::json r = detail::theta_json(exp.real_params);
    r["file"] = "real.csv";
    manifest["real"] = r;
    files.push_back("real.csv");

    auto out = detail::open_out(cfg, "manifest.json");
    out << manifest.dump(2) << '\n';
    files.push_back("manifest.json");
    return files;
}

struct PredictOutput {
    PredictionSet preds;
    std::optional<double> correlation;
    std::int64_t origin = 0;
};

// predict: multiview prediction of the real panel's held-out span from its
// own past; writes predictions.csv and ensemble.csv.
inline PredictOutput cmd_predict(const RunConfig& cfg) {
    ResolvedData data = resolve_data(cfg);
    const SeriesPanel& real = require_real(data);
    const EmbedSettings& es = cfg.embedding;
    PredictOutput out;
    out.origin = cfg.span.resolve(real);

    const auto views = sample_views(es.pool, es.target, es.lead, es.dim, es.n_views,
                                    derive_seed(cfg.seed, "views"));
    CrossPrediction cp = cross_predict(real, real, views, es.k, out.origin, es.standardize,
                                       {}, cfg.threads);
    out.preds = std::move(cp.preds);
    out.correlation = cp.correlation;

    detail::write_predictions_csv(cfg, "predictions.csv", out.preds);
    detail::write_ensemble_csv(cfg, "ensemble.csv", out.preds);
    return out;
}

// englobe: correlation populations and the location test; writes
// populations.csv (one labeled correlation per row) and englobe.json.
inline EnglobeResult cmd_englobe(const RunConfig& cfg) {
    ResolvedData data = resolve_data(cfg);
    const SeriesPanel& real = require_real(data);
    if (data.models.size() < 3)
        throw ConfigError("englobe needs at least 3 model runs, have " +
                          std::to_string(data.models.size()));
    const std::int64_t origin = cfg.span.resolve(real);
    EnglobeResult res = englobement(data.models, real, cfg.embedding, origin, cfg.seed,
                                    cfg.inference.location_test, cfg.threads);

    auto pops = detail::open_out(cfg, "populations.csv");
    pops << "population,correlation\n";
    for (double c : res.pops.sim_sim) pops << "sim_sim," << format_value(c) << '\n';
    for (double c : res.pops.sim_real) pops << "sim_real," << format_value(c) << '\n';
    if (res.pops.real_real) pops << "real_real," << format_value(*res.pops.real_real) << '\n';

    nlohmann::json j;
    j["p_value"] = res.p;
    j["location_test"] =
        cfg.inference.location_test == LocationTest::ranksum ? "ranksum" : "ttest";
    j["median_sim_sim"] = res.median_sim_sim;
    j["median_sim_real"] = res.median_sim_real;
    j["n_sim_sim"] = res.pops.sim_sim.size();
    j["n_sim_real"] = res.pops.sim_real.size();
    if (res.pops.real_real) j["real_real"] = *res.pops.real_real;
    j["pairs_sim_sim"] = res.pops.sim_sim_labels;
    j["pairs_sim_real"] = res.pops.sim_real_labels;
    j["failures"] = res.failures;
    auto out = detail::open_out(cfg, "englobe.json");
    out << j.dump(2) << '\n';
    return res;
}

struct BoundsOutput {
    PredictionSet preds; // from the primary view set
    std::vector<Interval> bounds;
    std::vector<double> rep_p, ks_p, mix_p;
    std::vector<bool> rep_flag, ks_flag, mix_flag;
    std::optional<AffineCalibration> calibration;
    std::int64_t origin = 0;
};

// bounds: empirical prediction bounds from the single-NN ensemble plus the
// three per-time manifold diagnostics (replication KS across an independent
// view draw, Durbin-KS normality of the ensemble, mixture LRT), each
// screened by BH-FDR. Writes bounds.csv, diagnostics.csv and one
// density_<time>.csv per prediction time.
inline BoundsOutput cmd_bounds(const RunConfig& cfg) {
    ResolvedData data = resolve_data(cfg);
    const SeriesPanel& real = require_real(data);
    const EmbedSettings& es = cfg.embedding;
    BoundsOutput out;
    out.origin = cfg.span.resolve(real);

    // one draw of 2 n_views distinct views, split into two disjoint sets:
    // the first drives predictions and bounds, the second only replication
    const auto all_views = sample_views(es.pool, es.target, es.lead, es.dim, 2 * es.n_views,
                                        derive_seed(cfg.seed, "views"));
    const std::vector<View> views_a(all_views.begin(),
                                    all_views.begin() + static_cast<std::ptrdiff_t>(es.n_views));
    const std::vector<View> views_b(all_views.begin() + static_cast<std::ptrdiff_t>(es.n_views),
                                    all_views.end());

    CrossPrediction cp_a = cross_predict(real, real, views_a, es.k, out.origin,
                                         es.standardize, {}, cfg.threads);
    CrossPrediction cp_b = cross_predict(real, real, views_b, es.k, out.origin,
                                         es.standardize, {}, cfg.threads);
    out.preds = std::move(cp_a.preds);
    const PredictionSet& preds_b = cp_b.preds;
    if (out.preds.times != preds_b.times)
        throw DataError("cmd_bounds: view sets resolved different prediction times");
    const std::size_t nt = out.preds.times.size();

    if (cfg.inference.calibrate_bounds) {
        // in-sample pairs strictly before the origin
        PredictSpan train_span;
        train_span.from = real.times.front();
        train_span.to = out.origin;
        CrossPrediction cal = cross_predict(real, real, views_a, es.k, out.origin,
                                            es.standardize, train_span, cfg.threads);
        std::vector<double> p, o;
        for (std::size_t t = 0; t < cal.preds.times.size(); ++t)
            if (std::isfinite(cal.preds.observed[t])) {
                p.push_back(cal.preds.multiview_mean[t]);
                o.push_back(cal.preds.observed[t]);
            }
        out.calibration = AffineCalibration::fit(p, o);
    }

    out.bounds.resize(nt);
    out.rep_p.resize(nt);
    out.ks_p.resize(nt);
    out.mix_p.resize(nt);
    std::vector<Kde> kdes(nt);
    std::vector<GaussianFit> gaussians(nt);
    parallel_for(nt, cfg.threads, [&](std::size_t t) {
        const auto finite = [&](const std::vector<double>& raw) {
            std::vector<double> v;
            for (double x : raw)
                if (std::isfinite(x)) v.push_back(out.calibration ? out.calibration->apply(x) : x);
            return v;
        };
        const std::vector<double> ens = finite(out.preds.ensemble[t]);
        const std::vector<double> ens_b = finite(preds_b.ensemble[t]);
        out.bounds[t] = prediction_bounds(ens, cfg.inference.alpha);
        // single-NN ensembles collapse when every view agrees on the nearest
        // neighbor; a flat (or sub-minimum) sample carries no evidence
        // against the fitted-Gaussian or one-component nulls, so those
        // diagnostics report p = 1 and the density falls back to a narrow
        // kernel at the common value
        const auto [mn, mx] = std::minmax_element(ens.begin(), ens.end());
        const bool flat = !(*mx > *mn);
        out.rep_p[t] = ens.size() >= 10 && ens_b.size() >= 10
                           ? replication_test(ens, ens_b).p
                           : 1.0;
        out.ks_p[t] =
            flat || ens.size() < 5
                ? 1.0
                : ks_normal_fit_test(ens, derive_seed(cfg.seed, "ks", static_cast<std::uint64_t>(t)))
                      .p;
        out.mix_p[t] =
            flat || ens.size() < 10
                ? 1.0
                : mixture_lrt_test(ens, cfg.inference.mixture_components,
                                   derive_seed(cfg.seed, "mix", static_cast<std::uint64_t>(t)))
                      .p;
        if (flat) {
            const double width = 1e-3 * (1.0 + std::abs(ens.front()));
            kdes[t] = kde_density(ens, width);
            gaussians[t] = GaussianFit{ens.front(), width};
        } else {
            kdes[t] = kde_density(ens);
            gaussians[t] = gaussian_fit(ens);
        }
    });
    out.rep_flag = bh_reject(out.rep_p, cfg.inference.fdr_q);
    out.ks_flag = bh_reject(out.ks_p, cfg.inference.fdr_q);
    out.mix_flag = bh_reject(out.mix_p, cfg.inference.fdr_q);

    auto bounds_csv = detail::open_out(cfg, "bounds.csv");
    bounds_csv << "time,lo,hi,observed\n";
    for (std::size_t t = 0; t < nt; ++t)
        bounds_csv << format_month(out.preds.times[t]) << ',' << format_value(out.bounds[t].lo)
                   << ',' << format_value(out.bounds[t].hi) << ','
                   << detail::csv_value(out.preds.observed[t]) << '\n';

    auto diag = detail::open_out(cfg, "diagnostics.csv");
    diag << "time,rep_p,ks_p,mix_p,rep_flag,ks_flag,mix_flag\n";
    for (std::size_t t = 0; t < nt; ++t)
        diag << format_month(out.preds.times[t]) << ',' << format_value(out.rep_p[t]) << ','
             << format_value(out.ks_p[t]) << ',' << format_value(out.mix_p[t]) << ','
             << (out.rep_flag[t] ? 1 : 0) << ',' << (out.ks_flag[t] ? 1 : 0) << ','
             << (out.mix_flag[t] ? 1 : 0) << '\n';

    for (std::size_t t = 0; t < nt; ++t) {
        auto dens = detail::open_out(cfg, "density_" + format_month(out.preds.times[t]) +
                                              ".csv");
        dens << "x,kde,gaussian\n";
        for (std::size_t i = 0; i < kdes[t].grid.size(); ++i) {
            const double x = kdes[t].grid[i];
            const double g =
                normal_pdf((x - gaussians[t].mean) / gaussians[t].sd) / gaussians[t].sd;
            dens << format_value(x) << ',' << format_value(kdes[t].density[i]) << ','
                 << format_value(g) << '\n';
        }
    }

    if (preds_b.times != out.preds.times)
        throw DataError("cmd_bounds: replication times diverged");
    detail::write_predictions_csv(cfg, "predictions.csv", out.preds);
    detail::write_ensemble_csv(cfg, "ensemble.csv", out.preds);
    return out;
}

struct CompareOutput {
    ImprovementResult result;
    std::optional<double> corr_empirical;
    std::optional<double> corr_augmented;
    std::int64_t origin = 0;
    std::string direction; // "empirical_better", "augmented_better", "none"
};

// compare: the augmentation test. Arm one predicts the real panel from the
// empirical pool alone; arm two first projects the real series onto each
// model run (training a multiview predictor on the run and evaluating it
// on real coordinates), registers each projection as a synthetic variable
// indexed by issuance time (so a lag-0 coordinate carries the model's
// forecast of the target time), and extends the pool with it. The arms
// share the empirical views; the augmented arm adds views that touch a
// projection coordinate, so the paired signed-rank test on per-time
// absolute errors isolates what the projections contribute (identical
// pools degenerate to p = 1).
inline CompareOutput cmd_compare(const RunConfig& cfg) {
    ResolvedData data = resolve_data(cfg);
    const SeriesPanel& real = require_real(data);
    if (data.models.empty())
        throw ConfigError("compare needs at least one model run as augmentation source");
    const EmbedSettings& es = cfg.embedding;
    CompareOutput out;
    out.origin = cfg.span.resolve(real);

    const auto views_e = sample_views(es.pool, es.target, es.lead, es.dim, es.n_views,
                                      derive_seed(cfg.seed, "views-empirical"));
    CrossPrediction emp = cross_predict(real, real, views_e, es.k, out.origin,
                                        es.standardize, {}, cfg.threads);
    out.corr_empirical = emp.correlation;

    SeriesPanel augmented = real;
    std::vector<Coordinate> aug_pool = es.pool;
    std::vector<std::string> proj_names;
    for (std::size_t m = 0; m < data.models.size(); ++m) {
        const SeriesPanel& run = data.models[m];
        const auto views_p =
            sample_views(es.pool, es.target, es.lead, es.dim, es.n_views,
                         derive_seed(cfg.seed, "views-projection", m));
        PredictSpan whole;
        whole.from = real.times.front();
        whole.to = real.times.back() + es.lead;
        CrossPrediction proj = cross_predict(run, real, views_p, es.k, run.times.back(),
                                             es.standardize, whole, cfg.threads);
        // index by issuance time: value at s is the forecast of target s + lead
        std::vector<double> vals(real.length(), 0.0);
        std::vector<std::uint8_t> mask(real.length(), 0);
        for (std::size_t t = 0; t < proj.preds.times.size(); ++t) {
            const std::int64_t s = proj.preds.times[t] - es.lead;
            if (auto pos = real.time_pos(s); pos && std::isfinite(proj.preds.multiview_mean[t])) {
                vals[*pos] = proj.preds.multiview_mean[t];
                mask[*pos] = 1;
            }
        }
        const std::string name = "proj" + std::to_string(m + 1);
        augmented.add_variable(name, std::move(vals), std::move(mask));
        aug_pool = augment_pool(aug_pool, name, cfg.inference.augment_lags);
        proj_names.push_back(name);
    }

    std::vector<View> views_a = views_e;
    const std::uint64_t proj_combos =
        subset_count(aug_pool.size(), es.dim) - subset_count(es.pool.size(), es.dim);
    const std::size_t extra =
        static_cast<std::size_t>(std::min<std::uint64_t>(es.n_views, proj_combos));
    if (extra > 0) {
        const auto touches_projection = [&](const View& v) {
            for (const auto& c : v.coords)
                if (std::find(proj_names.begin(), proj_names.end(), c.var) != proj_names.end())
                    return true;
            return false;
        };
        // enlarging the request extends the same deterministic draw sequence,
        // so growing it until enough views touch a projection stays stable
        const std::uint64_t total = subset_count(aug_pool.size(), es.dim);
        std::uint64_t request = std::min<std::uint64_t>(total, es.n_views * 4);
        for (;;) {
            const auto cand =
                sample_views(aug_pool, es.target, es.lead, es.dim,
                             static_cast<std::size_t>(request),
                             derive_seed(cfg.seed, "views-augmented"));
            std::vector<View> kept;
            for (const auto& v : cand)
                if (touches_projection(v)) kept.push_back(v);
            if (kept.size() >= extra || request >= total) {
                kept.resize(std::min(kept.size(), extra));
                views_a.insert(views_a.end(), kept.begin(), kept.end());
                break;
            }
            request = std::min(total, request * 2);
        }
    }
    CrossPrediction aug = cross_predict(augmented, augmented, views_a, es.k, out.origin,
                                        es.standardize, {}, cfg.threads);
    out.corr_augmented = aug.correlation;

    out.result = paired_improvement_test(emp.preds, aug.preds);
    out.direction = out.result.direction == Direction::first_better ? "empirical_better"
                    : out.result.direction == Direction::second_better ? "augmented_better"
                                                                       : "none";

    detail::write_predictions_csv(cfg, "predictions_empirical.csv", emp.preds);
    detail::write_predictions_csv(cfg, "predictions_augmented.csv", aug.preds);
    nlohmann::json j;
    j["p_value"] = out.result.rank.p;
    j["direction"] = out.direction;
    j["median_abs_err_empirical"] = out.result.median_abs_err_first;
    j["median_abs_err_augmented"] = out.result.median_abs_err_second;
    j["n_pairs"] = out.result.n_pairs;
    j["n_nonzero_diffs"] = out.result.rank.n_used;
    if (out.corr_empirical) j["corr_empirical"] = *out.corr_empirical;
    if (out.corr_augmented) j["corr_augmented"] = *out.corr_augmented;
    auto js = detail::open_out(cfg, "compare.json");
    js << j.dump(2) << '\n';
    return out;
}

// validate: config lint. Checks file existence for CSV sources; full
// semantic errors (missing variables, empty matrices) surface when the
// pipeline actually runs.
inline void cmd_validate(const RunConfig& cfg) {
    for (const auto& p : cfg.data.model_paths)
        if (!std::filesystem::exists(p)) throw DataError("missing model file '" + p + "'");
    if (cfg.data.real_path && !std::filesystem::exists(*cfg.data.real_path))
        throw DataError("missing real file '" + *cfg.data.real_path + "'");
}

} // namespace mve
