#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mve/pipeline.hpp"

using namespace mve;
namespace fs = std::filesystem;

// Each criterion prints exactly one verdict line so the suite doubles as a
// release gate that can be read without the Catch organizer.

namespace {

int acc_threads() {
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 4u));
}

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

bool report(int id, const char* name, bool pass, const std::string& detail, double secs,
            double budget) {
    const bool ok = pass && secs < budget;
    std::printf("[acceptance] %d %s: %s (%s%.1fs)\n", id, name, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : (detail + ", ").c_str(), secs);
    std::fflush(stdout);
    return ok;
}

// ---- shared oracles ------------------------------------------------------

std::vector<double> oracle_midranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double below = 0.0, equal = 0.0;
        for (double x : v) {
            if (x < v[i]) ++below;
            if (x == v[i]) ++equal;
        }
        r[i] = below + (equal + 1.0) / 2.0;
    }
    return r;
}

double oracle_rank_sum_p(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> all(a);
    all.insert(all.end(), b.begin(), b.end());
    const auto ranks = oracle_midranks(all);
    const std::size_t m = a.size(), N = all.size();
    double w_obs = 0.0;
    for (std::size_t i = 0; i < m; ++i) w_obs += ranks[i];
    const double mu = static_cast<double>(m) * (static_cast<double>(N) + 1.0) / 2.0;

    std::vector<char> pick(N, 0);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(m), 1);
    std::sort(pick.begin(), pick.end()); // lexicographically first arrangement
    std::uint64_t hits = 0, total = 0;
    do {
        double w = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            if (pick[i]) w += ranks[i];
        ++total;
        if (std::abs(w - mu) >= std::abs(w_obs - mu) - 1e-9) ++hits;
    } while (std::next_permutation(pick.begin(), pick.end()));
    return static_cast<double>(hits) / static_cast<double>(total);
}

double oracle_signed_rank_p(const std::vector<double>& diffs) {
    std::vector<double> d, absd;
    for (double v : diffs)
        if (v != 0.0) {
            d.push_back(v);
            absd.push_back(std::abs(v));
        }
    const std::size_t n = d.size();
    const auto ranks = oracle_midranks(absd);
    double w_obs = 0.0, rsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (d[i] > 0.0) w_obs += ranks[i];
        rsum += ranks[i];
    }
    const double mu = rsum / 2.0;
    std::uint64_t hits = 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t m = 0; m < total; ++m) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (m & (std::uint64_t{1} << i)) w += ranks[i];
        if (std::abs(w - mu) >= std::abs(w_obs - mu) - 1e-9) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<bool> oracle_bh(const std::vector<double>& p, double alpha) {
    const std::size_t m = p.size();
    std::vector<double> s(p);
    std::sort(s.begin(), s.end());
    std::size_t best = 0;
    for (std::size_t i = 1; i <= m; ++i)
        if (s[i - 1] <= alpha * static_cast<double>(i) / static_cast<double>(m)) best = i;
    std::vector<bool> rej(m, false);
    if (best == 0) return rej;
    const double cut = s[best - 1];
    for (std::size_t i = 0; i < m; ++i) rej[i] = p[i] <= cut;
    return rej;
}

// ---- surrogate experiment configs ----------------------------------------

RunConfig lorenz_cfg(std::uint64_t seed, const std::string& out) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.threads = acc_threads();
    cfg.out = out;
    SurrogateSpec s;
    s.base.theta = {10.0, 28.0, 8.0 / 3.0};
    s.base.dt = 0.01;
    s.base.steps = 2300;
    s.base.burn_in = 300;
    s.base.aggregate = 5;
    s.family_size = 5;
    s.ball_radius = 0.01;
    s.obs_noise_sd = 0.05;
    cfg.data.surrogate = s;
    cfg.embedding.target = "x";
    for (const char* v : {"x", "y", "z"})
        for (int lag : {0, -1, -2, -3}) cfg.embedding.pool.push_back({v, lag});
    cfg.embedding.lead = 1;
    cfg.embedding.dim = 3;
    cfg.embedding.n_views = 30;
    cfg.embedding.k = 8;
    cfg.span.last_months = 30;
    return cfg;
}

std::map<std::string, std::string> dir_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            out[fs::relative(e.path(), root).string()] =
                std::string(std::istreambuf_iterator<char>(in),
                            std::istreambuf_iterator<char>());
        }
    return out;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MVE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    if (st == -1 || !WIFEXITED(st)) return -1;
    return WEXITSTATUS(st);
}

} // namespace

TEST_CASE("criterion 1: lars path geometry and terminal ols") {
    Stopwatch sw;
    const int n = 30, p = 5;
    bool pass = true;
    for (int inst = 0; inst < 100 && pass; ++inst) {
        Rng rng(derive_seed(1001, "c1", static_cast<std::uint64_t>(inst)));
        Eigen::MatrixXd X(n, p);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
        Eigen::VectorXd w(p);
        for (int j = 0; j < p; ++j) w(j) = rng.normal();
        Eigen::VectorXd y = X * w;
        for (int i = 0; i < n; ++i) y(i) += 0.5 * rng.normal();

        const LarsPath path = lars_path(X, y);

        Eigen::MatrixXd Z(n, p);
        for (int j = 0; j < p; ++j) {
            Eigen::VectorXd c = X.col(j).array() - X.col(j).mean();
            Z.col(j) = c / c.norm();
        }
        for (std::size_t s = 1; s < path.steps.size(); ++s) {
            const auto& st = path.steps[s];
            Eigen::VectorXd r = y;
            r.array() -= st.intercept;
            r -= X * st.beta;
            double amax = 0.0, amin = 1e300;
            for (int j : st.active) {
                const double c = std::abs(Z.col(j).dot(r));
                amax = std::max(amax, c);
                amin = std::min(amin, c);
            }
            if (amax - amin > 1e-8) pass = false;
            for (int j = 0; j < p; ++j)
                if (std::find(st.active.begin(), st.active.end(), j) == st.active.end() &&
                    std::abs(Z.col(j).dot(r)) > amax + 1e-8)
                    pass = false;
        }

        Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
        Eigen::VectorXd yc = y.array() - y.mean();
        Eigen::VectorXd ols = Xc.colPivHouseholderQr().solve(yc);
        const Eigen::VectorXd& fin = path.steps.back().beta;
        for (int j = 0; j < p; ++j)
            if (std::abs(fin(j) - ols(j)) > 1e-8) pass = false;
        const double icep = y.mean() - X.colwise().mean().dot(ols);
        if (std::abs(path.steps.back().intercept - icep) > 1e-8) pass = false;
    }
    CHECK(report(1, "lars-equiangular-and-final-ols", pass, "100 instances", sw.seconds(),
                 10.0));
}

TEST_CASE("criterion 2: cp selection matches direct enumeration") {
    Stopwatch sw;
    const int n = 30, p = 5;
    bool pass = true;
    for (int inst = 0; inst < 100 && pass; ++inst) {
        Rng rng(derive_seed(1002, "c2", static_cast<std::uint64_t>(inst)));
        Eigen::MatrixXd X(n, p);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i)
            y(i) = X(i, 0) - 2.0 * X(i, 2) + 0.8 * rng.normal();

        const LarsPath path = lars_path(X, y);
        const CpSelection sel = cp_select(path, X, y);
        if (sel.degenerate) {
            pass = false;
            break;
        }

        const std::size_t last = path.steps.size() - 1;
        const double p_full = static_cast<double>(path.steps[last].active.size());
        const double sigma2 =
            path.steps[last].rss / (static_cast<double>(n) - p_full - 1.0);
        std::size_t best = 0;
        double best_cp = 1e300;
        for (std::size_t j = 0; j < path.steps.size(); ++j) {
            const double dj = static_cast<double>(path.steps[j].active.size());
            const double cp = path.steps[j].rss / sigma2 - static_cast<double>(n) +
                              2.0 * (dj + 1.0);
            if (cp < best_cp) {
                best_cp = cp;
                best = j;
            }
        }
        if (sel.step != best) pass = false;
        if ((sel.beta - path.steps[best].beta).cwiseAbs().maxCoeff() != 0.0) pass = false;
    }
    CHECK(report(2, "cp-oracle-agreement", pass, "100 instances", sw.seconds(), 10.0));
}

TEST_CASE("criterion 3: exact rank tests and bh against enumeration") {
    Stopwatch sw;
    bool pass = true;
    std::size_t done = 0;

    Rng rng(derive_seed(1003, "c3"));
    for (int c = 0; c < 1000 && pass; ++c) {
        const std::size_t m = 2 + rng.uniform_index(7); // 2..8
        const std::size_t maxb = std::min<std::size_t>(8, 10 - m);
        const std::size_t n = 2 + rng.uniform_index(maxb - 1); // total <= 10
        std::vector<double> a(m), b(n);
        for (double& v : a) v = static_cast<double>(rng.uniform_index(6));
        for (double& v : b) v = static_cast<double>(rng.uniform_index(6));
        const double got = rank_sum_test(a, b).p;
        const double want = oracle_rank_sum_p(a, b);
        if (std::abs(got - want) > 1e-12) pass = false;
        ++done;
    }

    for (int c = 0; c < 1000 && pass; ++c) {
        const std::size_t n = 3 + rng.uniform_index(8); // 3..10
        std::vector<double> d(n);
        std::size_t nonzero = 0;
        for (double& v : d) {
            v = static_cast<double>(rng.uniform_index(9)) - 4.0;
            if (v != 0.0) ++nonzero;
        }
        if (nonzero < 3) {
            --c;
            continue;
        }
        const double got = signed_rank_test(d).p;
        const double want = oracle_signed_rank_p(d);
        if (std::abs(got - want) > 1e-12) pass = false;
        ++done;
    }

    for (int c = 0; c < 1000 && pass; ++c) {
        const std::size_t m = 1 + rng.uniform_index(12);
        std::vector<double> p(m);
        for (double& v : p) {
            v = rng.uniform();
            if (rng.uniform() < 0.3) v = std::floor(v * 10.0) / 10.0; // force duplicates
        }
        const double alpha = (c % 3 == 0) ? 0.05 : (c % 3 == 1) ? 0.1 : 0.2;
        if (bh_reject(p, alpha) != oracle_bh(p, alpha)) pass = false;
        ++done;
    }

    CHECK(report(3, "exact-test-enumeration", pass, std::to_string(done) + " cases",
                 sw.seconds(), 30.0));
}

TEST_CASE("criterion 4: bootstrap tests hold their size under the null") {
    Stopwatch sw;
    const int reps = 300;
    std::vector<double> ks_p(reps), mix_p(reps);
    parallel_for(static_cast<std::size_t>(reps), acc_threads(), [&](std::size_t r) {
        Rng rng(derive_seed(1004, "c4-data", r));
        std::vector<double> x(100);
        for (double& v : x) v = rng.normal();
        ks_p[r] = ks_normal_fit_test(x, derive_seed(1004, "c4-ks", r)).p;
        mix_p[r] = mixture_lrt_test(x, 2, derive_seed(1004, "c4-mix", r)).p;
    });
    const auto rate = [&](const std::vector<double>& p) {
        std::size_t rej = 0;
        for (double v : p)
            if (v <= 0.05) ++rej;
        return static_cast<double>(rej) / static_cast<double>(p.size());
    };
    const double ks_rate = rate(ks_p), mix_rate = rate(mix_p);
    const bool pass =
        ks_rate >= 0.02 && ks_rate <= 0.09 && mix_rate >= 0.01 && mix_rate <= 0.10;
    char detail[96];
    std::snprintf(detail, sizeof detail, "ks %.3f in [.02,.09], mixture %.3f in [.01,.10]",
                  ks_rate, mix_rate);
    CHECK(report(4, "bootstrap-null-calibration", pass, detail, sw.seconds(), 600.0));
}

TEST_CASE("criterion 5: perfect model multiview skill") {
    Stopwatch sw;
    RunConfig cfg = lorenz_cfg(1005, "acc_out/c5");
    cfg.data.surrogate->base.steps = 3275; // 500 train + 55 test rows
    cfg.data.surrogate->base.burn_in = 500;
    cfg.data.surrogate->family_size = 1;
    cfg.data.surrogate->obs_noise_sd = 0.0;
    cfg.embedding.n_views = 100;
    cfg.span.last_months = 55;
    PredictOutput out = cmd_predict(cfg);
    const double corr = out.correlation.value_or(-1.0);
    const bool pass = corr >= 0.8;
    char detail[64];
    std::snprintf(detail, sizeof detail, "corr %.4f on %zu points", corr,
                  out.preds.times.size());
    CHECK(report(5, "perfect-model-skill", pass, detail, sw.seconds(), 60.0));
}

TEST_CASE("criterion 6: englobement separates in-ball from far dynamics") {
    Stopwatch sw;
    const int seeds = 50;
    int null_kept = 0, far_rejected = 0;
    for (int s = 0; s < seeds; ++s) {
        RunConfig cfg = lorenz_cfg(2000 + static_cast<std::uint64_t>(s), "acc_out/c6");
        ResolvedData data = resolve_data(cfg);
        const std::int64_t origin = cfg.span.resolve(*data.real);
        EnglobeResult in_ball = englobement(data.models, *data.real, cfg.embedding, origin,
                                            cfg.seed, LocationTest::ranksum, cfg.threads);
        if (in_ball.p > 0.05) ++null_kept;

        RunConfig far_cfg = cfg;
        far_cfg.data.surrogate->real_theta = std::vector<double>{10.0, 28.0 * 1.3, 8.0 / 3.0};
        ResolvedData far = resolve_data(far_cfg);
        EnglobeResult outside = englobement(far.models, *far.real, cfg.embedding, origin,
                                            far_cfg.seed, LocationTest::ranksum, cfg.threads);
        if (outside.p < 0.01) ++far_rejected;
    }
    const bool pass = null_kept >= 40 && far_rejected >= 45;
    char detail[96];
    std::snprintf(detail, sizeof detail, "%d/50 null kept (need 40), %d/50 far rejected (need 45)",
                  null_kept, far_rejected);
    CHECK(report(6, "englobement-discrimination", pass, detail, sw.seconds(), 900.0));
}

TEST_CASE("criterion 7: augmentation helps with informative models only") {
    Stopwatch sw;
    const int seeds = 25;
    int informative_wins = 0, noise_claims = 0;

    for (int s = 0; s < seeds; ++s) {
        RunConfig cfg = lorenz_cfg(3000 + static_cast<std::uint64_t>(s), "acc_out/c7");
        cfg.data.surrogate->family_size = 3;
        cfg.data.surrogate->obs_noise_sd = 0.4;
        CompareOutput inf = cmd_compare(cfg);
        if (inf.direction == "augmented_better" && inf.result.rank.p < 0.05)
            ++informative_wins;
    }

    for (int s = 0; s < seeds; ++s) {
        RunConfig gen = lorenz_cfg(3100 + static_cast<std::uint64_t>(s), "acc_out/c7n");
        gen.data.surrogate->family_size = 3;
        gen.data.surrogate->obs_noise_sd = 0.4;
        ResolvedData data = resolve_data(gen);
        const SeriesPanel& real = *data.real;

        fs::create_directories("acc_out/c7n");
        write_csv(real, "acc_out/c7n/real.csv");
        Rng nrng(derive_seed(gen.seed, "c7n-noise"));
        for (int m = 0; m < 3; ++m) {
            SeriesPanel white = real;
            const StandardizationStats st = compute_stats(real);
            for (std::size_t v = 0; v < white.variables.size(); ++v)
                for (std::size_t r = 0; r < white.length(); ++r)
                    white.values[v][r] = nrng.normal(st.mean[v], st.sd[v]);
            write_csv(white, "acc_out/c7n/white" + std::to_string(m + 1) + ".csv");
        }

        RunConfig ncfg = gen;
        ncfg.data.surrogate.reset();
        ncfg.data.real_path = "acc_out/c7n/real.csv";
        for (int m = 0; m < 3; ++m)
            ncfg.data.model_paths.push_back("acc_out/c7n/white" + std::to_string(m + 1) +
                                            ".csv");
        CompareOutput noise = cmd_compare(ncfg);
        if (noise.direction == "augmented_better" && noise.result.rank.p < 0.05)
            ++noise_claims;
    }

    const bool pass = informative_wins >= 18 && noise_claims <= 2;
    char detail[96];
    std::snprintf(detail, sizeof detail,
                  "%d/25 informative wins (need 18), %d/25 noise claims (allow 2)",
                  informative_wins, noise_claims);
    CHECK(report(7, "augmentation-benefit", pass, detail, sw.seconds(), 1200.0));
}

TEST_CASE("criterion 8: ninety percent bounds cover near nominal") {
    Stopwatch sw;
    std::size_t covered = 0, scored = 0;
    for (int s = 0; s < 10; ++s) {
        RunConfig cfg = lorenz_cfg(4000 + static_cast<std::uint64_t>(s), "acc_out/c8");
        cfg.embedding.n_views = 25;
        cfg.span.last_months = 25;
        cfg.inference.alpha = 0.1;
        BoundsOutput out = cmd_bounds(cfg);
        for (std::size_t t = 0; t < out.preds.times.size(); ++t) {
            const double o = out.preds.observed[t];
            if (!std::isfinite(o)) continue;
            ++scored;
            if (o >= out.bounds[t].lo && o <= out.bounds[t].hi) ++covered;
        }
    }
    const double cov = static_cast<double>(covered) / static_cast<double>(scored);
    const bool pass = scored >= 200 && cov >= 0.8 && cov <= 1.0;
    char detail[96];
    std::snprintf(detail, sizeof detail, "coverage %.3f (%zu/%zu, need .80..1.00)", cov,
                  covered, scored);
    CHECK(report(8, "bounds-coverage", pass, detail, sw.seconds(), 300.0));
}

TEST_CASE("criterion 9: byte-identical reruns at any thread count") {
    Stopwatch sw;
    fs::remove_all("acc_out/c9");
    fs::create_directories("acc_out/c9");

    nlohmann::json j;
    j["seed"] = 17;
    j["data"]["surrogate"] = {{"steps", 1700}, {"burn_in", 200}, {"aggregate", 5},
                              {"family_size", 3}, {"ball_radius", 0.02},
                              {"obs_noise_sd", 0.05}};
    j["embedding"]["target"] = "x";
    j["embedding"]["pool"] = {{{"var", "x"}, {"lags", {0, -1, -2}}},
                              {{"var", "y"}, {"lags", {0, -1, -2}}},
                              {{"var", "z"}, {"lags", {0, -1, -2}}}};
    j["embedding"]["dim"] = 2;
    j["embedding"]["n_views"] = 12;
    j["embedding"]["k"] = 6;
    j["test_span"]["last_months"] = 12;
    j["inference"]["alpha"] = 0.25;
    {
        std::ofstream f("acc_out/c9/config.json");
        f << j.dump(2) << '\n';
    }

    bool pass = true;
    std::string detail = "simulate predict englobe bounds compare";
    for (const char* sub : {"simulate", "predict", "englobe", "bounds", "compare"}) {
        const std::string base = std::string("acc_out/c9/") + sub;
        const std::string common = std::string(sub) + " --config acc_out/c9/config.json";
        if (run_cli(common + " --out " + base + "_a --threads 1") != 0 ||
            run_cli(common + " --out " + base + "_b --threads 1") != 0 ||
            run_cli(common + " --out " + base + "_t4 --threads 4") != 0) {
            pass = false;
            detail = std::string("cli run failed for ") + sub;
            break;
        }
        const auto a = dir_bytes(base + "_a");
        if (a.empty() || a != dir_bytes(base + "_b") || a != dir_bytes(base + "_t4")) {
            pass = false;
            detail = std::string("output drift in ") + sub;
            break;
        }
    }
    if (pass && run_cli("validate --config acc_out/c9/config.json") != 0) {
        pass = false;
        detail = "validate failed";
    }
    CHECK(report(9, "deterministic-reruns", pass, detail, sw.seconds(), 300.0));
}

TEST_CASE("cli maps error classes to exit codes") {
    CHECK(run_cli("predict --config acc_out/does_not_exist.json") == 2);

    fs::create_directories("acc_out/cli");
    {
        std::ofstream f("acc_out/cli/bad.json");
        f << "{\"data\": {}}\n";
    }
    CHECK(run_cli("predict --config acc_out/cli/bad.json") == 2);

    {
        std::ofstream f("acc_out/cli/missing.json");
        f << R"({"data": {"real": "acc_out/cli/nope.csv"},
                 "embedding": {"target": "x", "pool": [{"var": "x", "lags": [0]}], "dim": 1},
                 "test_span": {"last_months": 5}})"
          << '\n';
    }
    CHECK(run_cli("validate --config acc_out/cli/missing.json") == 3);
    CHECK(run_cli("predict --config acc_out/cli/missing.json") == 3);

    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("predict") == 2); // --config is required
}
