#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "mve/errors.hpp"

namespace mve {

struct LarsStep {
    Eigen::VectorXd beta; // original predictor scale
    double intercept = 0.0;
    std::vector<int> active; // columns in order of entry
    double rss = 0.0;
};

struct LarsPath {
    std::vector<LarsStep> steps; // steps[0] is the intercept-only model
    bool truncated = false; // stopped before absorbing every usable column
};

// Least angle regression, plain variant (no lasso drop steps). Columns are
// centered and scaled to unit norm internally; the intercept is restored on
// output. Each step moves along the equiangular direction of the active
// set, keeping every active column at equal absolute correlation with the
// residual, and the final step coincides with full OLS when the design
// allows it. The path stops after min(p, n-2) entering steps, or earlier
// if the active Gram matrix loses rank.
inline LarsPath lars_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (n != y.size()) throw NumericError("lars_path: X rows != y length");
    if (n < 2) throw NumericError("lars_path: need at least 2 rows");

    const double ybar = y.mean();
    Eigen::VectorXd yc = y.array() - ybar;

    Eigen::VectorXd xbar(p), xnorm(p);
    Eigen::MatrixXd Z(n, p);
    std::vector<int> usable;
    for (Eigen::Index j = 0; j < p; ++j) {
        xbar[j] = X.col(j).mean();
        Eigen::VectorXd cj = X.col(j).array() - xbar[j];
        xnorm[j] = cj.norm();
        if (xnorm[j] > 1e-12 * (1.0 + std::abs(xbar[j])) * std::sqrt(double(n))) {
            Z.col(j) = cj / xnorm[j];
            usable.push_back(int(j));
        } else {
            Z.col(j).setZero(); // constant column, never a candidate
            xnorm[j] = 0.0;
        }
    }

    LarsPath path;
    auto record = [&](const Eigen::VectorXd& betaz, const std::vector<int>& active,
                      double rss) {
        LarsStep st;
        st.beta = Eigen::VectorXd::Zero(p);
        for (int j : active) st.beta[j] = betaz[j] / xnorm[j];
        st.intercept = ybar - st.beta.dot(xbar);
        st.active = active;
        st.rss = rss;
        path.steps.push_back(std::move(st));
    };

    Eigen::VectorXd betaz = Eigen::VectorXd::Zero(p);
    record(betaz, {}, yc.squaredNorm());

    const std::size_t max_active =
        std::min(usable.size(), static_cast<std::size_t>(std::max<Eigen::Index>(n - 2, 0)));
    if (max_active == 0) {
        path.truncated = !usable.empty();
        return path;
    }

    std::vector<int> active;
    std::vector<char> in_active(p, 0);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
    const double corr_floor = 1e-12 * std::sqrt(yc.squaredNorm() + 1e-300);

    while (true) {
        Eigen::VectorXd r = yc - mu;
        Eigen::VectorXd c = Z.transpose() * r;
        double cmax = 0.0;
        for (int j : usable) cmax = std::max(cmax, std::abs(c[j]));
        if (cmax <= corr_floor) break; // residual orthogonal to every candidate

        for (int j : usable) { // ties enter together
            if (!in_active[j] && std::abs(c[j]) >= cmax - 1e-10 * (1.0 + cmax)) {
                if (active.size() >= max_active) {
                    path.truncated = true;
                    break;
                }
                active.push_back(j);
                in_active[j] = 1;
            }
        }
        if (path.truncated && active.empty()) break;

        const std::size_t na = active.size();
        Eigen::VectorXd s(na);
        Eigen::MatrixXd Za(n, na);
        for (std::size_t i = 0; i < na; ++i) {
            s[i] = c[active[i]] >= 0 ? 1.0 : -1.0;
            Za.col(i) = s[i] * Z.col(active[i]);
        }
        Eigen::MatrixXd G = Za.transpose() * Za;
        Eigen::LLT<Eigen::MatrixXd> llt(G);
        Eigen::VectorXd w1;
        bool ok = llt.info() == Eigen::Success;
        if (ok) {
            w1 = llt.solve(Eigen::VectorXd::Ones(na));
            ok = w1.allFinite() && (G * w1 - Eigen::VectorXd::Ones(na)).norm() < 1e-6 &&
                 w1.sum() > 0;
        }
        if (!ok) { // rank-deficient active set
            path.truncated = true;
            break;
        }
        const double anorm = 1.0 / std::sqrt(w1.sum());
        Eigen::VectorXd w = anorm * w1;
        Eigen::VectorXd u = Za * w;
        Eigen::VectorXd a = Z.transpose() * u;

        bool all_in = active.size() == usable.size() || active.size() >= max_active;
        double gamma = cmax / anorm; // jump straight to the active-set OLS
        if (!all_in) {
            for (int j : usable) {
                if (in_active[j]) continue;
                for (double g : {(cmax - c[j]) / (anorm - a[j]), (cmax + c[j]) / (anorm + a[j])})
                    if (g > 1e-14 && g < gamma) gamma = g;
            }
        }
        if (!(gamma > 0) || !std::isfinite(gamma)) {
            path.truncated = true;
            break;
        }

        for (std::size_t i = 0; i < na; ++i) betaz[active[i]] += gamma * s[i] * w[i];
        mu += gamma * u;
        record(betaz, active, (yc - mu).squaredNorm());

        if (all_in) {
            if (active.size() < usable.size()) path.truncated = true;
            break;
        }
    }
    return path;
}

struct CpSelection {
    Eigen::VectorXd beta;
    double intercept = 0.0;
    std::size_t step = 0; // index into path.steps
    bool degenerate = false; // full model fits perfectly, Cp undefined
    std::vector<double> cp; // per path step, empty when degenerate
};

// Mallows' Cp over the path: Cp_j = RSS_j / s2 - n + 2 (d_j + 1) with
// s2 = RSS_full / (n - p_full - 1) from the final (fullest) step. Ties go
// to the model with fewer variables.
inline CpSelection cp_select(const LarsPath& path, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& y) {
    (void)X;
    const double n = static_cast<double>(y.size());
    const LarsStep& full = path.steps.back();
    const double p_full = static_cast<double>(full.active.size());
    if (n <= p_full + 1)
        throw NumericError("cp_select: need n > p_full + 1 (n=" + std::to_string(y.size()) +
                           ", p_full=" + std::to_string(full.active.size()) + ")");

    CpSelection sel;
    const double tss = path.steps.front().rss;
    const double sigma2 = full.rss / (n - p_full - 1.0);
    if (sigma2 <= 1e-12 * tss || tss == 0.0) {
        sel.beta = full.beta;
        sel.intercept = full.intercept;
        sel.step = path.steps.size() - 1;
        sel.degenerate = true;
        return sel;
    }

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < path.steps.size(); ++j) {
        const double d = static_cast<double>(path.steps[j].active.size());
        const double cp = path.steps[j].rss / sigma2 - n + 2.0 * (d + 1.0);
        sel.cp.push_back(cp);
        if (cp < best) { // strict: earlier steps have fewer variables
            best = cp;
            sel.step = j;
        }
    }
    sel.beta = path.steps[sel.step].beta;
    sel.intercept = path.steps[sel.step].intercept;
    return sel;
}

} // namespace mve
