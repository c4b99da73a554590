#ifndef EBRANK_NPMLE_HPP
#define EBRANK_NPMLE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mixture.hpp"

/**
 * @file npmle.hpp
 * @brief Kiefer-Wolfowitz nonparametric maximum likelihood for mixing distributions, and kernel smoothing of the result.
 */

namespace ebrank {

/** Diagnostics from a mixing-distribution fit. */
struct FitReport {
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;

    /**
     * Largest first-order violation over the grid: the maximum of g_j - 1 over all grid points
     * and of |g_j - 1| over atoms with weight above 1e-6, where g_j is the average likelihood ratio of grid point j.
     */
    double kkt_max_violation = 0;

    std::size_t atom_count = 0;
    std::size_t grid_size = 0;
};

/** Algorithm used on the fixed grid. Both maximize the same likelihood; `cnm` is much faster. */
enum class NpmleSolver { cnm, em };

struct NpmleOptions {
    double tol = 1e-8;
    int maxit = 5000;
    double prune_below = 1e-10;
    NpmleSolver solver = NpmleSolver::cnm;
};

template<class Mixing>
struct NpmleFit {
    Mixing mixing;
    FitReport report;
};

/** Equispaced grid over [min(y) - 3 max(sigma), max(y) + 3 max(sigma)]. */
inline std::vector<double> build_grid(std::span<const KnownVarObs> obs, std::size_t m = 300) {
    if (obs.empty()) {
        throw std::domain_error("build_grid needs at least one observation");
    }
    if (m < 2) {
        throw std::domain_error("build_grid needs m >= 2");
    }
    double lo = obs.front().y, hi = obs.front().y, smax = 0;
    for (const auto& o : obs) {
        lo = std::min(lo, o.y);
        hi = std::max(hi, o.y);
        smax = std::max(smax, o.sigma);
    }
    lo -= 3 * smax;
    hi += 3 * smax;
    std::vector<double> grid(m);
    for (std::size_t j = 0; j < m; ++j) {
        grid[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(m - 1);
    }
    return grid;
}

/** Grids for the (theta, sigma^2) fit: equispaced in theta, geometric in sigma^2. */
struct PanelGrid {
    std::vector<double> theta;
    std::vector<double> sigma2;
};

inline PanelGrid build_panel_grid(std::span<const PanelObs> obs, std::size_t m_theta = 40, std::size_t m_sigma2 = 40) {
    if (obs.empty()) {
        throw std::domain_error("build_panel_grid needs at least one observation");
    }
    if (m_theta < 2 || m_sigma2 < 2) {
        throw std::domain_error("build_panel_grid needs at least 2 points per axis");
    }

    std::vector<double> s;
    s.reserve(obs.size());
    double lo = obs.front().ybar, hi = lo, spread = 0;
    for (const auto& o : obs) {
        lo = std::min(lo, o.ybar);
        hi = std::max(hi, o.ybar);
        if (o.s > 0) {
            s.push_back(o.s);
        }
    }
    if (s.empty()) {
        throw std::domain_error("build_panel_grid needs at least one positive sample variance");
    }
    std::sort(s.begin(), s.end());
    auto q = [&](double p) { return s[static_cast<std::size_t>(p * static_cast<double>(s.size() - 1))]; };
    double s_lo = q(0.005) / 2, s_hi = q(0.995) * 2;
    if (!(s_hi > s_lo)) {
        s_hi = s_lo * 4;
    }
    for (const auto& o : obs) {
        spread = std::max(spread, std::sqrt(s_hi / o.effective_count()));
    }

    PanelGrid out;
    out.theta.resize(m_theta);
    for (std::size_t j = 0; j < m_theta; ++j) {
        out.theta[j] = (lo - 3 * spread) + (hi - lo + 6 * spread) * static_cast<double>(j) / static_cast<double>(m_theta - 1);
    }
    out.sigma2.resize(m_sigma2);
    const double ratio = std::log(s_hi / s_lo);
    for (std::size_t k = 0; k < m_sigma2; ++k) {
        out.sigma2[k] = s_lo * std::exp(ratio * static_cast<double>(k) / static_cast<double>(m_sigma2 - 1));
    }
    return out;
}

namespace detail {

/** Row-major n x m kernel matrix, each row divided by its maximum. */
struct ScaledLikelihood {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> values;
    double log_scale_total = 0;

    double at(std::size_t i, std::size_t j) const { return values[i * m + j]; }
};

template<class LogKernel>
ScaledLikelihood build_likelihood(std::size_t n, std::size_t m, LogKernel&& logk) {
    ScaledLikelihood out;
    out.n = n;
    out.m = m;
    out.values.resize(n * m);
    long double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.values.data() + i * m;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            row[j] = logk(i, j);
            mx = std::max(mx, row[j]);
        }
        if (!std::isfinite(mx)) {
            throw std::domain_error("observation " + std::to_string(i) + " has zero likelihood at every grid point");
        }
        for (std::size_t j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
        }
        total += mx;
    }
    out.log_scale_total = static_cast<double>(total);
    return out;
}

/** Grid points laid out as rows x cols, used to find local maxima of the gradient. */
struct GridShape {
    std::size_t rows;
    std::size_t cols;
};

/** Mixture density of each observation (up to its row scale) for weights on a support subset. */
inline std::vector<double> mixture_values(const ScaledLikelihood& lik, std::span<const std::size_t> support, std::span<const double> w) {
    std::vector<double> f(lik.n, 0.0);
    for (std::size_t i = 0; i < lik.n; ++i) {
        const double* row = lik.values.data() + i * lik.m;
        double s = 0;
        for (std::size_t k = 0; k < support.size(); ++k) {
            s += row[support[k]] * w[k];
        }
        f[i] = s;
    }
    return f;
}

inline double loglik_of(const ScaledLikelihood& lik, std::span<const double> f) {
    long double ll = 0;
    for (auto v : f) {
        if (!(v > 0)) {
            return -std::numeric_limits<double>::infinity();
        }
        ll += std::log(v);
    }
    return static_cast<double>(ll) + lik.log_scale_total;
}

/** Average likelihood ratio (1/n) sum_i L_ij / f_i at every grid point. */
inline std::vector<double> gradient_ratio(const ScaledLikelihood& lik, std::span<const double> f) {
    std::vector<double> ratio(lik.m, 0.0);
    for (std::size_t i = 0; i < lik.n; ++i) {
        const double* row = lik.values.data() + i * lik.m;
        const double c = 1.0 / f[i];
        for (std::size_t j = 0; j < lik.m; ++j) {
            ratio[j] += row[j] * c;
        }
    }
    const double scale = 1.0 / static_cast<double>(lik.n);
    for (auto& r : ratio) {
        r *= scale;
    }
    return ratio;
}

inline double kkt_violation(std::span<const double> w, std::span<const double> ratio) {
    double worst = 0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        worst = std::max(worst, ratio[j] - 1);
        if (w[j] > 1e-6) {
            worst = std::max(worst, std::abs(ratio[j] - 1));
        }
    }
    return worst;
}

/** Grid points where the gradient exceeds 1 and is at least as large as at every neighbour. */
inline std::vector<std::size_t> gradient_peaks(std::span<const double> ratio, GridShape shape) {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < shape.rows; ++r) {
        for (std::size_t c = 0; c < shape.cols; ++c) {
            const std::size_t j = r * shape.cols + c;
            if (!(ratio[j] > 1)) {
                continue;
            }
            bool peak = true;
            if (r > 0) peak = peak && ratio[j] >= ratio[j - shape.cols];
            if (r + 1 < shape.rows) peak = peak && ratio[j] >= ratio[j + shape.cols];
            if (c > 0) peak = peak && ratio[j] >= ratio[j - 1];
            if (c + 1 < shape.cols) peak = peak && ratio[j] >= ratio[j + 1];
            if (peak) {
                out.push_back(j);
            }
        }
    }
    return out;
}

/** Lawson-Hanson active-set solution of min x'Ax/2 - b'x over x >= 0, for symmetric positive semidefinite A. */
inline Eigen::VectorXd nnls_gram(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    const Eigen::Index k = b.size();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(k);
    std::vector<bool> passive(static_cast<std::size_t>(k), false);
    const double tol = 1e-12 * std::max(1.0, b.cwiseAbs().maxCoeff());

    for (Eigen::Index outer = 0; outer < 3 * k + 10; ++outer) {
        const Eigen::VectorXd grad = b - a * x;
        Eigen::Index enter = -1;
        double best = tol;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (!passive[static_cast<std::size_t>(j)] && grad(j) > best) {
                best = grad(j);
                enter = j;
            }
        }
        if (enter < 0) {
            break;
        }
        passive[static_cast<std::size_t>(enter)] = true;

        for (Eigen::Index inner = 0; inner < 3 * k + 10; ++inner) {
            std::vector<Eigen::Index> idx;
            for (Eigen::Index j = 0; j < k; ++j) {
                if (passive[static_cast<std::size_t>(j)]) {
                    idx.push_back(j);
                }
            }
            const auto p = static_cast<Eigen::Index>(idx.size());
            Eigen::MatrixXd sub(p, p);
            Eigen::VectorXd rhs(p);
            for (Eigen::Index r = 0; r < p; ++r) {
                rhs(r) = b(idx[r]);
                for (Eigen::Index c = 0; c < p; ++c) {
                    sub(r, c) = a(idx[r], idx[c]);
                }
            }
            const Eigen::VectorXd z = sub.ldlt().solve(rhs);

            if ((z.array() > 0).all()) {
                x.setZero();
                for (Eigen::Index r = 0; r < p; ++r) {
                    x(idx[r]) = z(r);
                }
                break;
            }
            double step = 1;
            for (Eigen::Index r = 0; r < p; ++r) {
                if (z(r) <= 0) {
                    const double xr = x(idx[r]);
                    step = std::min(step, xr / (xr - z(r)));
                }
            }
            for (Eigen::Index r = 0; r < p; ++r) {
                double& xr = x(idx[r]);
                xr += step * (z(r) - xr);
                if (xr <= 1e-15) {
                    xr = 0;
                    passive[static_cast<std::size_t>(idx[r])] = false;
                }
            }
        }
    }
    return x;
}

struct EmResult {
    std::vector<double> weights;
    FitReport report;
};

inline void finish(const ScaledLikelihood& lik, std::vector<double> w, const NpmleOptions& opt, EmResult& out) {
    for (auto& x : w) {
        if (x < opt.prune_below) {
            x = 0;
        }
    }
    w = normalize(std::move(w));
    std::vector<std::size_t> all(lik.m);
    for (std::size_t j = 0; j < lik.m; ++j) {
        all[j] = j;
    }
    const auto f = mixture_values(lik, all, w);
    out.report.kkt_max_violation = kkt_violation(w, gradient_ratio(lik, f));
    out.weights = std::move(w);
}

struct StepResult {
    std::vector<double> w;
    std::vector<double> f;
    double ll;
};

/**
 * One Newton step on the support: the quadratic approximation of the log-likelihood is minimized by
 * nonnegative least squares, then the step is backtracked until the Armijo condition holds.
 * Returns the best improving point found, or `ll` unchanged when there is none.
 */
inline StepResult newton_step(const ScaledLikelihood& lik, std::span<const std::size_t> support, std::span<const double> w,
                              std::span<const double> f, double ll, std::span<const double> ratio) {
    const std::size_t n = lik.n;
    StepResult out{{}, {}, ll};
    const auto k = static_cast<Eigen::Index>(support.size());
    Eigen::MatrixXd s(static_cast<Eigen::Index>(n), k);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = 1.0 / f[i];
        for (Eigen::Index q = 0; q < k; ++q) {
            s(static_cast<Eigen::Index>(i), q) = lik.at(i, support[static_cast<std::size_t>(q)]) * c;
        }
    }
    // the sum-to-one constraint enters as a heavily weighted extra residual row
    const double nn = static_cast<double>(n);
    const double row_weight = 100 * nn;
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(k, k, row_weight);
    a.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose());
    a = a.selfadjointView<Eigen::Lower>();
    const Eigen::VectorXd b = (2.0 * s.transpose() * Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n))).array() + row_weight;
    Eigen::VectorXd x = nnls_gram(a, b);
    const double total = x.sum();
    if (!(total > 0) || !std::isfinite(total)) {
        return out;
    }
    x /= total;

    std::vector<double> dir(support.size());
    double slope = 0;
    for (std::size_t q = 0; q < support.size(); ++q) {
        dir[q] = x(static_cast<Eigen::Index>(q)) - w[q];
        slope += dir[q] * ratio[support[q]];
    }
    slope *= nn;
    if (!(slope > 0)) {
        return out;
    }

    // if the quadratic model is poor everywhere, take the best improving step instead
    std::vector<double> wn(support.size());
    for (double eta = 1; eta > 1e-14; eta /= 2) {
        for (std::size_t q = 0; q < support.size(); ++q) {
            wn[q] = std::max(0.0, w[q] + eta * dir[q]);
        }
        auto fn = mixture_values(lik, support, wn);
        const double lln = loglik_of(lik, fn);
        if (lln > out.ll) {
            out = {wn, std::move(fn), lln};
        }
        if (lln >= ll + slope * eta / 3) {
            break;
        }
    }
    return out;
}

/**
 * Fallback step toward the gradient peaks: moves mass from the current weights to an equal mix of the
 * grid points where the gradient is locally maximal, halving the step until the log-likelihood rises.
 * Used when an observation is so poorly fitted that the Newton system is ill-conditioned.
 */
inline StepResult vertex_step(const ScaledLikelihood& lik, std::span<const std::size_t> support, std::span<const double> w, double ll, std::span<const double> ratio, GridShape shape) {
    StepResult out{{}, {}, ll};
    std::vector<std::size_t> targets;
    for (std::size_t q = 0; q < support.size(); ++q) {
        if (ratio[support[q]] > 1) {
            targets.push_back(q);
        }
    }
    for (auto j : gradient_peaks(ratio, shape)) {
        const auto it = std::find(support.begin(), support.end(), j);
        if (it != support.end() && std::find(targets.begin(), targets.end(), static_cast<std::size_t>(it - support.begin())) == targets.end()) {
            targets.push_back(static_cast<std::size_t>(it - support.begin()));
        }
    }
    if (targets.empty()) {
        return out;
    }
    const double share = 1.0 / static_cast<double>(targets.size());
    std::vector<double> wn(support.size());
    for (double eta = 0.5; eta > 1e-14; eta /= 2) {
        for (std::size_t q = 0; q < support.size(); ++q) {
            wn[q] = (1 - eta) * w[q];
        }
        for (auto q : targets) {
            wn[q] += eta * share;
        }
        auto fn = mixture_values(lik, support, wn);
        const double lln = loglik_of(lik, fn);
        if (lln > ll) {
            return {wn, std::move(fn), lln};
        }
    }
    return out;
}

/**
 * Constrained Newton method with multiple support points: each step adds the local maxima of the
 * gradient to the support, solves the quadratic approximation of the log-likelihood by nonnegative
 * least squares, and backtracks until the Armijo condition holds.
 */
inline EmResult run_cnm(const ScaledLikelihood& lik, GridShape shape, const NpmleOptions& opt) {
    const std::size_t m = lik.m;
    EmResult out;
    out.report.grid_size = m;

    std::size_t sr = std::max<std::size_t>(1, shape.cols == 1 ? shape.rows / 30 : shape.rows / 6);
    std::size_t sc = std::max<std::size_t>(1, shape.cols / 6);
    std::vector<std::size_t> support;
    std::vector<double> w, f;
    double ll = -std::numeric_limits<double>::infinity();
    while (true) {
        support.clear();
        for (std::size_t r = 0; r < shape.rows; ++r) {
            for (std::size_t c = 0; c < shape.cols; ++c) {
                const bool on_r = r % sr == 0 || r + 1 == shape.rows;
                const bool on_c = c % sc == 0 || c + 1 == shape.cols;
                if (on_r && on_c) {
                    support.push_back(r * shape.cols + c);
                }
            }
        }
        w.assign(support.size(), 1.0 / static_cast<double>(support.size()));
        f = mixture_values(lik, support, w);
        ll = loglik_of(lik, f);
        if (std::isfinite(ll) || (sr == 1 && sc == 1)) {
            break;
        }
        sr = std::max<std::size_t>(1, sr / 2);
        sc = std::max<std::size_t>(1, sc / 2);
    }
    out.report.loglik_trace.push_back(ll);

    double change = std::numeric_limits<double>::infinity();
    bool stalled = false;
    double kkt = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= opt.maxit; ++it) {
        const auto ratio = gradient_ratio(lik, f);
        std::vector<double> full(m, 0.0);
        for (std::size_t k = 0; k < support.size(); ++k) {
            full[support[k]] = w[k];
        }
        kkt = kkt_violation(full, ratio);
        if (change < opt.tol && kkt <= 10 * opt.tol) {
            out.report.converged = true;
            break;
        }

        for (auto j : gradient_peaks(ratio, shape)) {
            if (full[j] == 0 && std::find(support.begin(), support.end(), j) == support.end()) {
                support.push_back(j);
                w.push_back(0.0);
            }
        }
        auto step = newton_step(lik, support, w, f, ll, ratio);
        if (!(step.ll > ll)) {
            step = vertex_step(lik, support, w, ll, ratio, shape);
        }
        auto& [wn, fn, lln] = step;
        if (!(lln > ll)) {
            stalled = true;
            break;
        }

        change = (lln - ll) / std::max(1.0, std::abs(ll));
        std::vector<std::size_t> keep_s;
        std::vector<double> keep_w;
        for (std::size_t q = 0; q < support.size(); ++q) {
            if (wn[q] > 0) {
                keep_s.push_back(support[q]);
                keep_w.push_back(wn[q]);
            }
        }
        support = std::move(keep_s);
        w = std::move(keep_w);
        f = std::move(fn);
        ll = lln;
        out.report.loglik_trace.push_back(ll);
        out.report.iterations = it;
    }
    if (stalled) {
        out.report.converged = kkt <= 10 * opt.tol;
    }

    std::vector<double> full(m, 0.0);
    for (std::size_t q = 0; q < support.size(); ++q) {
        full[support[q]] = w[q];
    }
    finish(lik, std::move(full), opt, out);
    return out;
}

/** Plain fixed-point EM from uniform weights; slow but simple, kept as a cross-check. */
inline EmResult run_em(const ScaledLikelihood& lik, const NpmleOptions& opt) {
    const std::size_t m = lik.m;
    std::vector<std::size_t> all(m);
    for (std::size_t j = 0; j < m; ++j) {
        all[j] = j;
    }
    std::vector<double> w(m, 1.0 / static_cast<double>(m));
    auto f = mixture_values(lik, all, w);
    double ll = loglik_of(lik, f);

    EmResult out;
    out.report.grid_size = m;
    out.report.loglik_trace.push_back(ll);
    for (int it = 1; it <= opt.maxit; ++it) {
        const auto ratio = gradient_ratio(lik, f);
        if (it > 1 && kkt_violation(w, ratio) <= 10 * opt.tol) {
            out.report.converged = true;
            break;
        }
        for (std::size_t j = 0; j < m; ++j) {
            w[j] *= ratio[j];
        }
        w = normalize(std::move(w));
        f = mixture_values(lik, all, w);
        const double lln = loglik_of(lik, f);
        const double change = (lln - ll) / std::max(1.0, std::abs(ll));
        ll = lln;
        out.report.loglik_trace.push_back(ll);
        out.report.iterations = it;
        if (change < opt.tol) {
            out.report.converged = kkt_violation(w, gradient_ratio(lik, f)) <= 10 * opt.tol;
            break;
        }
    }
    finish(lik, std::move(w), opt, out);
    return out;
}

inline EmResult solve(const ScaledLikelihood& lik, GridShape shape, const NpmleOptions& opt) {
    if (!(opt.tol > 0) || opt.maxit < 1) {
        throw std::domain_error("NPMLE needs tol > 0 and maxit >= 1");
    }
    return opt.solver == NpmleSolver::em ? run_em(lik, opt) : run_cnm(lik, shape, opt);
}

inline void check_increasing(std::span<const double> grid, const char* what) {
    if (grid.empty()) {
        throw std::domain_error(std::string(what) + " grid is empty");
    }
    for (std::size_t j = 1; j < grid.size(); ++j) {
        if (!(grid[j] > grid[j - 1])) {
            throw std::domain_error(std::string(what) + " grid must be strictly increasing");
        }
    }
}

}


/** Fixed-grid NPMLE of G under Y_i ~ N(theta_i, sigma_i^2). */
inline NpmleFit<DiscreteMixing> fit_npmle_known_var(std::span<const KnownVarObs> obs, std::span<const double> grid, const NpmleOptions& opt = {}) {
    if (obs.empty()) {
        throw std::domain_error("fit_npmle_known_var needs at least one observation");
    }
    detail::check_increasing(grid, "theta");
    const auto lik = detail::build_likelihood(obs.size(), grid.size(), [&](std::size_t i, std::size_t j) {
        return normal_logpdf(obs[i].y, grid[j], obs[i].sigma);
    });
    auto em = detail::solve(lik, {grid.size(), 1}, opt);

    std::vector<double> atoms, weights;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (em.weights[j] > 0) {
            atoms.push_back(grid[j]);
            weights.push_back(em.weights[j]);
        }
    }
    em.report.atom_count = atoms.size();
    return {DiscreteMixing::from_masses(std::move(atoms), std::move(weights)), std::move(em.report)};
}

inline NpmleFit<DiscreteMixing> fit_npmle_known_var(std::span<const KnownVarObs> obs, const NpmleOptions& opt = {}, std::size_t m = 300) {
    const auto grid = build_grid(obs, m);
    return fit_npmle_known_var(obs, grid, opt);
}

/** Fixed-grid NPMLE of the joint (theta, sigma^2) distribution on the product of the two grids. */
inline NpmleFit<BivariateMixing> fit_npmle_panel(std::span<const PanelObs> obs, std::span<const double> grid_theta, std::span<const double> grid_sigma2, const NpmleOptions& opt = {}) {
    if (obs.empty()) {
        throw std::domain_error("fit_npmle_panel needs at least one observation");
    }
    detail::check_increasing(grid_theta, "theta");
    detail::check_increasing(grid_sigma2, "sigma2");
    if (!(grid_sigma2.front() > 0)) {
        throw std::domain_error("sigma2 grid must be positive");
    }

    std::vector<LocationScale> product;
    product.reserve(grid_theta.size() * grid_sigma2.size());
    for (auto t : grid_theta) {
        for (auto s2 : grid_sigma2) {
            product.push_back({t, s2});
        }
    }
    const auto lik = detail::build_likelihood(obs.size(), product.size(), [&](std::size_t i, std::size_t j) {
        return log_joint_density_panel(obs[i], product[j]);
    });
    auto em = detail::solve(lik, {grid_theta.size(), grid_sigma2.size()}, opt);

    std::vector<LocationScale> atoms;
    std::vector<double> weights;
    for (std::size_t j = 0; j < product.size(); ++j) {
        if (em.weights[j] > 0) {
            atoms.push_back(product[j]);
            weights.push_back(em.weights[j]);
        }
    }
    em.report.atom_count = atoms.size();
    return {BivariateMixing::from_masses(std::move(atoms), std::move(weights)), std::move(em.report)};
}

inline NpmleFit<BivariateMixing> fit_npmle_panel(std::span<const PanelObs> obs, const NpmleOptions& opt = {}, std::size_t m_theta = 40, std::size_t m_sigma2 = 40) {
    const auto grid = build_panel_grid(obs, m_theta, m_sigma2);
    return fit_npmle_panel(obs, grid.theta, grid.sigma2, opt);
}

/** Mean absolute deviation of G about its median, with a positive fallback for point masses. */
inline double default_bandwidth(const DiscreteMixing& g) {
    const double med = mixing_quantile(g, 0.5);
    double mad = 0;
    const auto a = g.atoms();
    const auto w = g.weights();
    for (std::size_t j = 0; j < a.size(); ++j) {
        mad += w[j] * std::abs(a[j] - med);
    }
    if (mad > 0) {
        return mad;
    }
    if (a.size() == 1) {
        return 0.1;
    }
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < a.size(); ++j) {
        gap = std::min(gap, a[j] - a[j - 1]);
    }
    return gap / 2;
}

/** Biweight kernel with half-width h. */
inline double biweight_kernel(double u, double h) {
    const double x = u / h;
    if (std::abs(x) > 1) {
        return 0;
    }
    const double c = 1 - x * x;
    return 15.0 / 16.0 * c * c / h;
}

/**
 * Convolution of G with a biweight kernel, tabulated on an equispaced grid over [min atom - h, max atom + h].
 * The grid spacing is at most h / `points_per_bandwidth`, and the tabulated density is renormalized to integrate to one.
 */
inline SmoothedMixing smooth_mixing(const DiscreteMixing& g, double bandwidth, std::size_t points_per_bandwidth = 200) {
    if (!(bandwidth > 0) || !std::isfinite(bandwidth)) {
        throw std::domain_error("bandwidth must be positive");
    }
    const auto a = g.atoms();
    const auto w = g.weights();
    const double lo = a.front() - bandwidth;
    const double hi = a.back() + bandwidth;
    const double target = bandwidth / static_cast<double>(points_per_bandwidth);
    const auto count = static_cast<std::size_t>(std::ceil((hi - lo) / target)) + 1;
    const double step = (hi - lo) / static_cast<double>(count - 1);

    std::vector<double> grid(count), density(count, 0.0);
    for (std::size_t k = 0; k < count; ++k) {
        grid[k] = lo + step * static_cast<double>(k);
    }
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (w[j] == 0) {
            continue;
        }
        const auto first = static_cast<std::size_t>(std::max(0.0, std::floor((a[j] - bandwidth - lo) / step)));
        const auto last = std::min(count - 1, static_cast<std::size_t>(std::ceil((a[j] + bandwidth - lo) / step)));
        for (std::size_t k = first; k <= last; ++k) {
            density[k] += w[j] * biweight_kernel(grid[k] - a[j], bandwidth);
        }
    }

    long double total = 0;
    for (std::size_t k = 1; k < count; ++k) {
        total += 0.5L * (density[k] + density[k - 1]) * step;
    }
    for (auto& d : density) {
        d = static_cast<double>(d / total);
    }
    return SmoothedMixing(std::move(grid), std::move(density), bandwidth);
}

}

#endif
