#ifndef EBRANK_MIXTURE_HPP
#define EBRANK_MIXTURE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "distributions.hpp"

/**
 * @file mixture.hpp
 * @brief Mixing distributions, observation models and their density primitives.
 */

namespace ebrank {

/** Which end of the mixing distribution a selection targets. */
enum class Tail { upper, lower };

inline constexpr double weight_sum_tolerance = 1e-12;

namespace detail {

inline long double accurate_sum(std::span<const double> x) {
    long double s = 0;
    for (auto v : x) {
        s += v;
    }
    return s;
}

inline void check_weights(std::span<const double> weights) {
    if (weights.empty()) {
        throw std::domain_error("mixing distribution needs at least one atom");
    }
    for (auto w : weights) {
        if (!(w >= 0) || !std::isfinite(w)) {
            throw std::domain_error("mixing weights must be finite and nonnegative");
        }
    }
    if (std::abs(static_cast<double>(accurate_sum(weights)) - 1.0) > weight_sum_tolerance) {
        throw std::domain_error("mixing weights must sum to 1");
    }
}

inline std::vector<double> normalize(std::vector<double> weights) {
    const long double total = accurate_sum(weights);
    if (!(total > 0)) {
        throw std::domain_error("mixing weights must have positive total mass");
    }
    for (auto& w : weights) {
        w = static_cast<double>(w / total);
    }
    return weights;
}

/** log(sum(exp(x))) with the maximum factored out. */
inline double log_sum_exp(std::span<const double> x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (auto v : x) {
        mx = std::max(mx, v);
    }
    if (!std::isfinite(mx)) {
        return mx;
    }
    double s = 0;
    for (auto v : x) {
        s += std::exp(v - mx);
    }
    return mx + std::log(s);
}

}

/**
 * @brief Discrete distribution on the real line, used for G and its estimates.
 *
 * Atoms are strictly increasing and weights form a probability vector.
 * Instances are immutable once constructed.
 */
class DiscreteMixing {
public:
    DiscreteMixing(std::vector<double> atoms, std::vector<double> weights) : atoms_(std::move(atoms)), weights_(std::move(weights)) {
        if (atoms_.size() != weights_.size()) {
            throw std::domain_error("atoms and weights differ in length");
        }
        detail::check_weights(weights_);
        for (auto a : atoms_) {
            if (!std::isfinite(a)) {
                throw std::domain_error("atoms must be finite");
            }
        }
        for (std::size_t j = 1; j < atoms_.size(); ++j) {
            if (!(atoms_[j] > atoms_[j - 1])) {
                throw std::domain_error("atoms must be strictly increasing");
            }
        }
    }

    /** Normalizes nonnegative masses to sum to one. */
    static DiscreteMixing from_masses(std::vector<double> atoms, std::vector<double> masses) {
        return DiscreteMixing(std::move(atoms), detail::normalize(std::move(masses)));
    }

    static DiscreteMixing point_mass(double at) {
        return DiscreteMixing({at}, {1.0});
    }

    /**
     * Discretizes a density on `m` equispaced points over `[lo, hi]`, with weights proportional to the density.
     * `logpdf` may be unnormalized.
     */
    template<class LogPdf>
    static DiscreteMixing discretize(LogPdf&& logpdf, double lo, double hi, std::size_t m) {
        if (m < 2 || !(hi > lo)) {
            throw std::domain_error("discretization needs m >= 2 and hi > lo");
        }
        std::vector<double> atoms(m), logw(m);
        for (std::size_t j = 0; j < m; ++j) {
            atoms[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(m - 1);
            logw[j] = logpdf(atoms[j]);
        }
        const double mx = *std::max_element(logw.begin(), logw.end());
        std::vector<double> w(m);
        for (std::size_t j = 0; j < m; ++j) {
            w[j] = std::exp(logw[j] - mx);
        }
        return from_masses(std::move(atoms), std::move(w));
    }

    std::span<const double> atoms() const { return atoms_; }
    std::span<const double> weights() const { return weights_; }
    std::size_t size() const { return atoms_.size(); }

    double mean() const {
        double m = 0;
        for (std::size_t j = 0; j < size(); ++j) {
            m += weights_[j] * atoms_[j];
        }
        return m;
    }

    double variance() const {
        const double mu = mean();
        double v = 0;
        for (std::size_t j = 0; j < size(); ++j) {
            v += weights_[j] * (atoms_[j] - mu) * (atoms_[j] - mu);
        }
        return v;
    }

    /** Reflection theta -> -theta, which maps lower-tail problems onto upper-tail ones. */
    DiscreteMixing mirrored() const {
        std::vector<double> a(atoms_.rbegin(), atoms_.rend());
        for (auto& x : a) {
            x = -x;
        }
        return DiscreteMixing(std::move(a), std::vector<double>(weights_.rbegin(), weights_.rend()));
    }

private:
    std::vector<double> atoms_;
    std::vector<double> weights_;
};

/** A support point of the joint distribution of (theta, sigma^2). */
struct LocationScale {
    double theta;
    double sigma2;
};

/**
 * @brief Discrete joint distribution of (theta, sigma^2) for the unknown-variance model.
 */
class BivariateMixing {
public:
    BivariateMixing(std::vector<LocationScale> atoms, std::vector<double> weights) : atoms_(std::move(atoms)), weights_(std::move(weights)) {
        if (atoms_.size() != weights_.size()) {
            throw std::domain_error("atoms and weights differ in length");
        }
        detail::check_weights(weights_);
        for (const auto& a : atoms_) {
            if (!std::isfinite(a.theta) || !(a.sigma2 > 0) || !std::isfinite(a.sigma2)) {
                throw std::domain_error("bivariate atoms need finite theta and positive sigma2");
            }
        }
    }

    static BivariateMixing from_masses(std::vector<LocationScale> atoms, std::vector<double> masses) {
        return BivariateMixing(std::move(atoms), detail::normalize(std::move(masses)));
    }

    std::span<const LocationScale> atoms() const { return atoms_; }
    std::span<const double> weights() const { return weights_; }
    std::size_t size() const { return atoms_.size(); }

    /** Marginal distribution of theta, with equal locations merged. */
    DiscreteMixing theta_marginal() const {
        std::vector<std::pair<double, double>> pairs;
        pairs.reserve(size());
        for (std::size_t j = 0; j < size(); ++j) {
            pairs.emplace_back(atoms_[j].theta, weights_[j]);
        }
        std::sort(pairs.begin(), pairs.end());
        std::vector<double> a, w;
        for (const auto& [t, p] : pairs) {
            if (!a.empty() && a.back() == t) {
                w.back() += p;
            } else {
                a.push_back(t);
                w.push_back(p);
            }
        }
        return DiscreteMixing::from_masses(std::move(a), std::move(w));
    }

    BivariateMixing mirrored() const {
        auto a = atoms_;
        for (auto& x : a) {
            x.theta = -x.theta;
        }
        return BivariateMixing(std::move(a), weights_);
    }

private:
    std::vector<LocationScale> atoms_;
    std::vector<double> weights_;
};

/** A measurement with known noise standard deviation. */
struct KnownVarObs {
    double y;
    double sigma;

    KnownVarObs(double y_, double sigma_) : y(y_), sigma(sigma_) {
        if (!std::isfinite(y) || !(sigma > 0) || !std::isfinite(sigma)) {
            throw std::domain_error("KnownVarObs needs finite y and positive sigma");
        }
    }

    /** A unit with precision `w` observed as N(theta, 1/w). */
    static KnownVarObs from_precision(double y, double w) {
        if (!(w > 0)) {
            throw std::domain_error("precision must be positive");
        }
        return KnownVarObs(y, 1.0 / std::sqrt(w));
    }
};

/**
 * Sufficient statistics of a short panel: sample mean, sample variance, and the number of periods.
 * With `weight` set the mean is a precision-weighted mean whose variance is sigma^2 / weight.
 */
struct PanelObs {
    double ybar;
    double s;
    int t_count;
    std::optional<double> weight;

    PanelObs(double ybar_, double s_, int t_, std::optional<double> w_ = std::nullopt) : ybar(ybar_), s(s_), t_count(t_), weight(w_) {
        if (!std::isfinite(ybar) || !(s >= 0) || !std::isfinite(s)) {
            throw std::domain_error("PanelObs needs finite ybar and nonnegative s");
        }
        if (t_count < 4) {
            throw std::domain_error("PanelObs needs at least 4 repeated measurements");
        }
        if (weight && !(*weight > 0)) {
            throw std::domain_error("PanelObs weight must be positive");
        }
    }

    double shape() const { return (t_count - 1) / 2.0; }
    double effective_count() const { return weight ? *weight : static_cast<double>(t_count); }
};

/** A kernel-smoothed mixing density tabulated on an equispaced grid. */
struct SmoothedMixing {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth;

    SmoothedMixing(std::vector<double> g, std::vector<double> d, double h) : grid(std::move(g)), density(std::move(d)), bandwidth(h) {
        if (grid.size() != density.size() || grid.size() < 2) {
            throw std::domain_error("smoothed mixing needs matching grid and density of length >= 2");
        }
        if (!(bandwidth > 0)) {
            throw std::domain_error("bandwidth must be positive");
        }
        for (auto v : density) {
            if (!(v >= 0)) {
                throw std::domain_error("density must be nonnegative");
            }
        }
        if (std::abs(integral() - 1.0) > 1e-6) {
            throw std::domain_error("smoothed density does not integrate to 1");
        }
    }

    /** Trapezoid integral of the density over the whole grid. */
    double integral() const {
        return integral_between(grid.front(), grid.back());
    }

    /** Trapezoid integral restricted to grid cells inside [lo, hi]. */
    double integral_between(double lo, double hi) const {
        long double s = 0;
        for (std::size_t j = 1; j < grid.size(); ++j) {
            if (grid[j - 1] >= lo && grid[j] <= hi) {
                s += 0.5L * (density[j] + density[j - 1]) * (grid[j] - grid[j - 1]);
            }
        }
        return static_cast<double>(s);
    }

    /**
     * Discrete approximation on `m` equispaced atoms, for plugging into posterior computations.
     * Grid points with zero density are dropped.
     */
    DiscreteMixing to_discrete(std::size_t m = 300) const {
        const double lo = grid.front(), hi = grid.back();
        std::vector<double> atoms, masses;
        atoms.reserve(m);
        masses.reserve(m);
        std::size_t k = 0;
        for (std::size_t j = 0; j < m; ++j) {
            const double t = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(m - 1);
            while (k + 2 < grid.size() && grid[k + 1] < t) {
                ++k;
            }
            const double span = grid[k + 1] - grid[k];
            const double frac = std::clamp((t - grid[k]) / span, 0.0, 1.0);
            const double d = density[k] + frac * (density[k + 1] - density[k]);
            if (d > 0) {
                atoms.push_back(t);
                masses.push_back(d);
            }
        }
        return DiscreteMixing::from_masses(std::move(atoms), std::move(masses));
    }
};

/** Right-continuous CDF, i.e. the total weight of atoms at or below `t`. */
inline double mixing_cdf(const DiscreteMixing& g, double t) {
    long double s = 0;
    const auto a = g.atoms();
    const auto w = g.weights();
    for (std::size_t j = 0; j < a.size() && a[j] <= t; ++j) {
        s += w[j];
    }
    return std::min(1.0, static_cast<double>(s));
}

/** Generalized inverse inf{t : G(t) >= p} for p in (0, 1). */
inline double mixing_quantile(const DiscreteMixing& g, double p) {
    if (!(p > 0 && p < 1)) {
        throw std::domain_error("quantile level must lie in (0, 1)");
    }
    long double s = 0;
    const auto a = g.atoms();
    const auto w = g.weights();
    for (std::size_t j = 0; j < a.size(); ++j) {
        s += w[j];
        if (std::min(1.0, static_cast<double>(s)) >= p) {
            return a[j];
        }
    }
    return a.back();
}

inline constexpr double tail_mass_slack = 1e-10;

/**
 * Merit cutoff theta_alpha for a top-`alpha` selection: the largest atom whose upper tail
 * P(theta >= atom) still carries mass `alpha`.
 * For `Tail::lower` the smallest atom whose lower tail P(theta <= atom) carries mass `alpha`.
 * Masses within `tail_mass_slack` of `alpha` count as reaching it, so a G with an atom of weight exactly `alpha` at the top has that atom as its cutoff.
 */
inline double tail_cutoff(const DiscreteMixing& g, double alpha, Tail tail = Tail::upper) {
    if (!(alpha > 0 && alpha < 1)) {
        throw std::domain_error("alpha must lie in (0, 1)");
    }
    const auto a = g.atoms();
    const auto w = g.weights();
    const std::size_t m = a.size();
    long double s = 0;
    if (tail == Tail::upper) {
        for (std::size_t j = m; j-- > 0;) {
            s += w[j];
            if (s >= alpha - tail_mass_slack) {
                return a[j];
            }
        }
        return a.front();
    }
    for (std::size_t j = 0; j < m; ++j) {
        s += w[j];
        if (s >= alpha - tail_mass_slack) {
            return a[j];
        }
    }
    return a.back();
}

namespace detail {

/** log(pi_j * phi((y - theta_j)/sigma) / sigma) for each atom. */
inline void log_kernel_terms(const KnownVarObs& obs, const DiscreteMixing& g, std::vector<double>& out) {
    const auto a = g.atoms();
    const auto w = g.weights();
    out.resize(a.size());
    const double log_norm = -log_sqrt_2pi - std::log(obs.sigma);
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double z = (obs.y - a[j]) / obs.sigma;
        out[j] = (w[j] > 0 ? std::log(w[j]) : -std::numeric_limits<double>::infinity()) - 0.5 * z * z + log_norm;
    }
}

}

inline double log_marginal_density_known_var(const KnownVarObs& obs, const DiscreteMixing& g) {
    std::vector<double> terms;
    detail::log_kernel_terms(obs, g, terms);
    return std::max(detail::log_sum_exp(terms), detail::log_density_floor);
}

/** Mixture density f(y) = sum_j pi_j phi((y - theta_j)/sigma)/sigma, floored at exp(-745). */
inline double marginal_density_known_var(const KnownVarObs& obs, const DiscreteMixing& g) {
    return std::exp(log_marginal_density_known_var(obs, g));
}

/** Log of N(ybar | theta, sigma2/T_eff) x Gamma(s | r, sigma2/r) with r = (T-1)/2. */
inline double log_joint_density_panel(const PanelObs& obs, const LocationScale& atom) {
    if (!(atom.sigma2 > 0)) {
        throw std::domain_error("sigma2 must be positive");
    }
    const double r = obs.shape();
    const double sd = std::sqrt(atom.sigma2 / obs.effective_count());
    return normal_logpdf(obs.ybar, atom.theta, sd) + gamma_logpdf(obs.s, r, atom.sigma2 / r);
}

inline double joint_density_panel(const PanelObs& obs, const LocationScale& atom) {
    return std::exp(log_joint_density_panel(obs, atom));
}

}

#endif
