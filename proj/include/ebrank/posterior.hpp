#ifndef EBRANK_POSTERIOR_HPP
#define EBRANK_POSTERIOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "mixture.hpp"

/**
 * @file posterior.hpp
 * @brief Posterior functionals of the unit effect under discrete, normal and normal-inverse-chi-squared priors,
 * plus the linear shrinkage rules used as competitors.
 */

namespace ebrank {

namespace detail {

/** Atom weights of the posterior of theta given one observation, scaled so that the largest is 1. */
struct PosteriorTerms {
    std::vector<double> terms;
    double total;
};

inline PosteriorTerms posterior_terms(const KnownVarObs& obs, const DiscreteMixing& g) {
    PosteriorTerms out;
    log_kernel_terms(obs, g, out.terms);
    const double mx = *std::max_element(out.terms.begin(), out.terms.end());
    long double total = 0;
    for (auto& t : out.terms) {
        t = std::exp(t - mx);
        total += t;
    }
    out.total = static_cast<double>(total);
    return out;
}

inline PosteriorTerms posterior_terms(const PanelObs& obs, const BivariateMixing& g) {
    PosteriorTerms out;
    const auto a = g.atoms();
    const auto w = g.weights();
    out.terms.resize(a.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a.size(); ++j) {
        out.terms[j] = w[j] > 0 ? std::log(w[j]) + log_joint_density_panel(obs, a[j]) : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, out.terms[j]);
    }
    if (!std::isfinite(mx)) {
        throw std::domain_error("observation has zero likelihood under every atom");
    }
    long double total = 0;
    for (auto& t : out.terms) {
        t = std::exp(t - mx);
        total += t;
    }
    out.total = static_cast<double>(total);
    return out;
}

inline double clamp_probability(double p) {
    return std::clamp(p, 0.0, 1.0);
}

}

/** P(theta >= theta_alpha | y, sigma) under a discrete G. */
inline double tail_prob_known_var(const KnownVarObs& obs, const DiscreteMixing& g, double theta_alpha) {
    const auto post = detail::posterior_terms(obs, g);
    const auto a = g.atoms();
    long double num = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j] >= theta_alpha) {
            num += post.terms[j];
        }
    }
    return detail::clamp_probability(static_cast<double>(num / post.total));
}

/** E[theta | y, sigma] under a discrete G. */
inline double post_mean_known_var(const KnownVarObs& obs, const DiscreteMixing& g) {
    const auto post = detail::posterior_terms(obs, g);
    const auto a = g.atoms();
    long double num = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        num += post.terms[j] * a[j];
    }
    return std::clamp(static_cast<double>(num / post.total), a.front(), a.back());
}

/** Location subtracted from the effects before taking a tail expectation. */
enum class Centering { none, mean, median };

inline double centering_shift(const DiscreteMixing& g, Centering c) {
    switch (c) {
    case Centering::mean:
        return g.mean();
    case Centering::median:
        return mixing_quantile(g, 0.5);
    default:
        return 0.0;
    }
}

/** E[(theta - c) 1{theta >= theta_alpha} | y, sigma], with c chosen by `centering`. */
inline double tail_expectation_known_var(const KnownVarObs& obs, const DiscreteMixing& g, double theta_alpha, Centering centering = Centering::none) {
    const auto post = detail::posterior_terms(obs, g);
    const double shift = centering_shift(g, centering);
    const auto a = g.atoms();
    long double num = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j] >= theta_alpha) {
            num += post.terms[j] * (a[j] - shift);
        }
    }
    return static_cast<double>(num / post.total);
}

/** y + sigma^2 f'(y)/f(y), with f' taken from the derivative of the Gaussian kernel. */
inline double tweedie_mean(double y, const DiscreteMixing& g, double sigma) {
    const KnownVarObs obs(y, sigma);
    const auto post = detail::posterior_terms(obs, g);
    const auto a = g.atoms();
    const double s2 = sigma * sigma;
    long double score = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        score += post.terms[j] * (a[j] - y) / s2;
    }
    return y + s2 * static_cast<double>(score / post.total);
}

/** P(theta > 0 | y, sigma); atoms at exactly zero do not count. */
inline double conventional_null_prob(const KnownVarObs& obs, const DiscreteMixing& g) {
    const auto post = detail::posterior_terms(obs, g);
    const auto a = g.atoms();
    long double num = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j] > 0) {
            num += post.terms[j];
        }
    }
    return detail::clamp_probability(static_cast<double>(num / post.total));
}

/** P(theta >= theta_alpha | ybar, s) under a discrete joint G of (theta, sigma^2). */
inline double tail_prob_panel(const PanelObs& obs, const BivariateMixing& g, double theta_alpha) {
    const auto post = detail::posterior_terms(obs, g);
    const auto a = g.atoms();
    long double num = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j].theta >= theta_alpha) {
            num += post.terms[j];
        }
    }
    return detail::clamp_probability(static_cast<double>(num / post.total));
}

namespace detail {

/**
 * Weight given to each atom when counting the top-`alpha` tail of G: 1 above the cutoff, 0 below it,
 * and at the cutoff the fraction of the atom's mass needed to make the tail mass exactly `alpha`.
 */
inline std::vector<double> top_share(std::span<const double> theta, std::span<const double> w, double alpha) {
    std::vector<std::size_t> order(theta.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return theta[a] > theta[b]; });
    std::vector<double> share(theta.size(), 0.0);
    long double above = 0;
    for (std::size_t pos = 0; pos < order.size();) {
        const double t = theta[order[pos]];
        std::size_t end = pos;
        long double at = 0;
        while (end < order.size() && theta[order[end]] == t) {
            at += w[order[end]];
            ++end;
        }
        double s = 1.0;
        if (above + at >= alpha - tail_mass_slack) {
            s = at > 0 ? static_cast<double>(std::clamp((static_cast<long double>(alpha) - above) / at, 0.0L, 1.0L)) : 0.0;
            if (s > 1 - 1e-9) {
                s = 1.0;
            }
        }
        for (std::size_t k = pos; k < end; ++k) {
            share[order[k]] = s;
        }
        if (s < 1.0) {
            break;
        }
        above += at;
        pos = end;
        if (above >= alpha - tail_mass_slack) {
            break;
        }
    }
    return share;
}

inline double shared_tail(const PosteriorTerms& post, std::span<const double> share) {
    long double num = 0;
    for (std::size_t j = 0; j < share.size(); ++j) {
        num += share[j] * post.terms[j];
    }
    return clamp_probability(static_cast<double>(num / post.total));
}

}

/**
 * Posterior probability that theta is among the top `alpha` of G, for a G that is known only as a set of atoms.
 * The atom at the cutoff contributes the fraction of its mass that completes the tail, so the prior tail mass is exactly `alpha`.
 * Agrees with `tail_prob_known_var` at `tail_cutoff(g, alpha)` whenever the atoms above and at the cutoff carry exactly `alpha`.
 */
class TopTailProb {
public:
    TopTailProb(const DiscreteMixing& g, double alpha) : g_(&g), cutoff_(tail_cutoff(g, alpha)), share_(detail::top_share(g.atoms(), g.weights(), alpha)) {}

    double operator()(const KnownVarObs& obs) const { return detail::shared_tail(detail::posterior_terms(obs, *g_), share_); }

    double cutoff() const { return cutoff_; }

private:
    const DiscreteMixing* g_;
    double cutoff_;
    std::vector<double> share_;
};

/** The panel counterpart of `TopTailProb`, splitting the mass of the joint atoms at the marginal cutoff. */
class TopTailProbPanel {
public:
    TopTailProbPanel(const BivariateMixing& g, double alpha) : g_(&g), cutoff_(tail_cutoff(g.theta_marginal(), alpha)) {
        std::vector<double> theta;
        for (const auto& a : g.atoms()) {
            theta.push_back(a.theta);
        }
        share_ = detail::top_share(theta, g.weights(), alpha);
    }

    double operator()(const PanelObs& obs) const { return detail::shared_tail(detail::posterior_terms(obs, *g_), share_); }

    double cutoff() const { return cutoff_; }

private:
    const BivariateMixing* g_;
    double cutoff_;
    std::vector<double> share_;
};

inline double post_mean_panel(const PanelObs& obs, const BivariateMixing& g) {
    const auto post = detail::posterior_terms(obs, g);
    const auto a = g.atoms();
    long double num = 0;
    double lo = a.front().theta, hi = lo;
    for (std::size_t j = 0; j < a.size(); ++j) {
        num += post.terms[j] * a[j].theta;
        lo = std::min(lo, a[j].theta);
        hi = std::max(hi, a[j].theta);
    }
    return std::clamp(static_cast<double>(num / post.total), lo, hi);
}

/**
 * @brief Normal prior N(mean, variance) on the effect, with closed-form posteriors under Gaussian noise.
 */
struct NormalPrior {
    double mean;
    double variance;

    NormalPrior(double m, double v) : mean(m), variance(v) {
        if (!std::isfinite(mean) || !(variance > 0) || !std::isfinite(variance)) {
            throw std::domain_error("NormalPrior needs finite mean and positive variance");
        }
    }

    double sd() const { return std::sqrt(variance); }

    /** Weight on the observation in the posterior mean. */
    double shrinkage(double sigma) const { return variance / (variance + sigma * sigma); }

    double post_mean(const KnownVarObs& obs) const {
        const double rho = shrinkage(obs.sigma);
        return rho * obs.y + (1 - rho) * mean;
    }

    double post_sd(double sigma) const { return std::sqrt(shrinkage(sigma)) * sigma; }

    double tail_prob(const KnownVarObs& obs, double theta_alpha) const {
        return std_normal_cdf((post_mean(obs) - theta_alpha) / post_sd(obs.sigma));
    }

    double upper_quantile(double alpha) const { return mean + sd() * std_normal_quantile(1 - alpha); }

    NormalPrior mirrored() const { return NormalPrior(-mean, variance); }
};

/** Hyperparameters (theta0, kappa0, nu0, sigma0^2) of a normal-inverse-chi-squared prior. */
struct NixHyper {
    double theta0;
    double kappa0;
    double nu0;
    double sigma0sq;

    NixHyper(double t0, double k0, double n0, double s0) : theta0(t0), kappa0(k0), nu0(n0), sigma0sq(s0) {
        if (!std::isfinite(theta0) || !(kappa0 > 0) || !(nu0 > 0) || !(sigma0sq > 0)) {
            throw std::domain_error("NixHyper needs finite theta0 and positive kappa0, nu0, sigma0sq");
        }
    }
};

struct NixPosterior {
    double thetaT;
    double kappaT;
    double nuT;
    double sigmaTsq;
};

inline NixPosterior nix_update(const PanelObs& obs, const NixHyper& h) {
    const double t = obs.t_count;
    const double y = obs.ybar;
    const double kappa = h.kappa0 + t;
    const double nu = h.nu0 + t;
    const double theta = (h.kappa0 * h.theta0 + t * y) / kappa;
    const double dev = h.theta0 - y;
    const double s2 = (h.nu0 * h.sigma0sq + (t - 1) * obs.s + t * h.kappa0 / (h.kappa0 + t) * dev * dev) / nu;
    return {theta, kappa, nu, s2};
}

/** Upper alpha point of the marginal prior of theta, a scaled t with nu0 degrees of freedom. */
inline double nix_theta_alpha(const NixHyper& h, double alpha) {
    if (!(alpha > 0 && alpha < 1)) {
        throw std::domain_error("alpha must lie in (0, 1)");
    }
    return h.theta0 + std::sqrt(h.sigma0sq / h.kappa0) * student_t_quantile(1 - alpha, h.nu0);
}

inline double nix_tail_prob_at(const PanelObs& obs, const NixHyper& h, double theta_alpha) {
    const auto post = nix_update(obs, h);
    const double z = (theta_alpha - post.thetaT) / std::sqrt(post.sigmaTsq / post.kappaT);
    return detail::clamp_probability(1 - student_t_cdf(z, post.nuT));
}

inline double nix_tail_prob(const PanelObs& obs, const NixHyper& h, double alpha) {
    return nix_tail_prob_at(obs, h, nix_theta_alpha(h, alpha));
}

inline double nix_post_mean(const PanelObs& obs, const NixHyper& h) {
    return nix_update(obs, h).thetaT;
}

/**
 * Method-of-moments NIX hyperparameters from a panel sample.
 * nu0 is matched to the dispersion of the sample variances and clamped to [4.5, 1000].
 */
inline NixHyper fit_nix_moments(std::span<const PanelObs> obs) {
    if (obs.size() < 3) {
        throw std::domain_error("fit_nix_moments needs at least 3 observations");
    }
    const double n = static_cast<double>(obs.size());
    double ymean = 0, smean = 0, s2mean = 0, tinv = 0;
    for (const auto& o : obs) {
        ymean += o.ybar;
        smean += o.s;
        s2mean += o.s * o.s / (1 + 2.0 / (o.t_count - 1));
        tinv += 1.0 / o.effective_count();
    }
    ymean /= n;
    smean /= n;
    s2mean /= n;
    tinv /= n;
    double yvar = 0;
    for (const auto& o : obs) {
        yvar += (o.ybar - ymean) * (o.ybar - ymean);
    }
    yvar /= (n - 1);

    double nu0 = 1000;
    const double ratio = s2mean / (smean * smean);
    if (ratio > 1) {
        nu0 = std::clamp((4 * ratio - 2) / (ratio - 1), 4.5, 1000.0);
    }
    const double sigma0sq = smean * (nu0 - 2) / nu0;
    const double between = yvar - smean * tinv;
    const double kappa0 = between > 0 ? std::clamp(smean / between, 1e-6, 1e6) : 1e6;
    return NixHyper(ymean, kappa0, nu0, sigma0sq);
}

/** Outcome of fitting N(mu, tau^2) to heteroskedastic observations by marginal maximum likelihood. */
struct LinearShrinkageFit {
    double mu;
    double tau2;
    std::vector<double> estimates;
};

namespace detail {

inline double precision_weighted_mean(std::span<const KnownVarObs> obs, double tau2) {
    long double num = 0, den = 0;
    for (const auto& o : obs) {
        const double w = 1.0 / (tau2 + o.sigma * o.sigma);
        num += w * o.y;
        den += w;
    }
    return static_cast<double>(num / den);
}

inline double profile_neg_loglik(std::span<const KnownVarObs> obs, double tau2) {
    const double mu = precision_weighted_mean(obs, tau2);
    long double s = 0;
    for (const auto& o : obs) {
        const double v = tau2 + o.sigma * o.sigma;
        s += std::log(v) + (o.y - mu) * (o.y - mu) / v;
    }
    return 0.5 * static_cast<double>(s);
}

inline std::pair<double, double> fit_normal_prior_mle(std::span<const KnownVarObs> obs) {
    const double n = static_cast<double>(obs.size());
    double ymean = 0, smax = 0;
    for (const auto& o : obs) {
        ymean += o.y;
        smax = std::max(smax, o.sigma);
    }
    ymean /= n;
    double yvar = 0;
    for (const auto& o : obs) {
        yvar += (o.y - ymean) * (o.y - ymean);
    }
    yvar /= n;
    const double upper = 10 * (yvar + smax * smax) + 1;

    // coarse scan first: the profile likelihood need not be unimodal with unequal variances
    constexpr int scan = 80;
    std::vector<double> pts{0.0};
    for (int k = 0; k <= scan; ++k) {
        pts.push_back(upper * std::pow(1e-8, 1.0 - static_cast<double>(k) / scan));
    }
    std::size_t best = 0;
    double best_val = profile_neg_loglik(obs, 0);
    for (std::size_t k = 1; k < pts.size(); ++k) {
        const double v = profile_neg_loglik(obs, pts[k]);
        if (v < best_val) {
            best_val = v;
            best = k;
        }
    }
    const double lo = best == 0 ? 0.0 : pts[best - 1];
    const double hi = best + 1 < pts.size() ? pts[best + 1] : pts[best];

    std::uintmax_t iters = 200;
    const auto res = boost::math::tools::brent_find_minima([&](double t) { return profile_neg_loglik(obs, t); }, lo, hi, 52, iters);
    double tau2 = res.first;
    if (!std::isfinite(tau2) || !std::isfinite(res.second)) {
        throw std::runtime_error("normal prior fit did not converge: tau2=" + std::to_string(tau2) + " after " + std::to_string(iters) + " iterations");
    }
    if (best_val <= res.second) {
        tau2 = pts[best];
    }
    return {precision_weighted_mean(obs, tau2), tau2};
}

}

/** Posterior means under the normal prior fitted by marginal maximum likelihood, with tau^2 >= 0. */
inline LinearShrinkageFit linear_shrinkage(std::span<const KnownVarObs> obs) {
    if (obs.size() < 3) {
        throw std::domain_error("linear_shrinkage needs at least 3 observations");
    }
    const auto [mu, tau2] = detail::fit_normal_prior_mle(obs);
    LinearShrinkageFit out{mu, tau2, {}};
    out.estimates.reserve(obs.size());
    for (const auto& o : obs) {
        const double s2 = o.sigma * o.sigma;
        out.estimates.push_back(o.y - s2 / (tau2 + s2) * (o.y - mu));
    }
    return out;
}

/** Linear shrinkage with each shrinkage ratio multiplied by (n - 3)/n. */
inline LinearShrinkageFit efron_morris(std::span<const KnownVarObs> obs) {
    if (obs.size() <= 3) {
        throw std::domain_error("efron_morris needs more than 3 observations");
    }
    const auto [mu, tau2] = detail::fit_normal_prior_mle(obs);
    const double n = static_cast<double>(obs.size());
    const double factor = (n - 3) / n;
    LinearShrinkageFit out{mu, tau2, {}};
    out.estimates.reserve(obs.size());
    for (const auto& o : obs) {
        const double s2 = o.sigma * o.sigma;
        out.estimates.push_back(o.y - factor * s2 / (tau2 + s2) * (o.y - mu));
    }
    return out;
}

}

#endif
