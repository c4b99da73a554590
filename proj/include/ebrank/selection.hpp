#ifndef EBRANK_SELECTION_HPP
#define EBRANK_SELECTION_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/legendre.hpp>

#include "mixture.hpp"
#include "posterior.hpp"

/**
 * @file selection.hpp
 * @brief Selection of the top (or bottom) units under a capacity constraint and a marginal FDR constraint,
 * in empirical form and as population oracles.
 */

namespace ebrank {

/**
 * @brief Capacity `alpha`, optional FDR level `gamma` and the tail being selected.
 *
 * Without `gamma` only the capacity constraint applies.
 */
struct SelectionConfig {
    double alpha;
    std::optional<double> gamma;
    Tail tail = Tail::upper;

    SelectionConfig(double a, std::optional<double> g, Tail t = Tail::upper) : alpha(a), gamma(g), tail(t) {
        if (!(alpha > 0 && alpha < 1)) {
            throw std::domain_error("alpha must lie in (0, 1)");
        }
        if (gamma) {
            if (!(*gamma > 0 && *gamma < 1)) {
                throw std::domain_error("gamma must lie in (0, 1)");
            }
            if (!(*gamma < 1 - alpha)) {
                throw std::domain_error("gamma must be smaller than 1 - alpha");
            }
        }
    }

    static SelectionConfig capacity_only(double a, Tail t = Tail::upper) { return SelectionConfig(a, std::nullopt, t); }
};

/**
 * @brief Outcome of an empirical selection.
 *
 * Thresholds are expressed on the scale of the ranking score; `selected` lists units in rank order.
 */
struct SelectionResult {
    std::vector<std::size_t> selected;
    double lambda_cap;
    double lambda_fdr;
    double lambda_star;
    double est_fdr;
    std::size_t n_selected;

    /** True when the FDR threshold is strictly stricter than the capacity threshold. */
    bool fdr_binding() const { return lambda_fdr > lambda_cap; }
};

/** Largest number of units a capacity of `alpha` admits among `n`. */
inline std::size_t capacity_count(double alpha, std::size_t n) {
    const double k = std::ceil(alpha * static_cast<double>(n) - 1e-9);
    return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

/**
 * Unit indices ordered from most to least preferred: score descending, then `key` descending
 * (when given), then index ascending.
 */
inline std::vector<std::size_t> rank_order(std::span<const double> scores, std::span<const double> key = {}) {
    if (!key.empty() && key.size() != scores.size()) {
        throw std::domain_error("tie-break key and scores differ in length");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        if (!key.empty() && key[a] != key[b]) {
            return key[a] > key[b];
        }
        return a < b;
    });
    return order;
}

/** The ceil(alpha n)-th largest value. Selecting values at or above it admits at most ceil(alpha n) units after tie-breaking. */
inline double empirical_capacity_threshold(std::span<const double> scores, double alpha) {
    if (scores.empty()) {
        return 1.0;
    }
    const std::size_t k = capacity_count(alpha, scores.size());
    if (k == 0) {
        return std::numeric_limits<double>::infinity();
    }
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(), std::greater<>());
    return sorted[k - 1];
}

/** One point of the empirical FDR curve: the mean of 1 - v over units scoring at least `threshold`. */
struct FdrPoint {
    double threshold;
    double q;
    std::size_t count;
};

/** Q_n evaluated at every distinct score, from the highest score down. */
inline std::vector<FdrPoint> empirical_fdr_curve(std::span<const double> scores, std::span<const double> v) {
    if (scores.size() != v.size()) {
        throw std::domain_error("scores and v differ in length");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<FdrPoint> out;
    long double null_sum = 0;
    std::size_t count = 0;
    for (std::size_t pos = 0; pos < order.size();) {
        const double t = scores[order[pos]];
        while (pos < order.size() && scores[order[pos]] == t) {
            null_sum += 1.0 - v[order[pos]];
            ++count;
            ++pos;
        }
        out.push_back({t, static_cast<double>(null_sum / static_cast<long double>(count)), count});
    }
    return out;
}

namespace detail {

inline std::optional<double> smallest_fdr_threshold(std::span<const double> scores, std::span<const double> v, double gamma) {
    std::optional<double> best;
    for (const auto& p : empirical_fdr_curve(scores, v)) {
        if (p.q <= gamma) {
            best = p.threshold;
        }
    }
    return best;
}

}

/** Smallest observed v whose upper set has mean 1 - v at most `gamma`; 1 when none qualifies. */
inline double empirical_fdr_threshold(std::span<const double> v, double gamma) {
    return detail::smallest_fdr_threshold(v, v, gamma).value_or(1.0);
}

/**
 * Select by an arbitrary score, estimating the FDR of each candidate set by the mean of 1 - v.
 * `tiebreak` is the secondary sort key among equal scores.
 */
inline SelectionResult select_by_score(std::span<const double> scores, std::span<const double> v, const SelectionConfig& cfg, std::span<const double> tiebreak = {}) {
    if (scores.size() != v.size()) {
        throw std::domain_error("scores and v differ in length");
    }
    const std::size_t n = scores.size();
    const std::size_t k = capacity_count(cfg.alpha, n);
    const auto order = rank_order(scores, tiebreak);

    SelectionResult out{};
    out.lambda_cap = k == 0 ? std::numeric_limits<double>::infinity() : scores[order[k - 1]];
    out.lambda_fdr = -std::numeric_limits<double>::infinity();
    if (cfg.gamma) {
        out.lambda_fdr = detail::smallest_fdr_threshold(scores, v, *cfg.gamma).value_or(std::numeric_limits<double>::infinity());
    }
    out.lambda_star = std::max(out.lambda_cap, out.lambda_fdr);

    long double null_sum = 0;
    for (std::size_t pos = 0; pos < k && scores[order[pos]] >= out.lambda_star; ++pos) {
        out.selected.push_back(order[pos]);
        null_sum += 1.0 - v[order[pos]];
    }
    out.n_selected = out.selected.size();
    out.est_fdr = out.n_selected == 0 ? 0.0 : static_cast<double>(null_sum / static_cast<long double>(out.n_selected));
    return out;
}

/** Select units by their posterior tail probabilities `v`. */
inline SelectionResult select(std::span<const double> v, const SelectionConfig& cfg, std::span<const double> tiebreak = {}) {
    return select_by_score(v, v, cfg, tiebreak);
}

/** Same mechanics as `select`, for tail probabilities from the unknown-variance model. */
inline SelectionResult select_panel(std::span<const double> v, const SelectionConfig& cfg, std::span<const double> tiebreak = {}) {
    return select_by_score(v, v, cfg, tiebreak);
}

/**
 * @brief Distribution H of the noise standard deviation, as a discrete set of nodes with weights.
 *
 * Continuous uniform H is represented by its Gauss-Legendre nodes.
 */
class SigmaDist {
public:
    static SigmaDist point(double sigma) { return discrete({sigma}, {1.0}); }

    static SigmaDist discrete(std::vector<double> atoms, std::vector<double> weights) {
        if (atoms.size() != weights.size()) {
            throw std::domain_error("sigma atoms and weights differ in length");
        }
        detail::check_weights(weights);
        for (auto a : atoms) {
            if (!(a > 0) || !std::isfinite(a)) {
                throw std::domain_error("sigma support must be positive");
            }
        }
        SigmaDist out;
        out.nodes_ = std::move(atoms);
        out.weights_ = std::move(weights);
        return out;
    }

    static SigmaDist uniform(double lo, double hi, unsigned order = 64) {
        if (!(lo > 0) || !(hi > lo)) {
            throw std::domain_error("uniform sigma needs 0 < lo < hi");
        }
        if (order < 2) {
            throw std::domain_error("quadrature order must be at least 2");
        }
        SigmaDist out;
        out.uniform_ = {lo, hi};
        const auto zeros = boost::math::legendre_p_zeros<double>(static_cast<int>(order));
        const double mid = (lo + hi) / 2, half = (hi - lo) / 2;
        auto push = [&](double x) {
            const double dp = boost::math::legendre_p_prime(static_cast<int>(order), x);
            out.nodes_.push_back(mid + half * x);
            out.weights_.push_back(1.0 / ((1 - x * x) * dp * dp));
        };
        for (auto it = zeros.rbegin(); it != zeros.rend(); ++it) {
            if (*it != 0) {
                push(-*it);
            }
        }
        for (auto x : zeros) {
            push(x);
        }
        out.weights_ = detail::normalize(std::move(out.weights_));
        return out;
    }

    std::span<const double> nodes() const { return nodes_; }
    std::span<const double> weights() const { return weights_; }
    bool is_uniform() const { return uniform_.has_value(); }

    template<std::uniform_random_bit_generator Rng>
    double sample(Rng& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (uniform_) {
            return uniform_->first + (uniform_->second - uniform_->first) * u(rng);
        }
        double x = u(rng), acc = 0;
        for (std::size_t j = 0; j < nodes_.size(); ++j) {
            acc += weights_[j];
            if (x < acc) {
                return nodes_[j];
            }
        }
        return nodes_.back();
    }

private:
    SigmaDist() = default;
    std::vector<double> nodes_;
    std::vector<double> weights_;
    std::optional<std::pair<double, double>> uniform_;
};

/** P(Y >= t | sigma) in total and restricted to effects below the merit cutoff. */
struct ExceedMass {
    double total;
    double null;
};

inline double tail_cutoff(const NormalPrior& g, double alpha) {
    return g.upper_quantile(alpha);
}

inline double tail_mass(const DiscreteMixing& g, double theta_alpha) {
    return 1.0 - mixing_cdf(g, std::nextafter(theta_alpha, -std::numeric_limits<double>::infinity()));
}

inline double tail_mass(const NormalPrior& g, double theta_alpha) {
    return std_normal_sf((theta_alpha - g.mean) / g.sd());
}

inline double tail_prob(const KnownVarObs& obs, const DiscreteMixing& g, double theta_alpha) {
    return tail_prob_known_var(obs, g, theta_alpha);
}

inline double tail_prob(const KnownVarObs& obs, const NormalPrior& g, double theta_alpha) {
    return g.tail_prob(obs, theta_alpha);
}

inline double post_mean(const KnownVarObs& obs, const DiscreteMixing& g) {
    return post_mean_known_var(obs, g);
}

inline double post_mean(const KnownVarObs& obs, const NormalPrior& g) {
    return g.post_mean(obs);
}

inline ExceedMass exceed_mass(const DiscreteMixing& g, double t, double sigma, double theta_alpha) {
    const auto a = g.atoms();
    const auto w = g.weights();
    ExceedMass out{0, 0};
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double p = w[j] * std_normal_sf((t - a[j]) / sigma);
        out.total += p;
        if (a[j] < theta_alpha) {
            out.null += p;
        }
    }
    return out;
}

inline ExceedMass exceed_mass(const NormalPrior& g, double t, double sigma, double theta_alpha) {
    ExceedMass out{std_normal_sf((t - g.mean) / std::sqrt(g.variance + sigma * sigma)), 0};
    if (std::isinf(t)) {
        out.null = t < 0 ? std_normal_cdf((theta_alpha - g.mean) / g.sd()) : 0.0;
        return out;
    }
    const double tau = g.sd();
    const double z_alpha = (theta_alpha - g.mean) / tau;
    if (z_alpha <= -12) {
        return out;
    }
    auto integrand = [&](double z) { return normal_pdf(z) * std_normal_sf((t - g.mean - tau * z) / sigma); };
    out.null = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, -12.0, z_alpha, 10, 1e-12);
    return out;
}

/** A prior on the effect that the population oracles can integrate against. */
template<class P>
concept OraclePrior = requires(const P& g, const KnownVarObs& obs, double x) {
    { tail_prob(obs, g, x) } -> std::convertible_to<double>;
    { post_mean(obs, g) } -> std::convertible_to<double>;
    { exceed_mass(g, x, x, x) } -> std::same_as<ExceedMass>;
    { tail_mass(g, x) } -> std::convertible_to<double>;
    { tail_cutoff(g, x) } -> std::convertible_to<double>;
    { g.mirrored() } -> std::same_as<P>;
};

/** Selection boundary in y at one noise level; infinite when the score never crosses the level. */
struct BoundaryPoint {
    double sigma;
    double t;
    bool out_of_range;
};

inline constexpr double boundary_tolerance = 1e-10;
inline constexpr double lambda_tolerance = 1e-8;

/**
 * Smallest y with score(y, sigma) >= level, for a score nondecreasing in y.
 * Found by bracketing outward from `center` and bisecting to `boundary_tolerance`.
 */
template<class Score>
BoundaryPoint score_boundary(Score&& score, double level, double sigma, double center = 0.0) {
    double width = 10 * sigma + 10;
    double lo = center - width, hi = center + width;
    constexpr double limit = 1e7;
    while (score(hi, sigma) < level) {
        if (hi > limit) {
            return {sigma, std::numeric_limits<double>::infinity(), true};
        }
        lo = hi;
        width *= 2;
        hi = center + width;
    }
    while (score(lo, sigma) >= level) {
        if (lo < -limit) {
            return {sigma, -std::numeric_limits<double>::infinity(), true};
        }
        hi = lo;
        width *= 2;
        lo = center - width;
    }
    while (hi - lo > boundary_tolerance) {
        const double mid = lo + (hi - lo) / 2;
        if (mid <= lo || mid >= hi) {
            break;
        }
        if (score(mid, sigma) >= level) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return {sigma, hi, false};
}

/** Boundary t_alpha(lambda, sigma) of the tail-probability rule at each sigma in `sigmas`. */
template<OraclePrior Prior>
std::vector<BoundaryPoint> boundary_curve(const Prior& g, double theta_alpha, double lambda, std::span<const double> sigmas) {
    if (!(lambda > 0 && lambda < 1)) {
        throw std::domain_error("lambda must lie in (0, 1)");
    }
    auto v = [&](double y, double s) { return tail_prob(KnownVarObs(y, s), g, theta_alpha); };
    std::vector<BoundaryPoint> out;
    out.reserve(sigmas.size());
    for (auto s : sigmas) {
        out.push_back(score_boundary(v, lambda, s, theta_alpha));
    }
    return out;
}

/** Population behaviour of a threshold rule. */
struct OraclePoint {
    double lambda;
    double selected_prop;
    double mfdr;
    double power;
};

struct OracleThresholds {
    double theta_alpha;
    double lambda_cap;
    double lambda_fdr;
    double lambda_star;
    bool cap_at_bound;
    bool fdr_at_bound;
    OraclePoint at_star;

    bool fdr_binding() const { return lambda_fdr > lambda_cap; }
};

namespace detail {

template<OraclePrior Prior, class Score>
OraclePoint evaluate_level(const Prior& g, const SigmaDist& h, double theta_alpha, Score& score, double level, double center) {
    const auto nodes = h.nodes();
    const auto hw = h.weights();
    double total = 0, null = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto b = score_boundary(score, level, nodes[k], center);
        const auto e = exceed_mass(g, b.t, nodes[k], theta_alpha);
        total += hw[k] * e.total;
        null += hw[k] * e.null;
    }
    const double tail = tail_mass(g, theta_alpha);
    return {level, total, total > 0 ? null / total : 0.0, tail > 0 ? (total - null) / tail : 0.0};
}

/** Smallest level in [lo, hi] at which `ok` holds, for `ok` monotone from false to true. */
template<class Pred>
std::pair<double, bool> bisect_level(Pred&& ok, double lo, double hi) {
    if (ok(lo)) {
        return {lo, true};
    }
    if (!ok(hi)) {
        return {hi, true};
    }
    while (hi - lo > lambda_tolerance * std::max(1.0, std::abs(lo) + std::abs(hi))) {
        const double mid = lo + (hi - lo) / 2;
        if (ok(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return {hi, false};
}

}

/**
 * Population thresholds for a rule that selects units with score(y, sigma) >= lambda, where the score
 * is nondecreasing in y for each sigma and lambda ranges over [score_lo, score_hi].
 * The capacity threshold makes the selected proportion alpha; the FDR threshold makes the marginal FDR gamma.
 * Upper tail only; callers handle the lower tail by mirroring.
 */
template<OraclePrior Prior, class Score>
OracleThresholds oracle_thresholds(const Prior& g, const SigmaDist& h, double theta_alpha, const SelectionConfig& cfg, Score&& score, double score_lo, double score_hi) {
    OracleThresholds out{};
    out.theta_alpha = theta_alpha;
    auto at = [&](double level) { return detail::evaluate_level(g, h, theta_alpha, score, level, theta_alpha); };

    const auto cap = detail::bisect_level([&](double l) { return at(l).selected_prop <= cfg.alpha; }, score_lo, score_hi);
    out.lambda_cap = cap.first;
    out.cap_at_bound = cap.second;

    out.lambda_fdr = score_lo;
    out.fdr_at_bound = false;
    if (cfg.gamma) {
        const double gamma = *cfg.gamma;
        const auto fdr = detail::bisect_level([&](double l) { return at(l).mfdr <= gamma; }, score_lo, score_hi);
        out.lambda_fdr = fdr.first;
        out.fdr_at_bound = fdr.second;
    }
    out.lambda_star = std::max(out.lambda_cap, out.lambda_fdr);
    out.at_star = at(out.lambda_star);
    return out;
}

/** Oracle thresholds of the tail-probability rule, on the probability scale. */
template<OraclePrior Prior>
OracleThresholds oracle_thresholds_known_var(const Prior& g, const SigmaDist& h, const SelectionConfig& cfg) {
    if (cfg.tail == Tail::lower) {
        return oracle_thresholds_known_var(g.mirrored(), h, SelectionConfig(cfg.alpha, cfg.gamma, Tail::upper));
    }
    const double theta_alpha = tail_cutoff(g, cfg.alpha);
    auto v = [&](double y, double s) { return tail_prob(KnownVarObs(y, s), g, theta_alpha); };
    return oracle_thresholds(g, h, theta_alpha, cfg, v, 0.0, 1.0);
}

/** Power P(select, theta >= theta_alpha) / P(theta >= theta_alpha) of the rule selecting y >= boundary(sigma). */
template<OraclePrior Prior, class Boundary>
double population_power(const Prior& g, const SigmaDist& h, double theta_alpha, Boundary&& boundary) {
    const auto nodes = h.nodes();
    const auto hw = h.weights();
    double hit = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto e = exceed_mass(g, boundary(nodes[k]), nodes[k], theta_alpha);
        hit += hw[k] * (e.total - e.null);
    }
    const double tail = tail_mass(g, theta_alpha);
    return tail > 0 ? std::clamp(hit / tail, 0.0, 1.0) : 0.0;
}

struct MarginalErrorRates {
    double mfdr;
    double mfnr;
    double cutoff;

    /** The prior has no mass on one side of the merit cutoff, so the rates are trivially 0 or 1. */
    bool degenerate;
};

/** Marginal FDR and FNR of selecting y above its (1 - alpha) marginal quantile, with common noise level sigma. */
template<OraclePrior Prior>
MarginalErrorRates mfdr_mfnr_homogeneous(const Prior& g, double sigma, double alpha) {
    if (!(sigma > 0)) {
        throw std::domain_error("sigma must be positive");
    }
    if (!(alpha > 0 && alpha < 1)) {
        throw std::domain_error("alpha must lie in (0, 1)");
    }
    const double theta_alpha = tail_cutoff(g, alpha);
    auto exceed = [&](double y, double s) { return 1.0 - exceed_mass(g, y, s, theta_alpha).total; };
    const double cutoff = score_boundary(exceed, 1 - alpha, sigma, theta_alpha).t;

    const auto e = exceed_mass(g, cutoff, sigma, theta_alpha);
    const double tail = tail_mass(g, theta_alpha);
    const double mfdr = std::clamp(e.null / alpha, 0.0, 1.0);
    const double mfnr = std::clamp((tail - (e.total - e.null)) / (1 - alpha), 0.0, 1.0);
    return {mfdr, mfnr, cutoff, tail <= 0 || tail >= 1};
}

}

#endif
