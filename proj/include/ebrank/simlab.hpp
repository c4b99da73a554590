#ifndef EBRANK_SIMLAB_HPP
#define EBRANK_SIMLAB_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <concepts>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "mixture.hpp"
#include "npmle.hpp"
#include "posterior.hpp"
#include "selection.hpp"

/**
 * @file simlab.hpp
 * @brief Data-generating processes, the catalog of competing selection rules, and the Monte Carlo study driver.
 */

namespace ebrank {

/**
 * @brief The true prior behind a simulated sample.
 *
 * Known-variance designs carry a prior on theta plus the noise distribution H;
 * panel designs carry a joint prior on (theta, sigma^2).
 */
struct Truth {
    std::variant<DiscreteMixing, NormalPrior, BivariateMixing, NixHyper> prior;
    std::optional<SigmaDist> sigma;

    bool is_panel() const {
        return std::holds_alternative<BivariateMixing>(prior) || std::holds_alternative<NixHyper>(prior);
    }

    /** Merit cutoff for the top `alpha` under the true prior. */
    double theta_alpha(double alpha) const {
        return std::visit([&](const auto& g) -> double {
            using G = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<G, BivariateMixing>) {
                return tail_cutoff(g.theta_marginal(), alpha);
            } else if constexpr (std::is_same_v<G, NixHyper>) {
                return nix_theta_alpha(g, alpha);
            } else {
                return tail_cutoff(g, alpha);
            }
        }, prior);
    }

    Truth mirrored() const {
        Truth out{std::visit([](const auto& g) -> decltype(prior) {
            using G = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<G, NixHyper>) {
                return NixHyper(-g.theta0, g.kappa0, g.nu0, g.sigma0sq);
            } else {
                return g.mirrored();
            }
        }, prior), sigma};
        return out;
    }
};

/** True effects and the corresponding observations; exactly one of `known` and `panel` is filled. */
struct Sample {
    std::vector<double> theta;
    std::vector<KnownVarObs> known;
    std::vector<PanelObs> panel;

    bool is_panel() const { return !panel.empty(); }
    std::size_t size() const { return theta.size(); }

    /** Observed location of each unit: y or ybar. */
    std::vector<double> locations() const {
        std::vector<double> out;
        out.reserve(size());
        if (is_panel()) {
            for (const auto& o : panel) {
                out.push_back(o.ybar);
            }
        } else {
            for (const auto& o : known) {
                out.push_back(o.y);
            }
        }
        return out;
    }

    /** Negated effects and locations, so that bottom selection becomes top selection. */
    Sample mirrored() const {
        Sample out;
        out.theta.reserve(size());
        for (auto t : theta) {
            out.theta.push_back(-t);
        }
        out.known.reserve(known.size());
        for (const auto& o : known) {
            out.known.emplace_back(-o.y, o.sigma);
        }
        out.panel.reserve(panel.size());
        for (const auto& o : panel) {
            out.panel.emplace_back(-o.ybar, o.s, o.t_count, o.weight);
        }
        return out;
    }
};

namespace dgp {

/** Discretized Student t effects on [-support, support]; noise sd uniform on [0.5, 1.5]. */
struct StudentT {
    double df;
    double support = 20;
    std::size_t grid_points = 401;
};

/** Three-point G at (-1, 2, 5) with weights (0.85, 0.10, 0.05); noise sd uniform on [0.5, 4]. */
struct Discrete3 {};

/** Three-point G at (-1, 0.5, 5) with weights (0.85, 0.10, 0.05); noise sd uniform on [0.5, 4]. */
struct ZeroNull3 {};

/** theta ~ N(0, sigma_theta_sq), noise sd uniform on [sigma_lo, sigma_hi]. */
struct NormalNormal {
    double sigma_theta_sq = 1;
    double sigma_lo = 0.5;
    double sigma_hi = 1;
};

/** (theta, sigma^2) from a normal-inverse-chi-squared prior, observed through T periods. */
struct Nix {
    double theta0 = 0;
    double kappa0 = 1;
    double nu0 = 6;
    double sigma0sq = 1;
    int t_count = 9;
};

/** (theta, sigma) at (-1, 6), (4, 2), (5, 4) with weights (0.85, 0.10, 0.05), observed through T periods. */
struct BivariateDiscrete {
    int t_count = 9;
};

/** An arbitrary discrete G with an arbitrary noise distribution H. */
struct TeacherVA {
    DiscreteMixing g;
    SigmaDist h;

    /**
     * Synthetic stand-in for a teacher value-added population: a left-skewed effect distribution
     * 0.9 N(0, 0.1^2) + 0.1 N(-0.25, 0.15^2) on 300 points, and noise sd from the two-component lognormal
     * 0.7 LN(log 0.08, 0.3^2) + 0.3 LN(log 0.15, 0.3^2) on 200 points.
     */
    static TeacherVA standard() {
        auto g = DiscreteMixing::discretize([](double t) {
            return std::log(0.9 * normal_pdf(t, 0, 0.1) + 0.1 * normal_pdf(t, -0.25, 0.15));
        }, -0.9, 0.5, 300);
        std::vector<double> nodes, mass;
        for (int k = 0; k < 200; ++k) {
            const double s = 0.02 + 0.38 * k / 199.0;
            const double ls = std::log(s);
            nodes.push_back(s);
            mass.push_back((0.7 * normal_pdf(ls, std::log(0.08), 0.3) + 0.3 * normal_pdf(ls, std::log(0.15), 0.3)) / s);
        }
        return {std::move(g), SigmaDist::discrete(std::move(nodes), detail::normalize(std::move(mass)))};
    }
};

}

using Dgp = std::variant<dgp::StudentT, dgp::Discrete3, dgp::ZeroNull3, dgp::NormalNormal, dgp::Nix, dgp::BivariateDiscrete, dgp::TeacherVA>;

inline DiscreteMixing student_t_mixing(const dgp::StudentT& d) {
    if (!(d.df > 0) || !(d.support > 0) || d.grid_points < 2) {
        throw std::domain_error("StudentT needs df > 0, support > 0 and at least 2 grid points");
    }
    const double df = d.df;
    return DiscreteMixing::discretize([df](double t) { return student_t_logpdf(t, df); }, -d.support, d.support, d.grid_points);
}

inline DiscreteMixing example_discrete3() {
    return DiscreteMixing({-1, 2, 5}, {0.85, 0.10, 0.05});
}

inline DiscreteMixing example_zeronull3() {
    return DiscreteMixing({-1, 0.5, 5}, {0.85, 0.10, 0.05});
}

inline BivariateMixing example_bivariate_discrete() {
    return BivariateMixing({{-1, 36}, {4, 4}, {5, 16}}, {0.85, 0.10, 0.05});
}

inline Truth dgp_truth(const Dgp& d) {
    return std::visit([](const auto& x) -> Truth {
        using D = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<D, dgp::StudentT>) {
            return {student_t_mixing(x), SigmaDist::uniform(0.5, 1.5)};
        } else if constexpr (std::is_same_v<D, dgp::Discrete3>) {
            return {example_discrete3(), SigmaDist::uniform(0.5, 4)};
        } else if constexpr (std::is_same_v<D, dgp::ZeroNull3>) {
            return {example_zeronull3(), SigmaDist::uniform(0.5, 4)};
        } else if constexpr (std::is_same_v<D, dgp::NormalNormal>) {
            return {NormalPrior(0, x.sigma_theta_sq), SigmaDist::uniform(x.sigma_lo, x.sigma_hi)};
        } else if constexpr (std::is_same_v<D, dgp::Nix>) {
            if (x.t_count < 4) {
                throw std::domain_error("Nix design needs T >= 4");
            }
            return {NixHyper(x.theta0, x.kappa0, x.nu0, x.sigma0sq), std::nullopt};
        } else if constexpr (std::is_same_v<D, dgp::BivariateDiscrete>) {
            if (x.t_count < 4) {
                throw std::domain_error("BivariateDiscrete design needs T >= 4");
            }
            return {example_bivariate_discrete(), std::nullopt};
        } else {
            return {x.g, x.h};
        }
    }, d);
}

inline int dgp_panel_length(const Dgp& d) {
    if (const auto* x = std::get_if<dgp::Nix>(&d)) {
        return x->t_count;
    }
    if (const auto* x = std::get_if<dgp::BivariateDiscrete>(&d)) {
        return x->t_count;
    }
    return 0;
}

/** A reproducible generator for replication `rep` of a study seeded with `seed`. */
inline std::mt19937_64 replication_rng(std::uint64_t seed, std::uint64_t rep) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32)};
    return std::mt19937_64(seq);
}

namespace detail {

template<std::uniform_random_bit_generator Rng>
PanelObs draw_panel(double theta, double sigma2, int t_count, Rng& rng) {
    std::normal_distribution<double> z(0, 1);
    std::chi_squared_distribution<double> chi(t_count - 1);
    const double ybar = theta + std::sqrt(sigma2 / t_count) * z(rng);
    const double s = sigma2 * chi(rng) / (t_count - 1);
    return PanelObs(ybar, s, t_count);
}

}

/** Draws `n` units from the design using `rng`. */
template<std::uniform_random_bit_generator Rng>
Sample sample_dgp(const Dgp& d, std::size_t n, Rng& rng) {
    if (n < 1) {
        throw std::domain_error("sample size must be at least 1");
    }
    const auto truth = dgp_truth(d);
    Sample out;
    out.theta.reserve(n);
    std::normal_distribution<double> z(0, 1);

    if (const auto* g = std::get_if<DiscreteMixing>(&truth.prior)) {
        std::discrete_distribution<std::size_t> pick(g->weights().begin(), g->weights().end());
        out.known.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double theta = g->atoms()[pick(rng)];
            const double sigma = truth.sigma->sample(rng);
            out.theta.push_back(theta);
            out.known.emplace_back(theta + sigma * z(rng), sigma);
        }
    } else if (const auto* np = std::get_if<NormalPrior>(&truth.prior)) {
        out.known.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double theta = np->mean + np->sd() * z(rng);
            const double sigma = truth.sigma->sample(rng);
            out.theta.push_back(theta);
            out.known.emplace_back(theta + sigma * z(rng), sigma);
        }
    } else if (const auto* bg = std::get_if<BivariateMixing>(&truth.prior)) {
        const int t_count = dgp_panel_length(d);
        std::discrete_distribution<std::size_t> pick(bg->weights().begin(), bg->weights().end());
        out.panel.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& atom = bg->atoms()[pick(rng)];
            out.theta.push_back(atom.theta);
            out.panel.push_back(detail::draw_panel(atom.theta, atom.sigma2, t_count, rng));
        }
    } else {
        const auto& h = std::get<NixHyper>(truth.prior);
        const int t_count = dgp_panel_length(d);
        std::chi_squared_distribution<double> chi(h.nu0);
        out.panel.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double sigma2 = h.nu0 * h.sigma0sq / chi(rng);
            const double theta = h.theta0 + std::sqrt(sigma2 / h.kappa0) * z(rng);
            out.theta.push_back(theta);
            out.panel.push_back(detail::draw_panel(theta, sigma2, t_count, rng));
        }
    }
    return out;
}

inline Sample sample_dgp(const Dgp& d, std::size_t n, std::uint64_t seed) {
    auto rng = replication_rng(seed, 0);
    return sample_dgp(d, n, rng);
}

/** Realized power, false discovery proportion and selected proportion of one selection. */
struct Evaluation {
    double power;
    double fdp;
    double sel_prop;
};

inline Evaluation evaluate(std::span<const std::size_t> selected, std::span<const double> theta, double theta_alpha, Tail tail = Tail::upper) {
    auto in_tail = [&](double t) { return tail == Tail::upper ? t >= theta_alpha : t <= theta_alpha; };
    std::size_t deserving = 0;
    for (auto t : theta) {
        deserving += in_tail(t) ? 1 : 0;
    }
    std::size_t hits = 0;
    for (auto i : selected) {
        if (i >= theta.size()) {
            throw std::out_of_range("selected index out of range");
        }
        hits += in_tail(theta[i]) ? 1 : 0;
    }
    const double k = static_cast<double>(selected.size());
    Evaluation out{0, 0, 0};
    if (!theta.empty()) {
        out.sel_prop = k / static_cast<double>(theta.size());
    }
    if (deserving > 0) {
        out.power = static_cast<double>(hits) / static_cast<double>(deserving);
    }
    if (!selected.empty()) {
        out.fdp = (k - static_cast<double>(hits)) / k;
    }
    return out;
}

/**
 * @brief Lazily computed, per-sample inputs shared by all rules: fitted priors and oracle quantities.
 *
 * Works in the upper tail; the study driver mirrors samples for bottom selection.
 */
class RuleContext {
public:
    RuleContext(const Sample& sample, const Truth& truth, NpmleOptions opt = {}) : sample_(sample), truth_(truth), opt_(opt) {}

    const Sample& sample() const { return sample_; }
    const Truth& truth() const { return truth_; }

    const std::vector<double>& locations() {
        if (!locations_) {
            locations_ = sample_.locations();
        }
        return *locations_;
    }

    const DiscreteMixing& kw() {
        require_known("Kiefer-Wolfowitz rules");
        if (!kw_) {
            kw_ = fit_npmle_known_var(sample_.known, opt_).mixing;
        }
        return *kw_;
    }

    const DiscreteMixing& kw_smoothed() {
        if (!kws_) {
            const auto& g = kw();
            kws_ = smooth_mixing(g, default_bandwidth(g)).to_discrete();
        }
        return *kws_;
    }

    const BivariateMixing& kw_panel() {
        require_panel("panel Kiefer-Wolfowitz rules");
        if (!kwp_) {
            kwp_ = fit_npmle_panel(sample_.panel, opt_).mixing;
        }
        return *kwp_;
    }

    const NixHyper& nix() {
        require_panel("NIX rules");
        if (!nix_) {
            nix_ = fit_nix_moments(sample_.panel);
        }
        return *nix_;
    }

    const LinearShrinkageFit& linear() {
        require_known("linear shrinkage rules");
        if (!lin_) {
            lin_ = linear_shrinkage(sample_.known);
        }
        return *lin_;
    }

    const LinearShrinkageFit& efron_morris_fit() {
        require_known("Efron-Morris rules");
        if (!em_) {
            em_ = efron_morris(sample_.known);
        }
        return *em_;
    }

    /** Tail probabilities under the true prior. */
    const std::vector<double>& oracle_v(double alpha) {
        auto it = oracle_v_.find(alpha);
        if (it != oracle_v_.end()) {
            return it->second;
        }
        const double cutoff = truth_.theta_alpha(alpha);
        std::vector<double> v(sample_.size());
        std::visit([&](const auto& g) {
            using G = std::decay_t<decltype(g)>;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if constexpr (std::is_same_v<G, BivariateMixing>) {
                    v[i] = tail_prob_panel(sample_.panel[i], g, cutoff);
                } else if constexpr (std::is_same_v<G, NixHyper>) {
                    v[i] = nix_tail_prob_at(sample_.panel[i], g, cutoff);
                } else {
                    v[i] = tail_prob(sample_.known[i], g, cutoff);
                }
            }
        }, truth_.prior);
        return oracle_v_.emplace(alpha, std::move(v)).first->second;
    }

    void require_known(const char* what) const {
        if (sample_.is_panel()) {
            throw std::domain_error(std::string(what) + " need known-variance data");
        }
    }

    void require_panel(const char* what) const {
        if (!sample_.is_panel()) {
            throw std::domain_error(std::string(what) + " need panel data");
        }
    }

private:
    const Sample& sample_;
    const Truth& truth_;
    NpmleOptions opt_;
    std::optional<std::vector<double>> locations_;
    std::optional<DiscreteMixing> kw_, kws_;
    std::optional<BivariateMixing> kwp_;
    std::optional<NixHyper> nix_;
    std::optional<LinearShrinkageFit> lin_, em_;
    std::map<double, std::vector<double>> oracle_v_;
};

/** Ranking scores of a rule and the tail probabilities used to estimate its FDR. */
struct RuleScores {
    std::vector<double> score;
    std::vector<double> v;
};

/** A named selection rule; `capacity_only` rules ignore the FDR level. */
struct Rule {
    std::string name;
    bool capacity_only = false;
    std::function<RuleScores(RuleContext&, double alpha)> compute;
};

namespace detail {

inline RuleScores tp_scores(const std::vector<KnownVarObs>& obs, const DiscreteMixing& g, double alpha) {
    const TopTailProb v(g, alpha);
    RuleScores out;
    out.v.reserve(obs.size());
    for (const auto& o : obs) {
        out.v.push_back(v(o));
    }
    out.score = out.v;
    return out;
}

inline RuleScores pm_scores(const std::vector<KnownVarObs>& obs, const DiscreteMixing& g, double alpha) {
    auto out = tp_scores(obs, g, alpha);
    for (std::size_t i = 0; i < obs.size(); ++i) {
        out.score[i] = post_mean_known_var(obs[i], g);
    }
    return out;
}

inline RuleScores linear_scores(const std::vector<KnownVarObs>& obs, const LinearShrinkageFit& fit, double alpha) {
    const NormalPrior prior(fit.mu, std::max(fit.tau2, 1e-12));
    const double cutoff = prior.upper_quantile(alpha);
    RuleScores out{fit.estimates, {}};
    out.v.reserve(obs.size());
    for (const auto& o : obs) {
        out.v.push_back(prior.tail_prob(o, cutoff));
    }
    return out;
}

inline Rule base_rule(const std::string& name) {
    if (name == "OTP") {
        return {name, false, [](RuleContext& c, double a) { const auto& v = c.oracle_v(a); return RuleScores{v, v}; }};
    }
    if (name == "OPM") {
        return {name, false, [](RuleContext& c, double a) {
            RuleScores out{{}, c.oracle_v(a)};
            const auto& s = c.sample();
            out.score.resize(s.size());
            std::visit([&](const auto& g) {
                using G = std::decay_t<decltype(g)>;
                for (std::size_t i = 0; i < s.size(); ++i) {
                    if constexpr (std::is_same_v<G, BivariateMixing>) {
                        out.score[i] = post_mean_panel(s.panel[i], g);
                    } else if constexpr (std::is_same_v<G, NixHyper>) {
                        out.score[i] = nix_post_mean(s.panel[i], g);
                    } else {
                        out.score[i] = post_mean(s.known[i], g);
                    }
                }
            }, c.truth().prior);
            return out;
        }};
    }
    if (name == "KWsTP") {
        return {name, false, [](RuleContext& c, double a) { return tp_scores(c.sample().known, c.kw_smoothed(), a); }};
    }
    if (name == "KWsPM") {
        return {name, false, [](RuleContext& c, double a) { return pm_scores(c.sample().known, c.kw_smoothed(), a); }};
    }
    if (name == "KWTP" || name == "KWPM") {
        const bool pm = name == "KWPM";
        return {name, false, [pm](RuleContext& c, double a) {
            if (!c.sample().is_panel()) {
                return pm ? pm_scores(c.sample().known, c.kw(), a) : tp_scores(c.sample().known, c.kw(), a);
            }
            const auto& g = c.kw_panel();
            const TopTailProbPanel v(g, a);
            RuleScores out;
            for (const auto& o : c.sample().panel) {
                out.v.push_back(v(o));
                out.score.push_back(pm ? post_mean_panel(o, g) : out.v.back());
            }
            return out;
        }};
    }
    if (name == "LPM") {
        return {name, false, [](RuleContext& c, double a) { return linear_scores(c.sample().known, c.linear(), a); }};
    }
    if (name == "EM") {
        return {name, false, [](RuleContext& c, double a) { return linear_scores(c.sample().known, c.efron_morris_fit(), a); }};
    }
    if (name == "MLE") {
        return {name, true, [](RuleContext& c, double a) { return RuleScores{c.locations(), c.oracle_v(a)}; }};
    }
    if (name == "PVAL") {
        return {name, true, [](RuleContext& c, double a) {
            const double cutoff = c.truth().theta_alpha(a);
            RuleScores out{{}, c.oracle_v(a)};
            const auto& s = c.sample();
            out.score.reserve(s.size());
            if (s.is_panel()) {
                for (const auto& o : s.panel) {
                    out.score.push_back(student_t_cdf((o.ybar - cutoff) / std::sqrt(o.s / o.effective_count()), o.t_count - 1));
                }
            } else {
                for (const auto& o : s.known) {
                    out.score.push_back(std_normal_cdf((o.y - cutoff) / o.sigma));
                }
            }
            return out;
        }};
    }
    if (name == "NIX-PM" || name == "NIX-TP") {
        const bool pm = name == "NIX-PM";
        return {name, true, [pm](RuleContext& c, double a) {
            const auto& h = c.nix();
            const double cutoff = nix_theta_alpha(h, a);
            RuleScores out;
            for (const auto& o : c.sample().panel) {
                out.v.push_back(nix_tail_prob_at(o, h, cutoff));
                out.score.push_back(pm ? nix_post_mean(o, h) : out.v.back());
            }
            return out;
        }};
    }
    throw std::domain_error("unknown rule: " + name);
}

}

/** Names accepted by `make_rule`. Appending `*` to any name imposes the capacity constraint only. */
inline std::vector<std::string> rule_catalog() {
    return {"OTP", "OPM", "KWsTP", "KWsPM", "KWTP", "KWPM", "LPM", "EM", "MLE", "PVAL", "NIX-PM", "NIX-TP"};
}

inline Rule make_rule(const std::string& name) {
    if (!name.empty() && name.back() == '*') {
        auto rule = detail::base_rule(name.substr(0, name.size() - 1));
        rule.name = name;
        rule.capacity_only = true;
        return rule;
    }
    return detail::base_rule(name);
}

/** Scores and selects with one rule on a sample; upper tail, ties broken by the observed location. */
inline SelectionResult apply_rule(const Rule& rule, RuleContext& ctx, double alpha, std::optional<double> gamma) {
    const auto scores = rule.compute(ctx, alpha);
    const SelectionConfig cfg(alpha, rule.capacity_only ? std::nullopt : gamma);
    return select_by_score(scores.score, scores.v, cfg, ctx.locations());
}

/** Mean performance of one rule in one (alpha, gamma) cell over the replications of a study. */
struct PerfRow {
    std::string rule;
    double alpha;
    double gamma;
    double power;
    double fdr;
    double sel_prop;
    double se_power;
    double se_fdr;
    std::size_t replications;
};

struct StudyConfig {
    std::vector<std::string> rules;
    std::vector<double> alphas;
    std::vector<double> gammas;
    std::size_t replications = 100;
    std::size_t n = 10000;
    std::uint64_t seed = 1;
    Tail tail = Tail::upper;
    NpmleOptions npmle{};
    unsigned threads = 0;
};

namespace detail {

struct CellKey {
    std::size_t rule, alpha, gamma;
};

inline double standard_error(std::span<const double> x) {
    if (x.size() < 2) {
        return 0;
    }
    double m = 0;
    for (auto v : x) {
        m += v;
    }
    m /= static_cast<double>(x.size());
    double ss = 0;
    for (auto v : x) {
        ss += (v - m) * (v - m);
    }
    return std::sqrt(ss / static_cast<double>(x.size() - 1)) / std::sqrt(static_cast<double>(x.size()));
}

}

/**
 * Monte Carlo study: every replication draws a fresh sample, applies every rule in every (alpha, gamma) cell,
 * and scores the selection against the true effects. Replications run on `threads` workers, each with
 * its own generator derived from (seed, replication), so the output does not depend on scheduling.
 */
inline std::vector<PerfRow> run_study(const Dgp& d, const StudyConfig& cfg) {
    if (cfg.replications < 1 || cfg.n < 1 || cfg.rules.empty() || cfg.alphas.empty() || cfg.gammas.empty()) {
        throw std::domain_error("study needs rules, alphas, gammas, replications >= 1 and n >= 1");
    }
    for (auto a : cfg.alphas) {
        for (auto g : cfg.gammas) {
            SelectionConfig(a, g);
        }
    }
    std::vector<Rule> rules;
    for (const auto& r : cfg.rules) {
        rules.push_back(make_rule(r));
    }

    const Truth base_truth = dgp_truth(d);
    const Truth truth = cfg.tail == Tail::lower ? base_truth.mirrored() : base_truth;

    const std::size_t nr = rules.size(), na = cfg.alphas.size(), ng = cfg.gammas.size();
    const std::size_t cells = nr * na * ng;
    std::vector<std::vector<Evaluation>> results(cfg.replications, std::vector<Evaluation>(cells));

    auto run_one = [&](std::size_t rep) {
        auto rng = replication_rng(cfg.seed, rep);
        auto sample = sample_dgp(d, cfg.n, rng);
        if (cfg.tail == Tail::lower) {
            sample = sample.mirrored();
        }
        RuleContext ctx(sample, truth, cfg.npmle);
        for (std::size_t ai = 0; ai < na; ++ai) {
            const double alpha = cfg.alphas[ai];
            const double cutoff = truth.theta_alpha(alpha);
            for (std::size_t ri = 0; ri < nr; ++ri) {
                const auto scores = rules[ri].compute(ctx, alpha);
                std::optional<Evaluation> shared;
                for (std::size_t gi = 0; gi < ng; ++gi) {
                    Evaluation e;
                    if (rules[ri].capacity_only && shared) {
                        e = *shared;
                    } else {
                        const SelectionConfig sc(alpha, rules[ri].capacity_only ? std::nullopt : std::optional<double>(cfg.gammas[gi]));
                        const auto sel = select_by_score(scores.score, scores.v, sc, ctx.locations());
                        e = evaluate(sel.selected, sample.theta, cutoff, Tail::upper);
                        shared = e;
                    }
                    results[rep][(ri * na + ai) * ng + gi] = e;
                }
            }
        }
    };

    unsigned workers = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, cfg.replications));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto worker = [&]() {
        for (std::size_t rep = next++; rep < cfg.replications; rep = next++) {
            try {
                run_one(rep);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(failure_lock);
                if (!failure) {
                    failure = std::make_exception_ptr(std::runtime_error("replication " + std::to_string(rep) + ": " + e.what()));
                }
                next = cfg.replications;
            }
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    std::vector<PerfRow> rows;
    rows.reserve(cells);
    const double reps = static_cast<double>(cfg.replications);
    for (std::size_t ri = 0; ri < nr; ++ri) {
        for (std::size_t ai = 0; ai < na; ++ai) {
            for (std::size_t gi = 0; gi < ng; ++gi) {
                const std::size_t c = (ri * na + ai) * ng + gi;
                std::vector<double> pw, fd;
                double sp = 0;
                for (const auto& r : results) {
                    pw.push_back(r[c].power);
                    fd.push_back(r[c].fdp);
                    sp += r[c].sel_prop;
                }
                double mp = 0, mf = 0;
                for (std::size_t k = 0; k < pw.size(); ++k) {
                    mp += pw[k];
                    mf += fd[k];
                }
                rows.push_back({rules[ri].name, cfg.alphas[ai], cfg.gammas[gi], mp / reps, mf / reps, sp / reps,
                                detail::standard_error(pw), detail::standard_error(fd), cfg.replications});
            }
        }
    }
    return rows;
}

/** Parses a design name such as `student-t:3`, `discrete3`, `zero-null3`, `normal-normal`, `nix`, `bivariate-discrete` or `teacher-va`. */
inline Dgp make_dgp(const std::string& design) {
    const auto colon = design.find(':');
    const std::string name = design.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : design.substr(colon + 1);
    if (name == "student-t") {
        if (arg.empty()) {
            throw std::domain_error("student-t needs degrees of freedom, e.g. student-t:3");
        }
        return dgp::StudentT{std::stod(arg)};
    }
    if (name == "discrete3") {
        return dgp::Discrete3{};
    }
    if (name == "zero-null3") {
        return dgp::ZeroNull3{};
    }
    if (name == "normal-normal") {
        dgp::NormalNormal d;
        if (!arg.empty()) {
            d.sigma_theta_sq = std::stod(arg);
        }
        return d;
    }
    if (name == "nix") {
        return dgp::Nix{};
    }
    if (name == "bivariate-discrete") {
        return dgp::BivariateDiscrete{};
    }
    if (name == "teacher-va") {
        return dgp::TeacherVA::standard();
    }
    throw std::domain_error("unknown design: " + design);
}

}

#endif
