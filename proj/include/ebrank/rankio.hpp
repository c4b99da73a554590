#ifndef EBRANK_RANKIO_HPP
#define EBRANK_RANKIO_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mixture.hpp"
#include "npmle.hpp"
#include "posterior.hpp"
#include "selection.hpp"

/**
 * @file rankio.hpp
 * @brief Longitudinal count pipeline: variance-stabilized window statistics, ranking rules, letter grades
 * and grade transition matrices.
 */

namespace ebrank {

/** Input data problem, tagged with the offending source line when known (0 otherwise). */
class DataError : public std::runtime_error {
public:
    DataError(const std::string& msg, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/** Observed and expected event counts of one unit in one period. */
struct LongRecord {
    std::string unit_id;
    int period;
    double observed;
    double expected;
    std::size_t line = 0;

    LongRecord(std::string id, int p, double obs, double exp, std::size_t src_line = 0)
        : unit_id(std::move(id)), period(p), observed(obs), expected(exp), line(src_line) {
        if (!(expected > 0) || !std::isfinite(expected)) {
            throw DataError("expected count must be positive", line);
        }
        if (!(observed >= 0) || !std::isfinite(observed)) {
            throw DataError("observed count must be nonnegative", line);
        }
    }
};

struct VstValue {
    double z;
    double w;
};

/** Square-root transform z = sqrt(y / mu), approximately N(sqrt(rho), 1 / (4 mu)). */
inline VstValue poisson_vst(const LongRecord& rec) {
    return {std::sqrt(rec.observed / rec.expected), 4 * rec.expected};
}

/** Precision-weighted window summary of one unit. */
struct UnitStat {
    std::string unit_id;
    double t_stat;
    double w_total;
    int n_periods;
    double observed_total;
    double expected_total;

    KnownVarObs as_observation() const { return KnownVarObs::from_precision(t_stat, w_total); }
};

/** Inclusive range of periods. */
struct Window {
    int start;
    int end;

    Window(int s, int e) : start(s), end(e) {
        if (end < start) {
            throw std::domain_error("window end precedes its start");
        }
    }

    bool contains(int p) const { return p >= start && p <= end; }
    int length() const { return end - start + 1; }
};

struct WindowStats {
    std::vector<UnitStat> stats;

    /** Units with records but none usable in the window, or missing periods when completeness is required. */
    std::size_t omitted = 0;
};

/**
 * Per-unit T = sum(w z) / sum(w) over in-window records, in order of first appearance.
 * With `require_complete` a unit must report every period of the window.
 */
inline WindowStats aggregate_window(std::span<const LongRecord> records, const Window& window, bool require_complete = true) {
    std::map<std::string, std::size_t> slot;
    std::vector<std::string> order;
    std::vector<std::set<int>> periods;
    std::vector<UnitStat> acc;
    std::set<std::pair<std::string, int>> seen;
    std::set<std::string> all_units;

    for (const auto& r : records) {
        if (!seen.insert({r.unit_id, r.period}).second) {
            throw DataError("duplicate record for unit '" + r.unit_id + "' in period " + std::to_string(r.period), r.line);
        }
        all_units.insert(r.unit_id);
        if (!window.contains(r.period)) {
            continue;
        }
        auto [it, fresh] = slot.emplace(r.unit_id, acc.size());
        if (fresh) {
            acc.push_back({r.unit_id, 0, 0, 0, 0, 0});
            periods.emplace_back();
        }
        const auto vst = poisson_vst(r);
        auto& u = acc[it->second];
        u.t_stat += vst.w * vst.z;
        u.w_total += vst.w;
        u.n_periods += 1;
        u.observed_total += r.observed;
        u.expected_total += r.expected;
        periods[it->second].insert(r.period);
    }

    WindowStats out;
    for (std::size_t k = 0; k < acc.size(); ++k) {
        if (require_complete && static_cast<int>(periods[k].size()) != window.length()) {
            ++out.omitted;
            continue;
        }
        auto u = acc[k];
        u.t_stat /= u.w_total;
        out.stats.push_back(std::move(u));
    }
    out.omitted += all_units.size() - acc.size();
    return out;
}

/** Ranking rules available to the count pipeline. */
enum class RankRule { tp, pm, mle, poisson_mle, pvalue, james_stein, efron_morris };

inline RankRule parse_rank_rule(const std::string& name) {
    static const std::map<std::string, RankRule> names{
        {"tp", RankRule::tp}, {"pm", RankRule::pm}, {"mle", RankRule::mle}, {"poisson-mle", RankRule::poisson_mle},
        {"pval", RankRule::pvalue}, {"pvalue", RankRule::pvalue}, {"js", RankRule::james_stein},
        {"james-stein", RankRule::james_stein}, {"em", RankRule::efron_morris}, {"efron-morris", RankRule::efron_morris}};
    const auto it = names.find(name);
    if (it == names.end()) {
        throw std::domain_error("unknown ranking rule: " + name);
    }
    return it->second;
}

/** One unit in a ranking report. `score` is oriented so that larger means more preferred. */
struct RankedUnit {
    std::size_t index;
    double score;
    double v;
    std::size_t rank;
    bool selected;
};

struct RankReport {
    std::vector<RankedUnit> units;
    SelectionResult selection;
    double theta_alpha;
};

namespace detail {

inline std::vector<KnownVarObs> oriented(std::span<const KnownVarObs> obs, Tail tail) {
    std::vector<KnownVarObs> out;
    out.reserve(obs.size());
    for (const auto& o : obs) {
        out.emplace_back(tail == Tail::upper ? o.y : -o.y, o.sigma);
    }
    return out;
}

}

/**
 * Scores every unit with `rule`, computes tail probabilities under `g` for FDR estimation, and selects.
 * `g` lives on the original effect scale; bottom selection mirrors data and G.
 * `null_level` is the effect under the conventional null used by the p-value rule, and `ratios`
 * supplies observed/expected ratios for the Poisson rule.
 */
inline RankReport rank_observations(std::span<const KnownVarObs> obs, const DiscreteMixing& g, RankRule rule, const SelectionConfig& cfg,
                                    std::span<const double> ratios = {}, double null_level = 1.0) {
    if (obs.size() < 10) {
        throw std::domain_error("ranking needs at least 10 units");
    }
    const Tail tail = cfg.tail;
    const double sign = tail == Tail::upper ? 1.0 : -1.0;
    const auto data = detail::oriented(obs, tail);
    const DiscreteMixing prior = tail == Tail::upper ? g : g.mirrored();
    const TopTailProb top(prior, cfg.alpha);
    const double theta_alpha = top.cutoff();

    const std::size_t n = data.size();
    std::vector<double> v(n), score(n), key(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = top(data[i]);
        key[i] = data[i].y;
    }
    switch (rule) {
    case RankRule::tp:
        score = v;
        break;
    case RankRule::pm:
        for (std::size_t i = 0; i < n; ++i) {
            score[i] = post_mean_known_var(data[i], prior);
        }
        break;
    case RankRule::mle:
        score = key;
        break;
    case RankRule::poisson_mle:
        if (ratios.size() != n) {
            throw std::domain_error("poisson-mle needs an observed/expected ratio per unit");
        }
        for (std::size_t i = 0; i < n; ++i) {
            score[i] = sign * ratios[i];
        }
        break;
    case RankRule::pvalue:
        for (std::size_t i = 0; i < n; ++i) {
            score[i] = std_normal_cdf((data[i].y - sign * null_level) / data[i].sigma);
        }
        break;
    case RankRule::james_stein:
        score = linear_shrinkage(data).estimates;
        break;
    case RankRule::efron_morris:
        score = efron_morris(data).estimates;
        break;
    }

    RankReport out{{}, select_by_score(score, v, cfg, key), tail == Tail::upper ? theta_alpha : -theta_alpha};
    const auto order = rank_order(score, key);
    std::vector<bool> chosen(n, false);
    for (auto i : out.selection.selected) {
        chosen[i] = true;
    }
    out.units.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto i = order[r];
        out.units.push_back({i, score[i], v[i], r + 1, chosen[i]});
    }
    return out;
}

/** Panel counterpart of `rank_observations`; supports the TP, PM and MLE rules. */
inline RankReport rank_panel_observations(std::span<const PanelObs> obs, const BivariateMixing& g, RankRule rule, const SelectionConfig& cfg) {
    if (obs.size() < 10) {
        throw std::domain_error("ranking needs at least 10 units");
    }
    if (rule != RankRule::tp && rule != RankRule::pm && rule != RankRule::mle) {
        throw std::domain_error("panel data supports the tp, pm and mle rules only");
    }
    const bool upper = cfg.tail == Tail::upper;
    const BivariateMixing prior = upper ? g : g.mirrored();
    const TopTailProbPanel top(prior, cfg.alpha);
    const double theta_alpha = top.cutoff();
    const std::size_t n = obs.size();
    std::vector<double> v(n), score(n), key(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PanelObs o = upper ? obs[i] : PanelObs(-obs[i].ybar, obs[i].s, obs[i].t_count, obs[i].weight);
        key[i] = o.ybar;
        v[i] = top(o);
        score[i] = rule == RankRule::tp ? v[i] : rule == RankRule::pm ? post_mean_panel(o, prior) : o.ybar;
    }
    RankReport out{{}, select_by_score(score, v, cfg, key), upper ? theta_alpha : -theta_alpha};
    const auto order = rank_order(score, key);
    std::vector<bool> chosen(n, false);
    for (auto i : out.selection.selected) {
        chosen[i] = true;
    }
    for (std::size_t r = 0; r < n; ++r) {
        const auto i = order[r];
        out.units.push_back({i, score[i], v[i], r + 1, chosen[i]});
    }
    return out;
}

/** Fits G to the window statistics (optionally smoothed) and ranks the units. */
inline RankReport rank_units(std::span<const UnitStat> stats, RankRule rule, const SelectionConfig& cfg, bool smooth = false, const NpmleOptions& opt = {}) {
    if (stats.size() < 10) {
        throw std::domain_error("ranking needs at least 10 units");
    }
    std::vector<KnownVarObs> obs;
    std::vector<double> ratios;
    for (const auto& s : stats) {
        obs.push_back(s.as_observation());
        ratios.push_back(s.observed_total / s.expected_total);
    }
    auto g = fit_npmle_known_var(obs, opt).mixing;
    if (smooth) {
        g = smooth_mixing(g, default_bandwidth(g)).to_discrete();
    }
    return rank_observations(obs, g, rule, cfg, ratios);
}

/** Letter grades from best to worst with their target proportions. */
struct GradeScheme {
    std::vector<std::string> labels;
    std::vector<double> proportions;

    GradeScheme(std::vector<std::string> l, std::vector<double> p) : labels(std::move(l)), proportions(std::move(p)) {
        if (labels.empty() || labels.size() != proportions.size()) {
            throw std::domain_error("grade scheme needs one proportion per label");
        }
        double total = 0;
        for (auto x : proportions) {
            if (!(x >= 0)) {
                throw std::domain_error("grade proportions must be nonnegative");
            }
            total += x;
        }
        if (std::abs(total - 1) > 1e-9) {
            throw std::domain_error("grade proportions must sum to 1");
        }
        if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size()) {
            throw std::domain_error("grade labels must be distinct");
        }
    }

    static GradeScheme standard() { return GradeScheme({"A", "B", "C", "D", "F"}, {0.22, 0.30, 0.35, 0.09, 0.04}); }
};

/** Block sizes for `n` units by largest-remainder rounding; earlier labels win ties. */
inline std::vector<std::size_t> grade_block_sizes(std::size_t n, const GradeScheme& scheme) {
    const std::size_t k = scheme.labels.size();
    std::vector<std::size_t> sizes(k);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t used = 0;
    for (std::size_t j = 0; j < k; ++j) {
        const double exact = scheme.proportions[j] * static_cast<double>(n);
        // tolerate representation error so that exact products are not rounded down
        const double whole = std::floor(exact + 1e-9);
        sizes[j] = static_cast<std::size_t>(whole);
        used += sizes[j];
        remainders.push_back({exact - whole, j});
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; used < n; ++r) {
        ++sizes[remainders[r % k].second];
        ++used;
    }
    return sizes;
}

/** Grades for units listed from best to worst. */
inline std::map<std::string, std::string> assign_grades(std::span<const std::string> ranking, const GradeScheme& scheme) {
    const auto sizes = grade_block_sizes(ranking.size(), scheme);
    std::map<std::string, std::string> out;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
        for (std::size_t c = 0; c < sizes[j]; ++c, ++pos) {
            out[ranking[pos]] = scheme.labels[j];
        }
    }
    return out;
}

/** First-order transition frequencies between grades; rows without transitions are uniform and flagged. */
struct TransitionMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> probs;
    std::vector<std::vector<std::size_t>> counts;
    std::vector<bool> uniform_row;
};

inline TransitionMatrix transition_matrix(std::span<const std::vector<std::string>> histories, const std::vector<std::string>& labels) {
    std::map<std::string, std::size_t> index;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        index[labels[j]] = j;
    }
    const std::size_t k = labels.size();
    TransitionMatrix out{labels, std::vector<std::vector<double>>(k, std::vector<double>(k, 0.0)),
                         std::vector<std::vector<std::size_t>>(k, std::vector<std::size_t>(k, 0)), std::vector<bool>(k, false)};
    auto lookup = [&](const std::string& label) {
        const auto it = index.find(label);
        if (it == index.end()) {
            throw DataError("unknown grade label '" + label + "'");
        }
        return it->second;
    };
    for (const auto& h : histories) {
        for (std::size_t t = 1; t < h.size(); ++t) {
            ++out.counts[lookup(h[t - 1])][lookup(h[t])];
        }
        if (h.size() == 1) {
            lookup(h[0]);
        }
    }
    for (std::size_t a = 0; a < k; ++a) {
        std::size_t total = 0;
        for (auto c : out.counts[a]) {
            total += c;
        }
        if (total == 0) {
            out.uniform_row[a] = true;
            std::fill(out.probs[a].begin(), out.probs[a].end(), 1.0 / static_cast<double>(k));
            continue;
        }
        for (std::size_t b = 0; b < k; ++b) {
            out.probs[a][b] = static_cast<double>(out.counts[a][b]) / static_cast<double>(total);
        }
    }
    return out;
}

/** Graded ranking of one window. */
struct WindowGrades {
    Window window;
    std::vector<UnitStat> stats;
    RankReport report;
    std::map<std::string, std::string> grades;
};

/**
 * Ranks the units of a window and assigns grades in rank order. Selection targets the `better` tail
 * with capacity equal to the share of the top grade.
 */
inline WindowGrades grade_window(std::span<const LongRecord> records, const Window& window, const GradeScheme& scheme, RankRule rule = RankRule::tp,
                                 Tail better = Tail::lower, std::optional<double> gamma = std::nullopt, bool smooth = false, bool require_complete = true) {
    auto ws = aggregate_window(records, window, require_complete);
    const double alpha = std::clamp(scheme.proportions.front(), 1e-6, 1 - 1e-6);
    auto report = rank_units(ws.stats, rule, SelectionConfig(alpha, gamma, better), smooth);
    std::vector<std::string> order;
    order.reserve(report.units.size());
    for (const auto& u : report.units) {
        order.push_back(ws.stats[u.index].unit_id);
    }
    auto grades = assign_grades(order, scheme);
    return {window, std::move(ws.stats), std::move(report), std::move(grades)};
}

/** Grade sequences of the units graded in every window, keyed by unit. */
inline std::map<std::string, std::vector<std::string>> grade_histories(std::span<const WindowGrades> windows) {
    std::map<std::string, std::vector<std::string>> out;
    if (windows.empty()) {
        return out;
    }
    for (const auto& [unit, label] : windows.front().grades) {
        std::vector<std::string> h{label};
        bool complete = true;
        for (std::size_t w = 1; w < windows.size() && complete; ++w) {
            const auto it = windows[w].grades.find(unit);
            if (it == windows[w].grades.end()) {
                complete = false;
            } else {
                h.push_back(it->second);
            }
        }
        if (complete) {
            out.emplace(unit, std::move(h));
        }
    }
    return out;
}

/** Least-squares AR(1) coefficient of a series; NaN for fewer than three points or a constant series. */
inline double ar1_coefficient(std::span<const double> x) {
    if (x.size() < 3) {
        return std::nan("");
    }
    double m = 0;
    for (auto v : x) {
        m += v;
    }
    m /= static_cast<double>(x.size());
    double num = 0, den = 0;
    for (std::size_t t = 1; t < x.size(); ++t) {
        num += (x[t] - m) * (x[t - 1] - m);
        den += (x[t - 1] - m) * (x[t - 1] - m);
    }
    return den > 0 ? num / den : std::nan("");
}

}

#endif
