#ifndef EBRANK_IO_HPP
#define EBRANK_IO_HPP

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mixture.hpp"
#include "rankio.hpp"
#include "simlab.hpp"

/**
 * @file io.hpp
 * @brief CSV and JSON readers and writers for observations, fitted mixing distributions,
 * selection reports, study tables and run manifests.
 */

namespace ebrank::io {

using nlohmann::json;

inline constexpr const char* tool_version = "1.0.0";

/** Shortest text that reads back to the same double. */
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/** One parsed data row together with its 1-based line number in the source. */
struct CsvRow {
    std::size_t line;
    std::vector<std::string> fields;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<CsvRow> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (header[j] == name) {
                return j;
            }
        }
        throw DataError("missing column '" + std::string(name) + "'", 1);
    }

    bool has_column(std::string_view name) const {
        for (const auto& h : header) {
            if (h == name) {
                return true;
            }
        }
        return false;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

}

/** Comma-separated table with a header row; blank lines are skipped and every row must match the header width. */
inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (n == 1 && line.starts_with("\xEF\xBB\xBF")) {
            line.erase(0, 3);
        }
        if (detail::trim(line).empty()) {
            continue;
        }
        auto fields = detail::split(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size()) {
            throw DataError("expected " + std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()), n);
        }
        t.rows.push_back({n, std::move(fields)});
    }
    if (t.header.empty()) {
        throw DataError("empty input: no header row");
    }
    return t;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    return read_csv(in);
}

inline double parse_double(const std::string& s, std::size_t line, std::string_view what) {
    double x = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, x);
    if (ec != std::errc() || ptr != end || s.empty()) {
        throw DataError("field '" + std::string(what) + "' is not a number: '" + s + "'", line);
    }
    return x;
}

inline int parse_int(const std::string& s, std::size_t line, std::string_view what) {
    int x = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, x);
    if (ec != std::errc() || ptr != end || s.empty()) {
        throw DataError("field '" + std::string(what) + "' is not an integer: '" + s + "'", line);
    }
    return x;
}

/** Known-variance observations from columns `y,sigma`. */
inline std::vector<KnownVarObs> known_var_from_csv(const CsvTable& t) {
    const auto cy = t.column("y"), cs = t.column("sigma");
    std::vector<KnownVarObs> out;
    out.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        const double y = parse_double(r.fields[cy], r.line, "y");
        const double s = parse_double(r.fields[cs], r.line, "sigma");
        try {
            out.emplace_back(y, s);
        } catch (const std::domain_error& e) {
            throw DataError(e.what(), r.line);
        }
    }
    return out;
}

/** Panel summaries from columns `ybar,s,t` and an optional `w`. */
inline std::vector<PanelObs> panel_from_csv(const CsvTable& t) {
    const auto cy = t.column("ybar"), cs = t.column("s"), ct = t.column("t");
    const std::optional<std::size_t> cw = t.has_column("w") ? std::optional(t.column("w")) : std::nullopt;
    std::vector<PanelObs> out;
    out.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        const double y = parse_double(r.fields[cy], r.line, "ybar");
        const double s = parse_double(r.fields[cs], r.line, "s");
        const int tc = parse_int(r.fields[ct], r.line, "t");
        std::optional<double> w;
        if (cw) {
            w = parse_double(r.fields[*cw], r.line, "w");
        }
        try {
            out.emplace_back(y, s, tc, w);
        } catch (const std::domain_error& e) {
            throw DataError(e.what(), r.line);
        }
    }
    return out;
}

/** Long count records from columns `unit_id,period,observed,expected`. */
inline std::vector<LongRecord> long_from_csv(const CsvTable& t) {
    const auto cu = t.column("unit_id"), cp = t.column("period"), co = t.column("observed"), ce = t.column("expected");
    std::vector<LongRecord> out;
    out.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        if (r.fields[cu].empty()) {
            throw DataError("empty unit_id", r.line);
        }
        out.emplace_back(r.fields[cu], parse_int(r.fields[cp], r.line, "period"), parse_double(r.fields[co], r.line, "observed"),
                         parse_double(r.fields[ce], r.line, "expected"), r.line);
    }
    return out;
}

/** A fitted mixing distribution as stored on disk. */
struct StoredMixing {
    std::variant<DiscreteMixing, BivariateMixing> mixing;
    std::optional<double> bandwidth;

    bool is_panel() const { return std::holds_alternative<BivariateMixing>(mixing); }
};

inline json mixing_to_json(const StoredMixing& g) {
    json j;
    if (const auto* d = std::get_if<DiscreteMixing>(&g.mixing)) {
        j["model"] = "known-var";
        j["atoms"] = d->atoms();
        j["weights"] = d->weights();
    } else {
        const auto& b = std::get<BivariateMixing>(g.mixing);
        j["model"] = "panel";
        json atoms = json::array();
        for (const auto& a : b.atoms()) {
            atoms.push_back({a.theta, a.sigma2});
        }
        j["atoms"] = std::move(atoms);
        j["weights"] = b.weights();
    }
    j["smoothed"] = g.bandwidth ? json{{"bandwidth", *g.bandwidth}} : json(nullptr);
    return j;
}

inline StoredMixing mixing_from_json(const json& j) {
    try {
        const auto model = j.at("model").get<std::string>();
        auto weights = j.at("weights").get<std::vector<double>>();
        std::optional<double> h;
        if (j.contains("smoothed") && !j.at("smoothed").is_null()) {
            h = j.at("smoothed").at("bandwidth").get<double>();
        }
        if (model == "known-var") {
            return {DiscreteMixing(j.at("atoms").get<std::vector<double>>(), std::move(weights)), h};
        }
        if (model == "panel") {
            std::vector<LocationScale> atoms;
            for (const auto& a : j.at("atoms")) {
                if (!a.is_array() || a.size() != 2) {
                    throw DataError("panel atoms must be [theta, sigma2] pairs");
                }
                atoms.push_back({a[0].get<double>(), a[1].get<double>()});
            }
            return {BivariateMixing(std::move(atoms), std::move(weights)), h};
        }
        throw DataError("unknown model '" + model + "'");
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed mixing JSON: ") + e.what());
    } catch (const std::domain_error& e) {
        throw DataError(std::string("invalid mixing distribution: ") + e.what());
    }
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("'" + path + "' is not valid JSON: " + e.what());
    }
}

/** Selection outcome of one run in the form written to disk. */
struct SelectionReport {
    std::string rule;
    double alpha;
    std::optional<double> gamma;
    Tail tail;
    double theta_alpha;
    double lambda_cap;
    double lambda_fdr;
    double lambda_star;
    double est_fdr;
    std::size_t n_selected;
    std::vector<RankedUnit> units;
};

inline SelectionReport make_report(const std::string& rule, const SelectionConfig& cfg, const RankReport& r) {
    return {rule, cfg.alpha, cfg.gamma, cfg.tail, r.theta_alpha, r.selection.lambda_cap, r.selection.lambda_fdr, r.selection.lambda_star,
            r.selection.est_fdr, r.selection.n_selected, r.units};
}

inline const char* tail_name(Tail t) { return t == Tail::upper ? "upper" : "lower"; }

inline Tail parse_tail(const std::string& s) {
    if (s == "upper") {
        return Tail::upper;
    }
    if (s == "lower") {
        return Tail::lower;
    }
    throw std::domain_error("tail must be 'upper' or 'lower'");
}

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols{"index", "rank", "score", "v", "selected"};
    return cols;
}

/** Per-unit rows in rank order; numbers carry 17 significant digits. */
inline void write_report_csv(std::ostream& out, const SelectionReport& r) {
    const auto& cols = report_columns();
    for (std::size_t j = 0; j < cols.size(); ++j) {
        out << (j ? "," : "") << cols[j];
    }
    out << '\n';
    for (const auto& u : r.units) {
        out << u.index << ',' << u.rank << ',' << format_double(u.score) << ',' << format_double(u.v) << ',' << (u.selected ? 1 : 0) << '\n';
    }
}

inline std::vector<RankedUnit> report_units_from_csv(const CsvTable& t) {
    const auto ci = t.column("index"), cr = t.column("rank"), cs = t.column("score"), cv = t.column("v"), cf = t.column("selected");
    std::vector<RankedUnit> out;
    for (const auto& row : t.rows) {
        const int index = parse_int(row.fields[ci], row.line, "index");
        const int rank = parse_int(row.fields[cr], row.line, "rank");
        if (index < 0 || rank < 1) {
            throw DataError("index must be nonnegative and rank positive", row.line);
        }
        out.push_back({static_cast<std::size_t>(index), parse_double(row.fields[cs], row.line, "score"), parse_double(row.fields[cv], row.line, "v"),
                       static_cast<std::size_t>(rank), parse_int(row.fields[cf], row.line, "selected") != 0});
    }
    return out;
}

/** JSON has no infinities; non-finite numbers are written as the strings "inf", "-inf" and "nan". */
inline json number_to_json(double x) {
    if (std::isfinite(x)) {
        return x;
    }
    return std::isnan(x) ? "nan" : x > 0 ? "inf" : "-inf";
}

inline double number_from_json(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") {
            return std::numeric_limits<double>::infinity();
        }
        if (s == "-inf") {
            return -std::numeric_limits<double>::infinity();
        }
        if (s == "nan") {
            return std::numeric_limits<double>::quiet_NaN();
        }
        throw DataError("expected a number, found '" + s + "'");
    }
    return j.get<double>();
}

inline json report_to_json(const SelectionReport& r) {
    json units = json::array();
    for (const auto& u : r.units) {
        units.push_back({{"index", u.index}, {"rank", u.rank}, {"score", number_to_json(u.score)}, {"v", number_to_json(u.v)}, {"selected", u.selected}});
    }
    return {{"rule", r.rule},
            {"alpha", r.alpha},
            {"gamma", r.gamma ? json(*r.gamma) : json(nullptr)},
            {"tail", tail_name(r.tail)},
            {"theta_alpha", number_to_json(r.theta_alpha)},
            {"lambda_cap", number_to_json(r.lambda_cap)},
            {"lambda_fdr", number_to_json(r.lambda_fdr)},
            {"lambda_star", number_to_json(r.lambda_star)},
            {"est_fdr", number_to_json(r.est_fdr)},
            {"n_selected", r.n_selected},
            {"units", std::move(units)}};
}

inline SelectionReport report_from_json(const json& j) {
    try {
        SelectionReport r{j.at("rule").get<std::string>(),
                          j.at("alpha").get<double>(),
                          j.at("gamma").is_null() ? std::nullopt : std::optional(j.at("gamma").get<double>()),
                          parse_tail(j.at("tail").get<std::string>()),
                          number_from_json(j.at("theta_alpha")),
                          number_from_json(j.at("lambda_cap")),
                          number_from_json(j.at("lambda_fdr")),
                          number_from_json(j.at("lambda_star")),
                          number_from_json(j.at("est_fdr")),
                          j.at("n_selected").get<std::size_t>(),
                          {}};
        for (const auto& u : j.at("units")) {
            r.units.push_back({u.at("index").get<std::size_t>(), number_from_json(u.at("score")), number_from_json(u.at("v")), u.at("rank").get<std::size_t>(),
                               u.at("selected").get<bool>()});
        }
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed selection JSON: ") + e.what());
    }
}

inline void write_study_csv(std::ostream& out, std::span<const PerfRow> rows) {
    out << "rule,alpha,gamma,power,fdr,sel_prop,se_power,se_fdr,replications\n";
    for (const auto& r : rows) {
        out << r.rule << ',' << format_double(r.alpha) << ',' << format_double(r.gamma) << ',' << format_double(r.power) << ','
            << format_double(r.fdr) << ',' << format_double(r.sel_prop) << ',' << format_double(r.se_power) << ',' << format_double(r.se_fdr)
            << ',' << r.replications << '\n';
    }
}

inline json study_to_json(std::span<const PerfRow> rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"rule", r.rule},
                       {"alpha", r.alpha},
                       {"gamma", r.gamma},
                       {"power", r.power},
                       {"fdr", r.fdr},
                       {"sel_prop", r.sel_prop},
                       {"se_power", r.se_power},
                       {"se_fdr", r.se_fdr},
                       {"replications", r.replications}});
    }
    return out;
}

inline void write_transition_csv(std::ostream& out, const TransitionMatrix& m) {
    out << "from";
    for (const auto& l : m.labels) {
        out << ',' << l;
    }
    out << ",transitions,uniform_fill\n";
    for (std::size_t a = 0; a < m.labels.size(); ++a) {
        std::size_t total = 0;
        out << m.labels[a];
        for (std::size_t b = 0; b < m.labels.size(); ++b) {
            out << ',' << format_double(m.probs[a][b]);
            total += m.counts[a][b];
        }
        out << ',' << total << ',' << (m.uniform_row[a] ? 1 : 0) << '\n';
    }
}

/** Reproducibility record attached to every output. */
inline json run_manifest(const std::string& command, json config, std::optional<std::uint64_t> seed = std::nullopt) {
    return {{"tool", "ebrank"},
            {"version", tool_version},
            {"command", command},
            {"compiler", __VERSION__},
            {"cxx_standard", static_cast<long>(__cplusplus)},
            {"seed", seed ? json(*seed) : json(nullptr)},
            {"config", std::move(config)}};
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write '" + path + "'");
    }
    out << text;
    if (!out) {
        throw DataError("failed writing '" + path + "'");
    }
}

}

#endif
