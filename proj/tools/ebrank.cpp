#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebrank.hpp"

namespace {

using namespace ebrank;
using io::json;

/** Bad arguments or option values; mapped to exit status 2. */
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template<class F>
auto as_usage(F&& f) {
    try {
        return f();
    } catch (const std::domain_error& e) {
        throw UsageError(e.what());
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    } catch (const std::out_of_range& e) {
        throw UsageError(e.what());
    }
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

double to_double(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(s, &used);
    } catch (const std::exception&) {
        throw UsageError(what + ": '" + s + "' is not a number");
    }
    if (used != s.size()) {
        throw UsageError(what + ": '" + s + "' is not a number");
    }
    return x;
}

int to_int(const std::string& s, const std::string& what) {
    const double x = to_double(s, what);
    if (x != static_cast<int>(x)) {
        throw UsageError(what + ": '" + s + "' is not an integer");
    }
    return static_cast<int>(x);
}

std::vector<double> to_doubles(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        out.push_back(to_double(item, what));
    }
    if (out.empty()) {
        throw UsageError(what + " is empty");
    }
    return out;
}

Window parse_window(const std::string& s) {
    const auto parts = split_list(s, ':');
    if (parts.size() != 2) {
        throw UsageError("window must look like START:END, got '" + s + "'");
    }
    return as_usage([&] { return Window(to_int(parts[0], "window start"), to_int(parts[1], "window end")); });
}

GradeScheme parse_scheme(const std::string& s) {
    if (s == "default") {
        return GradeScheme::standard();
    }
    std::vector<std::string> labels;
    std::vector<double> props;
    for (const auto& item : split_list(s)) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw UsageError("scheme entries must look like LABEL=PROPORTION, got '" + item + "'");
        }
        labels.push_back(item.substr(0, eq));
        props.push_back(to_double(item.substr(eq + 1), "scheme proportion"));
    }
    return as_usage([&] { return GradeScheme(labels, props); });
}

Tail parse_tail(const std::string& s) {
    return as_usage([&] { return io::parse_tail(s); });
}

SelectionConfig make_config(double alpha, const std::optional<double>& gamma, Tail tail) {
    return as_usage([&] { return SelectionConfig(alpha, gamma, tail); });
}

json config_json(const SelectionConfig& cfg) {
    return {{"alpha", cfg.alpha}, {"gamma", cfg.gamma ? json(*cfg.gamma) : json(nullptr)}, {"tail", io::tail_name(cfg.tail)}};
}

void emit(const std::optional<std::string>& path, const std::string& text) {
    if (path) {
        io::write_text_file(*path, text);
    } else {
        std::cout << text;
    }
}

/** Writes a CSV either to `prefix`.csv with a manifest sidecar or to stdout with the manifest on stderr. */
void emit_csv(const std::optional<std::string>& prefix, const std::string& csv, const json& manifest) {
    if (prefix) {
        io::write_text_file(*prefix + ".csv", csv);
        io::write_text_file(*prefix + ".manifest.json", manifest.dump(2) + "\n");
    } else {
        std::cout << csv;
        std::cerr << manifest.dump() << "\n";
    }
}

struct FitArgs {
    std::string input;
    std::string model = "known-var";
    std::size_t grid = 300;
    std::size_t grid_sigma = 40;
    bool smooth = false;
    double tol = 1e-8;
    int maxit = 5000;
    std::optional<std::string> output;
};

int run_fit(const FitArgs& a, const std::string& command) {
    if (a.model != "known-var" && a.model != "panel") {
        throw UsageError("--model must be known-var or panel");
    }
    if (a.smooth && a.model == "panel") {
        throw UsageError("--smooth applies to the known-var model only");
    }
    NpmleOptions opt;
    opt.tol = a.tol;
    opt.maxit = a.maxit;
    const auto table = io::read_csv_file(a.input);

    io::StoredMixing stored{DiscreteMixing::point_mass(0), std::nullopt};
    FitReport report;
    if (a.model == "known-var") {
        const auto obs = io::known_var_from_csv(table);
        auto fit = fit_npmle_known_var(obs, opt, a.grid);
        report = fit.report;
        stored.mixing = fit.mixing;
        if (a.smooth) {
            const double h = default_bandwidth(fit.mixing);
            stored.mixing = smooth_mixing(fit.mixing, h).to_discrete();
            stored.bandwidth = h;
        }
    } else {
        const auto obs = io::panel_from_csv(table);
        auto fit = fit_npmle_panel(obs, opt, a.grid, a.grid_sigma);
        report = fit.report;
        stored.mixing = fit.mixing;
    }

    auto j = io::mixing_to_json(stored);
    j["fit"] = {{"loglik", report.loglik_trace.empty() ? 0.0 : report.loglik_trace.back()},
                {"iterations", report.iterations},
                {"converged", report.converged},
                {"kkt_max_violation", report.kkt_max_violation},
                {"atom_count", report.atom_count},
                {"grid_size", report.grid_size}};
    j["manifest"] = io::run_manifest(command, {{"input", a.input}, {"model", a.model}, {"grid", a.grid}, {"smooth", a.smooth}, {"tol", a.tol}, {"maxit", a.maxit}});
    emit(a.output, j.dump(2) + "\n");
    if (!report.converged) {
        std::cerr << "warning: NPMLE did not converge in " << report.iterations << " iterations\n";
    }
    return 0;
}

struct SelectArgs {
    std::string input;
    std::string g;
    double alpha = 0;
    std::optional<double> gamma;
    std::string tail = "upper";
    std::string rule = "tp";
    double null_level = 0;
    std::optional<std::string> output;
};

int run_select(const SelectArgs& a, const std::string& command) {
    const auto cfg = make_config(a.alpha, a.gamma, parse_tail(a.tail));
    const auto rule = as_usage([&] { return parse_rank_rule(a.rule); });
    if (rule == RankRule::poisson_mle) {
        throw UsageError("poisson-mle needs count data; use the rank subcommand");
    }
    const auto stored = io::mixing_from_json(io::read_json_file(a.g));
    const auto table = io::read_csv_file(a.input);

    RankReport report;
    if (stored.is_panel()) {
        const auto obs = io::panel_from_csv(table);
        report = as_usage([&] { return rank_panel_observations(obs, std::get<BivariateMixing>(stored.mixing), rule, cfg); });
    } else {
        const auto obs = io::known_var_from_csv(table);
        report = rank_observations(obs, std::get<DiscreteMixing>(stored.mixing), rule, cfg, {}, a.null_level);
    }

    const auto sel = io::make_report(a.rule, cfg, report);
    auto cj = config_json(cfg);
    cj["input"] = a.input;
    cj["g"] = a.g;
    cj["rule"] = a.rule;
    const auto manifest = io::run_manifest(command, cj);
    json j = io::report_to_json(sel);
    j["manifest"] = manifest;
    if (a.output) {
        io::write_text_file(*a.output + ".json", j.dump(2) + "\n");
        std::ostringstream csv;
        io::write_report_csv(csv, sel);
        io::write_text_file(*a.output + ".csv", csv.str());
    } else {
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

struct BoundaryArgs {
    std::string g;
    double alpha = 0;
    std::optional<double> gamma;
    std::string sigma_range;
    std::optional<double> lambda;
    std::optional<std::string> output;
};

int run_boundary(const BoundaryArgs& a, const std::string& command) {
    const auto cfg = make_config(a.alpha, a.gamma, Tail::upper);
    const auto parts = split_list(a.sigma_range, ':');
    if (parts.size() != 3) {
        throw UsageError("--sigma-range must look like LO:HI:STEPS");
    }
    const double lo = to_double(parts[0], "sigma lower end"), hi = to_double(parts[1], "sigma upper end");
    const int steps = to_int(parts[2], "sigma steps");
    if (!(lo > 0 && hi >= lo) || steps < 1 || (steps == 1 && hi != lo)) {
        throw UsageError("--sigma-range needs 0 < LO <= HI and STEPS >= 1 (STEPS = 1 only when LO = HI)");
    }
    if (a.lambda && !(*a.lambda > 0 && *a.lambda < 1)) {
        throw UsageError("--lambda must lie in (0, 1)");
    }
    const auto stored = io::mixing_from_json(io::read_json_file(a.g));
    if (stored.is_panel()) {
        throw DataError("boundary needs a known-var mixing distribution");
    }
    const auto& g = std::get<DiscreteMixing>(stored.mixing);
    const auto h = hi > lo ? SigmaDist::uniform(lo, hi) : SigmaDist::point(lo);
    const auto th = oracle_thresholds_known_var(g, h, cfg);
    const double level = a.lambda.value_or(std::clamp(th.lambda_star, 1e-12, 1 - 1e-12));

    std::vector<double> sigmas;
    for (int k = 0; k < steps; ++k) {
        sigmas.push_back(steps == 1 ? lo : lo + (hi - lo) * k / (steps - 1));
    }
    const auto curve = boundary_curve(g, th.theta_alpha, level, sigmas);
    std::ostringstream csv;
    csv << "sigma,t,lambda,theta_alpha,out_of_range\n";
    for (const auto& p : curve) {
        csv << io::format_double(p.sigma) << ',' << io::format_double(p.t) << ',' << io::format_double(level) << ','
            << io::format_double(th.theta_alpha) << ',' << (p.out_of_range ? 1 : 0) << '\n';
    }
    auto cj = config_json(cfg);
    cj["g"] = a.g;
    cj["sigma_range"] = a.sigma_range;
    cj["lambda_cap"] = io::number_to_json(th.lambda_cap);
    cj["lambda_fdr"] = io::number_to_json(th.lambda_fdr);
    cj["lambda"] = level;
    emit_csv(a.output, csv.str(), io::run_manifest(command, cj));
    return 0;
}

struct SimulateArgs {
    std::string dgp;
    std::string rules;
    std::string alphas;
    std::string gammas;
    std::size_t reps = 100;
    std::size_t n = 10000;
    std::uint64_t seed = 1;
    std::string tail = "upper";
    unsigned threads = 0;
    std::optional<std::string> output;
};

int run_simulate(const SimulateArgs& a, const std::string& command) {
    StudyConfig cfg;
    cfg.rules = split_list(a.rules);
    cfg.alphas = to_doubles(a.alphas, "--alphas");
    cfg.gammas = to_doubles(a.gammas, "--gammas");
    cfg.replications = a.reps;
    cfg.n = a.n;
    cfg.seed = a.seed;
    cfg.tail = parse_tail(a.tail);
    cfg.threads = a.threads;
    const auto d = as_usage([&] { return make_dgp(a.dgp); });
    for (const auto& r : cfg.rules) {
        as_usage([&] { return make_rule(r); });
    }
    const auto rows = as_usage([&] { return run_study(d, cfg); });

    std::ostringstream csv;
    io::write_study_csv(csv, rows);
    const auto manifest = io::run_manifest(command,
                                           {{"dgp", a.dgp}, {"rules", cfg.rules}, {"alphas", cfg.alphas}, {"gammas", cfg.gammas}, {"reps", a.reps},
                                            {"n", a.n}, {"tail", a.tail}},
                                           a.seed);
    if (a.output) {
        io::write_text_file(*a.output + ".csv", csv.str());
        io::write_text_file(*a.output + ".json", json{{"manifest", manifest}, {"rows", io::study_to_json(rows)}}.dump(2) + "\n");
    } else {
        std::cout << csv.str();
        std::cerr << manifest.dump() << "\n";
    }
    return 0;
}

struct RankArgs {
    std::string input;
    std::string window;
    std::string scheme = "default";
    std::string rule = "tp";
    std::optional<double> alpha;
    std::optional<double> gamma;
    std::string tail = "lower";
    bool smooth = false;
    bool allow_incomplete = false;
    std::optional<std::string> output;
};

int run_rank(const RankArgs& a, const std::string& command) {
    const auto window = parse_window(a.window);
    const auto scheme = parse_scheme(a.scheme);
    const auto rule = as_usage([&] { return parse_rank_rule(a.rule); });
    const auto cfg = make_config(a.alpha.value_or(scheme.proportions.front()), a.gamma, parse_tail(a.tail));
    const auto records = io::long_from_csv(io::read_csv_file(a.input));

    const auto ws = aggregate_window(records, window, !a.allow_incomplete);
    if (ws.omitted > 0) {
        std::cerr << "warning: " << ws.omitted << " unit(s) omitted from window " << a.window << "\n";
    }
    if (ws.stats.size() < 10) {
        throw DataError("window " + a.window + " has " + std::to_string(ws.stats.size()) + " usable units; ranking needs at least 10");
    }
    const auto report = rank_units(ws.stats, rule, cfg, a.smooth);
    std::vector<std::string> order;
    for (const auto& u : report.units) {
        order.push_back(ws.stats[u.index].unit_id);
    }
    const auto grades = assign_grades(order, scheme);

    std::ostringstream csv;
    csv << "unit_id,t_stat,w_total,n_periods,smr,rank,score,v,selected,grade\n";
    for (const auto& u : report.units) {
        const auto& s = ws.stats[u.index];
        csv << s.unit_id << ',' << io::format_double(s.t_stat) << ',' << io::format_double(s.w_total) << ',' << s.n_periods << ','
            << io::format_double(s.observed_total / s.expected_total) << ',' << u.rank << ',' << io::format_double(u.score) << ','
            << io::format_double(u.v) << ',' << (u.selected ? 1 : 0) << ',' << grades.at(s.unit_id) << '\n';
    }
    auto cj = config_json(cfg);
    cj["input"] = a.input;
    cj["window"] = a.window;
    cj["scheme"] = {{"labels", scheme.labels}, {"proportions", scheme.proportions}};
    cj["rule"] = a.rule;
    cj["smooth"] = a.smooth;
    cj["require_complete"] = !a.allow_incomplete;
    auto manifest = io::run_manifest(command, cj);
    manifest["summary"] = {{"units", ws.stats.size()},
                           {"omitted", ws.omitted},
                           {"theta_alpha", report.theta_alpha},
                           {"lambda_cap", io::number_to_json(report.selection.lambda_cap)},
                           {"lambda_fdr", io::number_to_json(report.selection.lambda_fdr)},
                           {"lambda_star", io::number_to_json(report.selection.lambda_star)},
                           {"est_fdr", report.selection.est_fdr},
                           {"n_selected", report.selection.n_selected}};
    emit_csv(a.output, csv.str(), manifest);
    return 0;
}

struct TransitionArgs {
    std::string input;
    std::vector<std::string> windows;
    std::string scheme = "default";
    std::string rule = "tp";
    std::string tail = "lower";
    bool smooth = false;
    bool allow_incomplete = false;
    std::optional<std::string> output;
};

int run_transitions(const TransitionArgs& a, const std::string& command) {
    std::vector<Window> windows;
    std::vector<std::string> names;
    for (const auto& w : a.windows) {
        for (const auto& item : split_list(w)) {
            windows.push_back(parse_window(item));
            names.push_back(item);
        }
    }
    if (windows.size() < 2) {
        throw UsageError("--windows needs at least two windows");
    }
    const auto scheme = parse_scheme(a.scheme);
    const auto rule = as_usage([&] { return parse_rank_rule(a.rule); });
    const Tail tail = parse_tail(a.tail);
    make_config(std::clamp(scheme.proportions.front(), 1e-6, 1 - 1e-6), std::nullopt, tail);
    const auto records = io::long_from_csv(io::read_csv_file(a.input));

    std::vector<WindowGrades> graded;
    for (std::size_t k = 0; k < windows.size(); ++k) {
        try {
            graded.push_back(grade_window(records, windows[k], scheme, rule, tail, std::nullopt, a.smooth, !a.allow_incomplete));
        } catch (const std::domain_error& e) {
            throw DataError("window " + names[k] + ": " + e.what());
        }
    }
    const auto histories = grade_histories(graded);
    std::vector<std::vector<std::string>> seqs;
    for (const auto& [unit, h] : histories) {
        seqs.push_back(h);
    }
    const auto m = transition_matrix(seqs, scheme.labels);
    std::ostringstream csv;
    io::write_transition_csv(csv, m);
    auto manifest = io::run_manifest(command, {{"input", a.input}, {"windows", names}, {"scheme", scheme.labels}, {"rule", a.rule}, {"tail", a.tail}});
    manifest["summary"] = {{"units_in_all_windows", seqs.size()}};
    emit_csv(a.output, csv.str(), manifest);
    return 0;
}

std::string joined_args(int argc, char** argv) {
    std::string out;
    for (int k = 0; k < argc; ++k) {
        out += (k ? " " : "") + std::string(argv[k]);
    }
    return out;
}

}

int main(int argc, char** argv) {
    CLI::App app{"Empirical Bayes ranking and selection under capacity and false discovery rate constraints"};
    app.require_subcommand(1);
    app.set_version_flag("--version", io::tool_version);

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "Fit the nonparametric maximum likelihood mixing distribution; writes JSON");
    fit_cmd->add_option("--input", fit.input, "CSV with columns y,sigma (known-var) or ybar,s,t[,w] (panel)")->required();
    fit_cmd->add_option("--model", fit.model, "known-var or panel")->capture_default_str();
    fit_cmd->add_option("--grid", fit.grid, "Grid points (theta axis for panel)")->capture_default_str()->check(CLI::Range(2, 100000));
    fit_cmd->add_option("--grid-sigma", fit.grid_sigma, "Variance grid points for panel")->capture_default_str()->check(CLI::Range(2, 10000));
    fit_cmd->add_flag("--smooth", fit.smooth, "Smooth the fit with a biweight kernel");
    fit_cmd->add_option("--tol", fit.tol, "Relative log-likelihood tolerance")->capture_default_str()->check(CLI::PositiveNumber);
    fit_cmd->add_option("--maxit", fit.maxit, "Iteration limit")->capture_default_str()->check(CLI::PositiveNumber);
    fit_cmd->add_option("--output", fit.output, "Output JSON path (stdout when omitted)");

    SelectArgs sel;
    auto* sel_cmd = app.add_subcommand("select", "Rank and select units under a fitted mixing distribution; writes JSON and CSV");
    sel_cmd->add_option("--input", sel.input, "Observation CSV")->required();
    sel_cmd->add_option("--g", sel.g, "Mixing distribution JSON from fit")->required();
    sel_cmd->add_option("--alpha", sel.alpha, "Capacity: largest selected proportion")->required();
    sel_cmd->add_option("--gamma", sel.gamma, "Marginal FDR level (capacity only when omitted)");
    sel_cmd->add_option("--tail", sel.tail, "upper or lower")->capture_default_str();
    sel_cmd->add_option("--rule", sel.rule, "tp, pm, js, em, mle or pval")->capture_default_str();
    sel_cmd->add_option("--null", sel.null_level, "Null effect for the pval rule")->capture_default_str();
    sel_cmd->add_option("--output", sel.output, "Output prefix; writes PREFIX.json and PREFIX.csv (JSON to stdout when omitted)");

    BoundaryArgs bnd;
    auto* bnd_cmd = app.add_subcommand("boundary", "Oracle selection boundary over a range of noise levels; writes CSV");
    bnd_cmd->add_option("--g", bnd.g, "Known-var mixing distribution JSON")->required();
    bnd_cmd->add_option("--alpha", bnd.alpha, "Capacity")->required();
    bnd_cmd->add_option("--gamma", bnd.gamma, "Marginal FDR level (capacity only when omitted)");
    bnd_cmd->add_option("--sigma-range", bnd.sigma_range, "LO:HI:STEPS; also the uniform noise distribution used for the thresholds")->required();
    bnd_cmd->add_option("--lambda", bnd.lambda, "Use this tail probability level instead of the oracle threshold");
    bnd_cmd->add_option("--output", bnd.output, "Output prefix; writes PREFIX.csv and PREFIX.manifest.json");

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo comparison of selection rules; writes CSV and JSON");
    sim_cmd->add_option("--dgp", sim.dgp, "student-t:DF, discrete3, zero-null3, normal-normal[:VAR], nix, bivariate-discrete, teacher-va")->required();
    sim_cmd->add_option("--rules", sim.rules, "Comma list from OTP,OPM,KWsTP,KWsPM,KWTP,KWPM,LPM,EM,MLE,PVAL,NIX-PM,NIX-TP; suffix * for capacity only")->required();
    sim_cmd->add_option("--alphas", sim.alphas, "Comma list of capacities")->required();
    sim_cmd->add_option("--gammas", sim.gammas, "Comma list of FDR levels")->required();
    sim_cmd->add_option("--reps", sim.reps, "Replications")->capture_default_str()->check(CLI::PositiveNumber);
    sim_cmd->add_option("--n", sim.n, "Units per replication")->capture_default_str()->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim.seed, "Base seed")->capture_default_str();
    sim_cmd->add_option("--tail", sim.tail, "upper or lower")->capture_default_str();
    sim_cmd->add_option("--threads", sim.threads, "Worker threads (0 = all cores)")->capture_default_str();
    sim_cmd->add_option("--output", sim.output, "Output prefix; writes PREFIX.csv and PREFIX.json");

    RankArgs rk;
    auto* rank_cmd = app.add_subcommand("rank", "Rank units of long count data over one window and assign grades; writes CSV");
    rank_cmd->add_option("--input", rk.input, "CSV with columns unit_id,period,observed,expected")->required();
    rank_cmd->add_option("--window", rk.window, "START:END, inclusive")->required();
    rank_cmd->add_option("--scheme", rk.scheme, "default or LABEL=PROP,... from best to worst")->capture_default_str();
    rank_cmd->add_option("--rule", rk.rule, "tp, pm, mle, poisson-mle, pval, js or em")->capture_default_str();
    rank_cmd->add_option("--alpha", rk.alpha, "Capacity (defaults to the share of the top grade)");
    rank_cmd->add_option("--gamma", rk.gamma, "Marginal FDR level");
    rank_cmd->add_option("--tail", rk.tail, "Preferred tail: lower or upper")->capture_default_str();
    rank_cmd->add_flag("--smooth", rk.smooth, "Smooth the fitted mixing distribution");
    rank_cmd->add_flag("--allow-incomplete", rk.allow_incomplete, "Keep units that miss periods in the window");
    rank_cmd->add_option("--output", rk.output, "Output prefix; writes PREFIX.csv and PREFIX.manifest.json");

    TransitionArgs tr;
    auto* tr_cmd = app.add_subcommand("grades-transitions", "Grade transition frequencies across consecutive windows; writes CSV");
    tr_cmd->add_option("--input", tr.input, "CSV with columns unit_id,period,observed,expected")->required();
    tr_cmd->add_option("--windows", tr.windows, "Windows START:END, comma separated or repeated")->required();
    tr_cmd->add_option("--scheme", tr.scheme, "default or LABEL=PROP,...")->capture_default_str();
    tr_cmd->add_option("--rule", tr.rule, "Ranking rule")->capture_default_str();
    tr_cmd->add_option("--tail", tr.tail, "Preferred tail: lower or upper")->capture_default_str();
    tr_cmd->add_flag("--smooth", tr.smooth, "Smooth the fitted mixing distributions");
    tr_cmd->add_flag("--allow-incomplete", tr.allow_incomplete, "Keep units that miss periods in a window");
    tr_cmd->add_option("--output", tr.output, "Output prefix; writes PREFIX.csv and PREFIX.manifest.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string command = joined_args(argc, argv);
    try {
        if (*fit_cmd) {
            return run_fit(fit, command);
        }
        if (*sel_cmd) {
            return run_select(sel, command);
        }
        if (*bnd_cmd) {
            return run_boundary(bnd, command);
        }
        if (*sim_cmd) {
            return run_simulate(sim, command);
        }
        if (*rank_cmd) {
            return run_rank(rk, command);
        }
        if (*tr_cmd) {
            return run_transitions(tr, command);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
