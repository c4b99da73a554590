#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ebrank/io.hpp"

using namespace ebrank;

namespace {

std::set<std::size_t> selected_set(const RankReport& r) {
    return {r.selection.selected.begin(), r.selection.selected.end()};
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

// Poisson counts for `units` units over `periods` periods with log-normal rate ratios.
std::vector<LongRecord> poisson_panel(std::size_t units, int periods, bool equal_exposure, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::lognormal_distribution<double> ratio(0.0, 0.25);
    std::uniform_real_distribution<double> exposure(5.0, 120.0);
    std::vector<LongRecord> out;
    for (std::size_t i = 0; i < units; ++i) {
        const double rho = ratio(rng);
        for (int t = 0; t < periods; ++t) {
            const double mu = equal_exposure ? 60.0 : exposure(rng);
            std::poisson_distribution<int> y(rho * mu);
            out.emplace_back("u" + std::to_string(i), 2000 + t, y(rng), mu);
        }
    }
    return out;
}

}

TEST(PoissonVst, Examples) {
    auto a = poisson_vst(LongRecord("a", 1, 4, 4));
    EXPECT_EQ(a.z, 1.0);
    EXPECT_EQ(a.w, 16.0);
    auto b = poisson_vst(LongRecord("b", 1, 0, 7.5));
    EXPECT_EQ(b.z, 0.0);
    EXPECT_EQ(b.w, 30.0);
    auto c = poisson_vst(LongRecord("c", 1, 9, 4));
    EXPECT_DOUBLE_EQ(c.z, 1.5);
    EXPECT_EQ(c.w, 16.0);
}

TEST(PoissonVst, ExactnessOverRandomInputs) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> mu(1e-3, 1e4);
    std::uniform_int_distribution<int> y(0, 5000);
    for (int k = 0; k < 5000; ++k) {
        const LongRecord r("u", 1, y(rng), mu(rng));
        const auto v = poisson_vst(r);
        EXPECT_TRUE(same_bits(v.w, 4 * r.expected));
        if (r.observed > 0) {
            EXPECT_NEAR(v.z * v.z * r.expected / r.observed, 1.0, 1e-12);
        } else {
            EXPECT_EQ(v.z, 0.0);
        }
    }
}

TEST(LongRecord, RejectsInvalidCounts) {
    EXPECT_THROW(LongRecord("u", 1, 3, 0), DataError);
    EXPECT_THROW(LongRecord("u", 1, 3, -2), DataError);
    EXPECT_THROW(LongRecord("u", 1, -1, 2), DataError);
    try {
        LongRecord("u", 1, 3, 0, 17);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 17u);
        EXPECT_NE(std::string(e.what()).find("line 17"), std::string::npos);
    }
}

TEST(AggregateWindow, Examples) {
    const std::vector<LongRecord> single{{"a", 5, 9, 4}};
    auto s = aggregate_window(single, Window(5, 5));
    ASSERT_EQ(s.stats.size(), 1u);
    EXPECT_DOUBLE_EQ(s.stats[0].t_stat, 1.5);
    EXPECT_EQ(s.stats[0].w_total, 16.0);

    const std::vector<LongRecord> equal{{"a", 1, 4, 4}, {"a", 2, 9, 4}, {"a", 3, 16, 4}};
    EXPECT_DOUBLE_EQ(aggregate_window(equal, Window(1, 3)).stats[0].t_stat, (1.0 + 1.5 + 2.0) / 3);

    // z = 1 with w = 4 and z = 2 with w = 12
    const std::vector<LongRecord> two{{"a", 1, 1, 1}, {"a", 2, 12, 3}};
    auto t = aggregate_window(two, Window(1, 2));
    EXPECT_DOUBLE_EQ(t.stats[0].t_stat, 1.75);
    EXPECT_DOUBLE_EQ(t.stats[0].w_total, 16.0);
    EXPECT_EQ(t.stats[0].n_periods, 2);
    EXPECT_EQ(t.stats[0].observed_total, 13.0);
    EXPECT_EQ(t.stats[0].expected_total, 4.0);
}

TEST(AggregateWindow, DuplicatesAndOmissions) {
    const std::vector<LongRecord> dup{{"a", 1, 1, 1, 2}, {"a", 1, 2, 1, 3}};
    try {
        aggregate_window(dup, Window(1, 1));
        FAIL();
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 3u);
    }

    const std::vector<LongRecord> recs{{"a", 1, 1, 1}, {"a", 2, 1, 1}, {"b", 1, 1, 1}, {"c", 7, 1, 1}, {"d", 2, 4, 1}};
    auto strict = aggregate_window(recs, Window(1, 2));
    ASSERT_EQ(strict.stats.size(), 1u);
    EXPECT_EQ(strict.stats[0].unit_id, "a");
    EXPECT_EQ(strict.omitted, 3u);

    auto loose = aggregate_window(recs, Window(1, 2), false);
    ASSERT_EQ(loose.stats.size(), 3u);
    EXPECT_EQ(loose.stats[0].unit_id, "a");
    EXPECT_EQ(loose.stats[1].unit_id, "b");
    EXPECT_EQ(loose.stats[2].unit_id, "d");
    EXPECT_DOUBLE_EQ(loose.stats[2].t_stat, 2.0);
    EXPECT_EQ(loose.omitted, 1u);

    EXPECT_THROW(Window(3, 2), std::domain_error);
}

TEST(RankUnits, HomogeneousPrecisionRulesAgree) {
    const auto recs = poisson_panel(400, 1, true, 3);
    const auto stats = aggregate_window(recs, Window(2000, 2000)).stats;
    std::size_t nonempty_fdr_runs = 0;
    for (const std::optional<double> gamma : {std::optional<double>(), std::optional<double>(0.3)}) {
        for (double alpha : {0.05, 0.1, 0.2}) {
            const SelectionConfig cfg(alpha, gamma);
            const auto ref = selected_set(rank_units(stats, RankRule::tp, cfg));
            if (gamma) {
                nonempty_fdr_runs += !ref.empty();
            } else {
                ASSERT_EQ(ref.size(), capacity_count(alpha, stats.size()));
            }
            for (auto rule : {RankRule::pm, RankRule::mle, RankRule::poisson_mle, RankRule::pvalue, RankRule::james_stein, RankRule::efron_morris}) {
                EXPECT_EQ(selected_set(rank_units(stats, rule, cfg)), ref) << "alpha " << alpha << " rule " << static_cast<int>(rule);
            }
        }
    }
    EXPECT_GT(nonempty_fdr_runs, 0u);
}

TEST(RankUnits, TailProbabilityRuleHasNoLargerEstimatedFdrThanMle) {
    const auto recs = poisson_panel(1500, 3, false, 5);
    const auto stats = aggregate_window(recs, Window(2000, 2002)).stats;
    for (double alpha : {0.05, 0.1, 0.15, 0.2}) {
        const auto cfg = SelectionConfig::capacity_only(alpha);
        const auto tp = rank_units(stats, RankRule::tp, cfg);
        const auto mle = rank_units(stats, RankRule::mle, cfg);
        EXPECT_EQ(tp.selection.n_selected, mle.selection.n_selected);
        EXPECT_LE(tp.selection.est_fdr, mle.selection.est_fdr + 0.01) << "alpha " << alpha;
    }
}

TEST(RankUnits, LowerTailIsUpperTailOfNegatedData) {
    const auto recs = poisson_panel(300, 2, false, 8);
    const auto stats = aggregate_window(recs, Window(2000, 2001)).stats;
    std::vector<KnownVarObs> obs, neg;
    for (const auto& s : stats) {
        obs.push_back(s.as_observation());
        neg.emplace_back(-obs.back().y, obs.back().sigma);
    }
    const auto g = fit_npmle_known_var(obs).mixing;
    for (auto rule : {RankRule::tp, RankRule::pm, RankRule::mle, RankRule::james_stein}) {
        const auto lower = rank_observations(obs, g, rule, SelectionConfig(0.1, 0.3, Tail::lower));
        const auto upper = rank_observations(neg, g.mirrored(), rule, SelectionConfig(0.1, 0.3, Tail::upper));
        EXPECT_EQ(lower.selection.selected, upper.selection.selected);
        EXPECT_NEAR(lower.theta_alpha, -upper.theta_alpha, 1e-12);
        ASSERT_EQ(lower.units.size(), upper.units.size());
        for (std::size_t r = 0; r < lower.units.size(); ++r) {
            EXPECT_EQ(lower.units[r].index, upper.units[r].index);
            EXPECT_NEAR(lower.units[r].v, upper.units[r].v, 1e-12);
        }
    }
}

TEST(RankUnits, ReportIsConsistent) {
    const auto recs = poisson_panel(200, 3, false, 2);
    const auto stats = aggregate_window(recs, Window(2000, 2002)).stats;
    const auto r = rank_units(stats, RankRule::tp, SelectionConfig(0.2, 0.2), true);
    ASSERT_EQ(r.units.size(), stats.size());
    std::set<std::size_t> seen;
    double fdr = 0;
    std::size_t chosen = 0;
    for (std::size_t k = 0; k < r.units.size(); ++k) {
        EXPECT_EQ(r.units[k].rank, k + 1);
        seen.insert(r.units[k].index);
        if (k > 0) {
            EXPECT_GE(r.units[k - 1].score, r.units[k].score);
        }
        if (r.units[k].selected) {
            fdr += 1 - r.units[k].v;
            ++chosen;
        }
    }
    EXPECT_EQ(seen.size(), stats.size());
    EXPECT_EQ(chosen, r.selection.n_selected);
    EXPECT_LE(chosen, capacity_count(0.2, stats.size()));
    if (chosen > 0) {
        EXPECT_NEAR(fdr / static_cast<double>(chosen), r.selection.est_fdr, 1e-12);
        EXPECT_LE(r.selection.est_fdr, 0.2 + 1e-12);
    }
}

TEST(RankUnits, RefusesSmallInputsAndUnknownRules) {
    const auto recs = poisson_panel(9, 1, true, 1);
    const auto stats = aggregate_window(recs, Window(2000, 2000)).stats;
    EXPECT_THROW(rank_units(stats, RankRule::tp, SelectionConfig(0.1, std::nullopt)), std::domain_error);
    EXPECT_THROW(parse_rank_rule("median"), std::domain_error);
    EXPECT_EQ(parse_rank_rule("poisson-mle"), RankRule::poisson_mle);
    EXPECT_EQ(parse_rank_rule("js"), RankRule::james_stein);
}

TEST(Grades, BlockSizes) {
    const auto scheme = GradeScheme::standard();
    EXPECT_EQ(grade_block_sizes(100, scheme), (std::vector<std::size_t>{22, 30, 35, 9, 4}));
    for (std::size_t n : {0, 1, 5, 10, 37, 101, 999}) {
        const auto sizes = grade_block_sizes(n, scheme);
        std::size_t total = 0;
        for (std::size_t j = 0; j < sizes.size(); ++j) {
            total += sizes[j];
            EXPECT_LT(std::abs(static_cast<double>(sizes[j]) - scheme.proportions[j] * static_cast<double>(n)), 1.0);
        }
        EXPECT_EQ(total, n);
    }
}

TEST(Grades, ContiguousBlocksInRankOrder) {
    std::vector<std::string> ranking;
    for (int i = 0; i < 100; ++i) {
        ranking.push_back("c" + std::to_string(i));
    }
    const auto g = assign_grades(ranking, GradeScheme::standard());
    EXPECT_EQ(g.at("c0"), "A");
    EXPECT_EQ(g.at("c21"), "A");
    EXPECT_EQ(g.at("c22"), "B");
    EXPECT_EQ(g.at("c51"), "B");
    EXPECT_EQ(g.at("c52"), "C");
    EXPECT_EQ(g.at("c86"), "C");
    EXPECT_EQ(g.at("c87"), "D");
    EXPECT_EQ(g.at("c95"), "D");
    EXPECT_EQ(g.at("c96"), "F");
    EXPECT_EQ(g.at("c99"), "F");
}

TEST(Grades, SchemeValidation) {
    EXPECT_THROW(GradeScheme({"A", "B"}, {0.5}), std::domain_error);
    EXPECT_THROW(GradeScheme({"A", "B"}, {0.5, 0.6}), std::domain_error);
    EXPECT_THROW(GradeScheme({"A", "B"}, {1.2, -0.2}), std::domain_error);
    EXPECT_THROW(GradeScheme({"A", "A"}, {0.5, 0.5}), std::domain_error);
    EXPECT_THROW(GradeScheme({}, {}), std::domain_error);
    EXPECT_NO_THROW(GradeScheme({"top", "rest"}, {0.1, 0.9}));
}

TEST(TransitionMatrix, ConstantAndAlternating) {
    const std::vector<std::string> labels{"A", "B", "C"};
    const std::vector<std::vector<std::string>> constant{{"A", "A", "A"}, {"B", "B"}, {"C", "C", "C", "C"}};
    const auto m = transition_matrix(constant, labels);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            EXPECT_EQ(m.probs[a][b], a == b ? 1.0 : 0.0);
        }
        EXPECT_FALSE(m.uniform_row[a]);
    }

    const std::vector<std::vector<std::string>> alternating{{"A", "B"}, {"B", "A"}, {"A", "B"}};
    const auto p = transition_matrix(alternating, {"A", "B"});
    EXPECT_EQ(p.probs[0][1], 1.0);
    EXPECT_EQ(p.probs[1][0], 1.0);
    EXPECT_EQ(p.probs[0][0], 0.0);
    EXPECT_EQ(p.probs[1][1], 0.0);
}

TEST(TransitionMatrix, UniformRowsFlaggedAndUnknownLabelsRejected) {
    const std::vector<std::vector<std::string>> h{{"A", "B"}, {"A", "A"}};
    const auto m = transition_matrix(h, {"A", "B", "C"});
    EXPECT_FALSE(m.uniform_row[0]);
    EXPECT_TRUE(m.uniform_row[1]);
    EXPECT_TRUE(m.uniform_row[2]);
    for (const auto& row : m.probs) {
        double s = 0;
        for (auto x : row) {
            s += x;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_DOUBLE_EQ(m.probs[1][2], 1.0 / 3);

    const std::vector<std::vector<std::string>> bad{{"A", "Q"}};
    EXPECT_THROW(transition_matrix(bad, {"A", "B"}), DataError);
    const std::vector<std::vector<std::string>> lone{{"Z"}};
    EXPECT_THROW(transition_matrix(lone, {"A", "B"}), DataError);
}

TEST(TransitionMatrix, RecoversKnownChain) {
    const std::vector<std::string> labels{"A", "B", "C", "D", "F"};
    const std::vector<std::vector<double>> truth{{0.60, 0.25, 0.10, 0.04, 0.01},
                                                 {0.15, 0.55, 0.25, 0.04, 0.01},
                                                 {0.05, 0.20, 0.60, 0.10, 0.05},
                                                 {0.02, 0.08, 0.35, 0.45, 0.10},
                                                 {0.01, 0.04, 0.25, 0.30, 0.40}};
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> start(0, 4);
    std::vector<std::vector<std::string>> histories;
    for (int u = 0; u < 5000; ++u) {
        std::size_t s = start(rng);
        std::vector<std::string> h{labels[s]};
        for (int t = 1; t < 5; ++t) {
            std::discrete_distribution<std::size_t> step(truth[s].begin(), truth[s].end());
            s = step(rng);
            h.push_back(labels[s]);
        }
        histories.push_back(std::move(h));
    }
    const auto m = transition_matrix(histories, labels);
    for (std::size_t a = 0; a < 5; ++a) {
        double s = 0;
        for (std::size_t b = 0; b < 5; ++b) {
            EXPECT_NEAR(m.probs[a][b], truth[a][b], 0.02) << labels[a] << "->" << labels[b];
            s += m.probs[a][b];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(GradeWindow, HistoriesCoverUnitsGradedInEveryWindow) {
    auto recs = poisson_panel(120, 6, false, 9);
    recs.emplace_back("late", 2003, 20, 20);
    const auto scheme = GradeScheme::standard();
    std::vector<WindowGrades> windows{grade_window(recs, Window(2000, 2002), scheme), grade_window(recs, Window(2003, 2005), scheme)};
    EXPECT_EQ(windows[0].grades.size(), 120u);
    EXPECT_EQ(windows[1].grades.size(), 120u);
    const auto h = grade_histories(windows);
    EXPECT_EQ(h.size(), 120u);
    EXPECT_EQ(h.count("late"), 0u);
    std::map<std::string, std::size_t> counts;
    for (const auto& [unit, label] : windows[0].grades) {
        ++counts[label];
    }
    EXPECT_EQ(counts["A"], 26u);
    EXPECT_EQ(counts["F"], 5u);
}

TEST(Csv, LineAddressedErrors) {
    std::istringstream ragged("unit_id,period,observed,expected\na,1,3,2\n\nb,1,3\n");
    try {
        io::read_csv(ragged);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
    std::istringstream bad_number("unit_id,period,observed,expected\na,1,3,2\nb,1,x,2\n");
    const auto t = io::read_csv(bad_number);
    try {
        io::long_from_csv(t);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    std::istringstream nonpositive("unit_id,period,observed,expected\na,1,3,0\n");
    try {
        io::long_from_csv(io::read_csv(nonpositive));
        FAIL();
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    std::istringstream missing("y,s\n1,2\n");
    EXPECT_THROW(io::known_var_from_csv(io::read_csv(missing)), DataError);
    std::istringstream empty("\n\n");
    EXPECT_THROW(io::read_csv(empty), DataError);
}

TEST(Csv, ReadsDirectObservations) {
    std::istringstream in("\xEF\xBB\xBFy, sigma\n1.5,0.5\n-2,1\n");
    const auto obs = io::known_var_from_csv(io::read_csv(in));
    ASSERT_EQ(obs.size(), 2u);
    EXPECT_EQ(obs[0].y, 1.5);
    EXPECT_EQ(obs[1].sigma, 1.0);
    std::istringstream panel("ybar,s,t\n0.3,1.2,5\n");
    const auto p = io::panel_from_csv(io::read_csv(panel));
    ASSERT_EQ(p.size(), 1u);
    EXPECT_EQ(p[0].t_count, 5);
}

TEST(ReportRoundTrip, CsvJsonCsvIsLossless) {
    const auto recs = poisson_panel(150, 3, false, 4);
    const auto stats = aggregate_window(recs, Window(2000, 2002)).stats;
    const SelectionConfig cfg(0.1, 0.25, Tail::lower);
    const auto report = io::make_report("tp", cfg, rank_units(stats, RankRule::tp, cfg));

    std::ostringstream first;
    io::write_report_csv(first, report);
    std::istringstream in(first.str());
    auto from_csv = report;
    from_csv.units = io::report_units_from_csv(io::read_csv(in));
    const auto back = io::report_from_json(io::json::parse(io::report_to_json(from_csv).dump()));
    std::ostringstream second;
    io::write_report_csv(second, back);
    EXPECT_EQ(first.str(), second.str());

    ASSERT_EQ(back.units.size(), report.units.size());
    for (std::size_t k = 0; k < report.units.size(); ++k) {
        EXPECT_TRUE(same_bits(back.units[k].score, report.units[k].score));
        EXPECT_TRUE(same_bits(back.units[k].v, report.units[k].v));
        EXPECT_EQ(back.units[k].index, report.units[k].index);
        EXPECT_EQ(back.units[k].rank, report.units[k].rank);
        EXPECT_EQ(back.units[k].selected, report.units[k].selected);
    }
    EXPECT_TRUE(same_bits(back.est_fdr, report.est_fdr));
    EXPECT_TRUE(same_bits(back.theta_alpha, report.theta_alpha));
    EXPECT_EQ(back.gamma, report.gamma);
    EXPECT_EQ(back.tail, Tail::lower);
}

TEST(ReportRoundTrip, FormatDoubleReadsBack) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int k = 0; k < 2000; ++k) {
        const double x = k % 2 ? u(rng) : std::ldexp(u(rng), -60);
        EXPECT_TRUE(same_bits(std::stod(io::format_double(x)), x));
    }
}

TEST(MixingJson, RoundTrip) {
    const DiscreteMixing d({-1, 0.5, 2}, {0.2, 0.5, 0.3});
    const auto back = io::mixing_from_json(io::json::parse(io::mixing_to_json({d, 0.25}).dump()));
    ASSERT_FALSE(back.is_panel());
    const auto& bd = std::get<DiscreteMixing>(back.mixing);
    EXPECT_TRUE(std::equal(bd.atoms().begin(), bd.atoms().end(), d.atoms().begin()));
    EXPECT_TRUE(std::equal(bd.weights().begin(), bd.weights().end(), d.weights().begin()));
    EXPECT_EQ(back.bandwidth, 0.25);

    const BivariateMixing b({{0, 1}, {1, 2}}, {0.4, 0.6});
    const auto pb = io::mixing_from_json(io::json::parse(io::mixing_to_json({b, std::nullopt}).dump()));
    ASSERT_TRUE(pb.is_panel());
    EXPECT_EQ(std::get<BivariateMixing>(pb.mixing).atoms()[1].sigma2, 2.0);
    EXPECT_FALSE(pb.bandwidth);

    EXPECT_THROW(io::mixing_from_json(io::json{{"model", "other"}, {"atoms", {1}}, {"weights", {1}}}), DataError);
    EXPECT_THROW(io::mixing_from_json(io::json{{"model", "known-var"}, {"atoms", {1, 2}}, {"weights", {0.7, 0.7}}}), DataError);
    EXPECT_THROW(io::mixing_from_json(io::json{{"model", "known-var"}}), DataError);
}

TEST(Ar1Coefficient, RecoversSimulatedCoefficient) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> e(0, 1);
    std::vector<double> x{0};
    for (int t = 1; t < 20000; ++t) {
        x.push_back(0.5 * x.back() + e(rng));
    }
    EXPECT_NEAR(ar1_coefficient(x), 0.5, 0.02);
    const std::vector<double> flat{2, 2, 2, 2};
    EXPECT_TRUE(std::isnan(ar1_coefficient(flat)));
    const std::vector<double> shortx{1, 2};
    EXPECT_TRUE(std::isnan(ar1_coefficient(shortx)));
    const std::vector<double> alt{1, -1, 1, -1, 1, -1};
    EXPECT_LT(ar1_coefficient(alt), -0.9);
}
