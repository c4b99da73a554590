#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "ebrank/npmle.hpp"
#include "ebrank/simlab.hpp"

using namespace ebrank;

namespace {

std::vector<KnownVarObs> two_point_sample(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> noise(0, 1);
    std::vector<KnownVarObs> obs;
    for (std::size_t i = 0; i < n; ++i) {
        obs.emplace_back((coin(rng) ? 1.0 : -1.0) + noise(rng), 1.0);
    }
    return obs;
}

double loglik(std::span<const KnownVarObs> obs, const DiscreteMixing& g) {
    double total = 0;
    for (const auto& o : obs) {
        double f = 0;
        for (std::size_t j = 0; j < g.atoms().size(); ++j) {
            f += g.weights()[j] * boost::math::pdf(boost::math::normal_distribution<>(g.atoms()[j], o.sigma), o.y);
        }
        total += std::log(f);
    }
    return total;
}

/** Average likelihood ratio (1/n) sum_i phi_ij / f_i at each grid point, computed from scratch. */
std::vector<double> gradient_on_grid(std::span<const KnownVarObs> obs, const DiscreteMixing& g, std::span<const double> grid) {
    std::vector<double> out(grid.size(), 0.0);
    for (const auto& o : obs) {
        const boost::math::normal_distribution<> noise(0, o.sigma);
        double f = 0;
        for (std::size_t j = 0; j < g.atoms().size(); ++j) {
            f += g.weights()[j] * boost::math::pdf(noise, o.y - g.atoms()[j]);
        }
        for (std::size_t j = 0; j < grid.size(); ++j) {
            out[j] += boost::math::pdf(noise, o.y - grid[j]) / f;
        }
    }
    for (auto& v : out) {
        v /= static_cast<double>(obs.size());
    }
    return out;
}

void expect_simplex(std::span<const double> w) {
    double total = 0;
    for (auto x : w) {
        EXPECT_GE(x, 0.0);
        total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
}

void expect_monotone(const FitReport& r) {
    for (std::size_t k = 1; k < r.loglik_trace.size(); ++k) {
        EXPECT_GE(r.loglik_trace[k], r.loglik_trace[k - 1] - 1e-10) << "step " << k;
    }
}

}

TEST(BuildGrid, Examples) {
    const std::vector<KnownVarObs> one{{0, 1}};
    EXPECT_EQ(build_grid(one, 3), (std::vector<double>{-3, 0, 3}));
    const std::vector<KnownVarObs> two{{-1, 1}, {1, 1}};
    EXPECT_EQ(build_grid(two, 5), (std::vector<double>{-4, -2, 0, 2, 4}));
    EXPECT_EQ(build_grid(two).size(), 300u);
    EXPECT_THROW(build_grid(std::vector<KnownVarObs>{}, 10), std::domain_error);
    EXPECT_THROW(build_grid(one, 1), std::domain_error);
}

TEST(FitKnownVar, DegenerateSampleConcentrates) {
    const std::vector<KnownVarObs> obs(50, KnownVarObs(0, 1));
    std::vector<double> grid;
    for (int k = -100; k <= 100; ++k) {
        grid.push_back(k * 0.03);
    }
    const auto fit = fit_npmle_known_var(obs, grid);
    double near = 0;
    for (std::size_t j = 0; j < fit.mixing.atoms().size(); ++j) {
        if (std::abs(fit.mixing.atoms()[j]) <= 0.03 + 1e-12) {
            near += fit.mixing.weights()[j];
        }
    }
    EXPECT_GE(near, 0.999);
}

TEST(FitKnownVar, TwoPointMoments) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto obs = two_point_sample(2000, seed);
        const auto fit = fit_npmle_known_var(obs);
        EXPECT_TRUE(fit.report.converged) << "seed " << seed;
        EXPECT_NEAR(fit.mixing.mean(), 0.0, 0.1) << "seed " << seed;
        EXPECT_NEAR(fit.mixing.variance(), 1.0, 0.15) << "seed " << seed;
    }
}

TEST(FitKnownVar, BeatsTrueMixing) {
    const auto obs = two_point_sample(2000, 99);
    const auto grid = build_grid(obs);
    const auto fit = fit_npmle_known_var(obs, grid);
    const double truth = loglik(obs, DiscreteMixing({-1, 1}, {0.5, 0.5}));
    EXPECT_GE(loglik(obs, fit.mixing), truth);
    EXPECT_NEAR(fit.report.loglik_trace.back(), loglik(obs, fit.mixing), 1e-6 * std::abs(truth));
}

TEST(FitKnownVar, MonotoneSimplexAndKkt) {
    std::mt19937_64 rng(3);
    const auto sample = sample_dgp(dgp::StudentT{3}, 3000, rng);
    const auto grid = build_grid(sample.known);
    for (auto solver : {NpmleSolver::cnm, NpmleSolver::em}) {
        NpmleOptions opt;
        opt.solver = solver;
        opt.maxit = solver == NpmleSolver::em ? 400 : 5000;
        const auto fit = fit_npmle_known_var(sample.known, grid, opt);
        expect_monotone(fit.report);
        expect_simplex(fit.mixing.weights());
        EXPECT_LE(fit.report.atom_count, fit.report.grid_size);
        EXPECT_EQ(fit.report.atom_count, fit.mixing.atoms().size());
        EXPECT_EQ(static_cast<std::size_t>(fit.report.iterations) + 1, fit.report.loglik_trace.size());
    }

    NpmleOptions opt;
    const auto fit = fit_npmle_known_var(sample.known, grid, opt);
    ASSERT_TRUE(fit.report.converged);
    EXPECT_LE(fit.report.kkt_max_violation, 10 * opt.tol);
    const auto gradient = gradient_on_grid(sample.known, fit.mixing, grid);
    for (auto g : gradient) {
        EXPECT_LE(g, 1 + 10 * opt.tol);
    }
    for (std::size_t j = 0; j < fit.mixing.atoms().size(); ++j) {
        if (fit.mixing.weights()[j] > 1e-6) {
            const auto pos = std::lower_bound(grid.begin(), grid.end(), fit.mixing.atoms()[j]) - grid.begin();
            EXPECT_NEAR(gradient[pos], 1.0, 10 * opt.tol);
        }
    }
}

TEST(FitKnownVar, NewtonAndEmAgree) {
    const auto obs = two_point_sample(400, 5);
    const auto grid = build_grid(obs, 60);
    NpmleOptions em;
    em.solver = NpmleSolver::em;
    em.tol = 1e-13;
    em.maxit = 200000;
    const auto a = fit_npmle_known_var(obs, grid);
    const auto b = fit_npmle_known_var(obs, grid, em);
    const double la = loglik(obs, a.mixing), lb = loglik(obs, b.mixing);
    EXPECT_GE(la, lb - 1e-6);
    EXPECT_NEAR(la, lb, 1e-4);
    EXPECT_NEAR(a.mixing.mean(), b.mixing.mean(), 1e-2);
}

TEST(FitKnownVar, ReportsNonConvergence) {
    const auto obs = two_point_sample(500, 8);
    NpmleOptions opt;
    opt.solver = NpmleSolver::em;
    opt.maxit = 3;
    const auto fit = fit_npmle_known_var(obs, opt);
    EXPECT_FALSE(fit.report.converged);
    EXPECT_EQ(fit.report.iterations, 3);
    NpmleOptions bad;
    bad.tol = 0;
    EXPECT_THROW(fit_npmle_known_var(obs, bad), std::domain_error);
    EXPECT_THROW(fit_npmle_known_var(obs, std::vector<double>{0, 0, 1}), std::domain_error);
}

TEST(FitPanel, RecoversPointMass) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> z(0, 1);
    std::chi_squared_distribution<double> chi(8);
    std::vector<PanelObs> obs;
    for (int i = 0; i < 2000; ++i) {
        obs.emplace_back(z(rng) / 3.0, chi(rng) / 8.0, 9);
    }
    const auto grid = build_panel_grid(obs);
    const auto fit = fit_npmle_panel(obs, grid.theta, grid.sigma2);
    expect_simplex(fit.mixing.weights());
    const auto w = fit.mixing.weights();
    const auto mode = std::max_element(w.begin(), w.end()) - w.begin();
    const auto atom = fit.mixing.atoms()[mode];
    const double dtheta = grid.theta[1] - grid.theta[0];
    EXPECT_LE(std::abs(atom.theta), dtheta + 1e-12);
    const auto k = std::lower_bound(grid.sigma2.begin(), grid.sigma2.end(), 1.0) - grid.sigma2.begin();
    ASSERT_GT(k, 0);
    EXPECT_GE(atom.sigma2, grid.sigma2[k - 1] - 1e-12);
    EXPECT_LE(atom.sigma2, grid.sigma2[std::min<std::size_t>(k, grid.sigma2.size() - 1)] + 1e-12);
}

TEST(FitPanel, SingleObservation) {
    const std::vector<PanelObs> obs{PanelObs(0.4, 1.3, 9)};
    const std::vector<double> theta{-1, 0, 0.5, 1}, sigma2{0.5, 1, 2};
    const auto fit = fit_npmle_panel(obs, theta, sigma2);
    EXPECT_EQ(fit.mixing.atoms().size(), 1u);
    expect_simplex(fit.mixing.weights());
    EXPECT_DOUBLE_EQ(fit.mixing.atoms()[0].theta, 0.5);
}

TEST(FitPanel, MonotoneOnBivariateDesign) {
    std::mt19937_64 rng(21);
    const auto sample = sample_dgp(dgp::BivariateDiscrete{}, 2000, rng);
    for (auto solver : {NpmleSolver::cnm, NpmleSolver::em}) {
        NpmleOptions opt;
        opt.solver = solver;
        opt.maxit = solver == NpmleSolver::em ? 200 : 5000;
        const auto fit = fit_npmle_panel(sample.panel, opt);
        expect_monotone(fit.report);
        expect_simplex(fit.mixing.weights());
        if (solver == NpmleSolver::cnm) {
            EXPECT_TRUE(fit.report.converged);
            EXPECT_LE(fit.report.kkt_max_violation, 10 * opt.tol);
        }
    }
}

TEST(Smoothing, KernelPeakAndMass) {
    EXPECT_DOUBLE_EQ(biweight_kernel(0, 1), 15.0 / 16.0);
    EXPECT_DOUBLE_EQ(biweight_kernel(1.5, 1), 0.0);
    const auto s = smooth_mixing(DiscreteMixing::point_mass(0), 1.0);
    const auto mid = std::lower_bound(s.grid.begin(), s.grid.end(), -1e-12) - s.grid.begin();
    EXPECT_NEAR(s.grid[mid], 0.0, 1e-12);
    EXPECT_NEAR(s.density[mid], 15.0 / 16.0, 1e-4);
    EXPECT_NEAR(s.integral(), 1.0, 1e-6);
    EXPECT_THROW(smooth_mixing(DiscreteMixing::point_mass(0), 0.0), std::domain_error);
}

TEST(Smoothing, SeparatedBumps) {
    const DiscreteMixing g({-3, 3}, {0.3, 0.7});
    const auto s = smooth_mixing(g, 1.0);
    EXPECT_NEAR(s.integral(), 1.0, 1e-6);
    EXPECT_NEAR(s.integral_between(-4, -2), 0.3, 1e-6);
    EXPECT_NEAR(s.integral_between(2, 4), 0.7, 1e-6);
    EXPECT_NEAR(s.integral_between(-1.9, 1.9), 0.0, 1e-12);
}

TEST(DefaultBandwidth, Examples) {
    EXPECT_DOUBLE_EQ(default_bandwidth(DiscreteMixing({-1, 1}, {0.5, 0.5})), 1.0);
    EXPECT_GT(default_bandwidth(DiscreteMixing::point_mass(0)), 0.0);
    EXPECT_NEAR(default_bandwidth(DiscreteMixing({-1, 2, 5}, {0.85, 0.10, 0.05})), 0.6, 1e-12);
}
