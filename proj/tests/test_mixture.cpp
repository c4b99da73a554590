#include <cmath>
#include <random>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/trapezoidal.hpp>
#include <gtest/gtest.h>

#include "ebrank/mixture.hpp"

using namespace ebrank;

namespace {

DiscreteMixing three_point() { return DiscreteMixing({-1, 2, 5}, {0.85, 0.10, 0.05}); }

std::vector<double> vec(std::span<const double> x) { return {x.begin(), x.end()}; }

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI); }

}

TEST(DiscreteMixing, RejectsInvalidWeights) {
    EXPECT_THROW(DiscreteMixing({0, 1}, {0.5, 0.6}), std::domain_error);
    EXPECT_THROW(DiscreteMixing({0, 1}, {-0.1, 1.1}), std::domain_error);
    EXPECT_THROW(DiscreteMixing({1, 0}, {0.5, 0.5}), std::domain_error);
    EXPECT_THROW(DiscreteMixing({0, 0}, {0.5, 0.5}), std::domain_error);
    EXPECT_THROW(DiscreteMixing({}, {}), std::domain_error);
    EXPECT_NO_THROW(DiscreteMixing({0, 1}, {0.5, 0.5}));
}

TEST(DiscreteMixing, MomentsAndMirror) {
    const auto g = three_point();
    EXPECT_NEAR(g.mean(), -0.85 + 0.2 + 0.25, 1e-15);
    const double m = g.mean();
    EXPECT_NEAR(g.variance(), 0.85 * (1 + m) * (1 + m) + 0.10 * (2 - m) * (2 - m) + 0.05 * (5 - m) * (5 - m), 1e-12);
    const auto r = g.mirrored();
    EXPECT_EQ(vec(r.atoms()), (std::vector<double>{-5, -2, 1}));
    EXPECT_EQ(vec(r.weights()), (std::vector<double>{0.05, 0.10, 0.85}));
}

TEST(BivariateMixing, ValidatesVariances) {
    EXPECT_THROW(BivariateMixing({{0, 0.0}}, {1.0}), std::domain_error);
    const BivariateMixing g({{0, 1}, {1, 2}, {0, 3}}, {0.2, 0.3, 0.5});
    const auto m = g.theta_marginal();
    EXPECT_EQ(vec(m.atoms()), (std::vector<double>{0, 1}));
    EXPECT_NEAR(m.weights()[0], 0.7, 1e-15);
}

TEST(Observations, Validation) {
    EXPECT_THROW(KnownVarObs(0, 0), std::domain_error);
    EXPECT_THROW(KnownVarObs(NAN, 1), std::domain_error);
    EXPECT_THROW(PanelObs(0, 1, 3), std::domain_error);
    EXPECT_THROW(PanelObs(0, -1, 5), std::domain_error);
    EXPECT_DOUBLE_EQ(KnownVarObs::from_precision(1.0, 4.0).sigma, 0.5);
    EXPECT_DOUBLE_EQ(PanelObs(0, 1, 9).shape(), 4.0);
}

TEST(MixingCdf, Examples) {
    const auto g = three_point();
    EXPECT_DOUBLE_EQ(mixing_cdf(g, 0), 0.85);
    EXPECT_DOUBLE_EQ(mixing_cdf(g, -2), 0.0);
    EXPECT_DOUBLE_EQ(mixing_cdf(DiscreteMixing::point_mass(0), 0), 1.0);
    EXPECT_NEAR(mixing_cdf(g, 5), 1.0, 1e-15);
}

TEST(MixingQuantile, Examples) {
    const auto g = three_point();
    EXPECT_DOUBLE_EQ(mixing_quantile(g, 0.95), 2);
    EXPECT_DOUBLE_EQ(mixing_quantile(g, 0.951), 5);
    EXPECT_DOUBLE_EQ(mixing_quantile(DiscreteMixing::point_mass(0), 0.3), 0);
    std::vector<double> a;
    for (int k = 0; k <= 200; ++k) {
        a.push_back(-1 + k / 100.0);
    }
    const auto u = DiscreteMixing::from_masses(a, std::vector<double>(201, 1.0));
    EXPECT_NEAR(mixing_quantile(u, 0.5), 0.0, 1e-12);
    EXPECT_THROW(mixing_quantile(g, 0.0), std::domain_error);
    EXPECT_THROW(mixing_quantile(g, 1.0), std::domain_error);
}

TEST(MixingQuantile, GaloisConnection) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(0, 1);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> atoms, masses;
        double x = -3;
        for (int j = 0; j < 12; ++j) {
            x += 0.1 + unif(rng);
            atoms.push_back(x);
            masses.push_back(unif(rng));
        }
        const auto g = DiscreteMixing::from_masses(atoms, masses);
        double prev = 0;
        for (double t = -4; t < x + 1; t += 0.05) {
            const double c = mixing_cdf(g, t);
            EXPECT_GE(c, prev);
            prev = c;
        }
        EXPECT_NEAR(mixing_cdf(g, x), 1.0, 1e-12);
        for (auto a : atoms) {
            const double c = mixing_cdf(g, a);
            if (c < 1 - 1e-12) {
                EXPECT_LE(mixing_quantile(g, c), a);
            }
        }
        for (int k = 1; k < 100; ++k) {
            const double p = k / 100.0;
            EXPECT_GE(mixing_cdf(g, mixing_quantile(g, p)), p - 1e-12);
        }
    }
}

TEST(TailCutoff, DiscreteExample) {
    const auto g = three_point();
    EXPECT_DOUBLE_EQ(tail_cutoff(g, 0.05), 5);
    EXPECT_DOUBLE_EQ(tail_cutoff(g, 0.10), 2);
    EXPECT_DOUBLE_EQ(tail_cutoff(g, 0.15), 2);
    EXPECT_DOUBLE_EQ(tail_cutoff(g, 0.05, Tail::lower), -1);
}

TEST(MarginalDensity, Examples) {
    EXPECT_NEAR(marginal_density_known_var(KnownVarObs(0, 1), DiscreteMixing::point_mass(0)), 0.3989423, 1e-7);
    EXPECT_NEAR(marginal_density_known_var(KnownVarObs(0, 1), DiscreteMixing({-1, 1}, {0.5, 0.5})), 0.2419707, 1e-7);
    EXPECT_NEAR(marginal_density_known_var(KnownVarObs(0, 2), DiscreteMixing::point_mass(0)), 0.1994711, 1e-7);
}

TEST(MarginalDensity, MatchesDirectSum) {
    const auto g = three_point();
    for (double y : {-3.0, 0.0, 1.7, 6.0}) {
        for (double s : {0.5, 1.0, 3.0}) {
            double direct = 0;
            for (std::size_t j = 0; j < 3; ++j) {
                direct += g.weights()[j] * phi((y - g.atoms()[j]) / s) / s;
            }
            EXPECT_NEAR(marginal_density_known_var(KnownVarObs(y, s), g), direct, 1e-14);
        }
    }
}

TEST(MarginalDensity, FloorsUnderflow) {
    const double f = marginal_density_known_var(KnownVarObs(200, 1), DiscreteMixing::point_mass(0));
    EXPECT_GT(f, 0.0);
    EXPECT_TRUE(std::isfinite(log_marginal_density_known_var(KnownVarObs(200, 1), DiscreteMixing::point_mass(0))));
}

TEST(MarginalDensity, IntegratesToOne) {
    const auto g = three_point();
    for (double s : {0.5, 1.0, 2.0}) {
        auto f = [&](double y) { return marginal_density_known_var(KnownVarObs(y, s), g); };
        EXPECT_NEAR(boost::math::quadrature::trapezoidal(f, -20.0, 20.0, 1e-10), 1.0, 1e-4);
    }
}

TEST(JointDensityPanel, ClosedFormProduct) {
    const PanelObs obs(0, 1, 9);
    const double value = joint_density_panel(obs, {0, 1});
    const double normal = boost::math::pdf(boost::math::normal_distribution<>(0, std::sqrt(1.0 / 9)), 0.0);
    const double gamma = boost::math::pdf(boost::math::gamma_distribution<>(4, 0.25), 1.0);
    EXPECT_NEAR(normal, 1.1968268412, 1e-9);
    EXPECT_NEAR(gamma, 0.78146726, 1e-8);
    EXPECT_NEAR(value, normal * gamma, 1e-12);
    EXPECT_NEAR(value, 0.93528, 1e-5);
}

TEST(JointDensityPanel, WeightReplacesCount) {
    const PanelObs obs(0.3, 1.2, 9, 25.0);
    const double normal = boost::math::pdf(boost::math::normal_distribution<>(0.1, std::sqrt(2.0 / 25)), 0.3);
    const double gamma = boost::math::pdf(boost::math::gamma_distribution<>(4, 2.0 / 4), 1.2);
    EXPECT_NEAR(joint_density_panel(obs, {0.1, 2.0}), normal * gamma, 1e-12);
}

TEST(JointDensityPanel, EdgeCases) {
    EXPECT_EQ(joint_density_panel(PanelObs(0, 0, 9), {0, 1}), 0.0);
    EXPECT_LT(joint_density_panel(PanelObs(0, 1e4, 9), {0, 1}), 1e-300);
    EXPECT_EQ(joint_density_panel(PanelObs(0.2, 0.7, 6), {0.1, 0.5}), joint_density_panel(PanelObs(0.2, 0.7, 6), {0.1, 0.5}));
    EXPECT_THROW(joint_density_panel(PanelObs(0, 1, 9), {0, 0}), std::domain_error);
}

TEST(JointDensityPanel, IntegratesToOne) {
    const LocationScale atom{0.5, 2.0};
    const int t = 6;
    auto inner = [&](double ybar) {
        auto f = [&](double s) { return s > 0 ? joint_density_panel(PanelObs(ybar, s, t), atom) : 0.0; };
        return boost::math::quadrature::trapezoidal(f, 0.0, 30.0, 1e-7);
    };
    const double total = boost::math::quadrature::trapezoidal(inner, -4.0, 5.0, 1e-5);
    EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(SmoothedMixing, ValidatesIntegral) {
    EXPECT_THROW(SmoothedMixing({0, 1, 2}, {0.1, 0.1, 0.1}, 1.0), std::domain_error);
    const SmoothedMixing s({0, 1, 2}, {0, 1, 0}, 1.0);
    EXPECT_NEAR(s.integral(), 1.0, 1e-15);
    const auto d = s.to_discrete(3);
    EXPECT_NEAR(d.mean(), 1.0, 1e-12);
}
