#ifndef EBRANK_DISTRIBUTIONS_HPP
#define EBRANK_DISTRIBUTIONS_HPP

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

/**
 * @file distributions.hpp
 * @brief Scalar density, distribution and quantile helpers shared by all modules.
 */

namespace ebrank {

namespace detail {

inline constexpr double log_sqrt_2pi = 0.91893853320467274178;

// exp(-745) is the last value above the subnormal floor.
inline constexpr double log_density_floor = -745.0;

}

inline double normal_logpdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - detail::log_sqrt_2pi - std::log(sd);
}

inline double normal_pdf(double x, double mean = 0, double sd = 1) {
    return std::exp(normal_logpdf(x, mean, sd));
}

inline double std_normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

/** Upper tail of the standard normal, accurate far into the tail. */
inline double std_normal_sf(double z) {
    return 0.5 * std::erfc(z / std::numbers::sqrt2);
}

inline double std_normal_quantile(double p) {
    if (p <= 0) {
        return -std::numeric_limits<double>::infinity();
    }
    if (p >= 1) {
        return std::numeric_limits<double>::infinity();
    }
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double student_t_cdf(double x, double df) {
    if (std::isinf(x)) {
        return x > 0 ? 1.0 : 0.0;
    }
    return boost::math::cdf(boost::math::students_t_distribution<double>(df), x);
}

inline double student_t_quantile(double p, double df) {
    return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

inline double student_t_logpdf(double x, double df) {
    return std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * std::numbers::pi)
        - (df + 1) / 2 * std::log1p(x * x / df);
}

/**
 * Log-density of a Gamma variable with the given shape and scale.
 * At `x == 0` this is `+inf`, `log(1/scale)` or `-inf` for shape below, equal to or above 1.
 */
inline double gamma_logpdf(double x, double shape, double scale) {
    if (x < 0) {
        return -std::numeric_limits<double>::infinity();
    }
    if (x == 0) {
        if (shape < 1) {
            return std::numeric_limits<double>::infinity();
        }
        if (shape == 1) {
            return -std::log(scale);
        }
        return -std::numeric_limits<double>::infinity();
    }
    return (shape - 1) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale);
}

}

#endif
