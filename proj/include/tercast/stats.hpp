#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "tercast/error.hpp"

namespace tercast {

inline constexpr double missing_value = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

/// Standard normal quantile function Q(p). Accurate to well below 1e-10
/// absolute on [1e-6, 1-1e-6].
inline double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw numerical_error("norm_quantile: p outside (0,1)");
    static const boost::math::normal_distribution<double> stdnorm(0.0, 1.0);
    return boost::math::quantile(stdnorm, p);
}

/// Standard normal CDF.
inline double norm_cdf(double x) {
    static const boost::math::normal_distribution<double> stdnorm(0.0, 1.0);
    return boost::math::cdf(stdnorm, x);
}

/// Two-sided p-value of the correlation t-test: t = rho*sqrt(n-2)/sqrt(1-rho^2)
/// against a Student-t with n-2 degrees of freedom.
inline double correlation_p_value(double rho, long n) {
    if (n < 3) throw config_error("correlation_p_value: need at least 3 samples");
    const double r = std::clamp(rho, -1.0, 1.0);
    if (std::abs(r) >= 1.0) return 0.0;
    const double df = static_cast<double>(n - 2);
    const double t = r * std::sqrt(df) / std::sqrt(1.0 - r * r);
    const boost::math::students_t_distribution<double> dist(df);
    return 2.0 * boost::math::cdf(dist, -std::abs(t));
}

/// Fisher-z alternative: 2(1 - Phi(|atanh(rho)| sqrt(n-3))).
inline double correlation_p_value_fisher(double rho, long n) {
    if (n < 4) throw config_error("correlation_p_value_fisher: need at least 4 samples");
    const double r = std::clamp(rho, -1.0, 1.0);
    if (std::abs(r) >= 1.0) return 0.0;
    const double stat = std::abs(std::atanh(r)) * std::sqrt(double(n - 3));
    static const boost::math::normal_distribution<double> stdnorm(0.0, 1.0);
    return 2.0 * boost::math::cdf(stdnorm, -stat);
}

/// Pearson correlation of two equally long series. NaN if either side is
/// constant or the series are shorter than 2.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw validation_error("pearson: length mismatch");
    const size_t n = a.size();
    if (n < 2) return missing_value;
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) { ma += a[i]; mb += b[i]; }
    ma /= double(n);
    mb /= double(n);
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return missing_value;
    return sab / std::sqrt(saa * sbb);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return missing_value;
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
}

/// Sample standard deviation (n-1 denominator).
inline double sample_sd(const std::vector<double>& v) {
    const size_t n = v.size();
    if (n < 2) return 0.0;
    const double m = mean(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(n - 1));
}

/// Percentile with linear interpolation between order statistics, inclusive
/// endpoints: h = p/100 * (n-1).
inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw domain_error("percentile: empty sample");
    std::sort(v.begin(), v.end());
    const double h = std::clamp(p, 0.0, 100.0) / 100.0 * double(v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(h));
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - double(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

/// splitmix64 PRNG. Chosen for bootstrap resampling because the full stream
/// specification fits in a few lines and can be re-implemented exactly:
///   next(): state += 0x9E3779B97F4A7C15; z = state;
///           z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
///           z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
///           return z ^ (z >> 31);
struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        state += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0,1).
    double next_double() { return double(next() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller on two uniform draws.
    double next_normal() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
};

/// Substream seed for independent parallel streams: substream(seed, i) =
/// first output of splitmix64 initialized at seed XOR (i+1)*0x9E3779B97F4A7C15
/// (wrapping 64-bit multiply).
inline uint64_t substream_seed(uint64_t seed, uint64_t index) {
    SplitMix64 g(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
    return g.next();
}

}  // namespace tercast
