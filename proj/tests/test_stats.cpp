#include <catch2/catch_amalgamated.hpp>

#include "tercast/stats.hpp"

using namespace tercast;

TEST_CASE("normal quantile matches high-precision reference table") {
    // reference values computed with 40-digit arithmetic (mpmath)
    CHECK(norm_quantile(0.01) == Catch::Approx(-2.3263478740408411009).margin(1e-10));
    CHECK(norm_quantile(1.0 / 3.0) == Catch::Approx(-0.43072729929545749021).margin(1e-12));
    CHECK(norm_quantile(0.5) == Catch::Approx(0.0).margin(1e-14));
    CHECK(norm_quantile(0.975) == Catch::Approx(1.9599639845400542355).margin(1e-10));
    CHECK(norm_quantile(1e-6) == Catch::Approx(-4.7534243088228989482).margin(1e-10));
    CHECK(norm_quantile(1.0 / 29.0) == Catch::Approx(-1.818645592850060488).margin(1e-10));
    CHECK(norm_quantile(29.0 / 30.0) == Catch::Approx(1.8339146358159143152).margin(1e-10));
}

TEST_CASE("normal CDF and quantile are mutual inverses") {
    for (double p = 0.001; p < 1.0; p += 0.007)
        CHECK(norm_cdf(norm_quantile(p)) == Catch::Approx(p).margin(1e-9));
    CHECK(norm_cdf(-1.0) == Catch::Approx(0.15865525393145705141).margin(1e-12));
    CHECK(norm_cdf(1.96) == Catch::Approx(0.97500210485177956586).margin(1e-12));
}

TEST_CASE("correlation t-test p-value matches t-distribution oracle") {
    // n = 27, rho = 0.5: t = 2.8867513459481288, p = 0.0079127383580058196 (25 df)
    CHECK(correlation_p_value(0.5, 27) == Catch::Approx(0.0079127383580058196).margin(1e-12));
    CHECK(correlation_p_value(0.0, 27) == Catch::Approx(1.0).margin(1e-12));
    CHECK(correlation_p_value(1.0, 27) == 0.0);
    CHECK(correlation_p_value(-0.5, 27) == correlation_p_value(0.5, 27));
}

TEST_CASE("pearson correlation on simple series") {
    std::vector<double> a{1, 2, 3, 4};
    std::vector<double> b{2, 4, 6, 8};
    CHECK(pearson(a, b) == Catch::Approx(1.0));
    std::vector<double> c{-2, -4, -6, -8};
    CHECK(pearson(a, c) == Catch::Approx(-1.0));
    std::vector<double> d{5, 5, 5, 5};
    CHECK(is_missing(pearson(a, d)));
}

TEST_CASE("percentile uses inclusive linear interpolation") {
    std::vector<double> v{10, 20, 30, 40, 50};
    CHECK(percentile(v, 0) == 10);
    CHECK(percentile(v, 100) == 50);
    CHECK(percentile(v, 50) == 30);
    CHECK(percentile(v, 25) == 20);
    CHECK(percentile(v, 10) == Catch::Approx(14.0));  // h = 0.4 between 10 and 20
    // monotone in the level
    double prev = -1e300;
    for (double p = 0; p <= 100; p += 2.5) {
        const double q = percentile(v, p);
        CHECK(q >= prev);
        prev = q;
    }
}

TEST_CASE("splitmix64 streams are deterministic and substreams differ") {
    SplitMix64 a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    CHECK(substream_seed(1, 0) != substream_seed(1, 1));
    CHECK(substream_seed(1, 0) == substream_seed(1, 0));
    // uniform draws stay in [0,1)
    SplitMix64 g(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = g.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}
