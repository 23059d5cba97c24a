#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tercast/stats.hpp"
#include "tercast/tercile.hpp"

using namespace tercast;

namespace {

GridSpec tiny_spec(int n_lat = 1, int n_lon = 1) {
    GridSpec s;
    s.lat_start = 0.25;
    s.lon_start = 35.25;
    s.cell_size = 0.5;
    s.n_lat = n_lat;
    s.n_lon = n_lon;
    s.valid.assign(n_lat * n_lon, 1);
    return s;
}

/// Hand-built single-cell basis: pattern 1, chosen sigma_sq/resid_sq.
EofBasis unit_basis(double sigma_sq, double resid_sq) {
    EofBasis b;
    b.spec = tiny_spec();
    b.k = 1;
    b.fit_years = {1993, 1994};
    b.included = {1};
    b.patterns = {{1.0}};
    b.loading_variances = {std::max(0.0, sigma_sq - resid_sq)};
    b.loadings = {{0.0}, {0.0}};
    b.sigma_sq = {sigma_sq};
    b.resid_sq = {resid_sq};
    return b;
}

LoadingForecast forecast_1d(double mu, double var, int year = 2020) {
    LoadingForecast f;
    f.year = year;
    f.mean = Eigen::VectorXd::Constant(1, mu);
    f.cov = Eigen::MatrixXd::Constant(1, 1, var);
    return f;
}

}  // namespace

TEST_CASE("zero-signal forecast recovers climatology probabilities") {
    // mu = 0, Sigma = 0, resid_sq = sigma_sq forces v = sigma^2
    EofBasis basis = unit_basis(4.0, 4.0);
    TercileField f = tercile_from_gaussian(forecast_1d(0.0, 0.0), basis);
    CHECK(f.p_below[0] == Catch::Approx(1.0 / 3.0).margin(1e-9));
    CHECK(f.p_normal[0] == Catch::Approx(1.0 / 3.0).margin(1e-9));
    CHECK(f.p_above[0] == Catch::Approx(1.0 / 3.0).margin(1e-9));
}

TEST_CASE("strong positive signal saturates the above category") {
    EofBasis basis = unit_basis(1.0, 1.0);
    // m = 10 sigma, v = sigma^2
    TercileField f = tercile_from_gaussian(forecast_1d(10.0, 0.0), basis);
    CHECK(f.p_above[0] > 0.999999);
    CHECK(f.p_below[0] < 1e-9);
}

TEST_CASE("symmetric unit case splits below/above equally") {
    // sigma = 1, m = 0, v = 1: boundaries at Q(1/3) = -0.43072729929545749
    EofBasis basis = unit_basis(1.0, 1.0);
    TercileField f = tercile_from_gaussian(forecast_1d(0.0, 0.0), basis);
    CHECK(f.p_below[0] == Catch::Approx(norm_cdf(-0.43072729929545749)).margin(1e-12));
    CHECK(f.p_below[0] == Catch::Approx(f.p_above[0]).margin(1e-15));
}

TEST_CASE("probability triples always sit on the simplex") {
    SplitMix64 rng(99);
    EofBasis basis = unit_basis(2.0, 0.5);
    basis.loading_variances = {1.5};
    for (int i = 0; i < 500; ++i) {
        const double mu = rng.next_normal() * 5.0;
        const double var = std::abs(rng.next_normal());
        TercileField f = tercile_from_gaussian(forecast_1d(mu, var), basis);
        const double sum = f.p_below[0] + f.p_normal[0] + f.p_above[0];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        CHECK(f.p_below[0] >= 0.0);
        CHECK(f.p_normal[0] >= 0.0);
        CHECK(f.p_above[0] >= 0.0);
    }
}

TEST_CASE("increasing the mean moves mass from below to above") {
    EofBasis basis = unit_basis(1.0, 0.3);
    double prev_pb = 1.1, prev_pa = -0.1;
    for (double m = -3.0; m <= 3.0; m += 0.25) {
        TercileField f = tercile_from_gaussian(forecast_1d(m, 0.2), basis);
        CHECK(f.p_below[0] < prev_pb);
        CHECK(f.p_above[0] > prev_pa);
        prev_pb = f.p_below[0];
        prev_pa = f.p_above[0];
    }
}

TEST_CASE("degenerate cells: v = 0 with sigma = 0 is missing") {
    EofBasis basis = unit_basis(0.0, 0.0);
    basis.loading_variances = {0.0};
    TercileField f = tercile_from_gaussian(forecast_1d(0.0, 0.0), basis);
    CHECK(f.missing_at(0));

    EofBasis basis2 = unit_basis(1.0, 0.0);
    TercileField f2 = tercile_from_gaussian(forecast_1d(5.0, 0.0), basis2);
    CHECK(f2.p_above[0] == 1.0);  // point mass above the upper boundary

    LoadingForecast bad = forecast_1d(0.0, 0.0);
    bad.mean = Eigen::VectorXd::Zero(2);
    bad.cov = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(tercile_from_gaussian(bad, basis2), config_error);
}

TEST_CASE("ensemble counting example") {
    GridSpec spec = tiny_spec();
    std::vector<int> years;
    for (int y = 1993; y <= 2020; ++y) years.push_back(y);
    // construct 25 members whose pooled reference boundaries are known:
    // the target year then gets 10 below, 8 normal, 7 above
    std::vector<GridStack> members;
    SplitMix64 rng(1);
    for (int m = 0; m < 25; ++m) {
        GridStack st;
        st.spec = spec;
        st.years = years;
        for (size_t yi = 0; yi < years.size(); ++yi) st.values.push_back({rng.next_normal()});
        members.push_back(std::move(st));
    }
    // pooled boundaries over the reference years (excluding 2020)
    std::vector<double> pool;
    for (int y : years) {
        if (y == 2020) continue;
        for (const auto& m : members) pool.push_back(m.values[m.year_index(y)][0]);
    }
    std::sort(pool.begin(), pool.end());
    const auto [lo, hi] = tercile_boundaries(pool);
    // overwrite the target year: 10 below lo, 8 inside, 7 above hi
    for (int m = 0; m < 25; ++m) {
        double v;
        if (m < 10)
            v = lo - 1.0 - m * 0.01;
        else if (m < 18)
            v = lo + (hi - lo) * (m - 9) / 10.0;
        else
            v = hi + 1.0 + m * 0.01;
        members[m].values[members[m].year_index(2020)][0] = v;
    }
    TercileField f = tercile_from_ensemble(members, years, 2020, true);
    CHECK(f.p_below[0] == 0.40);
    CHECK(f.p_normal[0] == 0.32);
    CHECK(f.p_above[0] == 0.28);

    // all members below the lower boundary
    for (int m = 0; m < 25; ++m)
        members[m].values[members[m].year_index(2020)][0] = lo - 5.0 - m * 0.01;
    TercileField g = tercile_from_ensemble(members, years, 2020, true);
    CHECK(g.p_below[0] == 1.0);
    CHECK(g.p_normal[0] == 0.0);
    CHECK(g.p_above[0] == 0.0);
}

TEST_CASE("ensemble members from climatology give near-uniform mean probabilities") {
    GridSpec spec = tiny_spec();
    std::vector<int> years;
    for (int y = 1993; y <= 2020; ++y) years.push_back(y);
    double sum_b = 0, sum_n = 0, sum_a = 0;
    const int draws = 1000;
    SplitMix64 rng(20240809);
    for (int d = 0; d < draws; ++d) {
        std::vector<GridStack> members;
        for (int m = 0; m < 25; ++m) {
            GridStack st;
            st.spec = spec;
            st.years = years;
            for (size_t yi = 0; yi < years.size(); ++yi) st.values.push_back({rng.next_normal()});
            members.push_back(std::move(st));
        }
        TercileField f = tercile_from_ensemble(members, years, 2020, false);
        sum_b += f.p_below[0];
        sum_n += f.p_normal[0];
        sum_a += f.p_above[0];
    }
    CHECK(sum_b / draws == Catch::Approx(1.0 / 3.0).margin(0.02));
    CHECK(sum_n / draws == Catch::Approx(1.0 / 3.0).margin(0.02));
    CHECK(sum_a / draws == Catch::Approx(1.0 / 3.0).margin(0.02));
}

TEST_CASE("ensemble probabilities are invariant under monotone transformation") {
    GridSpec spec = tiny_spec(2, 2);
    std::vector<int> years;
    for (int y = 1993; y <= 2012; ++y) years.push_back(y);
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        SplitMix64 rng(seed);
        std::vector<GridStack> members;
        for (int m = 0; m < 11; ++m) {
            GridStack st;
            st.spec = spec;
            st.years = years;
            for (size_t yi = 0; yi < years.size(); ++yi) {
                std::vector<double> f(4);
                for (auto& v : f) v = rng.next_normal();
                st.values.push_back(std::move(f));
            }
            members.push_back(std::move(st));
        }
        TercileField base = tercile_from_ensemble(members, years, 2000, true);
        std::vector<GridStack> warped = members;
        for (auto& m : warped)
            for (auto& f : m.values)
                for (auto& v : f) v = std::exp(v) + 0.1 * v;  // strictly increasing
        TercileField mapped = tercile_from_ensemble(warped, years, 2000, true);
        for (int c = 0; c < 4; ++c) {
            CHECK(base.p_below[c] == mapped.p_below[c]);
            CHECK(base.p_normal[c] == mapped.p_normal[c]);
            CHECK(base.p_above[c] == mapped.p_above[c]);
        }
    }
}

TEST_CASE("ragged ensembles are rejected") {
    GridSpec spec = tiny_spec();
    std::vector<GridStack> members(2);
    members[0].spec = spec;
    members[0].years = {2000, 2001, 2002, 2003, 2004, 2005};
    for (int i = 0; i < 6; ++i) members[0].values.push_back({double(i)});
    members[1] = members[0];
    members[1].years.pop_back();
    members[1].values.pop_back();
    CHECK_THROWS_AS(tercile_from_ensemble(members, members[0].years, 2000, false),
                    validation_error);
}

TEST_CASE("climatology forecast fills included cells with exact thirds") {
    GridSpec spec = tiny_spec(2, 2);
    Mask mask{spec, {1, 0, 1, 1}};
    TercileField f = climatology_forecast(mask, 2015);
    CHECK(f.p_below[0] == 1.0 / 3.0);
    CHECK(f.missing_at(1));
    CHECK(f.p_below[0] + f.p_normal[0] + f.p_above[0] == Catch::Approx(1.0).margin(1e-15));
    CHECK(f.provenance == Provenance::climatology);
    CHECK(expected_tercile(f, mask) == 0.0);
}

TEST_CASE("expected_tercile on fields and categories") {
    GridSpec spec = tiny_spec(2, 2);
    Mask mask{spec, {1, 1, 1, 1}};

    CategoryStack cats;
    cats.spec = spec;
    cats.years = {2019};
    cats.categories = {{1.0, 1.0, 1.0, 1.0}};
    CHECK(expected_tercile(cats, 2019, mask) == 1.0);

    SplitMix64 rng(4);
    TercileField f = make_tercile_field(spec, 2019, Provenance::model);
    double expect = 0;
    for (int c = 0; c < 4; ++c) {
        double pb = rng.next_double(), pa = rng.next_double() * (1 - pb);
        f.p_below[c] = pb;
        f.p_above[c] = pa;
        f.p_normal[c] = 1 - pb - pa;
        expect += pa - pb;
    }
    CHECK(expected_tercile(f, mask) == Catch::Approx(expect / 4.0).margin(1e-12));

    Mask empty{spec, {0, 0, 0, 0}};
    CHECK_THROWS_AS(expected_tercile(f, empty), domain_error);
}

TEST_CASE("tercile CSV and PGM round-trips") {
    GridSpec spec = tiny_spec(2, 3);
    TercileField f = make_tercile_field(spec, 2005, Provenance::ensemble);
    SplitMix64 rng(6);
    for (int c = 0; c < 6; ++c) {
        if (c == 2) continue;  // leave one missing
        double pb = rng.next_double() / 2, pa = rng.next_double() / 2;
        f.p_below[c] = pb;
        f.p_above[c] = pa;
        f.p_normal[c] = 1 - pb - pa;
    }
    const std::string path = "/tmp/tercast_terciles.csv";
    save_tercile_fields({f}, path);
    auto back = load_tercile_fields(path, spec);
    REQUIRE(back.size() == 1);
    CHECK(back[0].year == 2005);
    CHECK(back[0].provenance == Provenance::ensemble);
    for (int c = 0; c < 6; ++c) {
        if (is_missing(f.p_below[c]))
            CHECK(back[0].missing_at(c));
        else
            CHECK(back[0].p_below[c] == f.p_below[c]);
    }
    std::filesystem::remove(path);

    const std::string pgm = "/tmp/tercast_prob.pgm";
    save_probability_pgm(f, 'a', pgm);
    std::ifstream in(pgm, std::ios::binary);
    std::string magic;
    in >> magic;
    CHECK(magic == "P5");
    int w, h, maxv;
    in >> w >> h >> maxv;
    CHECK(w == 3);
    CHECK(h == 2);
    CHECK(maxv == 255);
    in.get();
    std::vector<unsigned char> bytes(6);
    in.read(reinterpret_cast<char*>(bytes.data()), 6);
    // top row is the northernmost (second) grid row; missing renders as 0
    CHECK(bytes[0] == (unsigned char)std::lround(f.p_above[3] * 255));
    CHECK(bytes[3] == (unsigned char)std::lround(f.p_above[0] * 255));
    CHECK(bytes[5] == 0);  // cell 2 is missing
    std::filesystem::remove(pgm);
}
