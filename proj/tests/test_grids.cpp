#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tercast/grid.hpp"
#include "tercast/stats.hpp"

using namespace tercast;
namespace fs = std::filesystem;

namespace {

GridSpec make_spec(int n_lat, int n_lon, double cell = 0.5, double lat0 = 0.25,
                   double lon0 = 35.25) {
    GridSpec s;
    s.lat_start = lat0;
    s.lon_start = lon0;
    s.cell_size = cell;
    s.n_lat = n_lat;
    s.n_lon = n_lon;
    s.valid.assign(n_lat * n_lon, 1);
    return s;
}

GridStack random_stack(const GridSpec& spec, const std::vector<int>& years, uint64_t seed,
                       FieldKind kind = FieldKind::total, double offset = 0.0) {
    GridStack st;
    st.spec = spec;
    st.years = years;
    st.kind = kind;
    SplitMix64 rng(seed);
    for (size_t i = 0; i < years.size(); ++i) {
        std::vector<double> f(spec.n_cells(), missing_value);
        for (int c = 0; c < spec.n_cells(); ++c)
            if (spec.is_valid(c)) f[c] = offset + rng.next_normal();
        st.values.push_back(std::move(f));
    }
    return st;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("load_grid_stack round-trips a single cell") {
    const std::string path = temp_path("tercast_onecell.csv");
    {
        std::ofstream out(path);
        out << "lat,lon,year,value\n0.25,35.25,1993,120.0\n";
    }
    GridSpec spec = make_spec(1, 1);
    GridStack st = load_grid_stack(path, spec);
    REQUIRE(st.years == std::vector<int>{1993});
    CHECK(st.values[0][0] == 120.0);
    fs::remove(path);
}

TEST_CASE("load_grid_stack rejects off-grid coordinates") {
    const std::string path = temp_path("tercast_offgrid.csv");
    {
        std::ofstream out(path);
        out << "lat,lon,year,value\n0.30,35.25,1993,120.0\n";
    }
    GridSpec spec = make_spec(1, 1);
    CHECK_THROWS_AS(load_grid_stack(path, spec), grid_mismatch_error);
    fs::remove(path);
}

TEST_CASE("load_grid_stack rejects duplicates and bad rows with line numbers") {
    GridSpec spec = make_spec(1, 1);
    const std::string path = temp_path("tercast_dup.csv");
    {
        std::ofstream out(path);
        out << "lat,lon,year,value\n0.25,35.25,1993,1.0\n0.25,35.25,1993,2.0\n";
    }
    CHECK_THROWS_AS(load_grid_stack(path, spec), duplication_error);
    {
        std::ofstream out(path);
        out << "lat,lon,year,value\n0.25,35.25,1993,abc\n";
    }
    try {
        load_grid_stack(path, spec);
        FAIL("expected parse error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("write-then-read reproduces random stacks bit-for-bit") {
    GridSpec spec = make_spec(4, 4);
    spec.valid[3] = 0;  // one hole
    GridStack st = random_stack(spec, {2000, 2001, 2002}, 99);
    st.values[1][5] = missing_value;
    const std::string path = temp_path("tercast_roundtrip.csv");
    save_grid_stack(st, path);
    GridStack back = load_grid_stack(path, spec);
    REQUIRE(back.years == st.years);
    for (size_t yi = 0; yi < st.years.size(); ++yi)
        for (int c = 0; c < spec.n_cells(); ++c) {
            if (!spec.is_valid(c)) continue;
            if (is_missing(st.values[yi][c]))
                CHECK(is_missing(back.values[yi][c]));
            else
                CHECK(back.values[yi][c] == st.values[yi][c]);
        }
    fs::remove(path);
}

TEST_CASE("seasonal_total sums season months") {
    GridSpec spec = make_spec(1, 1);
    MonthlyStack monthly;
    monthly.spec = spec;
    for (int m = 1; m <= 12; ++m) {
        monthly.times.push_back({1995, m});
        monthly.values.push_back({m == 3 ? 10.0 : m == 4 ? 20.0 : m == 5 ? 30.0 : 1.0});
    }
    GridStack st = seasonal_total(monthly, {3, 4, 5});
    CHECK(st.values[0][0] == 60.0);
    CHECK(st.kind == FieldKind::total);

    // all-zero months
    for (auto& f : monthly.values) f[0] = 0.0;
    CHECK(seasonal_total(monthly, {3, 4, 5}).values[0][0] == 0.0);
}

TEST_CASE("seasonal_total names the missing month") {
    GridSpec spec = make_spec(1, 1);
    MonthlyStack monthly;
    monthly.spec = spec;
    monthly.times = {{1995, 10}, {1995, 12}};
    monthly.values = {{1.0}, {2.0}};
    try {
        seasonal_total(monthly, {10, 11, 12});
        FAIL("expected incomplete-season error");
    } catch (const validation_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("1995") != std::string::npos);
        CHECK(msg.find("11") != std::string::npos);
    }
}

TEST_CASE("seasonal_total equals brute-force sum on random months") {
    GridSpec spec = make_spec(3, 3);
    MonthlyStack monthly;
    monthly.spec = spec;
    SplitMix64 rng(7);
    for (int m = 1; m <= 12; ++m) {
        monthly.times.push_back({2001, m});
        std::vector<double> f(spec.n_cells());
        for (auto& v : f) v = rng.next_double() * 50;
        monthly.values.push_back(std::move(f));
    }
    GridStack st = seasonal_total(monthly, {10, 11, 12});
    for (int c = 0; c < spec.n_cells(); ++c) {
        double expect = 0;  // direct summation oracle
        for (int m : {10, 11, 12}) expect += monthly.values[monthly.time_index(2001, m)][c];
        CHECK(st.values[0][c] == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("compute_anomalies removes the reference mean") {
    GridSpec spec = make_spec(1, 1);
    GridStack st;
    st.spec = spec;
    st.years = {2000, 2001, 2002};
    st.values = {{2.0}, {4.0}, {6.0}};
    GridStack an = compute_anomalies(st, st.years);
    CHECK(an.values[0][0] == Catch::Approx(-2.0));
    CHECK(an.values[1][0] == Catch::Approx(0.0));
    CHECK(an.values[2][0] == Catch::Approx(2.0));
    CHECK(an.kind == FieldKind::anomaly);

    GridStack con;
    con.spec = spec;
    con.years = {2000, 2001};
    con.values = {{3.0}, {3.0}};
    GridStack can = compute_anomalies(con, con.years);
    CHECK(can.values[0][0] == 0.0);
    CHECK(can.values[1][0] == 0.0);

    CHECK_THROWS_AS(compute_anomalies(st, {}), config_error);
}

TEST_CASE("anomalies over reference years sum to zero at every cell") {
    GridSpec spec = make_spec(4, 5);
    std::vector<int> years;
    for (int y = 1993; y <= 2010; ++y) years.push_back(y);
    GridStack st = random_stack(spec, years, 12345, FieldKind::total, 100.0);
    std::vector<int> ref(years.begin() + 3, years.begin() + 15);
    GridStack an = compute_anomalies(st, ref);
    for (int c = 0; c < spec.n_cells(); ++c) {
        double s = 0, scale = 0;
        for (int y : ref) {
            s += an.values[an.year_index(y)][c];
            scale += std::abs(an.values[an.year_index(y)][c]);
        }
        CHECK(std::abs(s) <= 1e-9 * (1.0 + scale));
    }
}

TEST_CASE("aggregate_grid block means and the coverage rule") {
    GridSpec spec = make_spec(2, 2);
    GridStack st;
    st.spec = spec;
    st.years = {2000};
    st.values = {{1.0, 2.0, 3.0, 4.0}};
    GridStack coarse = aggregate_grid(st, 2);
    REQUIRE(coarse.spec.n_cells() == 1);
    CHECK(coarse.values[0][0] == Catch::Approx(2.5));
    CHECK(coarse.spec.cell_size == Catch::Approx(1.0));
    CHECK(coarse.spec.lat_start == Catch::Approx(spec.lat_start + 0.25));

    // 1 of 4 valid at min_coverage 0.5: coarse cell invalid
    GridSpec holed = make_spec(2, 2);
    holed.valid = {1, 0, 0, 0};
    GridStack st2;
    st2.spec = holed;
    st2.years = {2000};
    st2.values = {{1.0, missing_value, missing_value, missing_value}};
    GridStack coarse2 = aggregate_grid(st2, 2, 0.5);
    CHECK_FALSE(coarse2.spec.is_valid(0));
    CHECK(is_missing(coarse2.values[0][0]));

    // exactly half valid passes the 50% rule
    holed.valid = {1, 1, 0, 0};
    st2.spec = holed;
    st2.values = {{1.0, 3.0, missing_value, missing_value}};
    GridStack coarse3 = aggregate_grid(st2, 2, 0.5);
    CHECK(coarse3.spec.is_valid(0));
    CHECK(coarse3.values[0][0] == Catch::Approx(2.0));

    GridSpec odd = make_spec(3, 4);
    GridStack st3 = random_stack(odd, {2000}, 5);
    CHECK_THROWS_AS(aggregate_grid(st3, 2), geometry_error);
    CHECK_THROWS_AS(aggregate_grid(st3, 3), config_error);
}

TEST_CASE("aggregate_grid matches brute-force block averaging") {
    GridSpec spec = make_spec(8, 8);
    SplitMix64 rng(77);
    for (auto& v : spec.valid) v = rng.next_double() < 0.7;
    GridStack st = random_stack(spec, {2000, 2001}, 42);
    GridStack coarse = aggregate_grid(st, 4, 0.5);
    for (size_t yi = 0; yi < st.years.size(); ++yi)
        for (int ci = 0; ci < coarse.spec.n_cells(); ++ci) {
            const int bi = ci / coarse.spec.n_lon, bj = ci % coarse.spec.n_lon;
            double s = 0;
            int nvalid = 0;
            for (int di = 0; di < 4; ++di)
                for (int dj = 0; dj < 4; ++dj) {
                    const int f = (bi * 4 + di) * spec.n_lon + (bj * 4 + dj);
                    if (!spec.is_valid(f)) continue;
                    ++nvalid;
                    s += st.values[yi][f];
                }
            if (double(nvalid) / 16.0 >= 0.5) {
                REQUIRE(coarse.spec.is_valid(ci));
                CHECK(coarse.values[yi][ci] == Catch::Approx(s / nvalid).margin(1e-12));
            } else {
                CHECK_FALSE(coarse.spec.is_valid(ci));
            }
        }
}

TEST_CASE("repeated factor-2 aggregation equals factor-4 on fully valid grids") {
    GridSpec spec = make_spec(8, 8);
    GridStack st = random_stack(spec, {2000, 2001, 2002}, 4242);
    GridStack twice = aggregate_grid(aggregate_grid(st, 2), 2);
    GridStack once = aggregate_grid(st, 4);
    REQUIRE(twice.spec.same_geometry(once.spec));
    for (size_t yi = 0; yi < st.years.size(); ++yi)
        for (int c = 0; c < once.spec.n_cells(); ++c)
            CHECK(twice.values[yi][c] == Catch::Approx(once.values[yi][c]).margin(1e-12));
}

TEST_CASE("tercile_categories clean-thirds example") {
    GridSpec spec = make_spec(1, 1);
    GridStack st;
    st.spec = spec;
    for (int i = 1; i <= 9; ++i) {
        st.years.push_back(1990 + i);
        st.values.push_back({double(i)});
    }
    CategoryStack cats = tercile_categories(st, st.years, false);
    // sample {1..9}: boundaries at order stats 3 and 6
    CHECK(cats.categories[0][0] == -1.0);  // value 1
    CHECK(cats.categories[2][0] == -1.0);  // value 3 ties the lower boundary
    CHECK(cats.categories[4][0] == 0.0);   // value 5
    CHECK(cats.categories[5][0] == 1.0);   // value 6 ties the upper boundary
    CHECK(cats.categories[8][0] == 1.0);   // value 9
}

TEST_CASE("tercile_categories rejects a too-small climatology") {
    GridSpec spec = make_spec(1, 1);
    GridStack st;
    st.spec = spec;
    for (int i = 1; i <= 5; ++i) {
        st.years.push_back(1990 + i);
        st.values.push_back({double(i)});
    }
    CHECK_THROWS_AS(tercile_categories(st, st.years, false), config_error);
}

TEST_CASE("tercile category counts match the counting oracle") {
    SplitMix64 rng(2024);
    for (int n : {9, 12, 27, 28, 30}) {
        GridSpec spec = make_spec(2, 2);
        GridStack st;
        st.spec = spec;
        for (int i = 0; i < n; ++i) {
            st.years.push_back(1970 + i);
            std::vector<double> f(4);
            for (auto& v : f) v = rng.next_normal();
            st.values.push_back(std::move(f));
        }
        CategoryStack cats = tercile_categories(st, st.years, false);
        for (int c = 0; c < 4; ++c) {
            // counting oracle: recompute category counts from scratch
            std::vector<double> sorted;
            for (int yi = 0; yi < n; ++yi) sorted.push_back(st.values[yi][c]);
            std::sort(sorted.begin(), sorted.end());
            const double lo = sorted[(n + 2) / 3 - 1], hi = sorted[(2 * n + 2) / 3 - 1];
            int nb = 0, nn = 0, na = 0;
            for (int yi = 0; yi < n; ++yi) {
                const double v = st.values[yi][c];
                const double cat = cats.categories[yi][c];
                const double expect = (v <= lo) ? -1.0 : (v >= hi) ? 1.0 : 0.0;
                CHECK(cat == expect);
                if (cat < 0) ++nb;
                else if (cat > 0) ++na;
                else ++nn;
            }
            CHECK(nb + nn + na == n);
            if (n % 3 != 1) {
                CHECK(std::abs(nb - n / 3.0) <= 1.0);
                CHECK(std::abs(nn - n / 3.0) <= 1.0);
                CHECK(std::abs(na - n / 3.0) <= 1.0);
            }
        }
    }
}

TEST_CASE("tercile categories depend on ranks only") {
    GridSpec spec = make_spec(2, 3);
    std::vector<int> years;
    for (int y = 0; y < 15; ++y) years.push_back(1990 + y);
    GridStack st = random_stack(spec, years, 31337);
    st.kind = FieldKind::anomaly;
    GridStack warped = st;
    for (auto& f : warped.values)
        for (auto& v : f)
            if (!is_missing(v)) v = std::exp(0.8 * v) + v * v * v * 0.01;  // strictly increasing
    CategoryStack a = tercile_categories(st, years, true);
    CategoryStack b = tercile_categories(warped, years, true);
    for (size_t yi = 0; yi < years.size(); ++yi)
        for (int c = 0; c < spec.n_cells(); ++c)
            CHECK(a.categories[yi][c] == b.categories[yi][c]);
}

TEST_CASE("exclude_target recomputes boundaries without the target year") {
    GridSpec spec = make_spec(1, 1);
    GridStack st;
    st.spec = spec;
    for (int i = 1; i <= 9; ++i) {
        st.years.push_back(1990 + i);
        st.values.push_back({double(i)});
    }
    CategoryStack with = tercile_categories(st, st.years, true);
    // sample without value 3: {1,2,4,5,6,7,8,9}; lower boundary = 3rd = 4, so 3 -> -1
    CHECK(with.categories[2][0] == -1.0);
    // sample without value 6: {1..5,7,8,9}; upper = ceil(16/3)=6th = 7; 6 <= lower? lower = 3rd = 3. 6 is normal
    CHECK(with.categories[5][0] == 0.0);
}

TEST_CASE("dry_mask rank cutoff and zero-boundary rule") {
    GridSpec spec = make_spec(2, 2);
    GridStack st;
    st.spec = spec;
    for (int i = 0; i < 8; ++i) {
        st.years.push_back(2000 + i);
        // cell means 0, 1, 2, 3
        st.values.push_back({0.0, 1.0 + (i % 2) * 0.01, 2.0 + (i % 3) * 0.01, 3.0});
    }
    Mask m = dry_mask(st, st.years, 0.25);
    CHECK(m.included[0] == 0);  // mean 0, also a zero tercile boundary
    CHECK(m.included[1] == 1);
    CHECK(m.included[2] == 1);
    CHECK(m.included[3] == 1);

    // all identical positive means: degenerate ranking retains everything
    GridStack same;
    same.spec = spec;
    for (int i = 0; i < 8; ++i) {
        same.years.push_back(2000 + i);
        const double v = 5.0 + i * 0.1;
        same.values.push_back({v, v, v, v});
    }
    Mask all = dry_mask(same, same.years, 0.25);
    CHECK(all.n_included() == 4);
}

TEST_CASE("dry_mask matches a sort-based oracle and is idempotent") {
    GridSpec spec = make_spec(5, 6);
    std::vector<int> years;
    for (int y = 0; y < 12; ++y) years.push_back(1993 + y);
    GridStack st = random_stack(spec, years, 555, FieldKind::total, 10.0);
    for (auto& f : st.values)
        for (auto& v : f) v = std::max(0.1, v);  // keep strictly positive
    Mask m1 = dry_mask(st, years, 0.25);
    Mask m2 = dry_mask(st, years, 0.25);
    CHECK(m1.included == m2.included);

    // sort-based oracle
    std::vector<std::pair<double, int>> means;
    for (int c = 0; c < spec.n_cells(); ++c) {
        double s = 0;
        for (size_t yi = 0; yi < years.size(); ++yi) s += st.values[yi][c];
        means.push_back({s / double(years.size()), c});
    }
    std::sort(means.begin(), means.end());
    const size_t drop = means.size() / 4;
    std::set<int> excluded;
    for (size_t i = 0; i < means.size(); ++i)
        if (means[i].first <= means[drop - 1].first) excluded.insert(means[i].second);
    for (int c = 0; c < spec.n_cells(); ++c)
        CHECK(m1.included[c] == (excluded.count(c) ? 0 : 1));
}

TEST_CASE("category_correlation matches the textbook formula") {
    GridSpec spec = make_spec(2, 2);
    std::vector<int> years;
    for (int y = 0; y < 15; ++y) years.push_back(1990 + y);
    GridStack sa = random_stack(spec, years, 1);
    GridStack sb = random_stack(spec, years, 2);
    CategoryStack a = tercile_categories(sa, years, false);
    CategoryStack b = tercile_categories(sb, years, false);

    auto corr = category_correlation(a, b);
    for (int c = 0; c < spec.n_cells(); ++c) {
        std::vector<double> xs, ys;
        for (size_t yi = 0; yi < years.size(); ++yi) {
            xs.push_back(a.categories[yi][c]);
            ys.push_back(b.categories[yi][c]);
        }
        const double expect = pearson(xs, ys);  // direct-formula oracle
        if (is_missing(expect))
            CHECK(is_missing(corr[c]));
        else
            CHECK(corr[c] == Catch::Approx(expect).margin(1e-12));
    }

    auto self = category_correlation(a, a);
    for (int c = 0; c < spec.n_cells(); ++c)
        if (!is_missing(self[c])) CHECK(self[c] == Catch::Approx(1.0));

    CategoryStack neg = a;
    for (auto& f : neg.categories)
        for (auto& v : f) v = -v;
    auto anti = category_correlation(a, neg);
    for (int c = 0; c < spec.n_cells(); ++c)
        if (!is_missing(anti[c])) CHECK(anti[c] == Catch::Approx(-1.0));
}

TEST_CASE("mask round-trips through CSV") {
    GridSpec spec = make_spec(3, 3);
    spec.valid[4] = 0;
    Mask m{spec, std::vector<uint8_t>(9, 0)};
    m.included = {1, 0, 1, 0, 0, 1, 1, 0, 1};
    m.included[4] = 0;
    const std::string path = temp_path("tercast_mask.csv");
    save_mask(m, path);
    Mask back = load_mask(path, spec);
    CHECK(back.included == m.included);
    fs::remove(path);
}
