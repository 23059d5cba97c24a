#include <catch2/catch_amalgamated.hpp>

#include "tercast/features.hpp"
#include "tercast/stats.hpp"

using namespace tercast;

namespace {

std::vector<std::vector<double>> loading_matrix(const std::vector<std::vector<double>>& cols) {
    // transpose column-wise input into per-year rows
    const size_t n = cols[0].size();
    std::vector<std::vector<double>> rows(n, std::vector<double>(cols.size()));
    for (size_t i = 0; i < cols.size(); ++i)
        for (size_t t = 0; t < n; ++t) rows[t][i] = cols[i][t];
    return rows;
}

}  // namespace

TEST_CASE("alpha levels follow the variance-weighted budget") {
    SplitMix64 rng(5);
    std::vector<double> series(12), noise(12);
    for (auto& v : series) v = rng.next_normal();
    for (auto& v : noise) v = rng.next_normal();

    SECTION("single EOF gets the full 0.1 level") {
        auto report = preselect({{"x", series}}, loading_matrix({noise}), {2.0});
        CHECK(report.entries[0].alpha == Catch::Approx(0.1).margin(1e-15));
    }

    SECTION("two equal variances split the budget") {
        auto report = preselect({{"x", series}}, loading_matrix({noise, noise}), {3.0, 3.0});
        CHECK(report.entries[0].alpha == Catch::Approx(0.1 / std::sqrt(2.0)).margin(1e-12));
        CHECK(report.entries[1].alpha == Catch::Approx(0.1 / std::sqrt(2.0)).margin(1e-12));
    }

    SECTION("alpha_i^2 sums to 0.01 for any variance profile") {
        std::vector<double> lams{5.0, 2.5, 1.0, 0.25};
        std::vector<std::vector<double>> cols(4, series);
        auto report = preselect({{"x", series}}, loading_matrix(cols), lams);
        double s = 0;
        for (const auto& e : report.entries) s += e.alpha * e.alpha;
        CHECK(s == Catch::Approx(0.01).margin(1e-15));
    }
}

TEST_CASE("preselect retains exactly the significantly correlated predictors") {
    // n = 27, rho = 0.5 gives p = 0.0079127383580058196 (frozen t-CDF oracle)
    const int n = 27;
    SplitMix64 rng(17);
    std::vector<double> loading(n);
    for (auto& v : loading) v = rng.next_normal();

    // construct a predictor with exact correlation 0.5 against the loading
    std::vector<double> resid(n);
    for (auto& v : resid) v = rng.next_normal();
    const double r = pearson(loading, resid);
    std::vector<double> orth(n);  // residualize to make corr(loading, orth) = 0
    const double sl = sample_sd(loading), sr = sample_sd(resid);
    const double ml = mean(loading), mr = mean(resid);
    for (int t = 0; t < n; ++t)
        orth[t] = (resid[t] - mr) / sr - r * (loading[t] - ml) / sl;
    const double so = sample_sd(orth), mo = mean(orth);
    std::vector<double> pred(n);
    const double rho = 0.5;
    for (int t = 0; t < n; ++t)
        pred[t] = rho * (loading[t] - ml) / sl +
                  std::sqrt(1 - rho * rho) * (orth[t] - mo) / so;
    REQUIRE(pearson(pred, loading) == Catch::Approx(0.5).margin(1e-12));

    auto report = preselect({{"sig", pred}}, loading_matrix({loading}), {1.0});
    CHECK(report.entries[0].p_value == Catch::Approx(0.0079127383580058196).margin(1e-9));
    CHECK(report.is_retained("sig"));  // 0.0079 <= 0.1

    // a zero-variance predictor is excluded with a reason
    auto zero = preselect({{"flat", std::vector<double>(n, 2.0)}}, loading_matrix({loading}),
                          {1.0});
    CHECK_FALSE(zero.is_retained("flat"));
    CHECK(zero.entries[0].note == "zero variance");
}

TEST_CASE("preselection is invariant under positive predictor rescaling") {
    SplitMix64 rng(23);
    const int n = 20;
    std::vector<double> pred(n), l1(n), l2(n);
    for (int t = 0; t < n; ++t) {
        pred[t] = rng.next_normal();
        l1[t] = 0.7 * pred[t] + 0.3 * rng.next_normal();
        l2[t] = rng.next_normal();
    }
    auto a = preselect({{"x", pred}}, loading_matrix({l1, l2}), {2.0, 1.0});
    std::vector<double> scaled(pred);
    for (auto& v : scaled) v *= 37.5;
    auto b = preselect({{"x", scaled}}, loading_matrix({l1, l2}), {2.0, 1.0});
    REQUIRE(a.entries.size() == b.entries.size());
    for (size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].rho == Catch::Approx(b.entries[i].rho).margin(1e-12));
        CHECK(a.entries[i].retained == b.entries[i].retained);
    }
}

TEST_CASE("feature table layout: bases, interactions, trend") {
    std::vector<int> years{1998, 1999, 2000, 2001, 2002, 2003, 2004, 2005, 2010};
    std::vector<int> train(years.begin(), years.end() - 1);
    SplitMix64 rng(9);
    PredictorSeries u{"a", {}}, v{"b", {}};
    for (size_t t = 0; t < years.size(); ++t) {
        u.values.push_back(rng.next_normal());
        v.values.push_back(rng.next_normal());
    }
    FeatureTable table = build_features({u, v}, true, years, train);

    // d + 2d^2 + 1 columns before dropping; with random signs nothing drops
    REQUIRE(table.names.size() == 2 + 2 * 4 + 1);
    CHECK(table.names[0] == "a");
    CHECK(table.names[1] == "b");
    CHECK(table.names.back() == "trend");
    CHECK(std::is_sorted(table.names.begin() + 2, table.names.end() - 1));

    // trend raw value for 2010 is 1.0, centered only
    const int row2010 = table.year_row(2010);
    const Eigen::Index jt = Eigen::Index(table.names.size()) - 1;
    CHECK(table.raw(row2010, jt) == Catch::Approx(1.0));
    CHECK(table.col_sd[jt] == 1.0);

    // identity: v*1{u<0} + v*1{u>0} + v*1{u=0} == v columnwise pre-scaling
    for (const std::string& uu : {"a", "b"})
        for (const std::string& vv : {"a", "b"}) {
            const auto find = [&](const std::string& name) {
                const auto it = std::find(table.names.begin(), table.names.end(), name);
                REQUIRE(it != table.names.end());
                return Eigen::Index(it - table.names.begin());
            };
            const Eigen::Index jneg = find(vv + "*I(" + uu + "<0)");
            const Eigen::Index jpos = find(vv + "*I(" + uu + ">0)");
            const Eigen::Index jbase = find(vv);
            const Eigen::Index ju = find(uu);
            for (size_t t = 0; t < years.size(); ++t) {
                const double zero_part =
                    table.raw(Eigen::Index(t), ju) == 0.0 ? table.raw(Eigen::Index(t), jbase) : 0.0;
                CHECK(table.raw(Eigen::Index(t), jneg) + table.raw(Eigen::Index(t), jpos) +
                          zero_part ==
                      Catch::Approx(table.raw(Eigen::Index(t), jbase)).margin(1e-12));
            }
        }

    // scaled columns have mean 0, sd 1 over training years (except trend)
    for (Eigen::Index j = 0; j + 1 < Eigen::Index(table.names.size()); ++j) {
        std::vector<double> tv;
        for (int y : train) tv.push_back(table.scaled(table.year_row(y), j));
        CHECK(mean(tv) == Catch::Approx(0.0).margin(1e-12));
        CHECK(sample_sd(tv) == Catch::Approx(1.0).margin(1e-12));
    }

    // unscale(scale(X)) round-trips
    for (size_t t = 0; t < years.size(); ++t)
        for (Eigen::Index j = 0; j < Eigen::Index(table.names.size()); ++j) {
            const double back = table.scaled(Eigen::Index(t), j) * table.col_sd[j] +
                                table.col_mean[j];
            CHECK(back == Catch::Approx(table.raw(Eigen::Index(t), j)).margin(1e-12));
        }
}

TEST_CASE("degenerate interaction columns are dropped or deduplicated") {
    std::vector<int> years{2000, 2001, 2002, 2003, 2004, 2005};
    PredictorSeries x{"x", {0.5, 1.0, 1.5, 0.7, 1.1, 0.9}};  // positive in every year
    FeatureTable table = build_features({x}, true, years, years);
    // x*I(x>0) duplicates x; x*I(x<0) is all-zero
    CHECK(std::find(table.names.begin(), table.names.end(), "x*I(x>0)") == table.names.end());
    CHECK(std::find(table.names.begin(), table.names.end(), "x*I(x<0)") == table.names.end());
    REQUIRE(table.dropped.size() == 2);
    CHECK(table.names == std::vector<std::string>{"x", "trend"});
}

TEST_CASE("preselection report writes one row per predictor-EOF pair") {
    SplitMix64 rng(31);
    std::vector<double> pred(10), l(10);
    for (auto& v : pred) v = rng.next_normal();
    for (auto& v : l) v = rng.next_normal();
    auto report = preselect({{"x", pred}}, loading_matrix({l, l}), {2.0, 1.0});
    const std::string path = "/tmp/tercast_presel.csv";
    save_preselection_report(report, path);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 3);  // header + 2 EOF rows
    std::remove(path.c_str());
}
