#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tercast/csv.hpp"
#include "tercast/grid.hpp"
#include "tercast/stats.hpp"
#include "tercast/tercile.hpp"

namespace tercast {

/// Per-pair score of the climatological (1/3,1/3,1/3) forecast, constant for
/// every outcome.
inline constexpr double climatology_mbs = 2.0 / 3.0;

/// Multicategory Brier score: sum of squared probability-indicator
/// differences over the three categories. Negatively oriented, range [0, 2].
inline double mbs(double p_below, double p_normal, double p_above, int category) {
    const double sum = p_below + p_normal + p_above;
    if (std::abs(sum - 1.0) > 1e-9 || p_below < -1e-12 || p_normal < -1e-12 || p_above < -1e-12)
        throw validation_error("mbs: probabilities must form a simplex triple");
    if (category != -1 && category != 0 && category != 1)
        throw validation_error("mbs: category must be -1, 0 or +1");
    const double ib = category == -1 ? 1.0 : 0.0;
    const double in = category == 0 ? 1.0 : 0.0;
    const double ia = category == 1 ? 1.0 : 0.0;
    return (p_below - ib) * (p_below - ib) + (p_normal - in) * (p_normal - in) +
           (p_above - ia) * (p_above - ia);
}

struct ScoreReport {
    std::vector<int> years;
    std::string mask_id;
    std::vector<double> cell_mean_mbs;   // per cell, NaN where not evaluable
    std::vector<double> cell_mbss;
    std::vector<double> year_mean_model; // spatial mean per year
    std::vector<double> year_mean_ref;   // constant climatology_mbs entries
    double aggregate_mbss = missing_value;
};

/// Per-cell skill map: 1 - mean(MBS) / climatology_mbs over the common years.
inline std::vector<double> mbss_map(const std::vector<TercileField>& forecasts,
                                    const CategoryStack& observed, const Mask& mask) {
    if (forecasts.empty()) throw validation_error("mbss_map: no forecasts");
    observed.spec.require_same_geometry(mask.spec, "mbss_map");
    const int nc = mask.spec.n_cells();
    std::vector<double> out(nc, missing_value);
    for (int c = 0; c < nc; ++c) {
        if (!mask.included[c]) continue;
        double sum = 0;
        int n = 0;
        for (const auto& f : forecasts) {
            f.spec.require_same_geometry(mask.spec, "mbss_map");
            const int yi = observed.year_index(f.year);
            if (yi < 0) continue;
            const double cat = observed.categories[yi][c];
            if (f.missing_at(c) || is_missing(cat)) continue;
            sum += mbs(f.p_below[c], f.p_normal[c], f.p_above[c], int(cat));
            ++n;
        }
        if (n > 0) out[c] = 1.0 - (sum / n) / climatology_mbs;
    }
    return out;
}

/// Aggregates scores over the masked region: per-year spatial means of the
/// per-cell MBS, the per-cell skill map, and the aggregate skill score
/// computed from the year-mean series against the constant reference.
inline ScoreReport aggregate_scores(const std::vector<TercileField>& forecasts,
                                    const CategoryStack& observed, const Mask& mask,
                                    const std::string& mask_id = "") {
    if (mask.n_included() == 0) throw domain_error("aggregate_scores: empty mask");
    observed.spec.require_same_geometry(mask.spec, "aggregate_scores");

    ScoreReport report;
    report.mask_id = mask_id;
    const int nc = mask.spec.n_cells();
    std::vector<double> cell_sum(nc, 0.0);
    std::vector<int> cell_n(nc, 0);

    for (const auto& f : forecasts) {
        f.spec.require_same_geometry(mask.spec, "aggregate_scores");
        const int yi = observed.year_index(f.year);
        if (yi < 0)
            throw validation_error("aggregate_scores: no observations for year " +
                                   std::to_string(f.year));
        double sum = 0;
        int n = 0;
        for (int c = 0; c < nc; ++c) {
            if (!mask.included[c]) continue;
            const double cat = observed.categories[yi][c];
            if (f.missing_at(c) || is_missing(cat)) continue;
            const double score = mbs(f.p_below[c], f.p_normal[c], f.p_above[c], int(cat));
            sum += score;
            ++n;
            cell_sum[c] += score;
            ++cell_n[c];
        }
        report.years.push_back(f.year);
        report.year_mean_model.push_back(n > 0 ? sum / n : missing_value);
        report.year_mean_ref.push_back(climatology_mbs);
    }

    report.cell_mean_mbs.assign(nc, missing_value);
    report.cell_mbss.assign(nc, missing_value);
    for (int c = 0; c < nc; ++c) {
        if (cell_n[c] == 0) continue;
        report.cell_mean_mbs[c] = cell_sum[c] / cell_n[c];
        report.cell_mbss[c] = 1.0 - report.cell_mean_mbs[c] / climatology_mbs;
    }

    double total = 0;
    int n_years = 0;
    for (double m : report.year_mean_model) {
        if (is_missing(m)) continue;
        total += m;
        ++n_years;
    }
    if (n_years > 0) report.aggregate_mbss = 1.0 - (total / n_years) / climatology_mbs;
    return report;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

struct BootstrapSummary {
    int n_resamples = 0;
    uint64_t seed = 0;
    std::vector<double> mean_scores;   // one mean MBS per resample
    std::vector<double> mbss_scores;   // derived skill per resample
    std::map<int, double> mean_percentiles;  // keys 5, 25, 50, 75, 95
    std::map<int, double> mbss_percentiles;
};

/// Resamples the evaluation years with replacement. Resample i draws from a
/// splitmix64 substream seeded as substream_seed(seed, i); the j-th drawn
/// year index is next() mod n_years. Percentiles use inclusive linear
/// interpolation.
inline BootstrapSummary bootstrap_scores(const std::vector<double>& per_year_means,
                                         int n_resamples, uint64_t seed) {
    if (per_year_means.size() < 2)
        throw config_error("bootstrap_scores: need at least 2 yearly scores");
    for (double v : per_year_means)
        if (is_missing(v)) throw validation_error("bootstrap_scores: missing yearly score");

    BootstrapSummary summary;
    summary.n_resamples = n_resamples;
    summary.seed = seed;
    const size_t n = per_year_means.size();
    summary.mean_scores.reserve(n_resamples);
    for (int i = 0; i < n_resamples; ++i) {
        SplitMix64 rng(substream_seed(seed, uint64_t(i)));
        double s = 0;
        for (size_t j = 0; j < n; ++j) s += per_year_means[rng.next() % n];
        const double m = s / double(n);
        summary.mean_scores.push_back(m);
        summary.mbss_scores.push_back(1.0 - m / climatology_mbs);
    }
    for (int p : {5, 25, 50, 75, 95}) {
        summary.mean_percentiles[p] = percentile(summary.mean_scores, double(p));
        summary.mbss_percentiles[p] = percentile(summary.mbss_scores, double(p));
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_score_map(const ScoreReport& report, const GridSpec& spec,
                           const std::string& path) {
    auto out = csv::open_out(path);
    out << "lat,lon,mbss\n";
    for (int c = 0; c < spec.n_cells(); ++c) {
        if (!spec.is_valid(c)) continue;
        out << csv::format_double(spec.lat(c)) << ',' << csv::format_double(spec.lon(c)) << ','
            << csv::format_double(report.cell_mbss[c]) << '\n';
    }
}

inline void save_yearly_scores(const ScoreReport& report, const std::string& path) {
    auto out = csv::open_out(path);
    out << "year,mean_mbs_model,mean_mbs_clim\n";
    for (size_t i = 0; i < report.years.size(); ++i)
        out << report.years[i] << ',' << csv::format_double(report.year_mean_model[i]) << ','
            << csv::format_double(report.year_mean_ref[i]) << '\n';
}

inline void save_bootstrap(const BootstrapSummary& summary, const std::string& csv_path,
                           const std::string& summary_path) {
    {
        auto out = csv::open_out(csv_path);
        out << "resample_index,mean_score\n";
        for (size_t i = 0; i < summary.mean_scores.size(); ++i)
            out << i << ',' << csv::format_double(summary.mean_scores[i]) << '\n';
    }
    {
        auto out = csv::open_out(summary_path);
        out << "n_resamples=" << summary.n_resamples << "\n";
        out << "seed=" << summary.seed << "\n";
        out << "prng=splitmix64 substream per resample index\n";
        for (const auto& [p, v] : summary.mean_percentiles)
            out << "mean_mbs_p" << p << "=" << csv::format_double(v) << "\n";
        for (const auto& [p, v] : summary.mbss_percentiles)
            out << "mbss_p" << p << "=" << csv::format_double(v) << "\n";
    }
}

}  // namespace tercast
