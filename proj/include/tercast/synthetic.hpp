#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tercast/grid.hpp"
#include "tercast/indices.hpp"
#include "tercast/stats.hpp"

namespace tercast {

/// Configuration of the synthetic world used for end-to-end checks: planted
/// orthogonal spatial patterns, box-confined predictor signals, loadings
/// linearly driven by those signals at a chosen signal-to-noise variance
/// ratio, and precipitation built rank-consistently on top.
struct SyntheticSpec {
    int n_lat = 20, n_lon = 20;
    double lat_start = -4.75, lon_start = 29.75, cell_size = 0.5;
    std::vector<int> years;                  // defaults to 1993..2020
    std::vector<int> season_months{10, 11, 12};
    int predictor_month = 7;
    int k_true = 3;
    double snr = 3.0;                        // var(signal)/var(noise) in the loadings;
                                             // 0 plants no signal at all
    double resid_scale = 0.25;               // per-cell sd of the unexplained field
    double field_noise = 0.05;               // predictor-field cell noise sd
    int n_noise_indices = 2;                 // extra boxes carrying pure noise
    double base_precip = 300.0;              // mm per season, keeps totals positive
    std::vector<double> loading_scales{3.0, 2.2, 1.6};  // sd of each loading
};

struct SyntheticTruth {
    std::vector<std::vector<double>> patterns;      // k x cells, orthonormal
    std::vector<std::vector<double>> loadings;      // per year, k
    std::map<std::string, std::vector<double>> index_at_pm;  // handle -> per-year signal
    std::vector<std::string> signal_handles;        // which indices drive loadings
    GridStack planted_z;                            // sum of loadings x patterns + resid
    double resid_scale = 0.0;
};

struct SyntheticData {
    GridSpec target_grid;
    GridSpec predictor_grid;
    MonthlyStack precip;      // season months on the target grid
    MonthlyStack sst;         // predictor months on the predictor grid
    std::string registry;     // index definitions for this world
    SyntheticTruth truth;
};

namespace detail {

/// Smooth orthonormal patterns from low-order trigonometric surfaces.
inline std::vector<std::vector<double>> smooth_orthonormal_patterns(const GridSpec& spec, int k) {
    const int nc = spec.n_cells();
    std::vector<std::vector<double>> raw;
    for (int i = 0; i < k; ++i) {
        std::vector<double> p(nc);
        for (int c = 0; c < nc; ++c) {
            const double x = (c % spec.n_lon + 0.5) / spec.n_lon;
            const double y = (c / spec.n_lon + 0.5) / spec.n_lat;
            switch (i % 4) {
                case 0: p[c] = 1.0; break;
                case 1: p[c] = std::sin(M_PI * (2 * x - 1) * ((i / 4) + 1)); break;
                case 2: p[c] = std::sin(M_PI * (2 * y - 1) * ((i / 4) + 1)); break;
                default:
                    p[c] = std::sin(M_PI * (2 * x - 1) * ((i / 4) + 1)) *
                           std::sin(M_PI * (2 * y - 1) * ((i / 4) + 1));
            }
        }
        raw.push_back(std::move(p));
    }
    // Gram-Schmidt
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < i; ++j) {
            double dot = 0;
            for (int c = 0; c < nc; ++c) dot += raw[i][c] * raw[j][c];
            for (int c = 0; c < nc; ++c) raw[i][c] -= dot * raw[j][c];
        }
        double norm = 0;
        for (int c = 0; c < nc; ++c) norm += raw[i][c] * raw[i][c];
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw config_error("synthetic patterns degenerate; reduce k");
        for (int c = 0; c < nc; ++c) raw[i][c] /= norm;
    }
    return raw;
}

}  // namespace detail

/// Builds the synthetic dataset. Same spec and seed always produce identical
/// data. The truth record keeps everything test oracles need.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec_in, uint64_t seed) {
    SyntheticSpec spec = spec_in;
    if (spec.years.empty())
        for (int y = 1993; y <= 2020; ++y) spec.years.push_back(y);
    if (int(spec.loading_scales.size()) < spec.k_true)
        throw validation_error("generate_synthetic: need a loading scale per pattern");
    if (spec.k_true < 1 || spec.snr < 0)
        throw validation_error("generate_synthetic: inconsistent spec");

    SyntheticData data;
    data.target_grid.lat_start = spec.lat_start;
    data.target_grid.lon_start = spec.lon_start;
    data.target_grid.cell_size = spec.cell_size;
    data.target_grid.n_lat = spec.n_lat;
    data.target_grid.n_lon = spec.n_lon;
    data.target_grid.valid.assign(spec.n_lat * spec.n_lon, 1);

    // predictor grid: coarse, away from the target domain
    data.predictor_grid.lat_start = -18.0;
    data.predictor_grid.lon_start = 120.0;
    data.predictor_grid.cell_size = 4.0;
    data.predictor_grid.n_lat = 10;
    data.predictor_grid.n_lon = 40;
    data.predictor_grid.valid.assign(400, 1);

    const int n_idx = spec.k_true + spec.n_noise_indices;
    if (n_idx > 8) throw validation_error("generate_synthetic: too many indices for the grid");

    // disjoint 5x5-cell boxes along the predictor grid
    std::vector<Box> boxes;
    for (int b = 0; b < n_idx; ++b) {
        const double lon0 = data.predictor_grid.lon_start + b * 5 * 4.0;
        boxes.push_back(Box{-10.0, 10.0, lon0 - 2.0, lon0 + 4.0 * 4 + 2.0});
    }
    std::string registry;
    for (int b = 0; b < n_idx; ++b) {
        const std::string handle = "idx" + std::to_string(b);
        registry += handle + "|box_mean|sst|" + csv::format_double(boxes[b].lat1) + "," +
                    csv::format_double(boxes[b].lat2) + "," + csv::format_double(boxes[b].lon1) +
                    "," + csv::format_double(boxes[b].lon2) + "|1\n";
    }
    data.registry = registry;

    SplitMix64 rng(seed);

    // per-(year, month) signals, one per index box
    const std::vector<int> sst_months{spec.predictor_month - 1, spec.predictor_month};
    std::map<std::pair<int, int>, std::vector<double>> signals;  // (y, m) -> per-box value
    for (int y : spec.years)
        for (int m : sst_months) {
            std::vector<double> g(n_idx);
            for (auto& v : g) v = rng.next_normal();
            signals[{y, m}] = g;
        }

    // predictor fields: each box carries its own signal plus cell noise
    data.sst.spec = data.predictor_grid;
    for (int y : spec.years)
        for (int m : sst_months) {
            std::vector<double> field(data.predictor_grid.n_cells());
            const auto& g = signals[{y, m}];
            for (int c = 0; c < data.predictor_grid.n_cells(); ++c) {
                double v = 300.0 + spec.field_noise * rng.next_normal();
                for (int b = 0; b < n_idx; ++b)
                    if (boxes[b].contains(data.predictor_grid.lat(c),
                                          data.predictor_grid.lon(c))) {
                        v += g[b];
                        break;
                    }
                field[c] = v;
            }
            data.sst.times.push_back({y, m});
            data.sst.values.push_back(std::move(field));
        }
    // times were generated in ascending (year, month) order

    // loadings: a_i = s_i (alpha * signal_i + beta * noise); loading i is
    // driven by index box i only
    const double alpha = spec.snr > 0 ? std::sqrt(spec.snr / (spec.snr + 1.0)) : 0.0;
    const double beta = std::sqrt(1.0 - alpha * alpha);
    data.truth.patterns = detail::smooth_orthonormal_patterns(data.target_grid, spec.k_true);
    data.truth.resid_scale = spec.resid_scale;
    for (int b = 0; b < n_idx; ++b) {
        const std::string handle = "idx" + std::to_string(b);
        std::vector<double> at_pm;
        for (int y : spec.years) at_pm.push_back(signals[{y, spec.predictor_month}][b]);
        data.truth.index_at_pm[handle] = at_pm;
        if (b < spec.k_true) data.truth.signal_handles.push_back(handle);
    }
    for (size_t t = 0; t < spec.years.size(); ++t) {
        std::vector<double> a(spec.k_true);
        for (int i = 0; i < spec.k_true; ++i) {
            const double sig = signals[{spec.years[t], spec.predictor_month}][i];
            a[i] = spec.loading_scales[i] * (alpha * sig + beta * rng.next_normal());
        }
        data.truth.loadings.push_back(std::move(a));
    }

    // planted transformed field and the precipitation built on top of it
    data.truth.planted_z.spec = data.target_grid;
    data.truth.planted_z.kind = FieldKind::transformed;
    data.truth.planted_z.years = spec.years;
    data.precip.spec = data.target_grid;
    const int nc = data.target_grid.n_cells();
    std::vector<std::vector<double>> totals(spec.years.size());
    for (size_t t = 0; t < spec.years.size(); ++t) {
        std::vector<double> z(nc, 0.0);
        for (int i = 0; i < spec.k_true; ++i)
            for (int c = 0; c < nc; ++c) z[c] += data.truth.loadings[t][i] * data.truth.patterns[i][c];
        for (int c = 0; c < nc; ++c) z[c] += spec.resid_scale * rng.next_normal();
        totals[t].resize(nc);
        for (int c = 0; c < nc; ++c) totals[t][c] = spec.base_precip + z[c];
        data.truth.planted_z.values.push_back(std::move(z));
    }
    for (size_t t = 0; t < spec.years.size(); ++t)
        for (int m : spec.season_months) {
            std::vector<double> field(nc);
            for (int c = 0; c < nc; ++c)
                field[c] = totals[t][c] / double(spec.season_months.size());
            data.precip.times.push_back({spec.years[t], m});
            data.precip.values.push_back(std::move(field));
        }
    return data;
}

/// Writes the synthetic dataset plus truth record into a directory.
inline void save_synthetic(const SyntheticData& data, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_grid_spec(data.target_grid, dir + "/target_grid.txt");
    save_grid_spec(data.predictor_grid, dir + "/predictor_grid.txt");
    save_monthly_stack(data.precip, dir + "/precip_monthly.csv");
    save_monthly_stack(data.sst, dir + "/sst_monthly.csv");
    {
        auto out = csv::open_out(dir + "/registry.txt");
        out << data.registry;
    }
    {
        auto out = csv::open_out(dir + "/truth_patterns.csv");
        out << "lat,lon,eof_index,value\n";
        for (size_t i = 0; i < data.truth.patterns.size(); ++i)
            for (int c = 0; c < data.target_grid.n_cells(); ++c)
                out << csv::format_double(data.target_grid.lat(c)) << ','
                    << csv::format_double(data.target_grid.lon(c)) << ',' << (i + 1) << ','
                    << csv::format_double(data.truth.patterns[i][c]) << '\n';
    }
    {
        auto out = csv::open_out(dir + "/truth_loadings.csv");
        out << "year,eof_index,value\n";
        for (size_t t = 0; t < data.truth.planted_z.years.size(); ++t)
            for (size_t i = 0; i < data.truth.patterns.size(); ++i)
                out << data.truth.planted_z.years[t] << ',' << (i + 1) << ','
                    << csv::format_double(data.truth.loadings[t][i]) << '\n';
    }
    {
        auto out = csv::open_out(dir + "/truth_indices.csv");
        out << "handle,year,value\n";
        for (const auto& [handle, series] : data.truth.index_at_pm)
            for (size_t t = 0; t < series.size(); ++t)
                out << handle << ',' << data.truth.planted_z.years[t] << ','
                    << csv::format_double(series[t]) << '\n';
    }
    save_grid_stack(data.truth.planted_z, dir + "/truth_z.csv");
}

}  // namespace tercast
