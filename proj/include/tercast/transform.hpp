#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "tercast/grid.hpp"
#include "tercast/stats.hpp"

namespace tercast {

/// Per-cell quantile map from anomaly space to a centered normal with the
/// cell's own scale.
struct CellTransform {
    int n = 0;                      // reference sample size; 0 = untransformable
    double sigma = missing_value;   // empirical sd of the reference anomalies (n-1)
    std::vector<double> ref_values; // sorted ascending, ties broken by year
    std::vector<int> ref_years;     // year of each sorted reference value
    std::vector<double> z;          // z_(1..n) = sigma * Q(r/(n+1)), antisymmetric
    double z_low = missing_value;   // clamp for values below all references
    double z_high = missing_value;  // clamp for values above all references

    // interpolation nodes: unique reference values with the mean z of ties
    std::vector<double> node_y;
    std::vector<double> node_z;

    int rank_of_year(int year) const {
        for (size_t i = 0; i < ref_years.size(); ++i)
            if (ref_years[i] == year) return static_cast<int>(i) + 1;
        return -1;
    }

    /// Maps a value not tied to a reference year: exact reference ties return
    /// that node's z, values beyond the reference range are clamped, interior
    /// values interpolate linearly between the bracketing reference pairs.
    double map_value(double y) const {
        if (n == 0 || is_missing(y)) return missing_value;
        if (y < node_y.front()) return z_low;
        if (y > node_y.back()) return z_high;
        const auto it = std::lower_bound(node_y.begin(), node_y.end(), y);
        const size_t hi = static_cast<size_t>(it - node_y.begin());
        if (node_y[hi] == y) return node_z[hi];
        const size_t lo = hi - 1;
        const double t = (y - node_y[lo]) / (node_y[hi] - node_y[lo]);
        return node_z[lo] + t * (node_z[hi] - node_z[lo]);
    }
};

struct TransformModel {
    GridSpec spec;
    std::vector<int> ref_years;  // sorted
    std::vector<CellTransform> cells;
};

/// Fits the per-cell rank-to-normal-quantile map on the reference years.
/// Ranks are assigned by value with ties broken by ascending year; the
/// quantile targets are sigma_s * Q(r/(n+1)). The z values are mirrored
/// around zero so that z_(r) == -z_(n+1-r) holds exactly.
inline TransformModel fit_transform_model(const GridStack& anomalies,
                                          const std::vector<int>& ref_years) {
    if (anomalies.kind != FieldKind::anomaly)
        throw config_error("fit_transform_model: expects anomalies");
    if (ref_years.size() < 6)
        throw config_error("fit_transform_model: reference period shorter than 6 years");
    std::vector<int> ref_sorted(ref_years);
    std::sort(ref_sorted.begin(), ref_sorted.end());
    std::vector<int> ref_idx;
    for (int y : ref_sorted) {
        const int yi = anomalies.year_index(y);
        if (yi < 0)
            throw config_error("fit_transform_model: reference year " + std::to_string(y) +
                               " not in stack");
        ref_idx.push_back(yi);
    }

    TransformModel model;
    model.spec = anomalies.spec;
    model.ref_years = ref_sorted;
    model.cells.resize(anomalies.spec.n_cells());

    for (int c = 0; c < anomalies.spec.n_cells(); ++c) {
        if (!anomalies.spec.is_valid(c)) continue;
        std::vector<std::pair<double, int>> sample;  // (value, year)
        for (size_t i = 0; i < ref_idx.size(); ++i) {
            const double v = anomalies.values[ref_idx[i]][c];
            if (!is_missing(v)) sample.emplace_back(v, ref_sorted[i]);
        }
        if (sample.empty()) continue;  // untransformable cell
        std::sort(sample.begin(), sample.end());

        CellTransform& ct = model.cells[c];
        ct.n = static_cast<int>(sample.size());
        ct.ref_values.resize(ct.n);
        ct.ref_years.resize(ct.n);
        for (int i = 0; i < ct.n; ++i) {
            ct.ref_values[i] = sample[i].first;
            ct.ref_years[i] = sample[i].second;
        }

        double m = 0;
        for (double v : ct.ref_values) m += v;
        m /= ct.n;
        double ss = 0;
        for (double v : ct.ref_values) ss += (v - m) * (v - m);
        ct.sigma = ct.n > 1 ? std::sqrt(ss / double(ct.n - 1)) : 0.0;

        ct.z.assign(ct.n, 0.0);
        const int n = ct.n;
        for (int r = 1; 2 * r <= n; ++r) {
            const double q = ct.sigma * norm_quantile(double(r) / double(n + 1));
            ct.z[r - 1] = q;
            ct.z[n - r] = -q;  // exact antisymmetry
        }
        ct.z_low = ct.sigma * norm_quantile(1.0 / double(n + 2));
        ct.z_high = -ct.z_low;  // Q((n+1)/(n+2)) = -Q(1/(n+2))

        // collapse tied reference values for the interpolation map
        for (int i = 0; i < n;) {
            int j = i;
            double zsum = 0;
            while (j < n && ct.ref_values[j] == ct.ref_values[i]) zsum += ct.z[j++];
            ct.node_y.push_back(ct.ref_values[i]);
            ct.node_z.push_back(zsum / double(j - i));
            i = j;
        }
    }
    return model;
}

/// Applies the fitted map: reference years go to their rank quantile, other
/// years are linearly interpolated between bracketing reference pairs, with
/// out-of-range values clamped to sigma*Q(1/(n+2)) / sigma*Q((n+1)/(n+2)).
inline GridStack transform(const TransformModel& model, const GridStack& anomalies) {
    model.spec.require_same_geometry(anomalies.spec, "transform");
    if (anomalies.kind != FieldKind::anomaly)
        throw config_error("transform: expects anomalies");

    GridStack out = anomalies;
    out.kind = FieldKind::transformed;
    std::set<int> ref_set(model.ref_years.begin(), model.ref_years.end());
    for (size_t yi = 0; yi < anomalies.years.size(); ++yi) {
        const int year = anomalies.years[yi];
        const bool is_ref = ref_set.count(year) > 0;
        for (int c = 0; c < anomalies.spec.n_cells(); ++c) {
            const CellTransform& ct = model.cells[c];
            const double v = anomalies.values[yi][c];
            if (ct.n == 0 || is_missing(v) || !anomalies.spec.is_valid(c)) {
                out.values[yi][c] = missing_value;
                continue;
            }
            if (is_ref) {
                const int r = ct.rank_of_year(year);
                out.values[yi][c] = r > 0 ? ct.z[r - 1] : ct.map_value(v);
            } else {
                out.values[yi][c] = ct.map_value(v);
            }
        }
    }
    return out;
}

/// Sidecar metadata written next to transformed stacks.
inline void save_transform_sidecar(const TransformModel& model, const std::string& path) {
    auto out = csv::open_out(path);
    out << "kind=transformed\n";
    out << "ref_years=";
    for (size_t i = 0; i < model.ref_years.size(); ++i)
        out << (i ? "," : "") << model.ref_years[i];
    out << "\nn=" << model.ref_years.size() << "\n";
}

}  // namespace tercast
