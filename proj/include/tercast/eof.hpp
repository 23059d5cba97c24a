#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "tercast/grid.hpp"

namespace tercast {

/// Orthonormal spatial patterns of maximal variability, their loading
/// variances, per-year loadings, and the per-cell variance bookkeeping
/// needed to treat the truncation residual as noise.
struct EofBasis {
    GridSpec spec;
    int k = 0;
    std::vector<int> fit_years;
    std::vector<uint8_t> included;               // cells with complete data
    std::vector<std::vector<double>> patterns;   // [i][cell], NaN at excluded cells
    std::vector<double> loading_variances;       // descending
    std::vector<std::vector<double>> loadings;   // [year_idx][i]
    std::vector<double> sigma_sq;                // per-cell total variance of z
    std::vector<double> resid_sq;                // per-cell residual variance
    std::vector<double> cell_weight;             // area weights; empty = unweighted

    double weight(int cell) const { return cell_weight.empty() ? 1.0 : cell_weight[cell]; }
};

/// SVD-based EOF analysis of the year-by-cell matrix. Fields are not
/// re-centered: transformed anomalies have exact zero mean per cell by
/// construction, so all variances are taken about zero with an n-1
/// denominator. Each pattern is oriented so its largest-magnitude component
/// is positive. With area_weighting the decomposition runs in the
/// cosine-latitude metric: patterns are stored in raw space and are
/// orthonormal under the weighted inner product.
inline EofBasis compute_eofs(const GridStack& z, const std::vector<int>& fit_years, int k,
                             bool area_weighting = false) {
    if (z.kind != FieldKind::transformed)
        throw config_error("compute_eofs: expects transformed anomalies");
    std::vector<int> years_sorted(fit_years);
    std::sort(years_sorted.begin(), years_sorted.end());
    std::vector<int> year_idx;
    for (int y : years_sorted) {
        const int yi = z.year_index(y);
        if (yi < 0) throw config_error("compute_eofs: fit year not in stack");
        year_idx.push_back(yi);
    }
    const int ny = static_cast<int>(year_idx.size());
    if (ny < 2) throw config_error("compute_eofs: need at least 2 fit years");

    EofBasis basis;
    basis.spec = z.spec;
    basis.fit_years = years_sorted;
    basis.k = k;
    basis.included.assign(z.spec.n_cells(), 0);

    std::vector<int> cells;
    for (int c = 0; c < z.spec.n_cells(); ++c) {
        if (!z.spec.is_valid(c)) continue;
        bool complete = true;
        for (int yi : year_idx)
            if (is_missing(z.values[yi][c])) { complete = false; break; }
        if (complete) {
            basis.included[c] = 1;
            cells.push_back(c);
        }
    }
    const int nc = static_cast<int>(cells.size());
    if (nc == 0) throw config_error("compute_eofs: no complete cells");
    if (k < 1 || k > std::min(ny - 1, nc))
        throw config_error("compute_eofs: k must lie in [1, min(#years-1, #cells)]");

    std::vector<double> root_w(nc, 1.0);
    if (area_weighting) {
        basis.cell_weight.assign(z.spec.n_cells(), missing_value);
        for (int j = 0; j < nc; ++j) {
            const double w = std::cos(z.spec.lat(cells[j]) * M_PI / 180.0);
            basis.cell_weight[cells[j]] = w;
            root_w[j] = std::sqrt(w);
        }
    }

    Eigen::MatrixXd M(ny, nc);
    for (int t = 0; t < ny; ++t)
        for (int j = 0; j < nc; ++j) M(t, j) = root_w[j] * z.values[year_idx[t]][cells[j]];

    Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd sv = svd.singularValues();
    Eigen::MatrixXd U = svd.matrixU();
    Eigen::MatrixXd V = svd.matrixV();

    // near-degenerate singular values: enforce a deterministic order by the
    // first differing pattern component
    for (int i = 0; i + 1 < k; ++i) {
        if (sv[i] <= 0) break;
        if ((sv[i] - sv[i + 1]) / sv[i] < 1e-10) {
            for (int s = 0; s < nc; ++s) {
                const double a = std::abs(V(s, i)), b = std::abs(V(s, i + 1));
                if (a == b) continue;
                if (b > a) {
                    V.col(i).swap(V.col(i + 1));
                    U.col(i).swap(U.col(i + 1));
                    std::swap(sv[i], sv[i + 1]);
                }
                break;
            }
        }
    }

    basis.patterns.assign(k, std::vector<double>(z.spec.n_cells(), missing_value));
    basis.loading_variances.assign(k, 0.0);
    basis.loadings.assign(ny, std::vector<double>(k, 0.0));
    for (int i = 0; i < k; ++i) {
        // orient: largest-magnitude component positive
        int arg = 0;
        for (int j = 1; j < nc; ++j)
            if (std::abs(V(j, i)) > std::abs(V(arg, i))) arg = j;
        const double flip = V(arg, i) < 0 ? -1.0 : 1.0;
        for (int j = 0; j < nc; ++j) basis.patterns[i][cells[j]] = flip * V(j, i) / root_w[j];
        basis.loading_variances[i] = sv[i] * sv[i] / double(ny - 1);
        for (int t = 0; t < ny; ++t) basis.loadings[t][i] = flip * U(t, i) * sv[i];
    }

    basis.sigma_sq.assign(z.spec.n_cells(), missing_value);
    basis.resid_sq.assign(z.spec.n_cells(), missing_value);
    for (int j = 0; j < nc; ++j) {
        const int c = cells[j];
        double total = 0;  // raw-space climatological variance about zero
        for (int t = 0; t < ny; ++t) {
            const double v = z.values[year_idx[t]][c];
            total += v * v;
        }
        total /= double(ny - 1);
        double explained = 0;
        for (int i = 0; i < k; ++i) {
            const double zeta = basis.patterns[i][c];
            explained += zeta * zeta * basis.loading_variances[i];
        }
        basis.sigma_sq[c] = total;
        basis.resid_sq[c] = std::max(0.0, total - explained);
    }
    return basis;
}

/// a_i = sum_s zeta_{s,i} z_s over the basis cells.
inline std::vector<double> project_loadings(const EofBasis& basis,
                                            const std::vector<double>& field) {
    if (static_cast<int>(field.size()) != basis.spec.n_cells())
        throw geometry_error("project_loadings: field size mismatch");
    std::vector<double> a(basis.k, 0.0);
    for (int c = 0; c < basis.spec.n_cells(); ++c) {
        if (!basis.included[c]) continue;
        if (is_missing(field[c]))
            throw validation_error("project_loadings: missing value at an included cell");
        for (int i = 0; i < basis.k; ++i) a[i] += basis.patterns[i][c] * field[c];
    }
    return a;
}

/// sum_i a_i zeta_{s,i} per cell; excluded cells stay missing.
inline std::vector<double> reconstruct(const EofBasis& basis, const std::vector<double>& loadings) {
    if (static_cast<int>(loadings.size()) != basis.k)
        throw validation_error("reconstruct: loading vector length mismatch");
    std::vector<double> field(basis.spec.n_cells(), missing_value);
    for (int c = 0; c < basis.spec.n_cells(); ++c) {
        if (!basis.included[c]) continue;
        double s = 0;
        for (int i = 0; i < basis.k; ++i) s += loadings[i] * basis.patterns[i][c];
        field[c] = s;
    }
    return field;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_eof_basis(const EofBasis& basis, const std::string& prefix) {
    {
        auto out = csv::open_out(prefix + "_patterns.csv");
        out << "lat,lon,eof_index,value\n";
        for (int i = 0; i < basis.k; ++i)
            for (int c = 0; c < basis.spec.n_cells(); ++c) {
                if (!basis.included[c]) continue;
                out << csv::format_double(basis.spec.lat(c)) << ','
                    << csv::format_double(basis.spec.lon(c)) << ',' << (i + 1) << ','
                    << csv::format_double(basis.patterns[i][c]) << '\n';
            }
    }
    {
        auto out = csv::open_out(prefix + "_scalars.csv");
        out << "eof_index,loading_variance\n";
        for (int i = 0; i < basis.k; ++i)
            out << (i + 1) << ',' << csv::format_double(basis.loading_variances[i]) << '\n';
    }
    {
        auto out = csv::open_out(prefix + "_cells.csv");
        out << "lat,lon,sigma_sq,resid_sq\n";
        for (int c = 0; c < basis.spec.n_cells(); ++c) {
            if (!basis.included[c]) continue;
            out << csv::format_double(basis.spec.lat(c)) << ','
                << csv::format_double(basis.spec.lon(c)) << ','
                << csv::format_double(basis.sigma_sq[c]) << ','
                << csv::format_double(basis.resid_sq[c]) << '\n';
        }
    }
    {
        auto out = csv::open_out(prefix + "_loadings.csv");
        out << "year,eof_index,value\n";
        for (size_t t = 0; t < basis.fit_years.size(); ++t)
            for (int i = 0; i < basis.k; ++i)
                out << basis.fit_years[t] << ',' << (i + 1) << ','
                    << csv::format_double(basis.loadings[t][i]) << '\n';
    }
}

}  // namespace tercast
