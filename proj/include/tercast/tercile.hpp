#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tercast/eof.hpp"
#include "tercast/grid.hpp"
#include "tercast/stats.hpp"

namespace tercast {

/// Multivariate normal prediction of the joint factor loadings.
struct LoadingForecast {
    int year = 0;
    Eigen::VectorXd mean;      // k
    Eigen::MatrixXd cov;       // k x k, symmetric PSD
};

enum class Provenance { model, ensemble, climatology };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::model: return "model";
        case Provenance::ensemble: return "ensemble";
        case Provenance::climatology: return "climatology";
    }
    return "?";
}

/// Per-cell probability triple (below, normal, above); missing cells carry
/// NaN in all three channels.
struct TercileField {
    GridSpec spec;
    int year = 0;
    std::vector<double> p_below, p_normal, p_above;
    Provenance provenance = Provenance::model;

    bool missing_at(int cell) const { return is_missing(p_below[cell]); }

    void set_missing(int cell) {
        p_below[cell] = p_normal[cell] = p_above[cell] = missing_value;
    }
};

inline TercileField make_tercile_field(const GridSpec& spec, int year, Provenance prov) {
    TercileField f;
    f.spec = spec;
    f.year = year;
    f.provenance = prov;
    f.p_below.assign(spec.n_cells(), missing_value);
    f.p_normal.assign(spec.n_cells(), missing_value);
    f.p_above.assign(spec.n_cells(), missing_value);
    return f;
}

namespace detail {

/// Clamp-and-renormalize so the triple sits exactly on the simplex.
inline void finalize_triple(double& pb, double& pn, double& pa) {
    pn = 1.0 - pb - pa;
    if (pn < 0.0) pn = 0.0;
    const double s = pb + pn + pa;
    pb /= s;
    pn /= s;
    pa /= s;
}

}  // namespace detail

/// Pushes the Gaussian loading forecast through the basis: per cell the
/// predictive distribution is N(sum_i mu_i zeta_si, zeta' Sigma zeta +
/// resid_sq), compared against the climatological N(0, sigma_sq) tercile
/// boundaries at sigma * Q(1/3) and sigma * Q(2/3). Everything happens in
/// transformed space; the quantile map is never inverted.
inline TercileField tercile_from_gaussian(const LoadingForecast& forecast, const EofBasis& basis) {
    if (forecast.mean.size() != basis.k || forecast.cov.rows() != basis.k ||
        forecast.cov.cols() != basis.k)
        throw config_error("tercile_from_gaussian: k mismatch between forecast and basis");

    static const double q13 = norm_quantile(1.0 / 3.0);
    static const double q23 = norm_quantile(2.0 / 3.0);

    TercileField out = make_tercile_field(basis.spec, forecast.year, Provenance::model);
    for (int c = 0; c < basis.spec.n_cells(); ++c) {
        if (!basis.included[c]) continue;
        double m = 0.0;
        for (int i = 0; i < basis.k; ++i) m += forecast.mean[i] * basis.patterns[i][c];
        double v = basis.resid_sq[c];
        for (int i = 0; i < basis.k; ++i)
            for (int j = 0; j < basis.k; ++j)
                v += basis.patterns[i][c] * forecast.cov(i, j) * basis.patterns[j][c];
        if (v < -1e-12)
            throw numerical_error("tercile_from_gaussian: negative predictive variance");
        v = std::max(0.0, v);
        const double sigma = std::sqrt(basis.sigma_sq[c]);
        if (v == 0.0 && sigma == 0.0) continue;  // cell stays missing

        double pb, pa;
        if (v == 0.0) {  // point forecast against the boundaries
            pb = m <= sigma * q13 ? 1.0 : 0.0;
            pa = m >= sigma * q23 ? 1.0 : 0.0;
        } else {
            const double sd = std::sqrt(v);
            pb = norm_cdf((sigma * q13 - m) / sd);
            pa = 1.0 - norm_cdf((sigma * q23 - m) / sd);
        }
        double pn;
        detail::finalize_triple(pb, pn, pa);
        out.p_below[c] = pb;
        out.p_normal[c] = pn;
        out.p_above[c] = pa;
    }
    return out;
}

/// Tercile forecast from an ensemble: boundaries are the pooled-member order
/// statistics over the reference years (minus the target year when
/// excluded), probabilities the member fractions of the target year per bin.
/// Pooling against the model's own climatology quantile-maps systematic
/// biases away.
inline TercileField tercile_from_ensemble(const std::vector<GridStack>& members,
                                          const std::vector<int>& ref_years, int target_year,
                                          bool exclude_target) {
    if (members.empty()) throw validation_error("tercile_from_ensemble: no members");
    const GridSpec& spec = members.front().spec;
    for (const auto& m : members) {
        spec.require_same_geometry(m.spec, "tercile_from_ensemble");
        if (m.years != members.front().years)
            throw validation_error("tercile_from_ensemble: ragged member year lists");
    }
    std::vector<int> pool_years;
    for (int y : ref_years)
        if (!(exclude_target && y == target_year)) pool_years.push_back(y);
    if (pool_years.size() < 2)
        throw config_error("tercile_from_ensemble: reference period too short");
    for (int y : pool_years)
        if (members.front().year_index(y) < 0)
            throw validation_error("tercile_from_ensemble: reference year " + std::to_string(y) +
                                   " missing from members");
    if (members.front().year_index(target_year) < 0)
        throw validation_error("tercile_from_ensemble: target year missing from members");

    TercileField out = make_tercile_field(spec, target_year, Provenance::ensemble);
    const int n_members = static_cast<int>(members.size());
    std::vector<double> pool;
    pool.reserve(pool_years.size() * members.size());
    for (int c = 0; c < spec.n_cells(); ++c) {
        if (!spec.is_valid(c)) continue;
        pool.clear();
        bool miss = false;
        for (int y : pool_years) {
            for (const auto& m : members) {
                const double v = m.values[m.year_index(y)][c];
                if (is_missing(v)) { miss = true; break; }
                pool.push_back(v);
            }
            if (miss) break;
        }
        if (miss) continue;
        std::sort(pool.begin(), pool.end());
        const auto [lo, hi] = tercile_boundaries(pool);

        int nb = 0, nn = 0, na = 0;
        for (const auto& m : members) {
            const double v = m.values[m.year_index(target_year)][c];
            if (is_missing(v)) { miss = true; break; }
            if (v <= lo)
                ++nb;
            else if (v >= hi)
                ++na;
            else
                ++nn;
        }
        if (miss) continue;
        out.p_below[c] = double(nb) / n_members;
        out.p_normal[c] = double(nn) / n_members;
        out.p_above[c] = double(na) / n_members;
    }
    return out;
}

/// The reference forecast: (1/3, 1/3, 1/3) at every included cell.
inline TercileField climatology_forecast(const Mask& mask, int year) {
    TercileField out = make_tercile_field(mask.spec, year, Provenance::climatology);
    for (int c = 0; c < mask.spec.n_cells(); ++c) {
        if (!mask.included[c]) continue;
        out.p_below[c] = 1.0 / 3.0;
        out.p_normal[c] = 1.0 / 3.0;
        out.p_above[c] = 1.0 / 3.0;
    }
    return out;
}

/// Regional wet/dry summary in [-1, 1]: mean of (p_above - p_below) over the
/// included cells.
inline double expected_tercile(const TercileField& field, const Mask& mask) {
    field.spec.require_same_geometry(mask.spec, "expected_tercile");
    double s = 0;
    int n = 0;
    for (int c = 0; c < field.spec.n_cells(); ++c) {
        if (!mask.included[c] || field.missing_at(c)) continue;
        s += field.p_above[c] - field.p_below[c];
        ++n;
    }
    if (n == 0) throw domain_error("expected_tercile: empty domain");
    return s / n;
}

/// Observed-category version: mean of the category values.
inline double expected_tercile(const CategoryStack& cats, int year, const Mask& mask) {
    cats.spec.require_same_geometry(mask.spec, "expected_tercile");
    const int yi = cats.year_index(year);
    if (yi < 0) throw domain_error("expected_tercile: year not present");
    double s = 0;
    int n = 0;
    for (int c = 0; c < cats.spec.n_cells(); ++c) {
        if (!mask.included[c] || is_missing(cats.categories[yi][c])) continue;
        s += cats.categories[yi][c];
        ++n;
    }
    if (n == 0) throw domain_error("expected_tercile: empty domain");
    return s / n;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_tercile_fields(const std::vector<TercileField>& fields,
                                const std::string& path) {
    auto out = csv::open_out(path);
    out << "lat,lon,year,p_below,p_normal,p_above,provenance\n";
    for (const auto& f : fields)
        for (int c = 0; c < f.spec.n_cells(); ++c) {
            if (!f.spec.is_valid(c)) continue;
            out << csv::format_double(f.spec.lat(c)) << ',' << csv::format_double(f.spec.lon(c))
                << ',' << f.year << ',' << csv::format_double(f.p_below[c]) << ','
                << csv::format_double(f.p_normal[c]) << ',' << csv::format_double(f.p_above[c])
                << ',' << to_string(f.provenance) << '\n';
        }
}

inline std::vector<TercileField> load_tercile_fields(const std::string& path,
                                                     const GridSpec& spec) {
    std::map<int, TercileField> by_year;
    csv::read_rows(
        path, "lat,lon,year,p_below,p_normal,p_above,provenance",
        [&](const std::vector<std::string>& f, long line_no) {
            const double lat = csv::parse_double(f[0], path, line_no);
            const double lon = csv::parse_double(f[1], path, line_no);
            const int year = static_cast<int>(csv::parse_int(f[2], path, line_no));
            const int cell = spec.cell_at(lat, lon);
            if (cell < 0) throw grid_mismatch_error(path + ": coordinate off-grid");
            auto it = by_year.find(year);
            if (it == by_year.end()) {
                Provenance prov = Provenance::model;
                const std::string p = csv::trim(f[6]);
                if (p == "ensemble") prov = Provenance::ensemble;
                if (p == "climatology") prov = Provenance::climatology;
                it = by_year.emplace(year, make_tercile_field(spec, year, prov)).first;
            }
            it->second.p_below[cell] = csv::parse_double(f[3], path, line_no);
            it->second.p_normal[cell] = csv::parse_double(f[4], path, line_no);
            it->second.p_above[cell] = csv::parse_double(f[5], path, line_no);
        });
    std::vector<TercileField> out;
    for (auto& [y, f] : by_year) out.push_back(std::move(f));
    return out;
}

/// Quick-look raster of one probability channel: binary PGM, one byte per
/// cell, linear 0-255 scaling, missing rendered as 0.
inline void save_probability_pgm(const TercileField& field, char channel,
                                 const std::string& path) {
    const std::vector<double>* p = nullptr;
    switch (channel) {
        case 'b': p = &field.p_below; break;
        case 'n': p = &field.p_normal; break;
        case 'a': p = &field.p_above; break;
        default: throw config_error("save_probability_pgm: channel must be b, n or a");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot open for writing: " + path);
    out << "P5\n" << field.spec.n_lon << ' ' << field.spec.n_lat << "\n255\n";
    // top row = northernmost latitude
    for (int i = field.spec.n_lat - 1; i >= 0; --i)
        for (int j = 0; j < field.spec.n_lon; ++j) {
            const double v = (*p)[i * field.spec.n_lon + j];
            const unsigned char byte =
                is_missing(v) ? 0 : static_cast<unsigned char>(std::lround(v * 255.0));
            out.put(char(byte));
        }
}

}  // namespace tercast
