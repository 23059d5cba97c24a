#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tercast/csv.hpp"
#include "tercast/error.hpp"
#include "tercast/stats.hpp"

namespace tercast {

/// Regular lat/lon grid. lat_start/lon_start are the centers of cell (0,0);
/// cells are stored row-major (ilat * n_lon + ilon).
struct GridSpec {
    double lat_start = 0.0;
    double lon_start = 0.0;
    double cell_size = 0.5;
    int n_lat = 0;
    int n_lon = 0;
    std::vector<uint8_t> valid;  // land/region membership, one flag per cell

    int n_cells() const { return n_lat * n_lon; }

    double lat(int cell) const { return lat_start + (cell / n_lon) * cell_size; }
    double lon(int cell) const { return lon_start + (cell % n_lon) * cell_size; }

    bool is_valid(int cell) const { return valid.empty() || valid[cell] != 0; }

    int n_valid() const {
        if (valid.empty()) return n_cells();
        int c = 0;
        for (auto v : valid) c += (v != 0);
        return c;
    }

    /// Cell index whose center matches (lat, lon) within tol degrees; -1 if
    /// the coordinate does not snap onto the grid.
    int cell_at(double lat_deg, double lon_deg, double tol = 1e-6) const {
        const double fi = (lat_deg - lat_start) / cell_size;
        const double fj = (lon_deg - lon_start) / cell_size;
        const long i = std::lround(fi);
        const long j = std::lround(fj);
        if (i < 0 || i >= n_lat || j < 0 || j >= n_lon) return -1;
        if (std::abs(fi - double(i)) * cell_size > tol) return -1;
        if (std::abs(fj - double(j)) * cell_size > tol) return -1;
        return static_cast<int>(i) * n_lon + static_cast<int>(j);
    }

    bool same_geometry(const GridSpec& o) const {
        return n_lat == o.n_lat && n_lon == o.n_lon &&
               std::abs(lat_start - o.lat_start) < 1e-9 &&
               std::abs(lon_start - o.lon_start) < 1e-9 &&
               std::abs(cell_size - o.cell_size) < 1e-9;
    }

    void require_same_geometry(const GridSpec& o, const std::string& what) const {
        if (!same_geometry(o)) throw geometry_error(what + ": grid geometry mismatch");
    }
};

enum class FieldKind { total, anomaly, transformed };

inline std::string to_string(FieldKind k) {
    switch (k) {
        case FieldKind::total: return "total";
        case FieldKind::anomaly: return "anomaly";
        case FieldKind::transformed: return "transformed";
    }
    return "?";
}

/// One 2-D field per year. Missing (or non-valid) cells carry NaN.
struct GridStack {
    GridSpec spec;
    std::vector<int> years;                   // strictly increasing
    std::vector<std::vector<double>> values;  // [year_idx][cell]
    FieldKind kind = FieldKind::total;

    int year_index(int year) const {
        const auto it = std::lower_bound(years.begin(), years.end(), year);
        if (it == years.end() || *it != year) return -1;
        return static_cast<int>(it - years.begin());
    }

    double at(int year, int cell) const {
        const int yi = year_index(year);
        if (yi < 0) return missing_value;
        return values[yi][cell];
    }
};

/// One field per (year, month); used for monthly inputs before seasonal
/// accumulation and for the predictor variables.
struct MonthlyStack {
    GridSpec spec;
    std::vector<std::pair<int, int>> times;   // (year, month), sorted
    std::vector<std::vector<double>> values;  // [time_idx][cell]

    int time_index(int year, int month) const {
        const auto key = std::make_pair(year, month);
        const auto it = std::lower_bound(times.begin(), times.end(), key);
        if (it == times.end() || *it != key) return -1;
        return static_cast<int>(it - times.begin());
    }

    std::vector<int> years() const {
        std::vector<int> ys;
        for (const auto& [y, m] : times)
            if (ys.empty() || ys.back() != y) ys.push_back(y);
        return ys;
    }
};

/// Tercile categories in {-1, 0, +1}; NaN marks missing.
struct CategoryStack {
    GridSpec spec;
    std::vector<int> years;
    std::vector<std::vector<double>> categories;

    int year_index(int year) const {
        const auto it = std::lower_bound(years.begin(), years.end(), year);
        if (it == years.end() || *it != year) return -1;
        return static_cast<int>(it - years.begin());
    }
};

/// Evaluation mask; included cells are always a subset of the valid cells.
struct Mask {
    GridSpec spec;
    std::vector<uint8_t> included;

    int n_included() const {
        int c = 0;
        for (auto v : included) c += (v != 0);
        return c;
    }
};

// ---------------------------------------------------------------------------
// Ingestion / persistence
// ---------------------------------------------------------------------------

/// Loads a long-format `lat,lon,year,value` CSV onto the given grid. All
/// coordinates must snap onto grid cells; duplicates are rejected. Valid
/// cells absent from the file are left missing.
inline GridStack load_grid_stack(const std::string& path, const GridSpec& spec,
                                 FieldKind kind = FieldKind::total) {
    struct Row {
        int cell;
        int year;
        double value;
    };
    std::vector<Row> rows;
    std::set<int> year_set;
    csv::read_rows(path, "lat,lon,year,value", [&](const std::vector<std::string>& f, long line_no) {
        const double lat = csv::parse_double(f[0], path, line_no);
        const double lon = csv::parse_double(f[1], path, line_no);
        const int year = static_cast<int>(csv::parse_int(f[2], path, line_no));
        const double value = csv::parse_double(f[3], path, line_no);
        const int cell = spec.cell_at(lat, lon);
        if (cell < 0)
            throw grid_mismatch_error(path + ":" + std::to_string(line_no) + ": coordinate (" +
                                      f[0] + "," + f[1] + ") does not lie on the grid");
        rows.push_back({cell, year, value});
        year_set.insert(year);
    });

    GridStack stack;
    stack.spec = spec;
    stack.kind = kind;
    stack.years.assign(year_set.begin(), year_set.end());
    stack.values.assign(stack.years.size(),
                        std::vector<double>(spec.n_cells(), missing_value));
    std::vector<uint8_t> seen(stack.years.size() * size_t(spec.n_cells()), 0);
    for (const auto& r : rows) {
        const int yi = stack.year_index(r.year);
        auto& flag = seen[size_t(yi) * spec.n_cells() + r.cell];
        if (flag)
            throw duplication_error(path + ": duplicate entry for cell (" +
                                    std::to_string(spec.lat(r.cell)) + "," +
                                    std::to_string(spec.lon(r.cell)) + ") year " +
                                    std::to_string(r.year));
        flag = 1;
        if (spec.is_valid(r.cell)) stack.values[yi][r.cell] = r.value;
    }
    return stack;
}

inline void save_grid_stack(const GridStack& stack, const std::string& path) {
    auto out = csv::open_out(path);
    out << "lat,lon,year,value\n";
    for (size_t yi = 0; yi < stack.years.size(); ++yi) {
        for (int c = 0; c < stack.spec.n_cells(); ++c) {
            if (!stack.spec.is_valid(c)) continue;
            out << csv::format_double(stack.spec.lat(c)) << ','
                << csv::format_double(stack.spec.lon(c)) << ',' << stack.years[yi] << ','
                << csv::format_double(stack.values[yi][c]) << '\n';
        }
    }
}

/// Monthly variant: `lat,lon,year,month,value`.
inline MonthlyStack load_monthly_stack(const std::string& path, const GridSpec& spec) {
    struct Row {
        int cell;
        int year, month;
        double value;
    };
    std::vector<Row> rows;
    std::set<std::pair<int, int>> time_set;
    csv::read_rows(path, "lat,lon,year,month,value",
                   [&](const std::vector<std::string>& f, long line_no) {
                       const double lat = csv::parse_double(f[0], path, line_no);
                       const double lon = csv::parse_double(f[1], path, line_no);
                       const int year = static_cast<int>(csv::parse_int(f[2], path, line_no));
                       const int month = static_cast<int>(csv::parse_int(f[3], path, line_no));
                       if (month < 1 || month > 12)
                           throw parse_error(path, line_no, "month out of range");
                       const double value = csv::parse_double(f[4], path, line_no);
                       const int cell = spec.cell_at(lat, lon);
                       if (cell < 0)
                           throw grid_mismatch_error(path + ":" + std::to_string(line_no) +
                                                     ": coordinate off-grid");
                       rows.push_back({cell, year, month, value});
                       time_set.insert({year, month});
                   });
    MonthlyStack stack;
    stack.spec = spec;
    stack.times.assign(time_set.begin(), time_set.end());
    stack.values.assign(stack.times.size(),
                        std::vector<double>(spec.n_cells(), missing_value));
    std::vector<uint8_t> seen(stack.times.size() * size_t(spec.n_cells()), 0);
    for (const auto& r : rows) {
        const int ti = stack.time_index(r.year, r.month);
        auto& flag = seen[size_t(ti) * spec.n_cells() + r.cell];
        if (flag)
            throw duplication_error(path + ": duplicate entry for year " + std::to_string(r.year) +
                                    " month " + std::to_string(r.month));
        flag = 1;
        if (spec.is_valid(r.cell)) stack.values[ti][r.cell] = r.value;
    }
    return stack;
}

inline void save_monthly_stack(const MonthlyStack& stack, const std::string& path) {
    auto out = csv::open_out(path);
    out << "lat,lon,year,month,value\n";
    for (size_t ti = 0; ti < stack.times.size(); ++ti) {
        for (int c = 0; c < stack.spec.n_cells(); ++c) {
            if (!stack.spec.is_valid(c)) continue;
            out << csv::format_double(stack.spec.lat(c)) << ','
                << csv::format_double(stack.spec.lon(c)) << ',' << stack.times[ti].first << ','
                << stack.times[ti].second << ',' << csv::format_double(stack.values[ti][c])
                << '\n';
        }
    }
}

inline void save_mask(const Mask& mask, const std::string& path) {
    auto out = csv::open_out(path);
    out << "lat,lon,included\n";
    for (int c = 0; c < mask.spec.n_cells(); ++c) {
        if (!mask.spec.is_valid(c)) continue;
        out << csv::format_double(mask.spec.lat(c)) << ',' << csv::format_double(mask.spec.lon(c))
            << ',' << (mask.included[c] ? 1 : 0) << '\n';
    }
}

inline Mask load_mask(const std::string& path, const GridSpec& spec) {
    Mask mask{spec, std::vector<uint8_t>(spec.n_cells(), 0)};
    csv::read_rows(path, "lat,lon,included", [&](const std::vector<std::string>& f, long line_no) {
        const double lat = csv::parse_double(f[0], path, line_no);
        const double lon = csv::parse_double(f[1], path, line_no);
        const long inc = csv::parse_int(f[2], path, line_no);
        const int cell = spec.cell_at(lat, lon);
        if (cell < 0) throw grid_mismatch_error(path + ": coordinate off-grid");
        if (inc != 0 && inc != 1) throw parse_error(path, line_no, "included must be 0 or 1");
        mask.included[cell] = spec.is_valid(cell) && inc == 1;
    });
    return mask;
}

inline void save_categories(const CategoryStack& cats, const std::string& path) {
    auto out = csv::open_out(path);
    out << "lat,lon,year,category\n";
    for (size_t yi = 0; yi < cats.years.size(); ++yi) {
        for (int c = 0; c < cats.spec.n_cells(); ++c) {
            if (!cats.spec.is_valid(c)) continue;
            const double v = cats.categories[yi][c];
            out << csv::format_double(cats.spec.lat(c)) << ','
                << csv::format_double(cats.spec.lon(c)) << ',' << cats.years[yi] << ','
                << (is_missing(v) ? std::string("NA") : std::to_string(int(v))) << '\n';
        }
    }
}

inline CategoryStack load_categories(const std::string& path, const GridSpec& spec) {
    CategoryStack cats;
    cats.spec = spec;
    std::set<int> year_set;
    struct Row {
        int cell, year;
        double cat;
    };
    std::vector<Row> rows;
    csv::read_rows(path, "lat,lon,year,category",
                   [&](const std::vector<std::string>& f, long line_no) {
                       const double lat = csv::parse_double(f[0], path, line_no);
                       const double lon = csv::parse_double(f[1], path, line_no);
                       const int year = static_cast<int>(csv::parse_int(f[2], path, line_no));
                       const double cat = csv::parse_double(f[3], path, line_no);
                       if (!is_missing(cat) && cat != -1 && cat != 0 && cat != 1)
                           throw parse_error(path, line_no, "category must be -1, 0, 1 or NA");
                       const int cell = spec.cell_at(lat, lon);
                       if (cell < 0) throw grid_mismatch_error(path + ": coordinate off-grid");
                       rows.push_back({cell, year, cat});
                       year_set.insert(year);
                   });
    cats.years.assign(year_set.begin(), year_set.end());
    cats.categories.assign(cats.years.size(),
                           std::vector<double>(spec.n_cells(), missing_value));
    for (const auto& r : rows)
        if (spec.is_valid(r.cell)) cats.categories[cats.year_index(r.year)][r.cell] = r.cat;
    return cats;
}

/// Grid geometry as a key=value text file. The valid mask travels separately
/// as a mask CSV.
inline void save_grid_spec(const GridSpec& spec, const std::string& path) {
    auto out = csv::open_out(path);
    out << "lat_start=" << csv::format_double(spec.lat_start) << "\n";
    out << "lon_start=" << csv::format_double(spec.lon_start) << "\n";
    out << "cell_size=" << csv::format_double(spec.cell_size) << "\n";
    out << "n_lat=" << spec.n_lat << "\n";
    out << "n_lon=" << spec.n_lon << "\n";
}

inline GridSpec load_grid_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open grid spec: " + path);
    GridSpec spec;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = csv::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw parse_error(path, line_no, "expected key=value");
        const std::string key = csv::trim(t.substr(0, eq));
        const std::string val = csv::trim(t.substr(eq + 1));
        if (key == "lat_start") spec.lat_start = csv::parse_double(val, path, line_no);
        else if (key == "lon_start") spec.lon_start = csv::parse_double(val, path, line_no);
        else if (key == "cell_size") spec.cell_size = csv::parse_double(val, path, line_no);
        else if (key == "n_lat") spec.n_lat = int(csv::parse_int(val, path, line_no));
        else if (key == "n_lon") spec.n_lon = int(csv::parse_int(val, path, line_no));
        else throw parse_error(path, line_no, "unknown grid spec key '" + key + "'");
    }
    if (spec.cell_size <= 0 || spec.n_lat < 1 || spec.n_lon < 1)
        throw config_error(path + ": incomplete grid spec");
    spec.valid.assign(spec.n_cells(), 1);
    return spec;
}

// ---------------------------------------------------------------------------
// Seasonal accumulation and anomalies
// ---------------------------------------------------------------------------

inline const std::map<std::string, std::vector<int>>& season_months() {
    static const std::map<std::string, std::vector<int>> table = {
        {"mam", {3, 4, 5}}, {"jjas", {6, 7, 8, 9}}, {"ond", {10, 11, 12}}, {"jf", {1, 2}}};
    return table;
}

/// Per-cell sum over the season's months. Every year that contributes any
/// season month must contain all of them.
inline GridStack seasonal_total(const MonthlyStack& monthly, const std::vector<int>& months) {
    if (months.empty()) throw config_error("seasonal_total: empty season");
    std::set<int> season(months.begin(), months.end());
    std::set<int> out_years;
    for (const auto& [y, m] : monthly.times)
        if (season.count(m)) out_years.insert(y);

    GridStack out;
    out.spec = monthly.spec;
    out.kind = FieldKind::total;
    out.years.assign(out_years.begin(), out_years.end());
    out.values.assign(out.years.size(),
                      std::vector<double>(monthly.spec.n_cells(), missing_value));
    for (size_t yi = 0; yi < out.years.size(); ++yi) {
        const int year = out.years[yi];
        std::vector<const std::vector<double>*> fields;
        for (int m : months) {
            const int ti = monthly.time_index(year, m);
            if (ti < 0)
                throw validation_error("seasonal_total: year " + std::to_string(year) +
                                       " is missing month " + std::to_string(m));
            fields.push_back(&monthly.values[ti]);
        }
        auto& dst = out.values[yi];
        for (int c = 0; c < monthly.spec.n_cells(); ++c) {
            if (!monthly.spec.is_valid(c)) continue;
            double s = 0;
            bool miss = false;
            for (const auto* f : fields) {
                if (is_missing((*f)[c])) { miss = true; break; }
                s += (*f)[c];
            }
            dst[c] = miss ? missing_value : s;
        }
    }
    return out;
}

/// Subtracts the per-cell mean over ref_years. Values are deliberately not
/// divided by the cell standard deviation.
inline GridStack compute_anomalies(const GridStack& stack, const std::vector<int>& ref_years) {
    if (ref_years.empty()) throw config_error("compute_anomalies: empty reference period");
    std::vector<int> ref_idx;
    for (int y : ref_years) {
        const int yi = stack.year_index(y);
        if (yi < 0)
            throw config_error("compute_anomalies: reference year " + std::to_string(y) +
                               " not present in stack");
        ref_idx.push_back(yi);
    }
    GridStack out = stack;
    out.kind = FieldKind::anomaly;
    const int nc = stack.spec.n_cells();
    for (int c = 0; c < nc; ++c) {
        if (!stack.spec.is_valid(c)) continue;
        double s = 0;
        bool miss = false;
        for (int yi : ref_idx) {
            const double v = stack.values[yi][c];
            if (is_missing(v)) { miss = true; break; }
            s += v;
        }
        if (miss) {
            for (auto& f : out.values) f[c] = missing_value;
            continue;
        }
        const double m = s / double(ref_idx.size());
        for (auto& f : out.values) f[c] = is_missing(f[c]) ? missing_value : f[c] - m;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial aggregation
// ---------------------------------------------------------------------------

/// Block-averages onto a grid coarsened by `factor`. A coarse cell is valid
/// iff at least min_coverage of its fine cells are valid; its value is the
/// mean over the valid fine cells (missing propagates). The mean is
/// unweighted by default; area_weighting switches to cosine-latitude weights.
inline GridStack aggregate_grid(const GridStack& stack, int factor, double min_coverage = 0.5,
                                bool area_weighting = false) {
    if (factor == 1) return stack;
    if (factor != 2 && factor != 4 && factor != 8)
        throw config_error("aggregate_grid: factor must be one of {2,4,8}");
    const GridSpec& fs = stack.spec;
    if (fs.n_lat % factor != 0 || fs.n_lon % factor != 0)
        throw geometry_error("aggregate_grid: factor does not divide the grid extent");

    GridSpec cs;
    cs.cell_size = fs.cell_size * factor;
    cs.lat_start = fs.lat_start + 0.5 * (factor - 1) * fs.cell_size;
    cs.lon_start = fs.lon_start + 0.5 * (factor - 1) * fs.cell_size;
    cs.n_lat = fs.n_lat / factor;
    cs.n_lon = fs.n_lon / factor;
    cs.valid.assign(cs.n_cells(), 0);

    std::vector<std::vector<int>> members(cs.n_cells());
    for (int c = 0; c < fs.n_cells(); ++c) {
        const int ci = (c / fs.n_lon) / factor * cs.n_lon + (c % fs.n_lon) / factor;
        if (fs.is_valid(c)) members[ci].push_back(c);
    }
    for (int c = 0; c < cs.n_cells(); ++c)
        cs.valid[c] = double(members[c].size()) / double(factor * factor) >= min_coverage;

    GridStack out;
    out.spec = cs;
    out.kind = stack.kind;
    out.years = stack.years;
    out.values.assign(out.years.size(), std::vector<double>(cs.n_cells(), missing_value));
    for (size_t yi = 0; yi < out.years.size(); ++yi) {
        for (int c = 0; c < cs.n_cells(); ++c) {
            if (!cs.valid[c]) continue;
            double s = 0, wsum = 0;
            bool miss = false;
            for (int f : members[c]) {
                const double v = stack.values[yi][f];
                if (is_missing(v)) { miss = true; break; }
                const double w = area_weighting ? std::cos(fs.lat(f) * M_PI / 180.0) : 1.0;
                s += w * v;
                wsum += w;
            }
            out.values[yi][c] = miss ? missing_value : s / wsum;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Terciles, dry mask, category correlation
// ---------------------------------------------------------------------------

/// Tercile boundaries of a sorted sample: the order statistics at ranks
/// ceil(n/3) and ceil(2n/3) (1-indexed).
inline std::pair<double, double> tercile_boundaries(const std::vector<double>& sorted_sample) {
    const size_t n = sorted_sample.size();
    const size_t lo = (n + 2) / 3;       // ceil(n/3)
    const size_t hi = (2 * n + 2) / 3;   // ceil(2n/3)
    return {sorted_sample[lo - 1], sorted_sample[hi - 1]};
}

/// Per-cell tercile category of each year relative to the climatology sample
/// over ref_years: -1 if value <= lower boundary, +1 if >= upper, else 0.
/// With exclude_target set, a year inside ref_years is categorized against
/// boundaries computed with that year removed.
inline CategoryStack tercile_categories(const GridStack& stack, const std::vector<int>& ref_years,
                                        bool exclude_target) {
    if (stack.kind == FieldKind::transformed)
        throw config_error("tercile_categories: expects totals or anomalies");
    const size_t min_n = ref_years.size() - (exclude_target ? 1 : 0);
    if (min_n < 6)
        throw config_error("tercile_categories: climatology sample smaller than 6 years");
    std::vector<int> ref_idx;
    for (int y : ref_years) {
        const int yi = stack.year_index(y);
        if (yi < 0)
            throw config_error("tercile_categories: reference year " + std::to_string(y) +
                               " not in stack");
        ref_idx.push_back(yi);
    }

    CategoryStack out;
    out.spec = stack.spec;
    out.years = stack.years;
    out.categories.assign(stack.years.size(),
                          std::vector<double>(stack.spec.n_cells(), missing_value));

    std::set<int> ref_set(ref_years.begin(), ref_years.end());
    for (int c = 0; c < stack.spec.n_cells(); ++c) {
        if (!stack.spec.is_valid(c)) continue;
        std::vector<std::pair<double, int>> ref_vals;  // (value, year index)
        for (int yi : ref_idx) {
            const double v = stack.values[yi][c];
            if (is_missing(v)) continue;
            ref_vals.emplace_back(v, yi);
        }
        if (ref_vals.size() < 6) continue;  // cell left missing
        std::sort(ref_vals.begin(), ref_vals.end());
        std::vector<double> full_sample(ref_vals.size());
        for (size_t i = 0; i < ref_vals.size(); ++i) full_sample[i] = ref_vals[i].first;
        const auto [full_lo, full_hi] = tercile_boundaries(full_sample);

        for (size_t yi = 0; yi < stack.years.size(); ++yi) {
            const double v = stack.values[yi][c];
            if (is_missing(v)) continue;
            double lo = full_lo, hi = full_hi;
            if (exclude_target && ref_set.count(stack.years[yi])) {
                std::vector<double> reduced;
                reduced.reserve(full_sample.size());
                const int self = static_cast<int>(yi);
                for (const auto& [val, idx] : ref_vals)
                    if (idx != self) reduced.push_back(val);
                if (reduced.size() < 6) continue;
                const auto b = tercile_boundaries(reduced);
                lo = b.first;
                hi = b.second;
            }
            out.categories[yi][c] = (v <= lo) ? -1.0 : (v >= hi) ? 1.0 : 0.0;
        }
    }
    return out;
}

/// Excludes the driest cells: the floor(drop_fraction * n) lowest
/// climatological mean totals (ties at the cutoff all removed, unless the
/// cutoff equals the overall maximum, in which case ranking is degenerate
/// and nothing is removed), plus any cell whose tercile boundary sits at
/// exactly 0.
inline Mask dry_mask(const GridStack& stack, const std::vector<int>& ref_years,
                     double drop_fraction = 0.25) {
    if (stack.kind != FieldKind::total) throw config_error("dry_mask: expects seasonal totals");
    std::vector<int> ref_idx;
    for (int y : ref_years) {
        const int yi = stack.year_index(y);
        if (yi < 0) throw config_error("dry_mask: reference year not in stack");
        ref_idx.push_back(yi);
    }

    const int nc = stack.spec.n_cells();
    Mask mask{stack.spec, std::vector<uint8_t>(nc, 0)};
    std::vector<double> cell_mean(nc, missing_value);
    std::vector<double> means;  // ranking population: every valid cell with data
    for (int c = 0; c < nc; ++c) {
        if (!stack.spec.is_valid(c)) continue;
        std::vector<double> sample;
        for (int yi : ref_idx) {
            const double v = stack.values[yi][c];
            if (is_missing(v)) { sample.clear(); break; }
            sample.push_back(v);
        }
        if (sample.empty()) continue;
        std::sort(sample.begin(), sample.end());
        cell_mean[c] = mean(sample);
        means.push_back(cell_mean[c]);
        const auto [lo, hi] = tercile_boundaries(sample);
        if (lo == 0.0 || hi == 0.0) continue;  // tercile category ambiguous at 0
        mask.included[c] = 1;
    }
    if (means.empty()) return mask;

    const size_t m = static_cast<size_t>(std::floor(drop_fraction * double(means.size())));
    if (m == 0) return mask;
    std::sort(means.begin(), means.end());
    const double cutoff = means[m - 1];
    if (cutoff >= means.back()) return mask;  // all means tie: keep everything
    for (int c = 0; c < nc; ++c)
        if (mask.included[c] && cell_mean[c] <= cutoff) mask.included[c] = 0;
    return mask;
}

/// Per-cell Pearson correlation of two category series.
inline std::vector<double> category_correlation(const CategoryStack& a, const CategoryStack& b) {
    a.spec.require_same_geometry(b.spec, "category_correlation");
    if (a.years != b.years) throw geometry_error("category_correlation: year lists differ");
    const int nc = a.spec.n_cells();
    std::vector<double> out(nc, missing_value);
    for (int c = 0; c < nc; ++c) {
        if (!a.spec.is_valid(c)) continue;
        std::vector<double> xs, ys;
        bool miss = false;
        for (size_t yi = 0; yi < a.years.size(); ++yi) {
            const double x = a.categories[yi][c];
            const double y = b.categories[yi][c];
            if (is_missing(x) || is_missing(y)) { miss = true; break; }
            xs.push_back(x);
            ys.push_back(y);
        }
        if (miss || xs.size() < 2) continue;
        out[c] = pearson(xs, ys);  // NaN when either series is constant
    }
    return out;
}

}  // namespace tercast
