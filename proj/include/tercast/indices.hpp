#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tercast/csv.hpp"
#include "tercast/grid.hpp"
#include "tercast/stats.hpp"

namespace tercast {

enum class IndexFormula { box_mean, box_difference, composite, diff1 };
enum class SourceVar { sst, u850, u200 };

inline std::string to_string(SourceVar v) {
    switch (v) {
        case SourceVar::sst: return "sst";
        case SourceVar::u850: return "u850";
        case SourceVar::u200: return "u200";
    }
    return "?";
}

inline SourceVar parse_source_var(const std::string& s) {
    if (s == "sst") return SourceVar::sst;
    if (s == "u850") return SourceVar::u850;
    if (s == "u200") return SourceVar::u200;
    throw config_error("unknown source variable '" + s + "'");
}

/// Inclusive lat/lon rectangle; longitudes in [0, 360).
struct Box {
    double lat1, lat2, lon1, lon2;

    bool contains(double lat, double lon) const {
        double l = std::fmod(lon, 360.0);
        if (l < 0) l += 360.0;
        return lat >= lat1 && lat <= lat2 && l >= lon1 && l <= lon2;
    }
};

struct CompositeTerm {
    std::string handle;
    double weight;
};

struct IndexDefinition {
    std::string handle;
    IndexFormula formula = IndexFormula::box_mean;
    SourceVar var = SourceVar::sst;
    std::vector<Box> boxes;             // box_mean: 1 box, box_difference: 2
    std::vector<CompositeTerm> terms;   // composite
    std::string source_handle;          // diff1
    bool standardized = true;
};

/// Monthly index values; standardization statistics always come from the
/// reference years only (minus the left-out year in leave-one-year-out mode).
struct IndexSeries {
    std::string handle;
    std::map<std::pair<int, int>, double> values;  // (year, month) -> value
    std::vector<int> ref_years;

    std::optional<double> at(int year, int month) const {
        const auto it = values.find({year, month});
        if (it == values.end() || is_missing(it->second)) return std::nullopt;
        return it->second;
    }
};

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

namespace detail {

/// Parses a weight written as a decimal or a rational p/q.
inline double parse_weight(const std::string& s) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) return csv::parse_double(s, "registry", 0);
    const double num = csv::parse_double(s.substr(0, slash), "registry", 0);
    const double den = csv::parse_double(s.substr(slash + 1), "registry", 0);
    if (den == 0) throw config_error("registry: zero denominator in weight '" + s + "'");
    return num / den;
}

inline Box parse_box(const std::string& s, const std::string& where) {
    const auto parts = csv::split(s, ',');
    if (parts.size() != 4)
        throw config_error(where + ": box must be lat1,lat2,lon1,lon2, got '" + s + "'");
    Box b{csv::parse_double(parts[0], where, 0), csv::parse_double(parts[1], where, 0),
          csv::parse_double(parts[2], where, 0), csv::parse_double(parts[3], where, 0)};
    if (b.lat1 > b.lat2 || b.lon1 > b.lon2)
        throw config_error(where + ": box bounds out of order in '" + s + "'");
    return b;
}

}  // namespace detail

/// Registry line format: handle|formula|var|payload|standardized
///   box_mean:        payload = lat1,lat2,lon1,lon2
///   box_difference:  payload = box;box
///   composite:       payload = handle*weight;handle*weight;...  (weights may be rational)
///   diff1:           payload = source handle (one-month difference)
inline std::vector<IndexDefinition> parse_index_registry(const std::string& text,
                                                         const std::string& where = "registry") {
    std::vector<IndexDefinition> defs;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = csv::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto fields = csv::split(t, '|');
        if (fields.size() != 5)
            throw config_error(where + ":" + std::to_string(line_no) +
                               ": expected 5 |-separated fields");
        IndexDefinition def;
        def.handle = csv::trim(fields[0]);
        const std::string formula = csv::trim(fields[1]);
        def.var = parse_source_var(csv::trim(fields[2]));
        const std::string payload = csv::trim(fields[3]);
        def.standardized = csv::trim(fields[4]) == "1";
        if (formula == "box_mean") {
            def.formula = IndexFormula::box_mean;
            def.boxes = {detail::parse_box(payload, where)};
        } else if (formula == "box_difference") {
            def.formula = IndexFormula::box_difference;
            for (const auto& b : csv::split(payload, ';'))
                def.boxes.push_back(detail::parse_box(b, where));
            if (def.boxes.size() != 2)
                throw config_error(where + ": box_difference needs exactly two boxes");
        } else if (formula == "composite") {
            def.formula = IndexFormula::composite;
            for (const auto& term : csv::split(payload, ';')) {
                const auto star = term.find('*');
                if (star == std::string::npos)
                    throw config_error(where + ": composite term must be handle*weight");
                CompositeTerm ct{csv::trim(term.substr(0, star)),
                                 detail::parse_weight(csv::trim(term.substr(star + 1)))};
                if (!seen.count(ct.handle))
                    throw config_error(where + ": composite '" + def.handle +
                                       "' references undefined handle '" + ct.handle + "'");
                def.terms.push_back(ct);
            }
        } else if (formula == "diff1") {
            def.formula = IndexFormula::diff1;
            def.source_handle = payload;
            if (!seen.count(payload))
                throw config_error(where + ": diff1 '" + def.handle +
                                   "' references undefined handle '" + payload + "'");
        } else {
            throw config_error(where + ": unknown formula '" + formula + "'");
        }
        if (seen.count(def.handle))
            throw config_error(where + ": duplicate handle '" + def.handle + "'");
        seen.insert(def.handle);
        defs.push_back(std::move(def));
    }
    return defs;
}

inline std::vector<IndexDefinition> load_index_registry(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open index registry: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_index_registry(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Index computation
// ---------------------------------------------------------------------------

namespace detail {

/// Reference years minus the left-out one.
inline std::vector<int> effective_ref(const std::vector<int>& ref_years,
                                      std::optional<int> loyo_year) {
    std::vector<int> out;
    for (int y : ref_years)
        if (!loyo_year || y != *loyo_year) out.push_back(y);
    return out;
}

/// Cosine-latitude-weighted mean of the monthly anomaly over a box; missing
/// cells are skipped. Returns one value per (year, month) in the stack.
inline std::map<std::pair<int, int>, double> box_anomaly_series(
    const MonthlyStack& fields, const Box& box, const std::vector<int>& ref,
    const std::string& handle) {
    const GridSpec& spec = fields.spec;
    std::vector<int> cells;
    std::vector<double> weights;
    for (int c = 0; c < spec.n_cells(); ++c) {
        if (!spec.is_valid(c)) continue;
        if (!box.contains(spec.lat(c), spec.lon(c))) continue;
        cells.push_back(c);
        weights.push_back(std::cos(spec.lat(c) * M_PI / 180.0));
    }
    if (cells.empty())
        throw geometry_error("index '" + handle + "': box contains no grid cells");

    // per-month climatology of the box cells over the reference years
    std::map<int, std::vector<double>> clim_mean;  // month -> per-cell mean
    for (int m = 1; m <= 12; ++m) {
        std::vector<double> sums(cells.size(), 0.0);
        std::vector<int> counts(cells.size(), 0);
        for (int y : ref) {
            const int ti = fields.time_index(y, m);
            if (ti < 0) continue;
            for (size_t j = 0; j < cells.size(); ++j) {
                const double v = fields.values[ti][cells[j]];
                if (is_missing(v)) continue;
                sums[j] += v;
                ++counts[j];
            }
        }
        std::vector<double> means(cells.size(), missing_value);
        for (size_t j = 0; j < cells.size(); ++j)
            if (counts[j] > 0) means[j] = sums[j] / counts[j];
        clim_mean[m] = std::move(means);
    }

    std::map<std::pair<int, int>, double> series;
    for (size_t ti = 0; ti < fields.times.size(); ++ti) {
        const auto [year, month] = fields.times[ti];
        const auto& means = clim_mean[month];
        double wsum = 0, vsum = 0;
        for (size_t j = 0; j < cells.size(); ++j) {
            const double v = fields.values[ti][cells[j]];
            if (is_missing(v) || is_missing(means[j])) continue;
            vsum += weights[j] * (v - means[j]);
            wsum += weights[j];
        }
        series[{year, month}] = wsum > 0 ? vsum / wsum : missing_value;
    }
    return series;
}

/// Standardizes a monthly series in place: per month, subtract the mean and
/// divide by the sd computed over the reference years.
inline void standardize_monthly(std::map<std::pair<int, int>, double>& series,
                                const std::vector<int>& ref, const std::string& handle) {
    std::set<int> ref_set(ref.begin(), ref.end());
    for (int m = 1; m <= 12; ++m) {
        std::vector<double> sample;
        for (const auto& [key, v] : series)
            if (key.second == m && ref_set.count(key.first) && !is_missing(v))
                sample.push_back(v);
        if (sample.empty()) continue;
        const double mu = mean(sample);
        const double sd = sample_sd(sample);
        if (sd == 0.0)
            throw validation_error("index '" + handle + "': zero variance in month " +
                                   std::to_string(m) + " standardization (degenerate index)");
        for (auto& [key, v] : series)
            if (key.second == m && !is_missing(v)) v = (v - mu) / sd;
    }
}

}  // namespace detail

/// value(year, month) - value(year, month - lag); January refers back to the
/// prior year's December. Entries without a prior month are dropped.
inline IndexSeries index_difference(const IndexSeries& series, int lag = 1) {
    if (lag != 1) throw config_error("index_difference: only lag 1 is supported");
    IndexSeries out;
    out.handle = series.handle + "_d1";
    out.ref_years = series.ref_years;
    for (const auto& [key, v] : series.values) {
        const auto [year, month] = key;
        const int py = month == 1 ? year - 1 : year;
        const int pm = month == 1 ? 12 : month - 1;
        const auto prev = series.values.find({py, pm});
        if (prev == series.values.end() || is_missing(prev->second) || is_missing(v)) continue;
        out.values[key] = v - prev->second;
    }
    return out;
}

/// Computes one index series. Composite and diff1 formulas draw on
/// previously computed series passed via `prior`. In leave-one-year-out mode
/// the left-out year contributes neither to the anomaly climatology nor to
/// the standardization statistics.
inline IndexSeries compute_index(const MonthlyStack& fields, const IndexDefinition& def,
                                 const std::vector<int>& ref_years,
                                 std::optional<int> loyo_year = std::nullopt,
                                 const std::map<std::string, IndexSeries>& prior = {}) {
    const std::vector<int> ref = detail::effective_ref(ref_years, loyo_year);
    if (ref.size() < 2) throw config_error("compute_index: reference period too short");

    IndexSeries out;
    out.handle = def.handle;
    out.ref_years = ref;

    switch (def.formula) {
        case IndexFormula::box_mean: {
            out.values = detail::box_anomaly_series(fields, def.boxes[0], ref, def.handle);
            break;
        }
        case IndexFormula::box_difference: {
            auto a = detail::box_anomaly_series(fields, def.boxes[0], ref, def.handle);
            auto b = detail::box_anomaly_series(fields, def.boxes[1], ref, def.handle);
            detail::standardize_monthly(a, ref, def.handle);
            detail::standardize_monthly(b, ref, def.handle);
            for (const auto& [key, va] : a) {
                const auto it = b.find(key);
                if (it == b.end() || is_missing(va) || is_missing(it->second)) {
                    out.values[key] = missing_value;
                    continue;
                }
                out.values[key] = va - it->second;
            }
            break;
        }
        case IndexFormula::composite: {
            for (const auto& term : def.terms) {
                const auto it = prior.find(term.handle);
                if (it == prior.end())
                    throw config_error("compute_index: composite '" + def.handle +
                                       "' needs series '" + term.handle + "'");
                for (const auto& [key, v] : it->second.values) {
                    auto& acc = out.values.try_emplace(key, 0.0).first->second;
                    if (is_missing(v) || is_missing(acc))
                        acc = missing_value;
                    else
                        acc += term.weight * v;
                }
            }
            break;
        }
        case IndexFormula::diff1: {
            const auto it = prior.find(def.source_handle);
            if (it == prior.end())
                throw config_error("compute_index: diff1 '" + def.handle + "' needs series '" +
                                   def.source_handle + "'");
            out = index_difference(it->second, 1);
            out.handle = def.handle;
            out.ref_years = ref;
            break;
        }
    }

    if (def.standardized && def.formula != IndexFormula::diff1)
        detail::standardize_monthly(out.values, ref, def.handle);
    return out;
}

/// Computes every registry index in order, resolving composite/diff1
/// dependencies against the already computed series.
inline std::map<std::string, IndexSeries> compute_all_indices(
    const std::vector<IndexDefinition>& registry,
    const std::map<SourceVar, const MonthlyStack*>& fields, const std::vector<int>& ref_years,
    std::optional<int> loyo_year = std::nullopt) {
    std::map<std::string, IndexSeries> out;
    for (const auto& def : registry) {
        const MonthlyStack* stack = nullptr;
        if (def.formula == IndexFormula::box_mean || def.formula == IndexFormula::box_difference) {
            const auto it = fields.find(def.var);
            if (it == fields.end())
                throw config_error("compute_all_indices: no field stack for variable " +
                                   to_string(def.var));
            stack = it->second;
        } else {
            stack = fields.begin()->second;  // unused by composite/diff1
        }
        out[def.handle] = compute_index(*stack, def, ref_years, loyo_year, out);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_index_series(const std::map<std::string, IndexSeries>& series,
                              const std::string& path) {
    auto out = csv::open_out(path);
    out << "handle,year,month,value\n";
    for (const auto& [handle, s] : series)
        for (const auto& [key, v] : s.values)
            out << handle << ',' << key.first << ',' << key.second << ','
                << csv::format_double(v) << '\n';
}

inline std::map<std::string, IndexSeries> load_index_series(const std::string& path) {
    std::map<std::string, IndexSeries> out;
    csv::read_rows(path, "handle,year,month,value",
                   [&](const std::vector<std::string>& f, long line_no) {
                       const std::string handle = csv::trim(f[0]);
                       const int year = static_cast<int>(csv::parse_int(f[1], path, line_no));
                       const int month = static_cast<int>(csv::parse_int(f[2], path, line_no));
                       const double v = csv::parse_double(f[3], path, line_no);
                       auto& s = out[handle];
                       s.handle = handle;
                       s.values[{year, month}] = v;
                   });
    return out;
}

/// The standard index roster: SST boxes for the ENSO family, the Indian
/// Ocean dipole, western Pacific gradients, equatorial winds, and one-month
/// differences of n34 and dmi.
inline std::string default_index_registry() {
    return R"(# handle|formula|var|payload|standardized
n34|box_mean|sst|-5,5,190,240|1
n3|box_mean|sst|-5,5,210,270|1
n4|box_mean|sst|-5,5,160,210|1
wpg|box_difference|sst|-5,5,160,210;0,20,130,150|1
dmi|box_difference|sst|-10,10,50,70;-10,0,90,110|1
ueq850|box_mean|u850|-4,4,60,90|1
ueq200|box_mean|u200|-4,4,60,90|1
wp|box_mean|sst|-15,20,120,160|1
wnp|box_mean|sst|20,35,160,210|1
wsp|box_mean|sst|-30,-15,155,210|1
wvg|composite|sst|n4*1;wp*-1/3;wnp*-1/3;wsp*-1/3|0
n34_d1|diff1|sst|n34|0
dmi_d1|diff1|sst|dmi|0
)";
}

}  // namespace tercast
