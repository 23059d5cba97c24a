#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tercast/csv.hpp"
#include "tercast/error.hpp"
#include "tercast/stats.hpp"

namespace tercast {

/// Per-year scalar predictor (an index evaluated at the predictor month).
struct PredictorSeries {
    std::string name;
    std::vector<double> values;  // aligned with the caller's year list
};

struct PreselectionEntry {
    std::string predictor;
    int eof_index = 0;   // 1-based
    double rho = 0;
    double p_value = 1;
    double alpha = 0;
    bool retained = false;
    std::string note;    // set when a predictor is excluded outright
};

struct PreselectionReport {
    std::vector<PreselectionEntry> entries;
    std::vector<std::string> retained;  // predictor names, input order

    bool is_retained(const std::string& name) const {
        return std::find(retained.begin(), retained.end(), name) != retained.end();
    }
};

enum class CorrelationTest { student_t, fisher_z };

/// Screens predictors against the loading series: predictor kept iff the
/// two-sided correlation test clears the per-EOF level
/// alpha_i = 0.1 * sqrt(lambda_i / sum(lambda)) for at least one component.
inline PreselectionReport preselect(const std::vector<PredictorSeries>& predictors,
                                    const std::vector<std::vector<double>>& loadings,
                                    const std::vector<double>& loading_variances,
                                    CorrelationTest test = CorrelationTest::student_t) {
    const size_t n = loadings.size();
    const size_t k = loading_variances.size();
    if (n < 6) throw config_error("preselect: need at least 6 common years");
    if (k < 1) throw config_error("preselect: need at least one EOF");
    double lam_sum = 0;
    for (double l : loading_variances) lam_sum += l;
    if (lam_sum <= 0) throw config_error("preselect: loading variances sum to zero");

    std::vector<double> alpha(k);
    for (size_t i = 0; i < k; ++i) alpha[i] = 0.1 * std::sqrt(loading_variances[i] / lam_sum);

    PreselectionReport report;
    for (const auto& pred : predictors) {
        if (pred.values.size() != n)
            throw validation_error("preselect: predictor '" + pred.name +
                                   "' year count mismatch");
        bool has_missing = false;
        for (double v : pred.values) has_missing |= is_missing(v);
        const double sd = has_missing ? 0.0 : sample_sd(pred.values);
        if (has_missing || sd == 0.0) {
            PreselectionEntry e;
            e.predictor = pred.name;
            e.note = has_missing ? "missing values" : "zero variance";
            report.entries.push_back(e);
            continue;
        }
        bool keep = false;
        for (size_t i = 0; i < k; ++i) {
            std::vector<double> a(n);
            for (size_t t = 0; t < n; ++t) a[t] = loadings[t][i];
            PreselectionEntry e;
            e.predictor = pred.name;
            e.eof_index = static_cast<int>(i) + 1;
            e.alpha = alpha[i];
            e.rho = pearson(pred.values, a);
            e.p_value = is_missing(e.rho)             ? 1.0
                        : test == CorrelationTest::fisher_z
                            ? correlation_p_value_fisher(e.rho, long(n))
                            : correlation_p_value(e.rho, long(n));
            keep = keep || e.p_value <= e.alpha;
            report.entries.push_back(e);
        }
        if (keep) {
            report.retained.push_back(pred.name);
            for (auto it = report.entries.rbegin();
                 it != report.entries.rend() && it->predictor == pred.name; ++it)
                it->retained = true;
        }
    }
    return report;
}

enum class FeatureProvenance { base, interaction, trend };

/// Design matrix with deterministic column order: base predictors first (in
/// input order), interaction dummies lexicographic, trend last. Columns are
/// centered/scaled over the training years only; the trend is centered but
/// not scaled.
struct FeatureTable {
    std::vector<int> years;
    std::vector<int> training_years;
    std::vector<std::string> names;
    std::vector<FeatureProvenance> provenance;
    Eigen::MatrixXd raw;     // years x features, pre-scaling
    Eigen::MatrixXd scaled;  // same shape
    std::vector<double> col_mean, col_sd;  // sd = 1 marks center-only columns
    std::vector<std::string> dropped;      // constant / duplicate columns

    int year_row(int year) const {
        const auto it = std::find(years.begin(), years.end(), year);
        if (it == years.end()) return -1;
        return static_cast<int>(it - years.begin());
    }

    Eigen::MatrixXd training_matrix() const {
        Eigen::MatrixXd X(training_years.size(), scaled.cols());
        for (size_t i = 0; i < training_years.size(); ++i)
            X.row(i) = scaled.row(year_row(training_years[i]));
        return X;
    }

    /// Applies the stored scaling to a raw feature vector.
    Eigen::VectorXd scale_row(const Eigen::VectorXd& raw_row) const {
        if (raw_row.size() != Eigen::Index(names.size()))
            throw validation_error("FeatureTable::scale_row: feature roster mismatch");
        Eigen::VectorXd out(raw_row.size());
        for (Eigen::Index j = 0; j < raw_row.size(); ++j)
            out[j] = (raw_row[j] - col_mean[j]) / col_sd[j];
        return out;
    }
};

/// Assembles the feature matrix from the retained predictors. Interaction
/// columns are v*1{u<0} and v*1{u>0} for every ordered pair (u,v) including
/// u == v; the below/above-normal threshold is 0 on the standardized scale.
/// The trend column (year-2000)/10 always closes the roster.
inline FeatureTable build_features(const std::vector<PredictorSeries>& retained,
                                   bool include_interactions, const std::vector<int>& years,
                                   const std::vector<int>& training_years) {
    for (const auto& p : retained)
        if (p.values.size() != years.size())
            throw validation_error("build_features: predictor '" + p.name +
                                   "' must cover all years");
    for (int ty : training_years)
        if (std::find(years.begin(), years.end(), ty) == years.end())
            throw config_error("build_features: training year not in year list");

    struct Column {
        std::string name;
        FeatureProvenance prov;
        std::vector<double> values;
    };
    std::vector<Column> cols;
    for (const auto& p : retained) cols.push_back({p.name, FeatureProvenance::base, p.values});

    if (include_interactions) {
        std::vector<Column> inter;
        for (const auto& u : retained)
            for (const auto& v : retained)
                for (const bool above : {false, true}) {
                    Column c;
                    c.prov = FeatureProvenance::interaction;
                    c.name = v.name + "*I(" + u.name + (above ? ">0)" : "<0)");
                    c.values.resize(years.size());
                    for (size_t t = 0; t < years.size(); ++t) {
                        const bool on = above ? u.values[t] > 0 : u.values[t] < 0;
                        c.values[t] = on ? v.values[t] : 0.0;
                    }
                    inter.push_back(std::move(c));
                }
        std::stable_sort(inter.begin(), inter.end(),
                         [](const Column& a, const Column& b) { return a.name < b.name; });
        for (auto& c : inter) cols.push_back(std::move(c));
    }

    Column trend;
    trend.name = "trend";
    trend.prov = FeatureProvenance::trend;
    for (int y : years) trend.values.push_back((double(y) - 2000.0) / 10.0);
    cols.push_back(std::move(trend));

    // indices of the training rows
    std::vector<size_t> train_rows;
    for (int ty : training_years) {
        const auto it = std::find(years.begin(), years.end(), ty);
        train_rows.push_back(size_t(it - years.begin()));
    }

    FeatureTable table;
    table.years = years;
    table.training_years = training_years;

    std::vector<const Column*> kept;
    for (const auto& c : cols) {
        bool constant = true;
        for (size_t i = 1; i < train_rows.size() && constant; ++i)
            constant = c.values[train_rows[i]] == c.values[train_rows[0]];
        if (constant && c.prov != FeatureProvenance::trend) {
            table.dropped.push_back(c.name + " (constant over training years)");
            continue;
        }
        bool duplicate = false;
        for (const auto* k : kept) {
            bool equal = true;
            for (size_t r : train_rows)
                if (k->values[r] != c.values[r]) { equal = false; break; }
            if (equal) {
                table.dropped.push_back(c.name + " (duplicates " + k->name + ")");
                duplicate = true;
                break;
            }
        }
        if (!duplicate) kept.push_back(&c);
    }

    const Eigen::Index d = Eigen::Index(kept.size());
    table.raw.resize(Eigen::Index(years.size()), d);
    table.scaled.resize(Eigen::Index(years.size()), d);
    table.col_mean.resize(d);
    table.col_sd.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const Column& c = *kept[j];
        table.names.push_back(c.name);
        table.provenance.push_back(c.prov);
        std::vector<double> train_vals;
        for (size_t r : train_rows) train_vals.push_back(c.values[r]);
        const double mu = mean(train_vals);
        const double sd = c.prov == FeatureProvenance::trend ? 1.0 : sample_sd(train_vals);
        table.col_mean[j] = mu;
        table.col_sd[j] = sd;
        for (size_t t = 0; t < years.size(); ++t) {
            table.raw(Eigen::Index(t), j) = c.values[t];
            table.scaled(Eigen::Index(t), j) = (c.values[t] - mu) / sd;
        }
    }
    return table;
}

inline void save_preselection_report(const PreselectionReport& report, const std::string& path) {
    auto out = csv::open_out(path);
    out << "predictor,eof_index,rho,p_value,alpha,retained\n";
    for (const auto& e : report.entries) {
        if (e.eof_index == 0) {
            out << e.predictor << ",NA,NA,NA,NA,0\n";
            continue;
        }
        out << e.predictor << ',' << e.eof_index << ',' << csv::format_double(e.rho) << ','
            << csv::format_double(e.p_value) << ',' << csv::format_double(e.alpha) << ','
            << (e.retained ? 1 : 0) << '\n';
    }
}

}  // namespace tercast
