#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tercast/config.hpp"
#include "tercast/eof.hpp"
#include "tercast/features.hpp"
#include "tercast/grid.hpp"
#include "tercast/indices.hpp"
#include "tercast/mtnet.hpp"
#include "tercast/synthetic.hpp"
#include "tercast/tercile.hpp"
#include "tercast/transform.hpp"
#include "tercast/verify.hpp"

namespace tercast {

inline constexpr const char* software_version = "tercast 0.1.0";

/// Everything a fold needs, loaded once and shared read-only. Indices come
/// either from predictor field stacks and a registry or from a ready-made
/// index series file; in the latter case the series values are taken as-is,
/// so the leave-one-year-out suppression of index derivation is the
/// supplier's responsibility.
struct ExperimentInputs {
    GridStack totals;  // seasonal totals at the configured resolution
    std::map<SourceVar, MonthlyStack> predictors;
    std::vector<IndexDefinition> registry;
    std::map<std::string, IndexSeries> user_indices;
    bool indices_from_file = false;
};

inline ExperimentInputs load_experiment_inputs(const ExperimentConfig& config) {
    ExperimentInputs inputs;
    GridSpec grid = load_grid_spec(config.target_grid_path);
    if (!config.valid_mask_path.empty()) {
        const Mask m = load_mask(config.valid_mask_path, grid);
        grid.valid = m.included;
    }
    const MonthlyStack monthly = load_monthly_stack(config.precip_path, grid);
    GridStack totals = seasonal_total(monthly, config.season_month_list());
    if (config.resolution_factor > 1)
        totals = aggregate_grid(totals, config.resolution_factor, config.min_coverage);
    inputs.totals = std::move(totals);

    if (!config.indices_path.empty()) {
        inputs.user_indices = load_index_series(config.indices_path);
        inputs.indices_from_file = true;
        return inputs;
    }
    for (const auto& [var, path] : config.predictor_paths) {
        const GridSpec pgrid = load_grid_spec(config.predictor_grid_paths.at(var));
        inputs.predictors[var] = load_monthly_stack(path, pgrid);
    }
    inputs.registry = config.registry_path.empty()
                          ? parse_index_registry(default_index_registry())
                          : load_index_registry(config.registry_path);
    return inputs;
}

/// One fitted fold: the pre-processing models and the regression fit. For a
/// leave-one-year-out fold none of these may depend on the target year's
/// data; the fingerprint below serializes exactly the parts covered by that
/// guarantee.
struct FoldModel {
    std::optional<int> target_year;
    std::vector<int> training_years;
    TransformModel transform_model;
    EofBasis basis;
    std::vector<std::string> predictor_names;
    PreselectionReport preselection;
    FeatureTable features;
    MultiTaskFit fit;

    std::string fingerprint() const {
        std::ostringstream ss;
        ss << "training_years=" << format_year_list(training_years) << "\n";
        ss << "transform:";
        for (const auto& ct : transform_model.cells) {
            ss << ' ' << ct.n << ':' << csv::format_double(ct.sigma);
            for (int i = 0; i < ct.n; ++i)
                ss << ',' << ct.ref_years[i] << ':' << csv::format_double(ct.ref_values[i])
                   << ':' << csv::format_double(ct.z[i]);
        }
        ss << "\nbasis:";
        for (int i = 0; i < basis.k; ++i) {
            ss << " lambda=" << csv::format_double(basis.loading_variances[i]);
            for (int c = 0; c < basis.spec.n_cells(); ++c)
                if (basis.included[c]) ss << ',' << csv::format_double(basis.patterns[i][c]);
        }
        ss << "\nsigma:";
        for (int c = 0; c < basis.spec.n_cells(); ++c)
            if (basis.included[c])
                ss << ' ' << csv::format_double(basis.sigma_sq[c]) << '/'
                   << csv::format_double(basis.resid_sq[c]);
        ss << "\nretained:";
        for (const auto& name : preselection.retained) ss << ' ' << name;
        ss << "\nfeatures:";
        for (size_t j = 0; j < features.names.size(); ++j)
            ss << ' ' << features.names[j] << ':' << csv::format_double(features.col_mean[j])
               << ':' << csv::format_double(features.col_sd[j]);
        ss << "\nhyper:" << csv::format_double(fit.params.lambda1) << ','
           << csv::format_double(fit.params.lambda2) << " df=" << csv::format_double(fit.df);
        ss << "\nB:";
        for (Eigen::Index r = 0; r < fit.B.rows(); ++r)
            for (Eigen::Index c = 0; c < fit.B.cols(); ++c)
                ss << ' ' << csv::format_double(fit.B(r, c));
        ss << "\nsigma_a:";
        for (Eigen::Index r = 0; r < fit.sigma_a.rows(); ++r)
            for (Eigen::Index c = 0; c < fit.sigma_a.cols(); ++c)
                ss << ' ' << csv::format_double(fit.sigma_a(r, c));
        ss << "\n";
        return ss.str();
    }
};

/// Per-year predictor scalars at the configured predictor months. With a
/// single month the predictor keeps the index handle; with several each
/// (handle, month) pair becomes its own predictor. `handles` fixes the
/// deterministic predictor order.
inline std::vector<PredictorSeries> predictor_table(
    const std::map<std::string, IndexSeries>& indices, const std::vector<std::string>& handles,
    const std::vector<int>& months, const std::vector<int>& years) {
    std::vector<PredictorSeries> table;
    for (const auto& handle : handles) {
        const IndexSeries& series = indices.at(handle);
        for (int m : months) {
            PredictorSeries p;
            p.name = months.size() == 1 ? handle : handle + "@m" + std::to_string(m);
            for (int y : years) {
                const auto v = series.at(y, m);
                p.values.push_back(v ? *v : missing_value);
            }
            table.push_back(std::move(p));
        }
    }
    return table;
}

/// Fits the full pre-processing + regression chain on the given training
/// years. When target_year is set the feature table additionally carries the
/// target year's row so the caller can predict from it.
inline FoldModel fit_fold(const ExperimentConfig& config, const ExperimentInputs& inputs,
                          const std::vector<int>& training_years,
                          std::optional<int> target_year) {
    FoldModel fold;
    fold.target_year = target_year;
    fold.training_years = training_years;
    std::sort(fold.training_years.begin(), fold.training_years.end());

    const GridStack anomalies = compute_anomalies(inputs.totals, fold.training_years);
    fold.transform_model = fit_transform_model(anomalies, fold.training_years);
    const GridStack z = transform(fold.transform_model, anomalies);
    fold.basis = compute_eofs(z, fold.training_years, config.k);

    std::map<std::string, IndexSeries> indices;
    std::vector<std::string> handles;
    if (inputs.indices_from_file) {
        indices = inputs.user_indices;
        for (const auto& [h, s] : indices) handles.push_back(h);  // sorted by map order
    } else {
        std::map<SourceVar, const MonthlyStack*> fields;
        for (const auto& [var, stack] : inputs.predictors) fields[var] = &stack;
        indices = compute_all_indices(inputs.registry, fields, config.ref_years, target_year);
        for (const auto& def : inputs.registry) handles.push_back(def.handle);
    }

    std::vector<int> feature_years = fold.training_years;
    if (target_year && std::find(feature_years.begin(), feature_years.end(), *target_year) ==
                           feature_years.end()) {
        feature_years.push_back(*target_year);
        std::sort(feature_years.begin(), feature_years.end());
    }
    const auto all_predictors =
        predictor_table(indices, handles, config.effective_predictor_months(), feature_years);

    // preselection sees the training rows only
    std::vector<PredictorSeries> train_predictors;
    for (const auto& p : all_predictors) {
        PredictorSeries tp;
        tp.name = p.name;
        for (int y : fold.training_years) {
            const auto it = std::find(feature_years.begin(), feature_years.end(), y);
            tp.values.push_back(p.values[size_t(it - feature_years.begin())]);
        }
        train_predictors.push_back(std::move(tp));
    }
    for (const auto& p : all_predictors) fold.predictor_names.push_back(p.name);
    fold.preselection =
        preselect(train_predictors, fold.basis.loadings, fold.basis.loading_variances);

    std::vector<PredictorSeries> retained;
    for (const auto& p : all_predictors)
        if (fold.preselection.is_retained(p.name)) retained.push_back(p);

    fold.features =
        build_features(retained, config.interactions, feature_years, fold.training_years);

    Eigen::MatrixXd A(fold.training_years.size(), config.k);
    for (size_t t = 0; t < fold.training_years.size(); ++t)
        for (int i = 0; i < config.k; ++i) A(Eigen::Index(t), i) = fold.basis.loadings[t][i];

    LambdaGridSpec grid;
    grid.en_fixed_ratio = config.en_ratio;
    fold.fit = fit_multitask(fold.features, A, config.mode, grid);
    return fold;
}

/// Builds the tercile forecast for the fold's target year.
inline TercileField forecast_fold(const FoldModel& fold) {
    if (!fold.target_year) throw config_error("forecast_fold: fold has no target year");
    const int row = fold.features.year_row(*fold.target_year);
    if (row < 0) throw config_error("forecast_fold: target year missing from features");
    LoadingForecast forecast;
    forecast.year = *fold.target_year;
    forecast.mean = predict_loadings(fold.fit, fold.features.raw.row(row).transpose());
    forecast.cov = fold.fit.sigma_a;
    return tercile_from_gaussian(forecast, fold.basis);
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct FoldRecord {
    int target_year = 0;
    bool ok = false;
    std::string error;
    std::vector<std::string> retained;
    HyperParams params;
    double df = 0;
    int active = 0;
    int sweeps = 0;
    long runtime_ms = 0;
};

struct RunManifest {
    ConfigFile config_echo;
    std::string command;
    std::vector<FoldRecord> folds;
    long total_ms = 0;

    void save(const std::string& path) const {
        auto out = csv::open_out(path);
        out << "# run manifest\n";
        out << "version=" << software_version << "\n";
        out << "command=" << command << "\n";
        out << "prng=splitmix64; bootstrap substream i seeded by first output at state "
               "seed^(i+1)*0x9E3779B97F4A7C15; draws next() mod n\n";
        out << "[config]\n";
        for (const auto& [k, v] : config_echo.entries) out << k << "=" << v << "\n";
        out << "[folds]\n";
        for (const auto& f : folds) {
            out << "fold_year=" << f.target_year << " ok=" << (f.ok ? 1 : 0);
            if (!f.ok) {
                out << " error=\"" << f.error << "\"\n";
                continue;
            }
            out << " lambda1=" << csv::format_double(f.params.lambda1)
                << " lambda2=" << csv::format_double(f.params.lambda2)
                << " df=" << csv::format_double(f.df) << " active=" << f.active
                << " sweeps=" << f.sweeps << " runtime_ms=" << f.runtime_ms << " retained=";
            for (size_t i = 0; i < f.retained.size(); ++i)
                out << (i ? "+" : "") << f.retained[i];
            out << "\n";
        }
        out << "total_ms=" << total_ms << "\n";
    }
};

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

struct LoyoResult {
    std::vector<TercileField> forecasts;  // successful folds, year order
    CategoryStack observed;
    Mask mask;
    ScoreReport scores;
    BootstrapSummary bootstrap;
    RunManifest manifest;
    std::vector<FoldModel> folds;  // successful fold models, year order
    bool partial = false;
};

/// Leave-one-year-out hindcast over the evaluation years: every statistic of
/// each fold is recomputed without the fold's year, the year is forecast
/// from its predictor values, and all forecasts are verified against the
/// observed categories (each year removed from its own climatology).
inline LoyoResult run_loyo(const ExperimentConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentInputs inputs = load_experiment_inputs(config);
    if (config.ref_years.size() < 12)
        throw config_error("run_loyo: need at least 12 reference years");

    LoyoResult result;
    result.observed = tercile_categories(inputs.totals, config.ref_years, true);
    result.mask = dry_mask(inputs.totals, config.ref_years, config.drop_fraction);

    const std::vector<int>& eval_years = config.eval_years;
    std::vector<std::optional<FoldModel>> fold_models(eval_years.size());
    std::vector<FoldRecord> records(eval_years.size());

    const int workers = std::max(1, config.workers);
    std::atomic<size_t> next_fold{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next_fold.fetch_add(1);
            if (i >= eval_years.size()) break;
            const int year = eval_years[i];
            records[i].target_year = year;
            const auto f0 = std::chrono::steady_clock::now();
            try {
                std::vector<int> train;
                for (int y : config.ref_years)
                    if (y != year) train.push_back(y);
                FoldModel fold = fit_fold(config, inputs, train, year);
                records[i].ok = true;
                records[i].retained = fold.preselection.retained;
                records[i].params = fold.fit.params;
                records[i].df = fold.fit.df;
                records[i].active = int(fold.fit.active.size());
                records[i].sweeps = fold.fit.diag.sweeps;
                fold_models[i] = std::move(fold);
            } catch (const std::exception& e) {
                records[i].ok = false;
                records[i].error = e.what();
            }
            records[i].runtime_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::steady_clock::now() - f0)
                                        .count();
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (size_t i = 0; i < eval_years.size(); ++i) {
        if (!fold_models[i]) {
            result.partial = true;
            continue;
        }
        result.forecasts.push_back(forecast_fold(*fold_models[i]));
        result.folds.push_back(std::move(*fold_models[i]));
    }
    if (result.forecasts.empty()) throw error("run_loyo: every fold failed");

    result.scores = aggregate_scores(result.forecasts, result.observed, result.mask, "dry_mask");
    std::vector<double> year_means;
    for (double m : result.scores.year_mean_model)
        if (!is_missing(m)) year_means.push_back(m);
    result.bootstrap = bootstrap_scores(year_means, config.n_resamples, config.seed);

    result.manifest.config_echo = config.raw;
    result.manifest.command = "loyo";
    result.manifest.folds = records;
    result.manifest.total_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count();
    return result;
}

struct FullFitResult {
    FoldModel fold;
    RunManifest manifest;
};

/// One fit on all reference years; the coefficient table and preselection
/// report feed model diagnostics and interpretation.
inline FullFitResult run_full_fit(const ExperimentConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentInputs inputs = load_experiment_inputs(config);
    FullFitResult result;
    result.fold = fit_fold(config, inputs, config.ref_years, std::nullopt);
    FoldRecord rec;
    rec.target_year = 0;
    rec.ok = true;
    rec.retained = result.fold.preselection.retained;
    rec.params = result.fold.fit.params;
    rec.df = result.fold.fit.df;
    rec.active = int(result.fold.fit.active.size());
    rec.sweeps = result.fold.fit.diag.sweeps;
    result.manifest.config_echo = config.raw;
    result.manifest.command = "fullfit";
    result.manifest.folds = {rec};
    result.manifest.total_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count();
    return result;
}

// ---------------------------------------------------------------------------
// Output writing
// ---------------------------------------------------------------------------

inline void ensure_writable(const std::string& path, bool force) {
    if (!force && std::filesystem::exists(path))
        throw error("refusing to overwrite " + path + " (use --force)");
}

inline void write_loyo_outputs(const LoyoResult& result, const std::string& dir, bool force) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const char* name :
         {"forecasts.csv", "observed_categories.csv", "mask.csv", "scores_cells.csv",
          "scores_yearly.csv", "bootstrap.csv", "bootstrap_summary.txt", "manifest.txt"})
        ensure_writable(dir + "/" + name, force);
    save_tercile_fields(result.forecasts, dir + "/forecasts.csv");
    save_categories(result.observed, dir + "/observed_categories.csv");
    save_mask(result.mask, dir + "/mask.csv");
    save_score_map(result.scores, result.mask.spec, dir + "/scores_cells.csv");
    save_yearly_scores(result.scores, dir + "/scores_yearly.csv");
    save_bootstrap(result.bootstrap, dir + "/bootstrap.csv", dir + "/bootstrap_summary.txt");
    result.manifest.save(dir + "/manifest.txt");
}

inline void write_fullfit_outputs(const FullFitResult& result, const std::string& dir,
                                  bool force) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const char* name : {"coefficients.csv", "preselection.csv", "selection.csv",
                             "fit_metadata.txt", "manifest.txt"})
        ensure_writable(dir + "/" + name, force);
    save_fit_report(result.fold.fit, dir + "/coefficients.csv");
    save_preselection_report(result.fold.preselection, dir + "/preselection.csv");
    save_selection_report(result.fold.fit.cv_table, dir + "/selection.csv");
    save_fit_metadata(result.fold.fit, dir + "/fit_metadata.txt");
    save_eof_basis(result.fold.basis, dir + "/basis");
    result.manifest.save(dir + "/manifest.txt");
}

}  // namespace tercast
