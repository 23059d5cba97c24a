// tercast command-line interface: every pipeline stage is independently
// runnable for debugging and partial reuse, plus the two experiment drivers.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "tercast/config.hpp"
#include "tercast/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tercast;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string season;
    std::string mode;
    std::string interactions;
    int resolution_factor = 0;
    long seed = -1;
    int workers = 0;
    std::string out;
    bool force = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file");
        cmd->add_option("--season", season, "mam|jjas|ond|jf");
        cmd->add_option("--mode", mode, "lasso|en_fixed|en_opt");
        cmd->add_option("--interactions", interactions, "on|off");
        cmd->add_option("--resolution-factor", resolution_factor, "spatial aggregation factor");
        cmd->add_option("--seed", seed, "PRNG seed");
        cmd->add_option("--workers", workers, "parallel fold workers");
        cmd->add_option("--out", out, "output directory");
        cmd->add_flag("--force", force, "overwrite existing outputs");
    }

    ExperimentConfig load() const {
        if (config_path.empty()) throw config_error("--config is required");
        ConfigFile cfg = ConfigFile::load(config_path);
        if (!season.empty()) cfg.set("season", season);
        if (!mode.empty()) cfg.set("mode", mode);
        if (!interactions.empty()) cfg.set("interactions", interactions);
        if (resolution_factor > 0)
            cfg.set("resolution_factor", std::to_string(resolution_factor));
        if (seed >= 0) cfg.set("seed", std::to_string(seed));
        if (workers > 0) cfg.set("workers", std::to_string(workers));
        if (!out.empty()) cfg.set("out", out);
        if (force) cfg.set("force", "1");
        ExperimentConfig ec = ExperimentConfig::from_file(cfg);
        if (ec.out_dir.empty()) throw config_error("output directory required (--out)");
        return ec;
    }
};

int cmd_ingest(const CommonFlags& flags) {
    ExperimentConfig config = flags.load();
    ExperimentInputs inputs = load_experiment_inputs(config);
    fs::create_directories(config.out_dir);
    ensure_writable(config.out_dir + "/seasonal_totals.csv", config.force);
    save_grid_stack(inputs.totals, config.out_dir + "/seasonal_totals.csv");
    const GridStack anomalies = compute_anomalies(inputs.totals, config.ref_years);
    ensure_writable(config.out_dir + "/anomalies.csv", config.force);
    save_grid_stack(anomalies, config.out_dir + "/anomalies.csv");
    save_grid_spec(inputs.totals.spec, config.out_dir + "/grid.txt");
    std::cout << "ingested " << inputs.totals.years.size() << " years, "
              << inputs.totals.spec.n_valid() << " valid cells\n";
    return 0;
}

int cmd_transform(const CommonFlags& flags) {
    ExperimentConfig config = flags.load();
    ExperimentInputs inputs = load_experiment_inputs(config);
    const GridStack anomalies = compute_anomalies(inputs.totals, config.ref_years);
    const TransformModel model = fit_transform_model(anomalies, config.ref_years);
    const GridStack z = transform(model, anomalies);
    fs::create_directories(config.out_dir);
    ensure_writable(config.out_dir + "/transformed.csv", config.force);
    save_grid_stack(z, config.out_dir + "/transformed.csv");
    save_transform_sidecar(model, config.out_dir + "/transformed.meta");
    std::cout << "transformed " << z.years.size() << " years\n";
    return 0;
}

int cmd_eof(const CommonFlags& flags) {
    ExperimentConfig config = flags.load();
    ExperimentInputs inputs = load_experiment_inputs(config);
    const GridStack anomalies = compute_anomalies(inputs.totals, config.ref_years);
    const TransformModel model = fit_transform_model(anomalies, config.ref_years);
    const GridStack z = transform(model, anomalies);
    const EofBasis basis = compute_eofs(z, config.ref_years, config.k);
    fs::create_directories(config.out_dir);
    ensure_writable(config.out_dir + "/basis_patterns.csv", config.force);
    save_eof_basis(basis, config.out_dir + "/basis");
    double explained = 0, total = 0;
    for (int c = 0; c < basis.spec.n_cells(); ++c) {
        if (!basis.included[c]) continue;
        total += basis.sigma_sq[c];
        explained += basis.sigma_sq[c] - basis.resid_sq[c];
    }
    std::cout << "eof: k=" << config.k << " explained variance fraction "
              << csv::format_double(explained / total) << "\n";
    return 0;
}

int cmd_indices(const CommonFlags& flags) {
    ExperimentConfig config = flags.load();
    ExperimentInputs inputs = load_experiment_inputs(config);
    std::map<SourceVar, const MonthlyStack*> fields;
    for (const auto& [var, stack] : inputs.predictors) fields[var] = &stack;
    const auto indices = compute_all_indices(inputs.registry, fields, config.ref_years);
    fs::create_directories(config.out_dir);
    ensure_writable(config.out_dir + "/indices.csv", config.force);
    save_index_series(indices, config.out_dir + "/indices.csv");
    std::cout << "computed " << indices.size() << " index series\n";
    return 0;
}

int cmd_preselect(const CommonFlags& flags) {
    ExperimentConfig config = flags.load();
    ExperimentInputs inputs = load_experiment_inputs(config);
    const FoldModel fold = fit_fold(config, inputs, config.ref_years, std::nullopt);
    fs::create_directories(config.out_dir);
    ensure_writable(config.out_dir + "/preselection.csv", config.force);
    save_preselection_report(fold.preselection, config.out_dir + "/preselection.csv");
    std::cout << "retained " << fold.preselection.retained.size() << " of "
              << fold.predictor_names.size() << " predictors\n";
    return 0;
}

int cmd_fit(const CommonFlags& flags, bool full_outputs) {
    ExperimentConfig config = flags.load();
    FullFitResult result = run_full_fit(config);
    if (full_outputs) {
        write_fullfit_outputs(result, config.out_dir, config.force);
    } else {
        fs::create_directories(config.out_dir);
        for (const char* name : {"coefficients.csv", "selection.csv", "fit_metadata.txt"})
            ensure_writable(config.out_dir + "/" + name, config.force);
        save_fit_report(result.fold.fit, config.out_dir + "/coefficients.csv");
        save_selection_report(result.fold.fit.cv_table, config.out_dir + "/selection.csv");
        save_fit_metadata(result.fold.fit, config.out_dir + "/fit_metadata.txt");
    }
    std::cout << "fit: lambda1=" << csv::format_double(result.fold.fit.params.lambda1)
              << " lambda2=" << csv::format_double(result.fold.fit.params.lambda2)
              << " df=" << csv::format_double(result.fold.fit.df) << " active rows "
              << result.fold.fit.active.size() << "\n";
    return 0;
}

int cmd_predict(const CommonFlags& flags, int target_year) {
    ExperimentConfig config = flags.load();
    ExperimentInputs inputs = load_experiment_inputs(config);
    std::vector<int> train;
    for (int y : config.ref_years)
        if (y != target_year) train.push_back(y);
    const FoldModel fold = fit_fold(config, inputs, train, target_year);
    const TercileField field = forecast_fold(fold);
    fs::create_directories(config.out_dir);
    const std::string path =
        config.out_dir + "/forecast_" + std::to_string(target_year) + ".csv";
    ensure_writable(path, config.force);
    save_tercile_fields({field}, path);
    const Mask mask = dry_mask(inputs.totals, config.ref_years, config.drop_fraction);
    std::cout << "forecast " << target_year << ": expected tercile "
              << csv::format_double(expected_tercile(field, mask)) << "\n";
    return 0;
}

int cmd_ensemble_terciles(const CommonFlags& flags, const std::string& member_dir) {
    ExperimentConfig config = flags.load();
    const GridSpec grid = load_grid_spec(config.target_grid_path);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(member_dir))
        if (entry.path().extension() == ".csv") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw config_error("no member CSVs in " + member_dir);
    std::vector<GridStack> members;
    for (const auto& f : files) members.push_back(load_grid_stack(f, grid));

    std::vector<TercileField> fields;
    for (int year : config.eval_years)
        fields.push_back(tercile_from_ensemble(members, config.ref_years, year, true));
    fs::create_directories(config.out_dir);
    ensure_writable(config.out_dir + "/ensemble_terciles.csv", config.force);
    save_tercile_fields(fields, config.out_dir + "/ensemble_terciles.csv");
    std::cout << "ensemble terciles for " << fields.size() << " years from " << members.size()
              << " members\n";
    return 0;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& forecasts_path) {
    ExperimentConfig config = flags.load();
    ExperimentInputs inputs = load_experiment_inputs(config);
    const GridSpec spec = inputs.totals.spec;
    const std::vector<TercileField> forecasts = load_tercile_fields(forecasts_path, spec);
    const CategoryStack observed = tercile_categories(inputs.totals, config.ref_years, true);
    const Mask mask = dry_mask(inputs.totals, config.ref_years, config.drop_fraction);
    const ScoreReport scores = aggregate_scores(forecasts, observed, mask, "dry_mask");
    std::vector<double> year_means;
    for (double m : scores.year_mean_model)
        if (!is_missing(m)) year_means.push_back(m);
    const BootstrapSummary boot = bootstrap_scores(year_means, config.n_resamples, config.seed);
    fs::create_directories(config.out_dir);
    for (const char* name :
         {"scores_cells.csv", "scores_yearly.csv", "bootstrap.csv", "bootstrap_summary.txt"})
        ensure_writable(config.out_dir + "/" + name, config.force);
    save_score_map(scores, spec, config.out_dir + "/scores_cells.csv");
    save_yearly_scores(scores, config.out_dir + "/scores_yearly.csv");
    save_bootstrap(boot, config.out_dir + "/bootstrap.csv",
                   config.out_dir + "/bootstrap_summary.txt");
    std::cout << "aggregate MBSS " << csv::format_double(scores.aggregate_mbss) << " [5%,95%] = ["
              << csv::format_double(boot.mbss_percentiles.at(5)) << ","
              << csv::format_double(boot.mbss_percentiles.at(95)) << "]\n";
    return 0;
}

int cmd_loyo(const CommonFlags& flags) {
    ExperimentConfig config = flags.load();
    LoyoResult result = run_loyo(config);
    write_loyo_outputs(result, config.out_dir, config.force);
    std::cout << "loyo: aggregate MBSS " << csv::format_double(result.scores.aggregate_mbss)
              << " [5%,95%] = [" << csv::format_double(result.bootstrap.mbss_percentiles.at(5))
              << "," << csv::format_double(result.bootstrap.mbss_percentiles.at(95)) << "]"
              << (result.partial ? " (partial)" : "") << "\n";
    return result.partial ? 2 : 0;
}

int cmd_synth(const CommonFlags& flags, int n_lat, int n_lon, double snr, int k_true) {
    if (flags.out.empty()) throw config_error("synth: --out is required");
    SyntheticSpec spec;
    spec.n_lat = n_lat;
    spec.n_lon = n_lon;
    spec.snr = snr;
    spec.k_true = k_true;
    const uint64_t seed = flags.seed >= 0 ? uint64_t(flags.seed) : 0;
    SyntheticData data = generate_synthetic(spec, seed);
    save_synthetic(data, flags.out);
    // a ready-to-run experiment config next to the data
    std::ofstream cfg(flags.out + "/experiment.cfg");
    cfg << "[domain]\ntarget_grid = target_grid.txt\n[data]\nprecip = precip_monthly.csv\n"
        << "sst = sst_monthly.csv\nsst_grid = predictor_grid.txt\n[experiment]\n"
        << "season = ond\nissuance_month = 8\nref_years = 1993-2020\nk = " << k_true
        << "\nmode = lasso\nregistry = registry.txt\nseed = " << seed
        << "\nn_resamples = 1000\n[run]\nout = run\n";
    std::cout << "synthetic dataset written to " << flags.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"statistical seasonal tercile precipitation forecasting"};
    app.require_subcommand(1);

    CommonFlags flags;
    int predict_year = 0;
    std::string member_dir, forecasts_path;
    int synth_nlat = 20, synth_nlon = 20, synth_k = 3;
    double synth_snr = 3.0;

    auto* ingest = app.add_subcommand("ingest", "read inputs, write seasonal totals/anomalies");
    auto* transform = app.add_subcommand("transform", "fit and apply the quantile transform");
    auto* eof = app.add_subcommand("eof", "decompose transformed fields");
    auto* indices = app.add_subcommand("indices", "compute climate index series");
    auto* preselect = app.add_subcommand("preselect", "screen predictors against loadings");
    auto* fit = app.add_subcommand("fit", "cross-validate and fit on all reference years");
    auto* predict = app.add_subcommand("predict", "leave-one-year-out forecast for one year");
    predict->add_option("--year", predict_year, "target year")->required();
    auto* ensemble = app.add_subcommand("ensemble-terciles",
                                        "tercile probabilities from ensemble member stacks");
    ensemble->add_option("--members", member_dir, "directory of member seasonal-total CSVs")
        ->required();
    auto* evaluate = app.add_subcommand("evaluate", "score tercile forecasts against observations");
    evaluate->add_option("--forecasts", forecasts_path, "tercile forecast CSV")->required();
    auto* loyo = app.add_subcommand("loyo", "full leave-one-year-out experiment");
    auto* fullfit = app.add_subcommand("fullfit", "diagnostic fit on the full reference period");
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--n-lat", synth_nlat, "grid rows");
    synth->add_option("--n-lon", synth_nlon, "grid columns");
    synth->add_option("--snr", synth_snr, "signal-to-noise variance ratio");
    synth->add_option("--k-true", synth_k, "number of planted patterns");

    for (auto* cmd : {ingest, transform, eof, indices, preselect, fit, predict, ensemble,
                      evaluate, loyo, fullfit, synth})
        flags.attach(cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed()) return cmd_ingest(flags);
        if (transform->parsed()) return cmd_transform(flags);
        if (eof->parsed()) return cmd_eof(flags);
        if (indices->parsed()) return cmd_indices(flags);
        if (preselect->parsed()) return cmd_preselect(flags);
        if (fit->parsed()) return cmd_fit(flags, false);
        if (predict->parsed()) return cmd_predict(flags, predict_year);
        if (ensemble->parsed()) return cmd_ensemble_terciles(flags, member_dir);
        if (evaluate->parsed()) return cmd_evaluate(flags, forecasts_path);
        if (loyo->parsed()) return cmd_loyo(flags);
        if (fullfit->parsed()) return cmd_fit(flags, true);
        if (synth->parsed()) return cmd_synth(flags, synth_nlat, synth_nlon, synth_snr, synth_k);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
