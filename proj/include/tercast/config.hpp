#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tercast/csv.hpp"
#include "tercast/error.hpp"
#include "tercast/grid.hpp"
#include "tercast/indices.hpp"
#include "tercast/mtnet.hpp"

namespace tercast {

/// Flat key = value file with cosmetic [section] headers and # comments.
/// Keys are unique across sections; the original order is kept for the
/// manifest echo.
struct ConfigFile {
    std::vector<std::pair<std::string, std::string>> entries;
    std::map<std::string, std::string> values;
    std::string base_dir;  // for resolving relative paths

    static ConfigFile parse_text(const std::string& text, const std::string& where = "config",
                                 const std::string& base_dir = ".") {
        ConfigFile cfg;
        cfg.base_dir = base_dir;
        std::istringstream in(text);
        std::string line;
        long line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string t = csv::trim(line);
            const auto hash = t.find('#');
            if (hash != std::string::npos) t = csv::trim(t.substr(0, hash));
            if (t.empty() || t.front() == '[') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw parse_error(where, line_no, "expected key = value");
            const std::string key = csv::trim(t.substr(0, eq));
            const std::string value = csv::trim(t.substr(eq + 1));
            if (cfg.values.count(key))
                throw parse_error(where, line_no, "duplicate key '" + key + "'");
            cfg.entries.emplace_back(key, value);
            cfg.values[key] = value;
        }
        return cfg;
    }

    static ConfigFile load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str(), path,
                          std::filesystem::path(path).parent_path().string());
    }

    bool has(const std::string& key) const {
        const auto it = values.find(key);
        return it != values.end() && !it->second.empty();
    }

    std::string get(const std::string& key, const std::string& fallback = "") const {
        const auto it = values.find(key);
        return it == values.end() || it->second.empty() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        if (!has(key)) throw config_error("config: missing required key '" + key + "'");
        return values.at(key);
    }

    std::string path(const std::string& key) const {
        const std::string p = require(key);
        if (std::filesystem::path(p).is_absolute() || base_dir.empty()) return p;
        return (std::filesystem::path(base_dir) / p).string();
    }

    void set(const std::string& key, const std::string& value) {
        if (!values.count(key)) entries.emplace_back(key, value);
        else
            for (auto& [k, v] : entries)
                if (k == key) v = value;
        values[key] = value;
    }
};

/// Year lists: comma-separated entries, each a year or an inclusive range
/// like 1993-2020.
inline std::vector<int> parse_year_list(const std::string& text) {
    std::vector<int> years;
    for (const auto& part : csv::split(text, ',')) {
        const std::string t = csv::trim(part);
        if (t.empty()) continue;
        const auto dash = t.find('-', 1);  // allow negative... years are positive anyway
        if (dash == std::string::npos) {
            years.push_back(int(csv::parse_int(t, "years", 0)));
        } else {
            const int a = int(csv::parse_int(t.substr(0, dash), "years", 0));
            const int b = int(csv::parse_int(t.substr(dash + 1), "years", 0));
            if (b < a) throw config_error("year range out of order: " + t);
            for (int y = a; y <= b; ++y) years.push_back(y);
        }
    }
    std::sort(years.begin(), years.end());
    years.erase(std::unique(years.begin(), years.end()), years.end());
    return years;
}

inline std::string format_year_list(const std::vector<int>& years) {
    std::string out;
    for (size_t i = 0; i < years.size(); ++i) out += (i ? "," : "") + std::to_string(years[i]);
    return out;
}

struct ExperimentConfig {
    std::string season = "ond";
    int issuance_month = 8;
    std::vector<int> predictor_months;  // defaults to {issuance_month - 1}
    std::vector<int> ref_years;
    std::vector<int> eval_years;
    int k = 7;
    RegMode mode = RegMode::lasso;
    double en_ratio = 1.0;
    bool interactions = false;
    int resolution_factor = 1;
    double drop_fraction = 0.25;
    double min_coverage = 0.5;
    uint64_t seed = 0;
    int n_resamples = 1000;
    int workers = 1;
    bool force = false;
    std::string out_dir;

    std::string target_grid_path;
    std::string valid_mask_path;  // optional
    std::string precip_path;
    std::string registry_path;    // optional; falls back to the built-in roster
    std::string indices_path;     // optional: ready-made index series instead of fields
    std::map<SourceVar, std::string> predictor_paths;
    std::map<SourceVar, std::string> predictor_grid_paths;

    ConfigFile raw;  // echoed into the manifest

    std::vector<int> season_month_list() const {
        const auto& table = season_months();
        const auto it = table.find(season);
        if (it == table.end()) throw config_error("unknown season '" + season + "'");
        return it->second;
    }

    std::vector<int> effective_predictor_months() const {
        if (!predictor_months.empty()) return predictor_months;
        const int m = issuance_month == 1 ? 12 : issuance_month - 1;
        return {m};
    }

    static ExperimentConfig from_file(const ConfigFile& cfg) {
        ExperimentConfig ec;
        ec.raw = cfg;
        ec.season = cfg.get("season", "ond");
        ec.issuance_month = int(csv::parse_int(cfg.get("issuance_month", "8"), "config", 0));
        if (cfg.has("predictor_months"))
            for (const auto& m : csv::split(cfg.get("predictor_months"), ','))
                ec.predictor_months.push_back(int(csv::parse_int(csv::trim(m), "config", 0)));
        ec.ref_years = parse_year_list(cfg.require("ref_years"));
        ec.eval_years =
            cfg.has("eval_years") ? parse_year_list(cfg.get("eval_years")) : ec.ref_years;
        ec.k = int(csv::parse_int(cfg.get("k", "7"), "config", 0));
        ec.mode = parse_reg_mode(cfg.get("mode", "lasso"));
        ec.en_ratio = csv::parse_double(cfg.get("en_ratio", "1.0"), "config", 0);
        const std::string inter = cfg.get("interactions", "off");
        if (inter != "on" && inter != "off")
            throw config_error("config: interactions must be on or off");
        ec.interactions = inter == "on";
        ec.resolution_factor =
            int(csv::parse_int(cfg.get("resolution_factor", "1"), "config", 0));
        ec.drop_fraction = csv::parse_double(cfg.get("drop_fraction", "0.25"), "config", 0);
        ec.min_coverage = csv::parse_double(cfg.get("min_coverage", "0.5"), "config", 0);
        ec.seed = uint64_t(csv::parse_int(cfg.get("seed", "0"), "config", 0));
        ec.n_resamples = int(csv::parse_int(cfg.get("n_resamples", "1000"), "config", 0));
        ec.workers = int(csv::parse_int(cfg.get("workers", "1"), "config", 0));
        ec.force = cfg.get("force", "0") == "1";
        ec.out_dir = cfg.get("out", "");

        ec.target_grid_path = cfg.path("target_grid");
        if (cfg.has("valid_mask")) ec.valid_mask_path = cfg.path("valid_mask");
        ec.precip_path = cfg.path("precip");
        if (cfg.has("registry")) ec.registry_path = cfg.path("registry");
        if (cfg.has("indices")) ec.indices_path = cfg.path("indices");
        for (const auto var : {SourceVar::sst, SourceVar::u850, SourceVar::u200}) {
            const std::string key = to_string(var);
            if (!cfg.has(key)) continue;
            ec.predictor_paths[var] = cfg.path(key);
            ec.predictor_grid_paths[var] = cfg.path(key + "_grid");
        }
        if (ec.predictor_paths.empty() && ec.indices_path.empty())
            throw config_error(
                "config: either an index series file or a predictor stack (sst/u850/u200) "
                "is required");

        const int season_start = ec.season_month_list().front();
        if (ec.issuance_month > season_start)
            throw config_error("config: issuance month must precede the season start");
        for (int pm : ec.effective_predictor_months())
            if (pm >= season_start)
                throw config_error("config: predictor months must precede the season start");
        return ec;
    }
};

}  // namespace tercast
