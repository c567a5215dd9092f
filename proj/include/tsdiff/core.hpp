#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsdiff/matrix.hpp"

namespace tsdiff {

// Error taxonomy, mapped to CLI exit codes 2/3/4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-band marker for unobserved entries. After zero pre-imputation the
// stored value becomes 0.0 while obs_mask stays 0.
inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool is_missing(double v) { return std::isnan(v); }

// One disk's K x L observation window.
struct Window {
    std::string disk_id;
    Matrix values;          // missing entries carry the sentinel until pre-imputation
    Mask obs_mask;          // 1 = observed
    int label = 0;          // 1 = disk fails within the prediction horizon
    std::int64_t start_time = 0;  // epoch hours

    int features() const { return values.rows; }
    int length() const { return values.cols; }
};

// Disjoint split of a window's observed entries: conditioning set vs
// imputation targets. Targets are always truly observed, so ground truth
// exists for them.
struct MaskPair {
    Mask cond_mask;
    Mask target_mask;
};

enum class ScheduleKind { linear, quadratic };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "quadratic"; }

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "quadratic") return ScheduleKind::quadratic;
    throw ConfigError("unknown schedule_kind: " + s);
}

struct DiffusionConfig {
    int T = 50;                  // diffusion steps
    double beta_min = 1e-4;
    double beta_max = 0.5;
    ScheduleKind schedule_kind = ScheduleKind::quadratic;
    int hidden_width = 32;       // H, per-position hidden width
    int residual_blocks = 2;     // B
    int step_embed_dim = 64;     // D, even
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 30;
    int n_replicates = 100;
    int fast_steps = 10;         // M
    double mask_ratio = 0.10;
    std::uint64_t seed = 0;

    void validate() const {
        if (T < 2) throw ConfigError("T must be >= 2");
        if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0))
            throw ConfigError("require 0 < beta_min < beta_max < 1");
        if (fast_steps < 1 || fast_steps > T) throw ConfigError("require 1 <= fast_steps <= T");
        if (!(0.0 < mask_ratio && mask_ratio < 1.0)) throw ConfigError("require 0 < mask_ratio < 1");
        if (n_replicates < 1) throw ConfigError("require n_replicates >= 1");
        if (hidden_width < 1) throw ConfigError("require hidden_width >= 1");
        if (residual_blocks < 0) throw ConfigError("require residual_blocks >= 0");
        if (step_embed_dim < 2 || step_embed_dim % 2 != 0) throw ConfigError("step_embed_dim must be a positive even number");
        if (batch_size < 1) throw ConfigError("require batch_size >= 1");
        if (epochs < 0) throw ConfigError("require epochs >= 0");
        if (!(learning_rate > 0.0)) throw ConfigError("require learning_rate > 0");
    }
};

inline void to_json(nlohmann::ordered_json& j, const DiffusionConfig& c) {
    j = nlohmann::ordered_json{{"T", c.T},
                               {"beta_min", c.beta_min},
                               {"beta_max", c.beta_max},
                               {"schedule_kind", to_string(c.schedule_kind)},
                               {"hidden_width", c.hidden_width},
                               {"residual_blocks", c.residual_blocks},
                               {"step_embed_dim", c.step_embed_dim},
                               {"learning_rate", c.learning_rate},
                               {"batch_size", c.batch_size},
                               {"epochs", c.epochs},
                               {"n_replicates", c.n_replicates},
                               {"fast_steps", c.fast_steps},
                               {"mask_ratio", c.mask_ratio},
                               {"seed", c.seed}};
}

inline void from_json(const nlohmann::ordered_json& j, DiffusionConfig& c) {
    j.at("T").get_to(c.T);
    j.at("beta_min").get_to(c.beta_min);
    j.at("beta_max").get_to(c.beta_max);
    c.schedule_kind = schedule_kind_from_string(j.at("schedule_kind").get<std::string>());
    j.at("hidden_width").get_to(c.hidden_width);
    j.at("residual_blocks").get_to(c.residual_blocks);
    j.at("step_embed_dim").get_to(c.step_embed_dim);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("batch_size").get_to(c.batch_size);
    j.at("epochs").get_to(c.epochs);
    j.at("n_replicates").get_to(c.n_replicates);
    j.at("fast_steps").get_to(c.fast_steps);
    j.at("mask_ratio").get_to(c.mask_ratio);
    j.at("seed").get_to(c.seed);
}

// Flat key = value configuration file; '#' starts a comment. Keys mirror
// DiffusionConfig field names. CLI flags override file values.
inline void apply_config_entry(DiffusionConfig& cfg, const std::string& key, const std::string& value) {
    auto as_int = [&](const char* name) {
        try {
            return std::stoi(value);
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad integer for ") + name + ": " + value);
        }
    };
    auto as_real = [&](const char* name) {
        try {
            return std::stod(value);
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad number for ") + name + ": " + value);
        }
    };
    if (key == "T")
        cfg.T = as_int("T");
    else if (key == "beta_min")
        cfg.beta_min = as_real("beta_min");
    else if (key == "beta_max")
        cfg.beta_max = as_real("beta_max");
    else if (key == "schedule_kind")
        cfg.schedule_kind = schedule_kind_from_string(value);
    else if (key == "hidden_width")
        cfg.hidden_width = as_int("hidden_width");
    else if (key == "residual_blocks")
        cfg.residual_blocks = as_int("residual_blocks");
    else if (key == "step_embed_dim")
        cfg.step_embed_dim = as_int("step_embed_dim");
    else if (key == "learning_rate")
        cfg.learning_rate = as_real("learning_rate");
    else if (key == "batch_size")
        cfg.batch_size = as_int("batch_size");
    else if (key == "epochs")
        cfg.epochs = as_int("epochs");
    else if (key == "n_replicates")
        cfg.n_replicates = as_int("n_replicates");
    else if (key == "fast_steps")
        cfg.fast_steps = as_int("fast_steps");
    else if (key == "mask_ratio")
        cfg.mask_ratio = as_real("mask_ratio");
    else if (key == "seed")
        cfg.seed = std::stoull(value);
    else
        throw ConfigError("unknown config key: " + key);
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline DiffusionConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    DiffusionConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Report-only window check: shape consistency and finiteness of observed
// entries. Missing-entry contents are not judged here (they are the
// sentinel before pre-imputation and 0.0 after).
inline ValidationReport validate_window(const Window& w) {
    ValidationReport rep;
    if (w.values.rows != w.obs_mask.rows || w.values.cols != w.obs_mask.cols) {
        rep.violations.push_back("shape mismatch: values " + std::to_string(w.values.rows) + "x" +
                                 std::to_string(w.values.cols) + " vs obs_mask " + std::to_string(w.obs_mask.rows) +
                                 "x" + std::to_string(w.obs_mask.cols));
        return rep;
    }
    if (w.values.rows < 1 || w.values.cols < 1)
        rep.violations.push_back("empty window: K and L must both be >= 1");
    for (int k = 0; k < w.values.rows; ++k)
        for (int l = 0; l < w.values.cols; ++l)
            if (w.obs_mask(k, l) && !std::isfinite(w.values(k, l))) {
                rep.violations.push_back("non-finite observed entry at (" + std::to_string(k) + "," +
                                         std::to_string(l) + ")");
                return rep;
            }
    return rep;
}

// cond and target disjoint, and each contained in obs.
inline bool mask_pair_valid(const MaskPair& mp, const Mask& obs) {
    if (!mp.cond_mask.same_shape(obs) || !mp.target_mask.same_shape(obs)) return false;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const int c = mp.cond_mask.data[i] ? 1 : 0;
        const int t = mp.target_mask.data[i] ? 1 : 0;
        if (c && t) return false;
        if (c + t > (obs.data[i] ? 1 : 0)) return false;
    }
    return true;
}

}  // namespace tsdiff
