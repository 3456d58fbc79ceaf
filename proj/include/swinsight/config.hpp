#pragma once

// Experiment configuration: a sectioned key=value text file.
//
//   [model]     preset, then any model key as an override
//   [train]     learning_rate batch_size epochs seed precision adam_beta1 adam_beta2 adam_eps
//   [data]      split_ratios per_class train_on
//   [datasets]  <id> = <manifest path>
//   [output]    dir
//
// '#' or ';' at line start, or '#' after whitespace, starts a comment.
// Unknown sections and keys are rejected. Relative paths are used as given,
// i.e. relative to the working directory.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "checkpoint.hpp"
#include "datapipe.hpp"
#include "errors.hpp"
#include "swin.hpp"
#include "training.hpp"

namespace swinsight {

struct ExperimentConfig {
    std::string preset = "swin-micro";
    ModelConfig model = model_preset("swin-micro");
    TrainConfig train;
    Precision precision = Precision::F32;
    SplitRatios split_ratios = kDefaultSplitRatios;
    std::size_t per_class = 0;            // 0: largest exactly balanced subset
    std::vector<std::string> train_on;    // empty: every configured dataset
    std::vector<std::pair<std::string, std::filesystem::path>> datasets;
    std::filesystem::path output_dir = "run";
    std::string source_text;              // verbatim file contents

    std::vector<std::string> dataset_ids() const {
        std::vector<std::string> ids;
        for (const auto& [id, path] : datasets) ids.push_back(id);
        return ids;
    }

    const std::filesystem::path& manifest_of(const std::string& id) const {
        for (const auto& [d, path] : datasets) {
            if (d == id) return path;
        }
        throw ConfigError("dataset '" + id + "' is not configured");
    }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    if (!v.empty() && v.find_first_not_of("0123456789") == std::string::npos) {
        try {
            return std::stoull(v);
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
}

inline bool valid_dataset_id(const std::string& id) {
    if (id.empty()) return false;
    for (char c : id) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    }
    return true;
}

}  // namespace detail

/// Train-set name: a dataset id, or ids joined with '+' for a union.
inline std::string train_set_name(const std::vector<std::string>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "+" : "") + ids[i];
    return s;
}

inline ExperimentConfig parse_experiment_config(const std::string& text, const std::string& origin = "config") {
    ExperimentConfig cfg;
    cfg.source_text = text;
    std::vector<std::pair<std::string, std::string>> model_keys;
    std::set<std::string> seen;
    std::string section;
    std::istringstream is(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        // A '#' after whitespace starts a trailing comment.
        std::string body = raw;
        for (std::size_t k = 1; k < body.size(); ++k) {
            if (body[k] == '#' && (body[k - 1] == ' ' || body[k - 1] == '\t')) {
                body.resize(k);
                break;
            }
        }
        const std::string line = detail::trim(body);
        const std::string where = origin + ":" + std::to_string(line_no) + ": ";
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            static const std::set<std::string> sections = {"model", "train", "data", "datasets", "output"};
            if (!sections.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError(where + "key '" + key + "' outside any section");
        if (key.empty()) throw ConfigError(where + "empty key");
        if (!seen.insert(section + "." + key).second) throw ConfigError(where + "duplicate key '" + key + "' in [" + section + "]");
        try {
            if (section == "model") {
                if (key == "preset") cfg.preset = value;
                else model_keys.emplace_back(key, value);
            } else if (section == "train") {
                if (key == "learning_rate") cfg.train.learning_rate = detail::parse_double(key, value);
                else if (key == "batch_size") cfg.train.batch_size = detail::parse_uint(key, value);
                else if (key == "epochs") cfg.train.epochs = detail::parse_uint(key, value);
                else if (key == "seed") cfg.train.seed = detail::parse_uint(key, value);
                else if (key == "adam_beta1") cfg.train.adam_beta1 = detail::parse_double(key, value);
                else if (key == "adam_beta2") cfg.train.adam_beta2 = detail::parse_double(key, value);
                else if (key == "adam_eps") cfg.train.adam_eps = detail::parse_double(key, value);
                else if (key == "precision") {
                    if (value == "f32") cfg.precision = Precision::F32;
                    else if (value == "f64") cfg.precision = Precision::F64;
                    else throw ConfigError("precision must be f32 or f64, got '" + value + "'");
                } else throw ConfigError("unknown key '" + key + "' in [train]");
            } else if (section == "data") {
                if (key == "split_ratios") {
                    // Any positive weights, normalized: "0.7,0.15,0.15" or "4,1,1".
                    const auto parts = detail::split_csv_line(value);
                    if (parts.size() != 3) throw ConfigError("split_ratios needs three comma-separated values");
                    double sum = 0;
                    for (int i = 0; i < 3; ++i) {
                        cfg.split_ratios[i] = detail::parse_double(key, parts[i]);
                        if (!(cfg.split_ratios[i] >= 0)) throw ConfigError("split_ratios must be non-negative");
                        sum += cfg.split_ratios[i];
                    }
                    if (!(sum > 0)) throw ConfigError("split_ratios must not all be zero");
                    for (double& r : cfg.split_ratios) r /= sum;
                } else if (key == "per_class") {
                    cfg.per_class = detail::parse_uint(key, value);
                } else if (key == "train_on") {
                    cfg.train_on.clear();
                    if (value != "all") {
                        std::stringstream ss(value);
                        std::string id;
                        while (std::getline(ss, id, '+')) cfg.train_on.push_back(detail::trim(id));
                    }
                } else throw ConfigError("unknown key '" + key + "' in [data]");
            } else if (section == "datasets") {
                if (!detail::valid_dataset_id(key)) throw ConfigError("dataset id '" + key + "' may use letters, digits, '_', '-', '.' only");
                if (value.empty()) throw ConfigError("dataset '" + key + "' has no manifest path");
                cfg.datasets.emplace_back(key, value);
            } else if (section == "output") {
                if (key != "dir") throw ConfigError("unknown key '" + key + "' in [output]");
                if (value.empty()) throw ConfigError("output dir is empty");
                cfg.output_dir = value;
            }
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }

    cfg.model = model_preset(cfg.preset);
    for (const auto& [k, v] : model_keys) {
        if (!cfg.model.set(k, v)) throw ConfigError(origin + ": unknown key '" + k + "' in [model]");
    }
    cfg.model.validate();
    cfg.train.validate();
    validate_ratios(cfg.split_ratios);
    if (cfg.datasets.empty()) throw ConfigError(origin + ": no datasets configured");
    for (const auto& id : cfg.train_on) {
        bool found = false;
        for (const auto& [d, p] : cfg.datasets) found = found || d == id;
        if (!found) throw ConfigError(origin + ": train_on names unknown dataset '" + id + "'");
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read config '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    auto cfg = parse_experiment_config(ss.str(), path.string());
    for (const auto& [id, manifest] : cfg.datasets) {
        if (!std::filesystem::exists(manifest)) {
            throw ConfigError(path.string() + ": manifest for dataset '" + id + "' not found: " + manifest.string());
        }
    }
    return cfg;
}

}  // namespace swinsight
