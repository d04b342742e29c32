#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "grf/bench.hpp"
#include "grf/data.hpp"
#include "grf/model.hpp"
#include "grf/optim.hpp"

namespace grf {

// Everything one run needs, merged from a flat `key = value` file plus
// command-line overrides. The resolved state is echoed next to the outputs
// and that echo reparses to the same configuration.
struct RunConfig {
    uint64_t seed = 7;
    ModelKind kind = ModelKind::grf;
    GrfConfig model;
    SyntheticTaskSpec data;
    TrainConfig train;
    BenchConfig bench;

    RunConfig() {
        model.modalities = {{"A", 8, 6}, {"V", 8, 6}, {"T", 8, 6}};
        model.fusion_order = {"A", "V", "T"};
    }

    // The synthetic task always generates every declared modality; the
    // model consumes the subset named by the fusion order.
    void finalize() {
        data.modalities = model.modalities;
        if (model.fusion_order.empty())
            for (const auto& m : model.modalities) model.fusion_order.push_back(m.name);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const int result = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return result;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " expects an integer, got '" + v + "'");
    }
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const uint64_t result = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return result;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " expects an unsigned integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double result = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return result;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " expects a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + " expects true/false, got '" + v + "'");
}

// "A:8:6,V:8:6" -> specs (name, feat_dim, seq_len)
inline std::vector<ModalitySpec> parse_modalities(const std::string& v) {
    std::vector<ModalitySpec> specs;
    for (const std::string& item : split(v, ',')) {
        if (item.empty()) throw ConfigError("empty entry in model.modalities");
        const auto parts = split(item, ':');
        if (parts.size() != 3 || parts[0].empty())
            throw ConfigError("modality entry '" + item + "' is not name:feat_dim:seq_len");
        ModalitySpec spec;
        spec.name = parts[0];
        spec.feat_dim = parse_int("model.modalities", parts[1]);
        spec.seq_len = parse_int("model.modalities", parts[2]);
        specs.push_back(std::move(spec));
    }
    if (specs.empty()) throw ConfigError("model.modalities must not be empty");
    return specs;
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Applies one key. Unknown keys are rejected outright.
inline void apply_config_kv(RunConfig& rc, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "seed") rc.seed = parse_u64(key, value);
    else if (key == "model.kind") rc.kind = parse_model_kind(value);
    else if (key == "model.d_model") rc.model.d_model = parse_int(key, value);
    else if (key == "model.layers") rc.model.num_layers = parse_int(key, value);
    else if (key == "model.heads") rc.model.heads = parse_int(key, value);
    else if (key == "model.d_ff") rc.model.d_ff = parse_int(key, value);
    else if (key == "model.dropout") rc.model.dropout = parse_double(key, value);
    else if (key == "model.tie_directions") rc.model.tie_directions = parse_bool(key, value);
    else if (key == "model.modalities") rc.model.modalities = parse_modalities(value);
    else if (key == "model.order") rc.model.fusion_order = split(value, ',');
    else if (key == "data.task") {
        if (value == "parity") rc.data.mode = TaskMode::parity;
        else if (value == "sum") rc.data.mode = TaskMode::sum;
        else throw ConfigError("data.task must be parity or sum, got '" + value + "'");
    }
    else if (key == "data.noise_std") rc.data.noise_std = parse_double(key, value);
    else if (key == "data.train") rc.data.n_train = parse_int(key, value);
    else if (key == "data.val") rc.data.n_val = parse_int(key, value);
    else if (key == "data.test") rc.data.n_test = parse_int(key, value);
    else if (key == "train.epochs") rc.train.epochs = parse_int(key, value);
    else if (key == "train.patience") rc.train.patience = parse_int(key, value);
    else if (key == "train.batch_size") rc.train.batch_size = parse_int(key, value);
    else if (key == "train.weight_decay") rc.train.weight_decay = parse_double(key, value);
    else if (key == "train.clip_norm") rc.train.clip_norm = parse_double(key, value);
    else if (key == "train.lr_max") rc.train.lr_max = parse_double(key, value);
    else if (key == "train.lr_min") rc.train.lr_min = parse_double(key, value);
    else if (key == "train.beta1") rc.train.beta1 = parse_double(key, value);
    else if (key == "train.beta2") rc.train.beta2 = parse_double(key, value);
    else if (key == "train.eps") rc.train.eps = parse_double(key, value);
    else if (key == "bench.n_max") rc.bench.n_max = parse_int(key, value);
    else if (key == "bench.reps") rc.bench.reps = parse_int(key, value);
    else if (key == "bench.warmups") rc.bench.warmups = parse_int(key, value);
    else if (key == "bench.seq_len") rc.bench.seq_len = parse_int(key, value);
    else if (key == "bench.d_model") rc.bench.d_model = parse_int(key, value);
    else if (key == "bench.layers") rc.bench.layers = parse_int(key, value);
    else if (key == "bench.heads") rc.bench.heads = parse_int(key, value);
    else if (key == "bench.d_ff") rc.bench.d_ff = parse_int(key, value);
    else if (key == "bench.feat_dim") rc.bench.feat_dim = parse_int(key, value);
    else throw ConfigError("unknown config key: " + key);
}

inline void apply_config_text(RunConfig& rc, std::istream& in, const std::string& origin) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        apply_config_kv(rc, key, value);
    }
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    RunConfig rc;
    apply_config_text(rc, in, path);
    return rc;
}

// Full resolved state, alphabetical by key; reparses to the same RunConfig.
inline std::string render_config(const RunConfig& rc) {
    using detail::fmt_double;
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(rc.seed);
    kv["model.kind"] = model_kind_name(rc.kind);
    kv["model.d_model"] = std::to_string(rc.model.d_model);
    kv["model.layers"] = std::to_string(rc.model.num_layers);
    kv["model.heads"] = std::to_string(rc.model.heads);
    kv["model.d_ff"] = std::to_string(rc.model.d_ff);
    kv["model.dropout"] = fmt_double(rc.model.dropout);
    kv["model.tie_directions"] = rc.model.tie_directions ? "true" : "false";
    {
        std::string m;
        for (const auto& spec : rc.model.modalities)
            m += (m.empty() ? "" : ",") + spec.name + ":" + std::to_string(spec.feat_dim) + ":" +
                 std::to_string(spec.seq_len);
        kv["model.modalities"] = m;
        std::string o;
        for (const auto& name : rc.model.fusion_order) o += (o.empty() ? "" : ",") + name;
        kv["model.order"] = o;
    }
    kv["data.task"] = rc.data.mode == TaskMode::parity ? "parity" : "sum";
    kv["data.noise_std"] = fmt_double(rc.data.noise_std);
    kv["data.train"] = std::to_string(rc.data.n_train);
    kv["data.val"] = std::to_string(rc.data.n_val);
    kv["data.test"] = std::to_string(rc.data.n_test);
    kv["train.epochs"] = std::to_string(rc.train.epochs);
    kv["train.patience"] = std::to_string(rc.train.patience);
    kv["train.batch_size"] = std::to_string(rc.train.batch_size);
    kv["train.weight_decay"] = fmt_double(rc.train.weight_decay);
    kv["train.clip_norm"] = fmt_double(rc.train.clip_norm);
    kv["train.lr_max"] = fmt_double(rc.train.lr_max);
    kv["train.lr_min"] = fmt_double(rc.train.lr_min);
    kv["train.beta1"] = fmt_double(rc.train.beta1);
    kv["train.beta2"] = fmt_double(rc.train.beta2);
    kv["train.eps"] = fmt_double(rc.train.eps);
    kv["bench.n_max"] = std::to_string(rc.bench.n_max);
    kv["bench.reps"] = std::to_string(rc.bench.reps);
    kv["bench.warmups"] = std::to_string(rc.bench.warmups);
    kv["bench.seq_len"] = std::to_string(rc.bench.seq_len);
    kv["bench.d_model"] = std::to_string(rc.bench.d_model);
    kv["bench.layers"] = std::to_string(rc.bench.layers);
    kv["bench.heads"] = std::to_string(rc.bench.heads);
    kv["bench.d_ff"] = std::to_string(rc.bench.d_ff);
    kv["bench.feat_dim"] = std::to_string(rc.bench.feat_dim);

    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

inline void write_config_echo(const RunConfig& rc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open config echo for writing: " + path);
    out << render_config(rc);
    if (!out) throw IoError("write failure on config echo: " + path);
}

}  // namespace grf
