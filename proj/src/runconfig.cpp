#include "iclids/runconfig.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"
#include "iclids/version.hpp"

namespace iclids {

namespace {

std::string trim(const std::string& s) {
    const size_t b = s.find_first_not_of(" \t\r");
    const size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) {
            out.push_back(t);
        }
    }
    return out;
}

double parse_fraction(const std::string& s) {
    const size_t slash = s.find('/');
    if (slash != std::string::npos) {
        const double num = std::stod(s.substr(0, slash));
        const double den = std::stod(s.substr(slash + 1));
        require(den != 0.0, Errc::ConfigInvalid, "zero denominator in '" + s + "'");
        return num / den;
    }
    return std::stod(s);
}

}  // namespace

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return fallback;
    }
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        fail(Errc::ConfigInvalid, key + "=" + it->second + " is not an integer");
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return fallback;
    }
    try {
        return parse_fraction(it->second);
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        fail(Errc::ConfigInvalid, key + "=" + it->second + " is not a number");
    }
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return fallback;
    }
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        fail(Errc::ConfigInvalid, key + "=" + it->second + " is not an unsigned integer");
    }
}

std::vector<int> Config::get_int_list(const std::string& key,
                                      const std::vector<int>& fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return fallback;
    }
    std::vector<int> out;
    for (const auto& item : split_list(it->second)) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            fail(Errc::ConfigInvalid, key + " holds non-integer '" + item + "'");
        }
    }
    require(!out.empty(), Errc::ConfigInvalid, key + " is empty");
    return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return fallback;
    }
    std::vector<double> out;
    for (const auto& item : split_list(it->second)) {
        try {
            out.push_back(parse_fraction(item));
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            fail(Errc::ConfigInvalid, key + " holds non-numeric '" + item + "'");
        }
    }
    require(!out.empty(), Errc::ConfigInvalid, key + " is empty");
    return out;
}

std::vector<uint64_t> Config::get_u64_list(const std::string& key,
                                           const std::vector<uint64_t>& fallback) const {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return fallback;
    }
    std::vector<uint64_t> out;
    for (const auto& item : split_list(it->second)) {
        try {
            out.push_back(std::stoull(item));
        } catch (const std::exception&) {
            fail(Errc::ConfigInvalid, key + " holds non-integer '" + item + "'");
        }
    }
    require(!out.empty(), Errc::ConfigInvalid, key + " is empty");
    return out;
}

std::string Config::path(const std::string& key, const std::string& default_name) const {
    const std::string value = get(key, default_name);
    std::filesystem::path p(value);
    if (p.is_absolute()) {
        return value;
    }
    return (std::filesystem::path(out_dir) / p).string();
}

Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Errc::MissingFile, path);
    Config cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const size_t eq = t.find('=');
        require(eq != std::string::npos && eq > 0, Errc::ConfigInvalid,
                path + ":" + std::to_string(line_no) + " is not key=value");
        cfg.kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return cfg;
}

void apply_override(Config& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, Errc::ConfigInvalid,
            "override '" + assignment + "' is not key=value");
    cfg.kv[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

void resolve_seeds(Config& cfg) {
    const uint64_t base = cfg.get_u64("seed.base", 1);
    cfg.set("seed.base", std::to_string(base));
    const std::vector<std::pair<std::string, uint64_t>> sections = {
        {"fixture.seed", 1},     {"multimix.seed", 2}, {"weak.seed", 3},
        {"model.seed", 4},       {"train.seed", 5},    {"eval.seed", 6},
        {"sensitivity.seed", 7}, {"bench.seed", 8},    {"dataset.holdout_seed", 9},
    };
    for (const auto& [key, tag] : sections) {
        if (!cfg.has(key)) {
            cfg.set(key, std::to_string(Rng::mix(base, tag)));
        }
    }
}

RegimeSpec resolve_regime(const Config& cfg) {
    RegimeSpec spec;
    spec.name = cfg.get("train.regime", "MTF");
    double default_gt = 0.0;
    if (spec.name == "WCTF") {
        spec.mode = SequenceMode::TF;
        default_gt = 0.0;
    } else if (spec.name == "MTF") {
        spec.mode = SequenceMode::TF;
        default_gt = 0.4;
    } else if (spec.name == "WCDTF") {
        spec.mode = SequenceMode::DTF;
        default_gt = 0.0;
    } else if (spec.name == "MDTF") {
        spec.mode = SequenceMode::DTF;
        default_gt = 0.05;
    } else {
        fail(Errc::ConfigInvalid, "unknown regime '" + spec.name + "'");
    }
    spec.gt_fraction = cfg.get_double("train.gt_fraction", default_gt);
    require(spec.gt_fraction >= 0.0 && spec.gt_fraction <= 1.0, Errc::ConfigInvalid,
            "train.gt_fraction must lie in [0,1]");
    if ((spec.name == "WCTF" || spec.name == "WCDTF") && spec.gt_fraction != 0.0) {
        fail(Errc::ConfigInvalid,
             spec.name + " trains on weak labels only; train.gt_fraction must be 0");
    }
    return spec;
}

uint64_t config_hash(const std::map<std::string, std::string>& kv) {
    // FNV-1a over the canonical "key=value\n" serialization (std::map keeps
    // keys sorted).
    uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const std::string& s) {
        for (const char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [k, v] : kv) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    return h;
}

void write_manifest(const Config& cfg, const std::string& command,
                    const std::vector<std::string>& outputs, const std::string& path) {
    nlohmann::json j;
    j["manifest_version"] = kManifestFormatVersion;
    j["app_version"] = kVersion;
    j["command"] = command;
    j["deterministic"] = cfg.deterministic;
    j["out_dir"] = cfg.out_dir;
    j["config"] = cfg.kv;
    char hash_hex[24];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(config_hash(cfg.kv)));
    j["config_hash"] = hash_hex;
    j["formats"] = {{"checkpoint", kCheckpointFormatVersion},
                    {"ensemble", kEnsembleFormatVersion}};
    j["outputs"] = outputs;
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

Config config_from_manifest(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Errc::MissingFile, path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ConfigInvalid, std::string("bad manifest: ") + e.what());
    }
    require(j.contains("config") && j["config"].is_object(), Errc::ConfigInvalid,
            "manifest lacks a config block");
    Config cfg;
    for (const auto& [k, v] : j["config"].items()) {
        cfg.kv[k] = v.get<std::string>();
    }
    if (j.contains("deterministic")) {
        cfg.deterministic = j["deterministic"].get<bool>();
    }
    if (j.contains("out_dir")) {
        cfg.out_dir = j["out_dir"].get<std::string>();
        cfg.out_dir_pinned = true;
    }
    return cfg;
}

}  // namespace iclids
