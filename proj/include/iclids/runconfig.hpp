#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iclids/context.hpp"

namespace iclids {

// Flat, line-oriented key=value configuration with section-prefixed keys
// ("train.iterations=2000"). The resolved map is what manifests record, so a
// run is reproducible from its manifest alone.
class Config {
  public:
    std::map<std::string, std::string> kv;
    bool deterministic{false};
    std::string out_dir{"."};
    bool out_dir_pinned{false};  // set when a manifest supplied out_dir

    bool has(const std::string& key) const { return kv.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;  // accepts "a/b"
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;
    std::vector<uint64_t> get_u64_list(const std::string& key,
                                       const std::vector<uint64_t>& fallback) const;

    void set(const std::string& key, const std::string& value) { kv[key] = value; }

    // Artifact path helpers (out_dir-relative unless the key is absolute).
    std::string path(const std::string& key, const std::string& default_name) const;
};

Config load_config_file(const std::string& path);

// "key=value" override; rejects malformed input.
void apply_override(Config& cfg, const std::string& assignment);

// Section seeds left unset derive from seed.base, and the resolved values are
// written back so the manifest pins every stream.
void resolve_seeds(Config& cfg);

// Regime -> (mode, gt_fraction). Weak-classifier-only regimes force a zero
// ground-truth fraction; a conflicting explicit value is rejected.
struct RegimeSpec {
    std::string name;
    SequenceMode mode{SequenceMode::TF};
    double gt_fraction{0.0};
};
RegimeSpec resolve_regime(const Config& cfg);

uint64_t config_hash(const std::map<std::string, std::string>& kv);

void write_manifest(const Config& cfg, const std::string& command,
                    const std::vector<std::string>& outputs, const std::string& path);
Config config_from_manifest(const std::string& path);

}  // namespace iclids
