#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace iclids {

enum class Origin : uint8_t { ID, OOD, SYNTHETIC };

// One packet's preprocessed feature vector and its class. Class 0 is reserved
// for normal traffic; every other id is an attack class.
struct PacketRecord {
    std::vector<double> features;
    int class_id{0};
    Origin origin{Origin::ID};
};

// Per-feature affine normalization: x' = (x - shift) / scale.
// Zero-variance features carry scale 1 with shift = mean, mapping them to 0.
struct NormStats {
    std::vector<double> shift;
    std::vector<double> scale;

    int d() const { return static_cast<int>(shift.size()); }
};

struct Dataset {
    std::vector<PacketRecord> records;
    int d{0};
    std::map<int, std::string> class_names;
    std::optional<NormStats> norm_stats;

    size_t size() const { return records.size(); }
    int class_count() const { return static_cast<int>(class_names.size()); }

    // Indices of records per class id, in record order.
    std::vector<int> indices_of_class(int class_id) const;
    std::set<int> class_ids_present() const;
    int class_id_by_name(const std::string& name) const;  // UnknownClassName
};

struct CsvSchema {
    std::string label_column{"label"};
    // Empty means "all non-label columns, in file order".
    std::vector<std::string> feature_columns;
};

// Strict CSV: UTF-8, comma-delimited, header required, no quoting.
Dataset load_dataset(const std::string& path, const CsvSchema& schema);

// Persists the CSV alongside a "<path>.meta.json" sidecar carrying d, the
// class map and (if present) normalization stats. load_saved_dataset reads
// both and reproduces the dataset exactly.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_saved_dataset(const std::string& path);

std::pair<Dataset, NormStats> fit_normalize(const Dataset& ds);
Dataset apply_normalize(const Dataset& ds, const NormStats& stats);

// Partitions into (ID, OOD) by class name. id_class_names must include
// "normal". OOD keeps no normal records unless ood_keeps_normal is set.
std::pair<Dataset, Dataset> split_id_ood(const Dataset& ds,
                                         const std::set<std::string>& id_class_names,
                                         bool ood_keeps_normal = false);

// Splits one dataset's records into (head, tail) with tail_fraction of each
// class moved to the tail, deterministically per seed. Used to hold out
// evaluation pools.
std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double tail_fraction, uint64_t seed);

struct FixtureSpec {
    int num_classes{7};
    int per_class_count{400};
    int d{8};
    double cluster_separation{6.0};
    uint64_t seed{1};
};

// Synthetic stand-in for a packet-feature corpus: class 0 ("normal") is an
// isotropic unit Gaussian at the origin; class k >= 1 ("attack<k>") is a unit
// Gaussian whose mean sits at distance cluster_separation from the origin in
// a seed-derived random direction. Deterministic per seed.
Dataset generate_fixture(const FixtureSpec& spec);

// Restricts a dataset to one class (records keep their ids/names).
Dataset filter_class(const Dataset& ds, int class_id);

}  // namespace iclids
