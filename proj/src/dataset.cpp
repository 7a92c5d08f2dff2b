#include "iclids/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"

namespace iclids {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t");
    size_t e = s.find_last_not_of(" \t");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) {
        return false;
    }
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size() && std::isfinite(out);
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

std::vector<int> Dataset::indices_of_class(int class_id) const {
    std::vector<int> out;
    for (size_t i = 0; i < records.size(); ++i) {
        if (records[i].class_id == class_id) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

std::set<int> Dataset::class_ids_present() const {
    std::set<int> out;
    for (const auto& r : records) {
        out.insert(r.class_id);
    }
    return out;
}

int Dataset::class_id_by_name(const std::string& name) const {
    for (const auto& [id, n] : class_names) {
        if (n == name) {
            return id;
        }
    }
    fail(Errc::UnknownClassName, "no class named '" + name + "'");
}

Dataset load_dataset(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    require(in.good(), Errc::MissingFile, path);

    std::string header_line;
    require(static_cast<bool>(std::getline(in, header_line)), Errc::EmptyDataset,
            path + " is empty");
    const std::vector<std::string> header = split_csv_line(header_line);

    auto column_index = [&](const std::string& name) -> int {
        for (size_t i = 0; i < header.size(); ++i) {
            if (trim(header[i]) == name) {
                return static_cast<int>(i);
            }
        }
        fail(Errc::SchemaMismatch, "column '" + name + "' not found in " + path);
    };

    const int label_col = column_index(schema.label_column);
    std::vector<int> feature_cols;
    if (schema.feature_columns.empty()) {
        for (size_t i = 0; i < header.size(); ++i) {
            if (static_cast<int>(i) != label_col) {
                feature_cols.push_back(static_cast<int>(i));
            }
        }
    } else {
        for (const auto& name : schema.feature_columns) {
            feature_cols.push_back(column_index(name));
        }
    }
    require(!feature_cols.empty(), Errc::SchemaMismatch, "no feature columns in " + path);

    Dataset ds;
    ds.d = static_cast<int>(feature_cols.size());
    // Dense ids in first-appearance order; 0 is reserved for "normal".
    std::map<std::string, int> name_to_id;
    int next_id = 1;

    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) {
            continue;
        }
        const std::vector<std::string> cells = split_csv_line(line);
        require(cells.size() == header.size(), Errc::SchemaMismatch,
                "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                    " cells, got " + std::to_string(cells.size()));

        PacketRecord rec;
        rec.features.reserve(feature_cols.size());
        for (const int col : feature_cols) {
            double x = 0.0;
            require(parse_double(cells[static_cast<size_t>(col)], x), Errc::NonNumericFeature,
                    "row " + std::to_string(row) + ", column '" +
                        header[static_cast<size_t>(col)] + "'");
            rec.features.push_back(x);
        }
        const std::string label = trim(cells[static_cast<size_t>(label_col)]);
        int id = 0;
        if (label == "normal") {
            id = 0;
        } else {
            auto it = name_to_id.find(label);
            if (it == name_to_id.end()) {
                id = next_id++;
                name_to_id.emplace(label, id);
            } else {
                id = it->second;
            }
        }
        rec.class_id = id;
        ds.class_names[id] = label;
        ds.records.push_back(std::move(rec));
    }
    require(!ds.records.empty(), Errc::EmptyDataset, path + " has a header but no rows");
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    for (int j = 0; j < ds.d; ++j) {
        out << "f" << j << ",";
    }
    out << "label\n";
    for (const auto& rec : ds.records) {
        for (const double x : rec.features) {
            out << format_double(x) << ",";
        }
        out << ds.class_names.at(rec.class_id) << "\n";
    }

    nlohmann::json meta;
    meta["d"] = ds.d;
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [id, name] : ds.class_names) {
        classes[std::to_string(id)] = name;
    }
    meta["class_names"] = classes;
    if (ds.norm_stats) {
        meta["norm_stats"] = {{"shift", ds.norm_stats->shift}, {"scale", ds.norm_stats->scale}};
    } else {
        meta["norm_stats"] = nullptr;
    }
    nlohmann::json origins = nlohmann::json::array();
    for (const auto& rec : ds.records) {
        origins.push_back(static_cast<int>(rec.origin));
    }
    meta["origins"] = origins;

    std::ofstream mout(path + ".meta.json", std::ios::trunc);
    require(mout.good(), Errc::MissingFile, "cannot open " + path + ".meta.json for writing");
    mout << meta.dump(2) << "\n";
}

Dataset load_saved_dataset(const std::string& path) {
    std::ifstream min(path + ".meta.json");
    require(min.good(), Errc::MissingFile, path + ".meta.json");
    nlohmann::json meta;
    try {
        min >> meta;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::SchemaMismatch, std::string("bad sidecar: ") + e.what());
    }

    Dataset ds = load_dataset(path, CsvSchema{});
    // The sidecar is authoritative for ids: remap labels parsed by first
    // appearance back onto the persisted class map.
    std::map<std::string, int> wanted;
    std::map<int, std::string> names;
    for (const auto& [key, value] : meta.at("class_names").items()) {
        const int id = std::stoi(key);
        names[id] = value.get<std::string>();
        wanted[value.get<std::string>()] = id;
    }
    for (auto& rec : ds.records) {
        const std::string& label = ds.class_names.at(rec.class_id);
        auto it = wanted.find(label);
        require(it != wanted.end(), Errc::SchemaMismatch, "label '" + label + "' not in sidecar");
        rec.class_id = it->second;
    }
    ds.class_names = names;
    require(meta.at("d").get<int>() == ds.d, Errc::DimensionMismatch,
            "sidecar d disagrees with CSV");
    if (!meta.at("norm_stats").is_null()) {
        NormStats stats;
        stats.shift = meta["norm_stats"]["shift"].get<std::vector<double>>();
        stats.scale = meta["norm_stats"]["scale"].get<std::vector<double>>();
        ds.norm_stats = stats;
    }
    if (meta.contains("origins")) {
        const auto origins = meta["origins"].get<std::vector<int>>();
        if (origins.size() == ds.records.size()) {
            for (size_t i = 0; i < origins.size(); ++i) {
                ds.records[i].origin = static_cast<Origin>(origins[i]);
            }
        }
    }
    return ds;
}

std::pair<Dataset, NormStats> fit_normalize(const Dataset& ds) {
    require(ds.d >= 1, Errc::InvalidSpec, "d must be >= 1");
    require(!ds.records.empty(), Errc::EmptyDataset, "cannot fit on an empty split");

    const double n = static_cast<double>(ds.records.size());
    NormStats stats;
    stats.shift.assign(static_cast<size_t>(ds.d), 0.0);
    stats.scale.assign(static_cast<size_t>(ds.d), 1.0);

    for (int j = 0; j < ds.d; ++j) {
        double mean = 0.0;
        for (const auto& rec : ds.records) {
            mean += rec.features[static_cast<size_t>(j)];
        }
        mean /= n;
        double var = 0.0;
        for (const auto& rec : ds.records) {
            const double dx = rec.features[static_cast<size_t>(j)] - mean;
            var += dx * dx;
        }
        var /= n;  // population convention
        const double sd = std::sqrt(var);
        stats.shift[static_cast<size_t>(j)] = mean;
        stats.scale[static_cast<size_t>(j)] = sd > 0.0 ? sd : 1.0;
    }
    Dataset out = apply_normalize(ds, stats);
    out.norm_stats = stats;
    return {std::move(out), std::move(stats)};
}

Dataset apply_normalize(const Dataset& ds, const NormStats& stats) {
    require(stats.d() == ds.d, Errc::DimensionMismatch,
            "stats d=" + std::to_string(stats.d()) + " vs dataset d=" + std::to_string(ds.d));
    Dataset out = ds;
    for (auto& rec : out.records) {
        for (int j = 0; j < ds.d; ++j) {
            auto& x = rec.features[static_cast<size_t>(j)];
            x = (x - stats.shift[static_cast<size_t>(j)]) / stats.scale[static_cast<size_t>(j)];
        }
    }
    out.norm_stats = stats;
    return out;
}

std::pair<Dataset, Dataset> split_id_ood(const Dataset& ds,
                                         const std::set<std::string>& id_class_names,
                                         bool ood_keeps_normal) {
    require(id_class_names.count("normal") > 0, Errc::UnknownClassName,
            "id_class_names must include 'normal'");
    std::set<int> id_ids;
    for (const auto& name : id_class_names) {
        id_ids.insert(ds.class_id_by_name(name));
    }

    Dataset id_ds;
    Dataset ood_ds;
    id_ds.d = ood_ds.d = ds.d;
    id_ds.norm_stats = ood_ds.norm_stats = ds.norm_stats;

    // ID keeps dense ids in ascending original order with normal pinned to 0;
    // OOD attacks are renumbered from 1 (their ids only carry ground truth).
    std::map<int, int> id_remap;
    std::map<int, int> ood_remap;
    int next_id = 1;
    for (const auto& [id, name] : ds.class_names) {
        if (id_ids.count(id) == 0) {
            continue;
        }
        if (id == 0) {
            id_remap[id] = 0;
        } else {
            id_remap[id] = next_id++;
        }
    }
    int next_ood = 1;
    for (const auto& [id, name] : ds.class_names) {
        if (id_ids.count(id) > 0 || id == 0) {
            continue;
        }
        ood_remap[id] = next_ood++;
    }
    if (ood_keeps_normal) {
        ood_remap[0] = 0;
    }

    for (const auto& [old_id, new_id] : id_remap) {
        id_ds.class_names[new_id] = ds.class_names.at(old_id);
    }
    for (const auto& [old_id, new_id] : ood_remap) {
        ood_ds.class_names[new_id] = ds.class_names.at(old_id);
    }

    for (const auto& rec : ds.records) {
        if (id_ids.count(rec.class_id) > 0) {
            PacketRecord r = rec;
            r.class_id = id_remap.at(rec.class_id);
            r.origin = Origin::ID;
            id_ds.records.push_back(std::move(r));
        } else if (rec.class_id != 0 || ood_keeps_normal) {
            PacketRecord r = rec;
            r.class_id = ood_remap.at(rec.class_id);
            r.origin = Origin::OOD;
            ood_ds.records.push_back(std::move(r));
        }
    }
    return {std::move(id_ds), std::move(ood_ds)};
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double tail_fraction, uint64_t seed) {
    require(tail_fraction >= 0.0 && tail_fraction < 1.0, Errc::InvalidSpec,
            "tail_fraction must be in [0,1)");
    Dataset head;
    Dataset tail;
    head.d = tail.d = ds.d;
    head.class_names = tail.class_names = ds.class_names;
    head.norm_stats = tail.norm_stats = ds.norm_stats;

    Rng rng(Rng::mix(seed, 0x5917ULL));
    for (const int cid : ds.class_ids_present()) {
        std::vector<int> idx = ds.indices_of_class(cid);
        rng.shuffle(idx);
        const size_t tail_count = static_cast<size_t>(
            std::floor(tail_fraction * static_cast<double>(idx.size())));
        for (size_t i = 0; i < idx.size(); ++i) {
            (i < tail_count ? tail : head)
                .records.push_back(ds.records[static_cast<size_t>(idx[i])]);
        }
    }
    return {std::move(head), std::move(tail)};
}

Dataset generate_fixture(const FixtureSpec& spec) {
    require(spec.num_classes >= 2, Errc::InvalidSpec, "num_classes must be >= 2");
    require(spec.d >= 2, Errc::InvalidSpec, "d must be >= 2");
    require(spec.per_class_count >= 1, Errc::InvalidSpec, "per_class_count must be >= 1");
    require(spec.cluster_separation >= 0.0, Errc::InvalidSpec,
            "cluster_separation must be >= 0");

    Rng rng(Rng::mix(spec.seed, 0xf1c7ULL));
    Dataset ds;
    ds.d = spec.d;

    // Class means form a regular simplex with the normal class at the origin:
    // every pair of means sits at distance cluster_separation. The simplex
    // construction needs one axis per attack class; attacks beyond d fall
    // back to seeded random directions at the same radius.
    const double s = spec.cluster_separation;
    const int simplex_attacks = std::min(spec.num_classes - 1, spec.d);
    const double alpha = s / std::sqrt(2.0);
    const double beta =
        simplex_attacks > 1
            ? s * (std::sqrt(2.0 * (1.0 + simplex_attacks)) - std::sqrt(2.0)) /
                  (2.0 * simplex_attacks)
            : 0.0;

    for (int c = 0; c < spec.num_classes; ++c) {
        std::vector<double> mean(static_cast<size_t>(spec.d), 0.0);
        if (c > 0 && c <= simplex_attacks) {
            if (simplex_attacks == 1) {
                mean[0] = s;
            } else {
                for (int j = 0; j < simplex_attacks; ++j) {
                    mean[static_cast<size_t>(j)] = beta;
                }
                mean[static_cast<size_t>(c - 1)] += alpha;
            }
        } else if (c > simplex_attacks) {
            double norm2 = 0.0;
            for (auto& m : mean) {
                m = rng.gaussian();
                norm2 += m * m;
            }
            const double norm = std::sqrt(norm2);
            for (auto& m : mean) {
                m = norm > 0.0 ? m / norm * s : 0.0;
            }
        }
        ds.class_names[c] = c == 0 ? "normal" : "attack" + std::to_string(c);
        for (int i = 0; i < spec.per_class_count; ++i) {
            PacketRecord rec;
            rec.class_id = c;
            rec.origin = Origin::ID;
            rec.features.resize(static_cast<size_t>(spec.d));
            for (int j = 0; j < spec.d; ++j) {
                rec.features[static_cast<size_t>(j)] =
                    mean[static_cast<size_t>(j)] + rng.gaussian();
            }
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

Dataset filter_class(const Dataset& ds, int class_id) {
    Dataset out;
    out.d = ds.d;
    out.norm_stats = ds.norm_stats;
    auto it = ds.class_names.find(class_id);
    require(it != ds.class_names.end(), Errc::UnknownClassName,
            "class id " + std::to_string(class_id));
    out.class_names[class_id] = it->second;
    for (const auto& rec : ds.records) {
        if (rec.class_id == class_id) {
            out.records.push_back(rec);
        }
    }
    return out;
}

}  // namespace iclids
