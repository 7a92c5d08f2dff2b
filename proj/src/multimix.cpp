#include "iclids/multimix.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"

namespace iclids {

Matrix mix_classes(const std::vector<Matrix>& mixture) {
    require(!mixture.empty(), Errc::EmptyMixture, "mix_classes needs at least one matrix");
    const Matrix& first = mixture.front();
    for (const Matrix& m : mixture) {
        require(m.same_shape(first), Errc::ShapeMismatch,
                "all matrices in a mixture must share one shape");
    }
    Matrix out(first.rows, first.cols);
    for (const Matrix& m : mixture) {
        for (size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] += m.data[i];
        }
    }
    for (double& x : out.data) {
        x /= static_cast<double>(mixture.size());
    }
    return out;
}

namespace {

// Advances a sorted multiset of class indices (combination with replacement)
// to its lexicographic successor; returns false once exhausted.
bool next_combination(std::vector<int>& combo, int num_classes) {
    for (int i = static_cast<int>(combo.size()) - 1; i >= 0; --i) {
        if (combo[static_cast<size_t>(i)] < num_classes - 1) {
            const int v = combo[static_cast<size_t>(i)] + 1;
            for (size_t j = static_cast<size_t>(i); j < combo.size(); ++j) {
                combo[j] = v;
            }
            return true;
        }
    }
    return false;
}

}  // namespace

SyntheticClassSet multi_mix(const std::vector<Matrix>& known_attacks, int total_attack_classes,
                            uint64_t seed) {
    require(!known_attacks.empty(), Errc::EmptyMixture, "no source classes");
    const int k_ori = static_cast<int>(known_attacks.size());
    require(total_attack_classes >= k_ori, Errc::InvalidCount,
            "total_attack_classes must be >= the number of source classes");
    for (const Matrix& m : known_attacks) {
        require(m.rows >= 1 && m.cols == known_attacks.front().cols, Errc::ShapeMismatch,
                "source classes must be nonempty and share the feature dimension");
    }

    int min_rows = known_attacks.front().rows;
    for (const Matrix& m : known_attacks) {
        min_rows = std::min(min_rows, m.rows);
    }

    // Row-shuffle each source with a per-class derived stream, then truncate
    // to the common row count so every mixture is element-wise congruent.
    std::vector<Matrix> sources;
    sources.reserve(known_attacks.size());
    for (int c = 0; c < k_ori; ++c) {
        const Matrix& src = known_attacks[static_cast<size_t>(c)];
        std::vector<int> order(static_cast<size_t>(src.rows));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(Rng::mix(seed, 0x313aULL, static_cast<uint64_t>(c)));
        rng.shuffle(order);
        Matrix m(min_rows, src.cols);
        for (int r = 0; r < min_rows; ++r) {
            for (int j = 0; j < src.cols; ++j) {
                m.at(r, j) = src.at(order[static_cast<size_t>(r)], j);
            }
        }
        sources.push_back(std::move(m));
    }

    SyntheticClassSet out;
    out.K_ori = k_ori;
    int label = 1;
    for (int k = 1; label <= total_attack_classes; ++k) {
        std::vector<int> combo(static_cast<size_t>(k), 0);
        bool more = true;
        while (more && label <= total_attack_classes) {
            std::vector<Matrix> parts;
            parts.reserve(combo.size());
            for (const int c : combo) {
                parts.push_back(sources[static_cast<size_t>(c)]);
            }
            MixtureEntry entry;
            entry.label = label;
            std::map<int, int> multiplicity;
            for (const int c : combo) {
                ++multiplicity[c];
            }
            for (const auto& [c, mult] : multiplicity) {
                entry.sources.push_back(c);
                entry.weights.push_back(static_cast<double>(mult) / static_cast<double>(k));
            }
            out.classes.emplace_back(label, mix_classes(parts));
            out.mixture_log.push_back(std::move(entry));
            ++label;
            more = next_combination(combo, k_ori);
        }
    }
    out.K_syn = static_cast<int>(out.classes.size());
    return out;
}

std::vector<Matrix> attack_matrices(const Dataset& ds, std::vector<int>* class_ids) {
    std::vector<Matrix> out;
    if (class_ids) {
        class_ids->clear();
    }
    for (const auto& [id, name] : ds.class_names) {
        if (id == 0) {
            continue;
        }
        const std::vector<int> idx = ds.indices_of_class(id);
        if (idx.empty()) {
            continue;
        }
        Matrix m(static_cast<int>(idx.size()), ds.d);
        for (size_t r = 0; r < idx.size(); ++r) {
            const auto& f = ds.records[static_cast<size_t>(idx[r])].features;
            std::copy(f.begin(), f.end(), m.data.begin() + static_cast<long>(r * f.size()));
        }
        out.push_back(std::move(m));
        if (class_ids) {
            class_ids->push_back(id);
        }
    }
    return out;
}

Dataset assemble_training_set(const Matrix& normal_rows, const SyntheticClassSet& synth) {
    require(normal_rows.rows >= 1, Errc::EmptyDataset, "no normal rows");
    Dataset ds;
    ds.d = normal_rows.cols;
    ds.class_names[0] = "normal";
    for (int r = 0; r < normal_rows.rows; ++r) {
        PacketRecord rec;
        rec.class_id = 0;
        rec.origin = Origin::ID;
        rec.features.assign(normal_rows.data.begin() + static_cast<long>(r) * ds.d,
                            normal_rows.data.begin() + static_cast<long>(r + 1) * ds.d);
        ds.records.push_back(std::move(rec));
    }
    for (const auto& [label, m] : synth.classes) {
        require(m.cols == ds.d, Errc::ShapeMismatch, "synthetic class dimension mismatch");
        char name[16];
        std::snprintf(name, sizeof(name), "syn%04d", label);
        ds.class_names[label] = name;
        for (int r = 0; r < m.rows; ++r) {
            PacketRecord rec;
            rec.class_id = label;
            rec.origin = Origin::SYNTHETIC;
            rec.features.assign(m.data.begin() + static_cast<long>(r) * ds.d,
                                m.data.begin() + static_cast<long>(r + 1) * ds.d);
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

void save_mixture_log(const SyntheticClassSet& synth, const std::string& path) {
    nlohmann::json j;
    j["K_ori"] = synth.K_ori;
    j["K_syn"] = synth.K_syn;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : synth.mixture_log) {
        entries.push_back({{"label", e.label}, {"sources", e.sources}, {"weights", e.weights}});
    }
    j["mixtures"] = entries;
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

}  // namespace iclids
