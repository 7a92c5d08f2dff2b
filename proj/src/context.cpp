#include "iclids/context.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include <json.hpp>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"

namespace iclids {

std::vector<double> encode_weak_label(const WeakEnsemble& ens, const PacketRecord& rec,
                                      SequenceMode mode) {
    if (mode == SequenceMode::TF) {
        return predict_hard(ens, rec).encoded();
    }
    return predict_dist(ens, rec).encoded();
}

std::vector<double> encode_ground_truth(int class_id, SequenceMode mode, int K, int W, int d) {
    if (mode == SequenceMode::TF) {
        // The true class id written into all W member slots, then padding.
        std::vector<double> out(static_cast<size_t>(d), -1.0);
        for (int w = 0; w < W; ++w) {
            out[static_cast<size_t>(w)] = static_cast<double>(class_id);
        }
        return out;
    }
    // One-hot column repeated for each member.
    std::vector<double> out(static_cast<size_t>(K) * W, 0.0);
    for (int w = 0; w < W; ++w) {
        out[static_cast<size_t>(w) * K + class_id] = 1.0;
    }
    return out;
}

SequenceSampler::SequenceSampler(const Dataset& train, const WeakEnsemble& ensemble, int N,
                                 SequenceMode mode, MixPolicy mix, BurstConfig burst)
    : train_(train), ensemble_(ensemble), N_(N), mode_(mode), mix_(mix), burst_(burst) {
    require(N >= 2, Errc::InvalidConfig, "N must be >= 2");
    require(mix.gt_fraction >= 0.0 && mix.gt_fraction <= 1.0, Errc::InvalidConfig,
            "gt_fraction must lie in [0,1]");
    require(train.d == ensemble.d, Errc::DimensionMismatch, "dataset/ensemble d mismatch");
    require(burst.classes_per_sequence >= 1, Errc::InvalidConfig,
            "classes_per_sequence must be >= 1");
    for (const auto& [id, name] : train.class_names) {
        std::vector<int> pool = train.indices_of_class(id);
        if (!pool.empty()) {
            class_ids_.push_back(id);
            class_pools_.push_back(std::move(pool));
        }
    }
    require(class_ids_.size() >= 2, Errc::EmptyClass,
            "training data must cover at least 2 classes");
}

ContextSequence SequenceSampler::sample(uint64_t seed) const {
    Rng rng(Rng::mix(seed, 0x5eedULL));
    const int num_classes = static_cast<int>(class_ids_.size());
    const int bursts = std::min(burst_.classes_per_sequence, num_classes);

    // Distinct classes for this sequence; the normal class is forced into the
    // set for a normal_share fraction of sequences.
    int normal_slot = -1;
    for (int i = 0; i < num_classes; ++i) {
        if (class_ids_[static_cast<size_t>(i)] == 0) {
            normal_slot = i;
        }
    }
    const bool force_normal =
        normal_slot >= 0 && rng.uniform() < burst_.normal_share;
    std::vector<int> chosen;
    for (int i = 0; i < num_classes; ++i) {
        if (force_normal && i == normal_slot) {
            continue;
        }
        chosen.push_back(i);
    }
    rng.shuffle(chosen);
    chosen.resize(static_cast<size_t>(force_normal ? bursts - 1 : bursts));
    if (force_normal) {
        chosen.push_back(normal_slot);
        rng.shuffle(chosen);
    }

    // Contiguous runs covering the N-1 in-context slots, shuffled run order.
    const int slots = N_ - 1;
    std::vector<int> run_class;
    for (int b = 0; b < bursts; ++b) {
        const int len = slots / bursts + (b < slots % bursts ? 1 : 0);
        for (int i = 0; i < len; ++i) {
            run_class.push_back(chosen[static_cast<size_t>(b)]);
        }
    }
    // Shuffle the order of runs while keeping each run contiguous.
    std::vector<int> run_order(static_cast<size_t>(bursts));
    for (int b = 0; b < bursts; ++b) {
        run_order[static_cast<size_t>(b)] = b;
    }
    rng.shuffle(run_order);
    std::vector<int> slot_class;
    slot_class.reserve(static_cast<size_t>(slots));
    for (const int b : run_order) {
        const int len = slots / bursts + (b < slots % bursts ? 1 : 0);
        for (int i = 0; i < len; ++i) {
            slot_class.push_back(chosen[static_cast<size_t>(b)]);
        }
    }

    ContextSequence seq;
    seq.mode = mode_;
    seq.N = N_;
    seq.pairs.reserve(static_cast<size_t>(N_));

    auto sample_record = [&](int class_slot) -> const PacketRecord& {
        const auto& pool = class_pools_[static_cast<size_t>(class_slot)];
        return train_.records[static_cast<size_t>(pool[rng.below(pool.size())])];
    };

    for (int i = 0; i < slots; ++i) {
        const PacketRecord& rec = sample_record(slot_class[static_cast<size_t>(i)]);
        ContextPair pair;
        pair.x = rec.features;
        pair.y_true = rec.class_id;
        pair.from_ground_truth = rng.uniform() < mix_.gt_fraction;
        pair.y_ctx = pair.from_ground_truth
                         ? encode_ground_truth(rec.class_id, mode_, ensemble_.K, ensemble_.W,
                                               train_.d)
                         : encode_weak_label(ensemble_, rec, mode_);
        seq.pairs.push_back(std::move(pair));
    }

    // Query from the same bursty class pool; always weak-classifier output.
    const PacketRecord& qrec =
        sample_record(chosen[rng.below(static_cast<uint64_t>(bursts))]);
    ContextPair query;
    query.x = qrec.features;
    query.y_true = qrec.class_id;
    query.from_ground_truth = false;
    query.y_ctx = encode_weak_label(ensemble_, qrec, mode_);
    seq.pairs.push_back(std::move(query));
    return seq;
}

ContextSequence build_training_sequence(const Dataset& train, const WeakEnsemble& ensemble, int N,
                                        SequenceMode mode, MixPolicy mix, BurstConfig burst,
                                        uint64_t seed) {
    return SequenceSampler(train, ensemble, N, mode, mix, burst).sample(seed);
}

ContextSequence build_eval_sequence(const Dataset& normal_pool, const Dataset& attack_pool,
                                    int shots, int N, const WeakEnsemble& ensemble,
                                    SequenceMode mode, uint64_t seed, bool normal_query) {
    require(N >= 2, Errc::InvalidConfig, "N must be >= 2");
    require(shots >= 0 && shots <= N - 1, Errc::ShotsOutOfRange,
            "shots=" + std::to_string(shots) + " outside [0, " + std::to_string(N - 1) + "]");
    require(!normal_pool.records.empty(), Errc::EmptyClass, "normal pool is empty");
    require(!attack_pool.records.empty(), Errc::EmptyClass, "attack pool is empty");
    require(normal_pool.d == ensemble.d && attack_pool.d == ensemble.d, Errc::DimensionMismatch,
            "pool/ensemble d mismatch");

    Rng rng(Rng::mix(seed, 0xe7a1ULL));
    const int slots = N - 1;

    std::vector<int> is_attack(static_cast<size_t>(slots), 0);
    for (int i = 0; i < shots; ++i) {
        is_attack[static_cast<size_t>(i)] = 1;
    }
    rng.shuffle(is_attack);

    auto draw = [&](const Dataset& pool) -> const PacketRecord& {
        return pool.records[static_cast<size_t>(rng.below(pool.records.size()))];
    };

    ContextSequence seq;
    seq.mode = mode;
    seq.N = N;
    seq.pairs.reserve(static_cast<size_t>(N));
    for (int i = 0; i < slots; ++i) {
        const PacketRecord& rec = draw(is_attack[static_cast<size_t>(i)] ? attack_pool
                                                                         : normal_pool);
        ContextPair pair;
        pair.x = rec.features;
        pair.y_true = rec.class_id;
        pair.y_ctx = encode_weak_label(ensemble, rec, mode);
        seq.pairs.push_back(std::move(pair));
    }
    const PacketRecord& qrec = draw(normal_query ? normal_pool : attack_pool);
    ContextPair query;
    query.x = qrec.features;
    query.y_true = qrec.class_id;
    query.y_ctx = encode_weak_label(ensemble, qrec, mode);
    seq.pairs.push_back(std::move(query));
    return seq;
}

void dump_sequence_json(const ContextSequence& seq, const std::string& path) {
    nlohmann::json j;
    j["mode"] = seq.mode == SequenceMode::TF ? "TF" : "DTF";
    j["N"] = seq.N;
    j["query_index"] = seq.query_index();
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : seq.pairs) {
        pairs.push_back({{"x", p.x},
                         {"y_ctx", p.y_ctx},
                         {"y_true", p.y_true},
                         {"from_ground_truth", p.from_ground_truth}});
    }
    j["pairs"] = pairs;
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

}  // namespace iclids
