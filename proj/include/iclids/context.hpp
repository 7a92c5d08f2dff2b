#pragma once

#include <cstdint>
#include <vector>

#include "iclids/dataset.hpp"
#include "iclids/weak.hpp"

namespace iclids {

enum class SequenceMode : uint8_t { TF, DTF };

// One (packet, pseudo-label) element of a context sequence. y_ctx is the
// already-encoded label token: length d for TF (member labels + -1 padding,
// as literal values), length K*W for DTF (member-major flattened column
// distributions).
struct ContextPair {
    std::vector<double> x;
    std::vector<double> y_ctx;
    int y_true{0};
    bool from_ground_truth{false};
};

struct ContextSequence {
    SequenceMode mode{SequenceMode::TF};
    int N{0};
    std::vector<ContextPair> pairs;

    int query_index() const { return N - 1; }
    const ContextPair& query() const { return pairs.back(); }
    int shots() const {  // in-context positions with a non-normal true class
        int n = 0;
        for (int i = 0; i + 1 < static_cast<int>(pairs.size()); ++i) {
            n += pairs[static_cast<size_t>(i)].y_true != 0 ? 1 : 0;
        }
        return n;
    }
};

// Fraction of in-context positions that carry ground-truth labels instead of
// weak-classifier output. The query position is never ground truth.
struct MixPolicy {
    double gt_fraction{0.0};
};

// Bursty class sampling: each training sequence draws from a small set of
// distinct classes laid out in contiguous runs. normal_share is the fraction
// of sequences whose class set includes the normal class; attack classes fill
// the remaining slots uniformly. Detection hinges on the normal boundary, so
// normal traffic gets a fixed share instead of 1-in-K odds.
struct BurstConfig {
    int classes_per_sequence{3};
    double normal_share{0.5};
};

std::vector<double> encode_weak_label(const WeakEnsemble& ens, const PacketRecord& rec,
                                      SequenceMode mode);
std::vector<double> encode_ground_truth(int class_id, SequenceMode mode, int K, int W, int d);

// Samples training sequences from one dataset/ensemble pair. Pools are
// indexed once at construction; sample() is pure given its seed.
class SequenceSampler {
  public:
    SequenceSampler(const Dataset& train, const WeakEnsemble& ensemble, int N, SequenceMode mode,
                    MixPolicy mix, BurstConfig burst);

    ContextSequence sample(uint64_t seed) const;

  private:
    const Dataset& train_;
    const WeakEnsemble& ensemble_;
    int N_;
    SequenceMode mode_;
    MixPolicy mix_;
    BurstConfig burst_;
    std::vector<int> class_ids_;                // classes with at least one record
    std::vector<std::vector<int>> class_pools_;  // record indices per class
};

ContextSequence build_training_sequence(const Dataset& train, const WeakEnsemble& ensemble, int N,
                                        SequenceMode mode, MixPolicy mix, BurstConfig burst,
                                        uint64_t seed);

// Evaluation sequence: the query is an attack record (or a normal record when
// normal_query is set, for false-positive measurement); the in-context window
// holds `shots` attack records and N-1-shots normal records in shuffled
// order. Every label comes from the ensemble.
ContextSequence build_eval_sequence(const Dataset& normal_pool, const Dataset& attack_pool,
                                    int shots, int N, const WeakEnsemble& ensemble,
                                    SequenceMode mode, uint64_t seed, bool normal_query = false);

// Debugging aid: dump a sequence (tokens, truths, label provenance) as JSON.
void dump_sequence_json(const ContextSequence& seq, const std::string& path);

}  // namespace iclids
