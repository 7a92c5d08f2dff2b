#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "iclids/dataset.hpp"

namespace iclids {

// Hard pseudo-labels for one packet: the first W entries are member class
// ids, the remaining d - W entries are the padding token -1.
struct HardLabelVector {
    std::vector<int> values;  // length d
    int W{0};

    std::vector<double> encoded() const {  // literal values, -1 included
        return std::vector<double>(values.begin(), values.end());
    }
};

// K x W column-stochastic matrix: column w is member w's class distribution.
// Stored member-major (data[w*K + k]), which is also the flattening order the
// distributional transformer embeds.
struct DistributionMatrix {
    int K{0};
    int W{0};
    std::vector<double> data;

    double at(int k, int w) const { return data[static_cast<size_t>(w) * K + k]; }
    const std::vector<double>& encoded() const { return data; }
};

// A weak classifier: anything that maps a record to a class distribution.
// Trained MLPs ignore the record's class id; synthetic accuracy-controlled
// emitters consult it as the oracle truth.
class WeakModel {
  public:
    virtual ~WeakModel() = default;
    virtual int num_classes() const = 0;
    virtual int feature_dim() const = 0;
    virtual std::vector<double> class_distribution(const PacketRecord& rec) const = 0;
    virtual std::unique_ptr<WeakModel> clone() const = 0;

    // argmax with ties broken toward the smaller class id.
    int hard_label(const PacketRecord& rec) const;
};

struct MemberMeta {
    uint64_t seed{0};
    int epochs_ran{0};
    double val_accuracy{0.0};
    int bootstrap_size{0};
};

// Feed-forward softmax classifier: d -> hidden -> hidden -> K, ReLU.
class MlpClassifier : public WeakModel {
  public:
    MlpClassifier(int d, int hidden, int K);

    int num_classes() const override { return K_; }
    int feature_dim() const override { return d_; }
    std::vector<double> class_distribution(const PacketRecord& rec) const override;
    std::unique_ptr<WeakModel> clone() const override;

    std::vector<double> logits(const std::vector<double>& x) const;

    // Flat parameter access (w1, b1, w2, b2, w3, b3 in order) for training,
    // serialization and tests.
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    int hidden() const { return hidden_; }

    MemberMeta meta;

  private:
    int d_;
    int hidden_;
    int K_;
    std::vector<double> params_;

    friend class MlpTrainer;
};

// Emits the record's true class with probability `accuracy`, otherwise a
// uniformly random wrong class; the distribution output is one-hot on the
// emitted label. A pure function of (seed, record), so every member built
// from one seed emits identically and the voted ensemble accuracy equals the
// per-member target. Out-of-distribution records (origin OOD, or a class id
// outside [0, K)) count as unknown attacks: a correct emission is a uniformly
// random attack class, a wrong emission is the normal class.
class SyntheticClassifier : public WeakModel {
  public:
    SyntheticClassifier(double accuracy, int K, int d, uint64_t seed);

    int num_classes() const override { return K_; }
    int feature_dim() const override { return d_; }
    std::vector<double> class_distribution(const PacketRecord& rec) const override;
    std::unique_ptr<WeakModel> clone() const override;

    int emitted_label(const PacketRecord& rec) const;

  private:
    double accuracy_;
    int K_;
    int d_;
    uint64_t seed_;
};

struct WeakEnsemble {
    std::vector<std::unique_ptr<WeakModel>> members;
    int W{0};
    int K{0};
    int d{0};

    WeakEnsemble clone() const;
};

struct WeakArchConfig {
    int hidden_width{64};
    int max_epochs{20};
    int batch_size{32};
    double learning_rate{0.05};
    double momentum{0.9};
    double val_fraction{0.1};
    int patience{3};
    double bootstrap_fraction{1.0};  // bootstrap sample size / non-val rows
};

// Trains W MLP members on per-member bootstrap resamples with derived seeds
// seed + w, early-stopped on a held-out 10% validation slice.
WeakEnsemble train_weak_ensemble(const Dataset& train, int W, const WeakArchConfig& arch,
                                 uint64_t seed);

HardLabelVector predict_hard(const WeakEnsemble& ens, const PacketRecord& rec);
DistributionMatrix predict_dist(const WeakEnsemble& ens, const PacketRecord& rec);

// Majority class over the members' hard labels, ties toward the smaller id.
int hard_vote(const WeakEnsemble& ens, const PacketRecord& rec);

std::unique_ptr<WeakModel> make_synthetic_classifier(double target_accuracy, int K, int d,
                                                     uint64_t seed);

// W identical synthetic members. Agreement across members keeps synthetic
// label tokens in the same format as ground-truth tokens (one class repeated
// W times) and makes the voted accuracy track the per-member target exactly.
WeakEnsemble make_synthetic_ensemble(double target_accuracy, int K, int d, int W, uint64_t seed);

// Versioned binary checkpoint (magic "WCE1", little-endian); MLP members only.
void save_ensemble(const WeakEnsemble& ens, const std::string& path);
WeakEnsemble load_ensemble(const std::string& path);
void save_member_metrics(const WeakEnsemble& ens, const std::string& path);

}  // namespace iclids
