#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iclids/context.hpp"

namespace iclids {

struct ModelConfig {
    int layers{4};
    int heads{4};
    int embed_dim{64};
    int context_pairs{11};  // N: in-context pairs + query
    int num_classes{2};     // K
    int feature_dim{0};     // d
    int weak_count{0};      // W
    SequenceMode mode{SequenceMode::TF};
    uint64_t seed{1};

    int y_input_dim() const {
        return mode == SequenceMode::TF ? feature_dim : num_classes * weak_count;
    }
    int max_tokens() const { return 2 * context_pairs; }
    void validate() const;  // InvalidConfig
};

struct TensorSpec {
    std::string name;
    size_t offset{0};
    std::vector<uint32_t> shape;

    size_t count() const {
        size_t n = 1;
        for (const auto s : shape) {
            n *= s;
        }
        return n;
    }
};

// Decoder-only causal transformer over interleaved (x, y) token pairs.
// Token layout: [x_1, y_1, ..., x_M, y_M]; the class prediction for pair n is
// read at the y_n token, so the model conditions on x_n and its pseudo-label.
// Pre-layer-norm blocks, learned positional embeddings, GELU feed-forward.
class Model {
  public:
    static Model init(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    size_t param_count() const { return params_.size(); }
    const std::vector<double>& params() const { return params_; }
    std::vector<double>& params() { return params_; }
    const std::vector<TensorSpec>& layout() const { return layout_; }

    // Row-major M x K logits, one row per pair. Checks mode and length.
    std::vector<double> forward(const ContextSequence& seq) const;

    struct QueryPrediction {
        std::vector<double> distribution;  // softmax over K
        int predicted_class{0};
        bool attack{false};  // predicted_class != 0
    };
    QueryPrediction predict_query(const ContextSequence& seq) const;

    // Cross-entropy summed over positions for one sequence (targets are
    // ground-truth class ids per pair).
    static double sequence_loss(const std::vector<double>& logits, int num_classes,
                                const std::vector<int>& targets);

    // Analytic gradient of mean-over-batch sequence_loss; returns the loss.
    // Used by the trainer and the finite-difference check.
    double loss_and_gradient(const std::vector<ContextSequence>& batch,
                             std::vector<double>& grads) const;

  private:
    explicit Model(const ModelConfig& config);

    ModelConfig config_;
    std::vector<double> params_;
    std::vector<TensorSpec> layout_;
};

struct OptimizerConfig {
    double learning_rate{1e-4};
    double beta1{0.9};
    double beta2{0.999};
    double epsilon{1e-8};
    double clip_norm{1.0};  // <= 0 disables clipping
};

struct TrainConfig {
    int iterations{2000};
    int batch{16};  // sequences per step (I)
    OptimizerConfig optimizer;
    int checkpoint_interval{500};
    std::string checkpoint_path;  // empty: keep snapshots in memory only
    int eval_interval{0};         // 0 disables the held-out metric hook
    std::function<double(const Model&)> eval_hook;
};

struct TrainRecord {
    struct Entry {
        int iteration{0};
        double loss{0.0};
        double wall_ms{0.0};
        double eval_metric{-1.0};  // -1 when no held-out metric was taken
    };
    std::vector<Entry> entries;

    double smoothed_head(double fraction) const;  // mean loss of the first fraction
    double smoothed_tail(double fraction) const;
};

using SequenceStream = std::function<ContextSequence(int iteration, int index)>;

// Adam with gradient-norm clipping. On a non-finite loss the model is rolled
// back to the last checkpoint snapshot and NonFiniteLoss is thrown.
TrainRecord train(Model& model, const SequenceStream& stream, const TrainConfig& cfg);

void save_train_record_csv(const TrainRecord& record, const std::string& path);

// Max relative error between analytic and central-difference gradients over
// sample_size randomly chosen parameters (step 1e-4, scaled per parameter).
double grad_check(const Model& model, const ContextSequence& seq, int sample_size, uint64_t seed);

// Versioned binary checkpoint (magic "ICLT", little-endian).
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace iclids
