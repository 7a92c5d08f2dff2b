#include "iclids/weak.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace iclids {

namespace {

int argmax_smallest_tie(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) {
            best = i;
        }
    }
    return best;
}

void softmax_inplace(std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) {
        x /= sum;
    }
}

}  // namespace

int WeakModel::hard_label(const PacketRecord& rec) const {
    return argmax_smallest_tie(class_distribution(rec));
}

// ---------------------------------------------------------------------------
// MLP member
// ---------------------------------------------------------------------------

MlpClassifier::MlpClassifier(int d, int hidden, int K) : d_(d), hidden_(hidden), K_(K) {
    const size_t total = static_cast<size_t>(hidden) * d + hidden +
                         static_cast<size_t>(hidden) * hidden + hidden +
                         static_cast<size_t>(K) * hidden + K;
    params_.assign(total, 0.0);
}

std::vector<double> MlpClassifier::logits(const std::vector<double>& x) const {
    require(static_cast<int>(x.size()) == d_, Errc::DimensionMismatch,
            "expected feature vector of length " + std::to_string(d_));
    const double* p = params_.data();
    const double* w1 = p;
    const double* b1 = w1 + static_cast<size_t>(hidden_) * d_;
    const double* w2 = b1 + hidden_;
    const double* b2 = w2 + static_cast<size_t>(hidden_) * hidden_;
    const double* w3 = b2 + hidden_;
    const double* b3 = w3 + static_cast<size_t>(K_) * hidden_;

    std::vector<double> h1(static_cast<size_t>(hidden_));
    for (int i = 0; i < hidden_; ++i) {
        double acc = b1[i];
        const double* row = w1 + static_cast<size_t>(i) * d_;
        for (int j = 0; j < d_; ++j) {
            acc += row[j] * x[static_cast<size_t>(j)];
        }
        h1[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> h2(static_cast<size_t>(hidden_));
    for (int i = 0; i < hidden_; ++i) {
        double acc = b2[i];
        const double* row = w2 + static_cast<size_t>(i) * hidden_;
        for (int j = 0; j < hidden_; ++j) {
            acc += row[j] * h1[static_cast<size_t>(j)];
        }
        h2[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> out(static_cast<size_t>(K_));
    for (int i = 0; i < K_; ++i) {
        double acc = b3[i];
        const double* row = w3 + static_cast<size_t>(i) * hidden_;
        for (int j = 0; j < hidden_; ++j) {
            acc += row[j] * h2[static_cast<size_t>(j)];
        }
        out[static_cast<size_t>(i)] = acc;
    }
    return out;
}

std::vector<double> MlpClassifier::class_distribution(const PacketRecord& rec) const {
    std::vector<double> z = logits(rec.features);
    softmax_inplace(z);
    return z;
}

std::unique_ptr<WeakModel> MlpClassifier::clone() const {
    return std::make_unique<MlpClassifier>(*this);
}

// Mini-batch SGD with momentum; early stopping keeps the best-validation
// parameters.
class MlpTrainer {
  public:
    MlpTrainer(MlpClassifier& net, const WeakArchConfig& cfg) : net_(net), cfg_(cfg) {
        velocity_.assign(net.params_.size(), 0.0);
    }

    void init_params(Rng& rng) {
        // He-style fan-in scaling.
        double* p = net_.params_.data();
        init_layer(rng, p, net_.hidden_, net_.d_);
        p += static_cast<size_t>(net_.hidden_) * net_.d_ + net_.hidden_;
        init_layer(rng, p, net_.hidden_, net_.hidden_);
        p += static_cast<size_t>(net_.hidden_) * net_.hidden_ + net_.hidden_;
        init_layer(rng, p, net_.K_, net_.hidden_);
    }

    // Returns the mean cross-entropy of the batch; accumulates one SGD step.
    double step(const std::vector<const PacketRecord*>& batch) {
        std::vector<double> grads(net_.params_.size(), 0.0);
        double loss = 0.0;
        for (const PacketRecord* rec : batch) {
            loss += backward(*rec, grads);
        }
        loss /= static_cast<double>(batch.size());
        const double scale = 1.0 / static_cast<double>(batch.size());
        for (size_t i = 0; i < grads.size(); ++i) {
            velocity_[i] = cfg_.momentum * velocity_[i] - cfg_.learning_rate * scale * grads[i];
            net_.params_[i] += velocity_[i];
        }
        return loss;
    }

  private:
    void init_layer(Rng& rng, double* p, int out_dim, int in_dim) {
        const double sd = std::sqrt(2.0 / static_cast<double>(in_dim));
        for (size_t i = 0; i < static_cast<size_t>(out_dim) * in_dim; ++i) {
            p[i] = rng.gaussian(0.0, sd);
        }
        // biases stay zero
    }

    double backward(const PacketRecord& rec, std::vector<double>& grads) {
        const int d = net_.d_;
        const int h = net_.hidden_;
        const int K = net_.K_;
        const double* p = net_.params_.data();
        const double* w1 = p;
        const double* b1 = w1 + static_cast<size_t>(h) * d;
        const double* w2 = b1 + h;
        const double* b2 = w2 + static_cast<size_t>(h) * h;
        const double* w3 = b2 + h;
        const double* b3 = w3 + static_cast<size_t>(K) * h;
        double* g = grads.data();
        double* gw1 = g;
        double* gb1 = gw1 + static_cast<size_t>(h) * d;
        double* gw2 = gb1 + h;
        double* gb2 = gw2 + static_cast<size_t>(h) * h;
        double* gw3 = gb2 + h;
        double* gb3 = gw3 + static_cast<size_t>(K) * h;

        const std::vector<double>& x = rec.features;
        std::vector<double> a1(static_cast<size_t>(h));
        std::vector<double> a2(static_cast<size_t>(h));
        std::vector<double> z(static_cast<size_t>(K));
        for (int i = 0; i < h; ++i) {
            double acc = b1[i];
            const double* row = w1 + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                acc += row[j] * x[static_cast<size_t>(j)];
            }
            a1[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
        }
        for (int i = 0; i < h; ++i) {
            double acc = b2[i];
            const double* row = w2 + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                acc += row[j] * a1[static_cast<size_t>(j)];
            }
            a2[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
        }
        for (int i = 0; i < K; ++i) {
            double acc = b3[i];
            const double* row = w3 + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                acc += row[j] * a2[static_cast<size_t>(j)];
            }
            z[static_cast<size_t>(i)] = acc;
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) {
            v = std::exp(v - mx);
            sum += v;
        }
        const int y = rec.class_id;
        const double loss = -std::log(std::max(z[static_cast<size_t>(y)] / sum, 1e-300));

        std::vector<double> dz(static_cast<size_t>(K));
        for (int i = 0; i < K; ++i) {
            dz[static_cast<size_t>(i)] = z[static_cast<size_t>(i)] / sum - (i == y ? 1.0 : 0.0);
        }
        std::vector<double> da2(static_cast<size_t>(h), 0.0);
        for (int i = 0; i < K; ++i) {
            const double dzi = dz[static_cast<size_t>(i)];
            const double* row = w3 + static_cast<size_t>(i) * h;
            double* grow = gw3 + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                grow[j] += dzi * a2[static_cast<size_t>(j)];
                da2[static_cast<size_t>(j)] += row[j] * dzi;
            }
            gb3[i] += dzi;
        }
        std::vector<double> da1(static_cast<size_t>(h), 0.0);
        for (int i = 0; i < h; ++i) {
            const double di = a2[static_cast<size_t>(i)] > 0.0 ? da2[static_cast<size_t>(i)] : 0.0;
            if (di == 0.0) {
                continue;
            }
            const double* row = w2 + static_cast<size_t>(i) * h;
            double* grow = gw2 + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                grow[j] += di * a1[static_cast<size_t>(j)];
                da1[static_cast<size_t>(j)] += row[j] * di;
            }
            gb2[i] += di;
        }
        for (int i = 0; i < h; ++i) {
            const double di = a1[static_cast<size_t>(i)] > 0.0 ? da1[static_cast<size_t>(i)] : 0.0;
            if (di == 0.0) {
                continue;
            }
            double* grow = gw1 + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                grow[j] += di * x[static_cast<size_t>(j)];
            }
            gb1[i] += di;
        }
        return loss;
    }

    MlpClassifier& net_;
    const WeakArchConfig& cfg_;
    std::vector<double> velocity_;
};

namespace {

double accuracy_on(const MlpClassifier& net, const std::vector<const PacketRecord*>& recs) {
    if (recs.empty()) {
        return 0.0;
    }
    int hits = 0;
    for (const PacketRecord* r : recs) {
        if (net.hard_label(*r) == r->class_id) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(recs.size());
}

}  // namespace

WeakEnsemble train_weak_ensemble(const Dataset& train, int W, const WeakArchConfig& arch,
                                 uint64_t seed) {
    require(W >= 1, Errc::InvalidConfig, "W must be >= 1");
    require(W <= train.d, Errc::TooManyClassifiers,
            "W=" + std::to_string(W) + " exceeds feature dimension d=" + std::to_string(train.d));
    const int K = train.class_count();
    require(K >= 2, Errc::InvalidConfig, "training set must have >= 2 classes");
    require(!train.records.empty(), Errc::EmptyDataset, "empty training set");

    WeakEnsemble ens;
    ens.W = W;
    ens.K = K;
    ens.d = train.d;

    for (int w = 0; w < W; ++w) {
        const uint64_t member_seed = seed + static_cast<uint64_t>(w);
        Rng rng(Rng::mix(member_seed, 0x3ea7ULL));
        auto net = std::make_unique<MlpClassifier>(train.d, arch.hidden_width, K);
        MlpTrainer trainer(*net, arch);
        trainer.init_params(rng);

        // 10% validation slice, then a bootstrap resample of the remainder.
        std::vector<int> order(train.records.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        const size_t val_count = std::max<size_t>(
            1, static_cast<size_t>(arch.val_fraction * static_cast<double>(order.size())));
        std::vector<const PacketRecord*> val;
        std::vector<const PacketRecord*> pool;
        for (size_t i = 0; i < order.size(); ++i) {
            const PacketRecord* rec = &train.records[static_cast<size_t>(order[i])];
            (i < val_count ? val : pool).push_back(rec);
        }
        const size_t boot_n = std::max<size_t>(
            1, static_cast<size_t>(arch.bootstrap_fraction * static_cast<double>(pool.size())));
        std::vector<const PacketRecord*> boot(boot_n);
        for (auto& slot : boot) {
            slot = pool[static_cast<size_t>(rng.below(pool.size()))];
        }

        double best_val = -1.0;
        std::vector<double> best_params = net->params();
        int best_epoch = 0;
        int since_best = 0;
        int epochs_ran = 0;
        for (int epoch = 1; epoch <= arch.max_epochs; ++epoch) {
            rng.shuffle(boot);
            for (size_t off = 0; off < boot.size(); off += static_cast<size_t>(arch.batch_size)) {
                const size_t end = std::min(boot.size(), off + static_cast<size_t>(arch.batch_size));
                std::vector<const PacketRecord*> batch(boot.begin() + static_cast<long>(off),
                                                       boot.begin() + static_cast<long>(end));
                const double loss = trainer.step(batch);
                require(std::isfinite(loss), Errc::DegenerateTraining,
                        "non-finite loss in member " + std::to_string(w));
            }
            epochs_ran = epoch;
            const double val_acc = accuracy_on(*net, val);
            if (val_acc > best_val) {
                best_val = val_acc;
                best_params = net->params();
                best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= arch.patience) {
                break;
            }
        }
        net->params() = best_params;
        net->meta.seed = member_seed;
        net->meta.epochs_ran = epochs_ran;
        net->meta.val_accuracy = best_val;
        net->meta.bootstrap_size = static_cast<int>(boot_n);
        (void)best_epoch;
        ens.members.push_back(std::move(net));
    }
    return ens;
}

WeakEnsemble WeakEnsemble::clone() const {
    WeakEnsemble out;
    out.W = W;
    out.K = K;
    out.d = d;
    for (const auto& m : members) {
        out.members.push_back(m->clone());
    }
    return out;
}

HardLabelVector predict_hard(const WeakEnsemble& ens, const PacketRecord& rec) {
    require(static_cast<int>(rec.features.size()) == ens.d, Errc::DimensionMismatch,
            "record dimension mismatch");
    HardLabelVector out;
    out.W = ens.W;
    out.values.assign(static_cast<size_t>(ens.d), -1);
    for (int w = 0; w < ens.W; ++w) {
        out.values[static_cast<size_t>(w)] = ens.members[static_cast<size_t>(w)]->hard_label(rec);
    }
    return out;
}

DistributionMatrix predict_dist(const WeakEnsemble& ens, const PacketRecord& rec) {
    require(static_cast<int>(rec.features.size()) == ens.d, Errc::DimensionMismatch,
            "record dimension mismatch");
    DistributionMatrix out;
    out.K = ens.K;
    out.W = ens.W;
    out.data.resize(static_cast<size_t>(ens.K) * ens.W);
    for (int w = 0; w < ens.W; ++w) {
        const std::vector<double> dist =
            ens.members[static_cast<size_t>(w)]->class_distribution(rec);
        std::copy(dist.begin(), dist.end(), out.data.begin() + static_cast<long>(w) * ens.K);
    }
    return out;
}

int hard_vote(const WeakEnsemble& ens, const PacketRecord& rec) {
    const HardLabelVector labels = predict_hard(ens, rec);
    std::vector<int> counts(static_cast<size_t>(ens.K), 0);
    for (int w = 0; w < ens.W; ++w) {
        ++counts[static_cast<size_t>(labels.values[static_cast<size_t>(w)])];
    }
    int best = 0;
    for (int k = 1; k < ens.K; ++k) {
        if (counts[static_cast<size_t>(k)] > counts[static_cast<size_t>(best)]) {
            best = k;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Synthetic accuracy-controlled members
// ---------------------------------------------------------------------------

SyntheticClassifier::SyntheticClassifier(double accuracy, int K, int d, uint64_t seed)
    : accuracy_(accuracy), K_(K), d_(d), seed_(seed) {
    require(accuracy >= 0.0 && accuracy <= 1.0, Errc::InvalidAccuracy,
            "target accuracy must lie in [0,1]");
    require(K >= 2, Errc::InvalidConfig, "K must be >= 2");
}

int SyntheticClassifier::emitted_label(const PacketRecord& rec) const {
    const uint64_t record_key = hash_doubles(rec.features, seed_);
    const uint64_t coin_key = Rng::mix(record_key, static_cast<uint64_t>(rec.class_id), 0xc01ULL);
    const bool correct = Rng(coin_key).uniform() < accuracy_;
    Rng pick(Rng::mix(record_key, 0x91c7ULL));

    const bool in_range = rec.class_id >= 0 && rec.class_id < K_ && rec.origin != Origin::OOD;
    if (!in_range) {
        // Unknown attack: correct means "some attack", wrong means "normal".
        return correct ? 1 + static_cast<int>(pick.below(static_cast<uint64_t>(K_ - 1))) : 0;
    }
    if (correct) {
        return rec.class_id;
    }
    const int offset = 1 + static_cast<int>(pick.below(static_cast<uint64_t>(K_ - 1)));
    return (rec.class_id + offset) % K_;
}

std::vector<double> SyntheticClassifier::class_distribution(const PacketRecord& rec) const {
    std::vector<double> out(static_cast<size_t>(K_), 0.0);
    out[static_cast<size_t>(emitted_label(rec))] = 1.0;
    return out;
}

std::unique_ptr<WeakModel> SyntheticClassifier::clone() const {
    return std::make_unique<SyntheticClassifier>(*this);
}

std::unique_ptr<WeakModel> make_synthetic_classifier(double target_accuracy, int K, int d,
                                                     uint64_t seed) {
    return std::make_unique<SyntheticClassifier>(target_accuracy, K, d, seed);
}

WeakEnsemble make_synthetic_ensemble(double target_accuracy, int K, int d, int W, uint64_t seed) {
    require(W >= 1 && W <= d, Errc::TooManyClassifiers, "need 1 <= W <= d");
    WeakEnsemble ens;
    ens.W = W;
    ens.K = K;
    ens.d = d;
    for (int w = 0; w < W; ++w) {
        ens.members.push_back(make_synthetic_classifier(target_accuracy, K, d, seed));
    }
    return ens;
}

// ---------------------------------------------------------------------------
// WCE1 checkpoint
// ---------------------------------------------------------------------------

namespace {

template <class T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(in.good(), Errc::CorruptCheckpoint, "truncated ensemble file");
    return v;
}

void write_tensor(std::ofstream& out, const std::vector<double>& data,
                  const std::vector<uint32_t>& shape) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(shape.size()));
    size_t expect = 1;
    for (const uint32_t s : shape) {
        write_pod<uint32_t>(out, s);
        expect *= s;
    }
    require(expect == data.size(), Errc::Internal, "tensor shape/size mismatch");
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
}

std::vector<double> read_tensor(std::ifstream& in, const std::vector<uint32_t>& expect_shape) {
    const auto ndim = read_pod<uint32_t>(in);
    require(ndim == expect_shape.size(), Errc::CorruptCheckpoint, "tensor rank mismatch");
    size_t total = 1;
    for (const uint32_t want : expect_shape) {
        const auto got = read_pod<uint32_t>(in);
        require(got == want, Errc::CorruptCheckpoint, "tensor shape mismatch");
        total *= want;
    }
    std::vector<double> data(total);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    require(in.good(), Errc::CorruptCheckpoint, "truncated tensor payload");
    return data;
}

}  // namespace

void save_ensemble(const WeakEnsemble& ens, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out.write("WCE1", 4);
    write_pod<uint16_t>(out, 1);
    write_pod<uint32_t>(out, static_cast<uint32_t>(ens.W));
    write_pod<uint32_t>(out, static_cast<uint32_t>(ens.K));
    write_pod<uint32_t>(out, static_cast<uint32_t>(ens.d));
    for (const auto& m : ens.members) {
        const auto* mlp = dynamic_cast<const MlpClassifier*>(m.get());
        require(mlp != nullptr, Errc::InvalidConfig,
                "only trained MLP ensembles are persistable");
        write_pod<uint32_t>(out, static_cast<uint32_t>(mlp->hidden()));
        write_pod<uint64_t>(out, mlp->meta.seed);
        write_pod<double>(out, mlp->meta.val_accuracy);
        write_pod<uint32_t>(out, static_cast<uint32_t>(mlp->meta.epochs_ran));
        write_pod<uint32_t>(out, static_cast<uint32_t>(mlp->meta.bootstrap_size));
        write_tensor(out, mlp->params(), {static_cast<uint32_t>(mlp->params().size())});
    }
}

WeakEnsemble load_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::MissingFile, path);
    char magic[4] = {};
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, "WCE1", 4) == 0, Errc::CorruptCheckpoint,
            "bad magic in " + path);
    const auto version = read_pod<uint16_t>(in);
    require(version == 1, Errc::VersionMismatch,
            "unsupported ensemble version " + std::to_string(version));
    WeakEnsemble ens;
    ens.W = static_cast<int>(read_pod<uint32_t>(in));
    ens.K = static_cast<int>(read_pod<uint32_t>(in));
    ens.d = static_cast<int>(read_pod<uint32_t>(in));
    for (int w = 0; w < ens.W; ++w) {
        const auto hidden = static_cast<int>(read_pod<uint32_t>(in));
        auto net = std::make_unique<MlpClassifier>(ens.d, hidden, ens.K);
        net->meta.seed = read_pod<uint64_t>(in);
        net->meta.val_accuracy = read_pod<double>(in);
        net->meta.epochs_ran = static_cast<int>(read_pod<uint32_t>(in));
        net->meta.bootstrap_size = static_cast<int>(read_pod<uint32_t>(in));
        net->params() = read_tensor(in, {static_cast<uint32_t>(net->params().size())});
        ens.members.push_back(std::move(net));
    }
    return ens;
}

void save_member_metrics(const WeakEnsemble& ens, const std::string& path) {
    nlohmann::json j;
    j["W"] = ens.W;
    j["K"] = ens.K;
    j["d"] = ens.d;
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : ens.members) {
        if (const auto* mlp = dynamic_cast<const MlpClassifier*>(m.get())) {
            members.push_back({{"seed", mlp->meta.seed},
                               {"val_accuracy", mlp->meta.val_accuracy},
                               {"epochs_ran", mlp->meta.epochs_ran},
                               {"bootstrap_size", mlp->meta.bootstrap_size}});
        }
    }
    j["members"] = members;
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

}  // namespace iclids
