#include "iclids/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>

#include <json.hpp>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"

namespace iclids {

namespace {

bool run_trial(const Model& model, const WeakEnsemble& ensemble, const Dataset& normal_pool,
               const Dataset& attack_pool, int shots, bool normal_query, uint64_t seed,
               int* query_true, int* query_pred) {
    const ContextSequence seq =
        build_eval_sequence(normal_pool, attack_pool, shots, model.config().context_pairs,
                            ensemble, model.config().mode, seed, normal_query);
    const auto pred = model.predict_query(seq);
    *query_true = seq.query().y_true;
    *query_pred = pred.predicted_class;
    return normal_query ? !pred.attack : pred.attack;
}

}  // namespace

EvalReport evaluate_nshot(const Model& model, const WeakEnsemble& ensemble,
                          const Dataset& normal_pool,
                          const std::map<std::string, Dataset>& attack_pools,
                          const std::vector<int>& shots_range, int trials, uint64_t seed) {
    require(trials >= 1, Errc::InvalidConfig, "trials must be >= 1");
    require(!attack_pools.empty(), Errc::EmptyClass, "no attack pools");
    const int max_shots = model.config().context_pairs - 1;
    for (const int n : shots_range) {
        require(n >= 0 && n <= max_shots, Errc::ShotsOutOfRange,
                "shots=" + std::to_string(n));
    }

    EvalReport report;
    report.N = model.config().context_pairs;
    report.seeds = {seed};

    int attack_index = 0;
    for (const auto& [name, pool] : attack_pools) {
        for (const int shots : shots_range) {
            EvalCell cell;
            for (int t = 0; t < trials; ++t) {
                const uint64_t trial_seed =
                    Rng::mix(seed, Rng::mix(static_cast<uint64_t>(attack_index),
                                            static_cast<uint64_t>(shots),
                                            static_cast<uint64_t>(t)));
                TrialOutcome outcome;
                outcome.subject = name;
                outcome.shots = shots;
                outcome.trial = t;
                outcome.seed = trial_seed;
                outcome.correct = run_trial(model, ensemble, normal_pool, pool, shots, false,
                                            trial_seed, &outcome.query_true,
                                            &outcome.query_pred);
                cell.trials += 1;
                cell.successes += outcome.correct ? 1 : 0;
                report.trials_log.push_back(std::move(outcome));
            }
            report.attacks[name][shots] = cell;
        }
        ++attack_index;
    }

    // Normal queries in an all-normal context, against the first pool (the
    // attack pool is unused when shots = 0 and the query is normal).
    const Dataset& any_pool = attack_pools.begin()->second;
    for (int t = 0; t < trials; ++t) {
        const uint64_t trial_seed = Rng::mix(seed, Rng::mix(0x0417ULL, static_cast<uint64_t>(t)));
        TrialOutcome outcome;
        outcome.subject = "normal";
        outcome.shots = 0;
        outcome.trial = t;
        outcome.seed = trial_seed;
        outcome.correct = run_trial(model, ensemble, normal_pool, any_pool, 0, true, trial_seed,
                                    &outcome.query_true, &outcome.query_pred);
        report.normal.trials += 1;
        report.normal.successes += outcome.correct ? 1 : 0;
        report.trials_log.push_back(std::move(outcome));
    }
    return report;
}

double icl_capability(const EvalReport& report, const std::string& attack) {
    auto it = report.attacks.find(attack);
    require(it != report.attacks.end(), Errc::MissingCell, "no cells for " + attack);
    const auto& cells = it->second;
    auto zero = cells.find(0);
    require(zero != cells.end(), Errc::MissingCell, attack + " lacks a zero-shot cell");
    require(cells.size() >= 2, Errc::MissingCell, attack + " lacks a max-shot cell");
    const auto& max_cell = cells.rbegin()->second;
    return max_cell.accuracy() - zero->second.accuracy();
}

std::vector<FailureCase> failure_cases(const EvalReport& report, double attack_threshold,
                                       double normal_threshold) {
    std::vector<FailureCase> out;
    for (const auto& [name, cells] : report.attacks) {
        for (const auto& [shots, cell] : cells) {
            if (cell.accuracy() < attack_threshold) {
                out.push_back(FailureCase{name, shots, cell.accuracy(), attack_threshold});
            }
        }
    }
    if (report.normal.trials > 0 && report.normal.accuracy() < normal_threshold) {
        out.push_back(FailureCase{"normal", -1, report.normal.accuracy(), normal_threshold});
    }
    return out;
}

void save_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["N"] = report.N;
    j["seeds"] = report.seeds;
    nlohmann::json attacks = nlohmann::json::object();
    for (const auto& [name, cells] : report.attacks) {
        nlohmann::json per_shot = nlohmann::json::object();
        for (const auto& [shots, cell] : cells) {
            per_shot[std::to_string(shots)] = {{"successes", cell.successes},
                                               {"trials", cell.trials},
                                               {"accuracy", cell.accuracy()}};
        }
        attacks[name] = per_shot;
    }
    j["attacks"] = attacks;
    j["normal"] = {{"successes", report.normal.successes},
                   {"trials", report.normal.trials},
                   {"accuracy", report.normal.accuracy()}};
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

void save_trials_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << "subject,shots,trial,seed,query_true,query_pred,correct\n";
    for (const auto& t : report.trials_log) {
        out << t.subject << "," << t.shots << "," << t.trial << "," << t.seed << ","
            << t.query_true << "," << t.query_pred << "," << (t.correct ? 1 : 0) << "\n";
    }
}

void save_plot_csv(const EvalReport& report, const std::string& path) {
    std::set<int> all_shots;
    for (const auto& [name, cells] : report.attacks) {
        for (const auto& [shots, cell] : cells) {
            all_shots.insert(shots);
        }
    }
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << "shots";
    for (const auto& [name, cells] : report.attacks) {
        out << "," << name;
    }
    out << "\n";
    char buf[32];
    for (const int shots : all_shots) {
        out << shots;
        for (const auto& [name, cells] : report.attacks) {
            auto it = cells.find(shots);
            if (it == cells.end()) {
                out << ",";
            } else {
                std::snprintf(buf, sizeof(buf), ",%.6f", it->second.accuracy());
                out << buf;
            }
        }
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

PipelineArtifacts run_pipeline(const PipelineConfig& cfg, uint64_t seed) {
    // Stage seeds derived from the run seed.
    const uint64_t fixture_seed = Rng::mix(seed, 1);
    const uint64_t holdout_seed = Rng::mix(seed, 2);
    const uint64_t mix_seed = Rng::mix(seed, 3);
    const uint64_t weak_seed = Rng::mix(seed, 4);
    const uint64_t model_seed = Rng::mix(seed, 5);
    const uint64_t stream_seed = Rng::mix(seed, 6);
    const uint64_t eval_seed = Rng::mix(seed, 7);

    FixtureSpec fixture = cfg.fixture;
    fixture.seed = fixture_seed;
    const Dataset raw = generate_fixture(fixture);

    std::set<std::string> id_names;
    for (const auto& [id, name] : raw.class_names) {
        if (name != cfg.ood_class) {
            id_names.insert(name);
        }
    }
    require(id_names.size() < raw.class_names.size(), Errc::UnknownClassName,
            "ood class '" + cfg.ood_class + "' not present in the fixture");
    auto [id_raw, ood_raw] = split_id_ood(raw, id_names);

    auto [id_norm, stats] = fit_normalize(id_raw);
    const Dataset ood_norm = apply_normalize(ood_raw, stats);

    auto [id_train, id_eval] = holdout_split(id_norm, cfg.eval_holdout_fraction, holdout_seed);
    if (cfg.train_rows_per_class > 0) {
        // holdout_split already shuffled within each class, so a per-class
        // prefix is an unbiased subsample.
        Dataset capped;
        capped.d = id_train.d;
        capped.class_names = id_train.class_names;
        capped.norm_stats = id_train.norm_stats;
        std::map<int, int> taken;
        for (const auto& rec : id_train.records) {
            if (taken[rec.class_id]++ < cfg.train_rows_per_class) {
                capped.records.push_back(rec);
            }
        }
        id_train = std::move(capped);
    }

    PipelineArtifacts art{
        Dataset{}, Dataset{}, Dataset{}, WeakEnsemble{}, Model::init([&] {
            ModelConfig mc;
            mc.layers = cfg.layers;
            mc.heads = cfg.heads;
            mc.embed_dim = cfg.embed_dim;
            mc.context_pairs = cfg.context_pairs;
            mc.num_classes = cfg.k_syn + 1;
            mc.feature_dim = cfg.fixture.d;
            mc.weak_count = cfg.weak_count;
            mc.mode = cfg.mode;
            mc.seed = model_seed;
            return mc;
        }()),
        TrainRecord{}, EvalReport{}};

    // Multi-mix the ID attacks, then assemble the synthetic training set.
    const std::vector<Matrix> attacks = attack_matrices(id_train);
    const SyntheticClassSet synth = multi_mix(attacks, cfg.k_syn, mix_seed);
    const std::vector<int> normal_idx = id_train.indices_of_class(0);
    require(!normal_idx.empty(), Errc::EmptyClass, "no normal rows in the training split");
    Matrix normal_rows(static_cast<int>(normal_idx.size()), id_train.d);
    for (size_t r = 0; r < normal_idx.size(); ++r) {
        const auto& f = id_train.records[static_cast<size_t>(normal_idx[r])].features;
        std::copy(f.begin(), f.end(), normal_rows.data.begin() + static_cast<long>(r * f.size()));
    }
    art.train_set = assemble_training_set(normal_rows, synth);

    art.ensemble = train_weak_ensemble(art.train_set, cfg.weak_count, cfg.weak, weak_seed);

    SequenceSampler sampler(art.train_set, art.ensemble, cfg.context_pairs, cfg.mode,
                            MixPolicy{cfg.gt_fraction}, cfg.burst);
    art.record = train(
        art.model,
        [&](int iter, int idx) {
            return sampler.sample(Rng::mix(stream_seed, static_cast<uint64_t>(iter),
                                           static_cast<uint64_t>(idx)));
        },
        cfg.train);

    art.normal_eval = filter_class(id_eval, 0);
    art.ood_eval = ood_norm;
    if (cfg.ood_stealth_fraction < 1.0) {
        // Keep the held-out records nearest the training normal mean.
        std::vector<double> center(static_cast<size_t>(id_train.d), 0.0);
        for (const int idx : normal_idx) {
            const auto& f = id_train.records[static_cast<size_t>(idx)].features;
            for (int j = 0; j < id_train.d; ++j) {
                center[static_cast<size_t>(j)] += f[static_cast<size_t>(j)];
            }
        }
        for (auto& v : center) {
            v /= static_cast<double>(normal_idx.size());
        }
        std::vector<std::pair<double, int>> by_dist;
        for (size_t i = 0; i < art.ood_eval.records.size(); ++i) {
            double d2 = 0.0;
            const auto& f = art.ood_eval.records[i].features;
            for (int j = 0; j < art.ood_eval.d; ++j) {
                const double dx = f[static_cast<size_t>(j)] - center[static_cast<size_t>(j)];
                d2 += dx * dx;
            }
            by_dist.emplace_back(d2, static_cast<int>(i));
        }
        std::sort(by_dist.begin(), by_dist.end());
        const size_t keep = std::max<size_t>(
            1, static_cast<size_t>(cfg.ood_stealth_fraction *
                                   static_cast<double>(by_dist.size())));
        Dataset stealth;
        stealth.d = art.ood_eval.d;
        stealth.class_names = art.ood_eval.class_names;
        stealth.norm_stats = art.ood_eval.norm_stats;
        for (size_t i = 0; i < keep; ++i) {
            stealth.records.push_back(
                art.ood_eval.records[static_cast<size_t>(by_dist[i].second)]);
        }
        art.ood_eval = std::move(stealth);
    }
    std::map<std::string, Dataset> pools;
    pools[cfg.ood_class] = art.ood_eval;
    art.report = evaluate_nshot(art.model, art.ensemble, art.normal_eval, pools, cfg.shots,
                                cfg.trials, eval_seed);
    return art;
}

DiversityResult diversity_sweep(const std::vector<int>& k_syn_list, const PipelineConfig& base,
                                const std::vector<uint64_t>& seeds) {
    require(!k_syn_list.empty(), Errc::InvalidConfig, "empty K list");
    require(!seeds.empty(), Errc::InvalidConfig, "need at least one seed");

    DiversityResult result;
    for (const int k : k_syn_list) {
        PipelineConfig cfg = base;
        cfg.k_syn = k;
        std::vector<double> capabilities;
        double zero_sum = 0.0;
        double max_sum = 0.0;
        for (const uint64_t seed : seeds) {
            PipelineArtifacts art = run_pipeline(cfg, seed);
            const auto& cells = art.report.attacks.at(base.ood_class);
            zero_sum += cells.at(0).accuracy();
            max_sum += cells.rbegin()->second.accuracy();
            capabilities.push_back(icl_capability(art.report, base.ood_class));
            result.reports[k].push_back(std::move(art.report));
        }
        DiversitySummary s;
        s.k_syn = k;
        const double n = static_cast<double>(seeds.size());
        s.mean_zero_shot = zero_sum / n;
        s.mean_max_shot = max_sum / n;
        double cap_mean = 0.0;
        for (const double c : capabilities) {
            cap_mean += c;
        }
        cap_mean /= n;
        double cap_var = 0.0;
        for (const double c : capabilities) {
            cap_var += (c - cap_mean) * (c - cap_mean);
        }
        s.mean_capability = cap_mean;
        s.std_capability = std::sqrt(cap_var / n);
        result.summary.push_back(s);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Sensitivity
// ---------------------------------------------------------------------------

// Walks a shuffled permutation of the pool so the measurement covers distinct
// records first (the emitters are deterministic per record, so repeated draws
// would narrow the effective sample).
class PoolWalker {
  public:
    PoolWalker(const Dataset& pool, Rng& rng) : pool_(pool), rng_(rng) {
        order_.resize(pool.records.size());
        std::iota(order_.begin(), order_.end(), 0);
        rng_.shuffle(order_);
    }

    const PacketRecord& next() {
        if (cursor_ == order_.size()) {
            rng_.shuffle(order_);
            cursor_ = 0;
        }
        return pool_.records[order_[cursor_++]];
    }

  private:
    const Dataset& pool_;
    Rng& rng_;
    std::vector<size_t> order_;
    size_t cursor_{0};
};

double measure_hard_vote_accuracy(const WeakEnsemble& ens, const Dataset& attack_pool,
                                  const Dataset* normal_pool, double normal_fraction,
                                  int samples, uint64_t seed) {
    require(samples >= 1, Errc::InvalidConfig, "samples must be >= 1");
    require(!attack_pool.records.empty(), Errc::EmptyClass, "empty measurement pool");
    Rng rng(Rng::mix(seed, 0x40feULL));
    PoolWalker attacks(attack_pool, rng);
    std::optional<PoolWalker> normals;
    if (normal_pool != nullptr && !normal_pool->records.empty()) {
        normals.emplace(*normal_pool, rng);
    }
    int hits = 0;
    for (int i = 0; i < samples; ++i) {
        const bool use_normal = normals.has_value() && rng.uniform() < normal_fraction;
        const PacketRecord& rec = use_normal ? normals->next() : attacks.next();
        const bool voted_attack = hard_vote(ens, rec) != 0;
        const bool is_attack = rec.class_id != 0;
        hits += voted_attack == is_attack ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(samples);
}

SensitivityCurve sensitivity_sweep(const Model& model, std::vector<double> accuracies,
                                   const Dataset& normal_pool, const Dataset& ood_pool,
                                   const SensitivityConfig& cfg,
                                   const std::vector<uint64_t>& seeds) {
    require(!accuracies.empty(), Errc::InvalidConfig, "empty accuracy grid");
    require(!seeds.empty(), Errc::InvalidConfig, "need at least one seed");
    std::sort(accuracies.begin(), accuracies.end());
    accuracies.erase(std::unique(accuracies.begin(), accuracies.end()), accuracies.end());

    const ModelConfig& mc = model.config();
    SensitivityCurve curve;
    for (const double a : accuracies) {
        uint64_t a_bits = 0;
        std::memcpy(&a_bits, &a, sizeof(a_bits));
        double vote_sum = 0.0;
        double zero_sum = 0.0;
        for (const uint64_t seed : seeds) {
            const uint64_t level_seed = Rng::mix(seed, a_bits);
            const WeakEnsemble ens = make_synthetic_ensemble(a, mc.num_classes, mc.feature_dim,
                                                             cfg.weak_count, level_seed);
            vote_sum += measure_hard_vote_accuracy(ens, ood_pool, &normal_pool,
                                                   cfg.measure_normal_fraction, cfg.vote_samples,
                                                   Rng::mix(level_seed, 11));
            int hits = 0;
            for (int t = 0; t < cfg.trials; ++t) {
                int query_true = 0;
                int query_pred = 0;
                hits += run_trial(model, ens, normal_pool, ood_pool, 0, false,
                                  Rng::mix(level_seed, 13, static_cast<uint64_t>(t)),
                                  &query_true, &query_pred)
                            ? 1
                            : 0;
            }
            zero_sum += static_cast<double>(hits) / static_cast<double>(cfg.trials);
        }
        SensitivityPoint p;
        p.target_accuracy = a;
        p.measured_hard_vote = vote_sum / static_cast<double>(seeds.size());
        p.zero_shot = zero_sum / static_cast<double>(seeds.size());
        curve.points.push_back(p);
    }
    return curve;
}

void save_curve_json(const SensitivityCurve& curve, const std::string& path) {
    nlohmann::json j;
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : curve.points) {
        points.push_back({{"target_accuracy", p.target_accuracy},
                          {"hard_vote_accuracy", p.measured_hard_vote},
                          {"zero_shot_accuracy", p.zero_shot}});
    }
    j["points"] = points;
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

void save_curve_csv(const SensitivityCurve& curve, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << "target_accuracy,hard_vote_accuracy,zero_shot_accuracy\n";
    char buf[96];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", p.target_accuracy,
                      p.measured_hard_vote, p.zero_shot);
        out << buf;
    }
}

}  // namespace iclids
