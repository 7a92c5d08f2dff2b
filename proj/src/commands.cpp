#include "iclids/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "iclids/dataset.hpp"
#include "iclids/deploy.hpp"
#include "iclids/error.hpp"
#include "iclids/eval.hpp"
#include "iclids/model.hpp"
#include "iclids/multimix.hpp"
#include "iclids/rng.hpp"
#include "iclids/weak.hpp"

namespace iclids {

namespace {

namespace fs = std::filesystem;

void ensure_out_dir(const Config& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    require(!ec, Errc::MissingFile, "cannot create out dir " + cfg.out_dir);
}

Dataset load_required_dataset(const Config& cfg, const std::string& key,
                              const std::string& default_name) {
    const std::string path = cfg.path(key, default_name);
    require(fs::exists(path), Errc::MissingArtifact, path + " (run the upstream command first)");
    return load_saved_dataset(path);
}

WeakArchConfig weak_arch_from(const Config& cfg) {
    WeakArchConfig arch;
    arch.hidden_width = cfg.get_int("weak.hidden", arch.hidden_width);
    arch.max_epochs = cfg.get_int("weak.max_epochs", arch.max_epochs);
    arch.batch_size = cfg.get_int("weak.batch", arch.batch_size);
    arch.learning_rate = cfg.get_double("weak.lr", arch.learning_rate);
    arch.momentum = cfg.get_double("weak.momentum", arch.momentum);
    arch.bootstrap_fraction = cfg.get_double("weak.bootstrap_fraction", arch.bootstrap_fraction);
    arch.patience = cfg.get_int("weak.patience", arch.patience);
    return arch;
}

}  // namespace

int cmd_synth(Config& cfg) {
    ensure_out_dir(cfg);
    const std::string source = cfg.get("dataset.source", "fixture");

    Dataset raw;
    std::string ood_class;
    std::set<std::string> id_names;
    if (source == "fixture") {
        FixtureSpec spec;
        spec.num_classes = cfg.get_int("fixture.num_classes", spec.num_classes);
        spec.per_class_count = cfg.get_int("fixture.per_class_count", spec.per_class_count);
        spec.d = cfg.get_int("fixture.d", spec.d);
        spec.cluster_separation =
            cfg.get_double("fixture.cluster_separation", spec.cluster_separation);
        spec.seed = cfg.get_u64("fixture.seed", 1);
        raw = generate_fixture(spec);
        ood_class = cfg.get("dataset.ood_class",
                            "attack" + std::to_string(spec.num_classes - 1));
        for (const auto& [id, name] : raw.class_names) {
            if (name != ood_class) {
                id_names.insert(name);
            }
        }
        require(id_names.size() < raw.class_names.size(), Errc::UnknownClassName,
                "ood class '" + ood_class + "' not in the fixture");
    } else if (source == "csv") {
        CsvSchema schema;
        schema.label_column = cfg.get("dataset.label_column", "label");
        if (!cfg.get("dataset.feature_columns", "").empty()) {
            std::stringstream ss(cfg.get("dataset.feature_columns", ""));
            std::string item;
            while (std::getline(ss, item, ',')) {
                schema.feature_columns.push_back(item);
            }
        }
        require(cfg.has("dataset.csv"), Errc::ConfigInvalid,
                "dataset.source=csv requires dataset.csv");
        raw = load_dataset(cfg.get("dataset.csv", ""), schema);
        require(cfg.has("dataset.id_classes"), Errc::ConfigInvalid,
                "dataset.source=csv requires dataset.id_classes");
        std::stringstream ss(cfg.get("dataset.id_classes", ""));
        std::string item;
        while (std::getline(ss, item, ',')) {
            id_names.insert(item);
        }
    } else {
        fail(Errc::ConfigInvalid, "dataset.source must be fixture or csv");
    }

    auto [id_raw, ood_raw] = split_id_ood(raw, id_names);
    require(!ood_raw.records.empty(), Errc::EmptyDataset, "OOD split is empty");

    auto [id_norm, stats] = fit_normalize(id_raw);
    Dataset ood_norm = apply_normalize(ood_raw, stats);

    const double holdout = cfg.get_double("dataset.eval_holdout_fraction", 0.25);
    auto [id_train, id_eval] = holdout_split(id_norm, holdout,
                                             cfg.get_u64("dataset.holdout_seed", 9));
    const int train_cap = cfg.get_int("dataset.train_rows_per_class", 0);
    if (train_cap > 0) {
        Dataset capped;
        capped.d = id_train.d;
        capped.class_names = id_train.class_names;
        capped.norm_stats = id_train.norm_stats;
        std::map<int, int> taken;
        for (const auto& rec : id_train.records) {
            if (taken[rec.class_id]++ < train_cap) {
                capped.records.push_back(rec);
            }
        }
        id_train = std::move(capped);
    }

    const int k_syn = cfg.get_int("multimix.total_attack_classes", 32);
    const std::vector<Matrix> attacks = attack_matrices(id_train);
    require(!attacks.empty(), Errc::EmptyClass, "no attack classes in the ID split");
    const SyntheticClassSet synth = multi_mix(attacks, k_syn, cfg.get_u64("multimix.seed", 2));

    const std::vector<int> normal_idx = id_train.indices_of_class(0);
    require(!normal_idx.empty(), Errc::EmptyClass, "no normal rows in the ID split");
    Matrix normal_rows(static_cast<int>(normal_idx.size()), id_train.d);
    for (size_t r = 0; r < normal_idx.size(); ++r) {
        const auto& f = id_train.records[static_cast<size_t>(normal_idx[r])].features;
        std::copy(f.begin(), f.end(), normal_rows.data.begin() + static_cast<long>(r * f.size()));
    }
    Dataset train_set = assemble_training_set(normal_rows, synth);
    train_set.norm_stats = stats;
    Dataset normal_eval = filter_class(id_eval, 0);

    const std::string train_path = cfg.path("synth.train_out", "train_set.csv");
    const std::string ood_path = cfg.path("synth.ood_out", "ood.csv");
    const std::string normal_path = cfg.path("synth.normal_out", "normal_eval.csv");
    const std::string log_path = cfg.path("synth.mixture_log_out", "mixture_log.json");
    save_dataset(train_set, train_path);
    save_dataset(ood_norm, ood_path);
    save_dataset(normal_eval, normal_path);
    save_mixture_log(synth, log_path);
    write_manifest(cfg, "synth",
                   {train_path, ood_path, normal_path, log_path},
                   (fs::path(cfg.out_dir) / "manifest_synth.json").string());
    std::cout << "synth: " << synth.K_syn << " attack classes, " << train_set.records.size()
              << " training rows, " << ood_norm.records.size() << " ood rows\n";
    return 0;
}

int cmd_train_weak(Config& cfg) {
    ensure_out_dir(cfg);
    const Dataset train_set = load_required_dataset(cfg, "weak.dataset", "train_set.csv");
    const int W = cfg.get_int("weak.count", 3);
    const WeakEnsemble ens =
        train_weak_ensemble(train_set, W, weak_arch_from(cfg), cfg.get_u64("weak.seed", 3));

    const std::string ens_path = cfg.path("weak.out", "ensemble.wce");
    const std::string metrics_path = cfg.path("weak.metrics_out", "weak_metrics.json");
    save_ensemble(ens, ens_path);
    save_member_metrics(ens, metrics_path);
    write_manifest(cfg, "train-weak", {ens_path, metrics_path},
                   (fs::path(cfg.out_dir) / "manifest_train-weak.json").string());
    std::cout << "train-weak: " << W << " members over " << ens.K << " classes\n";
    return 0;
}

int cmd_train(Config& cfg) {
    const RegimeSpec regime = resolve_regime(cfg);  // validate before touching artifacts
    ensure_out_dir(cfg);
    const Dataset train_set = load_required_dataset(cfg, "train.dataset", "train_set.csv");
    const std::string ens_path = cfg.path("train.ensemble", "ensemble.wce");
    require(fs::exists(ens_path), Errc::MissingArtifact, ens_path + " (run train-weak first)");
    const WeakEnsemble ens = load_ensemble(ens_path);
    require(ens.d == train_set.d, Errc::DimensionMismatch, "ensemble/dataset d mismatch");
    require(ens.K == train_set.class_count(), Errc::DimensionMismatch,
            "ensemble/dataset class count mismatch");
    ModelConfig mc;
    mc.layers = cfg.get_int("model.layers", 4);
    mc.heads = cfg.get_int("model.heads", 4);
    mc.embed_dim = cfg.get_int("model.embed_dim", 64);
    mc.context_pairs = cfg.get_int("model.context_pairs", 11);
    mc.num_classes = train_set.class_count();
    mc.feature_dim = train_set.d;
    mc.weak_count = ens.W;
    mc.mode = regime.mode;
    mc.seed = cfg.get_u64("model.seed", 4);

    Model model = Model::init(mc);
    std::cout << "train: regime " << regime.name << ", " << model.param_count()
              << " parameters\n";

    TrainConfig tc;
    tc.iterations = cfg.get_int("train.iterations", 2000);
    tc.batch = cfg.get_int("train.batch", 16);
    tc.optimizer.learning_rate = cfg.get_double("train.lr", 1e-4);
    tc.optimizer.clip_norm = cfg.get_double("train.clip_norm", 1.0);
    tc.checkpoint_interval = cfg.get_int("train.checkpoint_interval", 500);
    tc.checkpoint_path = cfg.path("train.out", "model.ckpt");

    BurstConfig burst;
    burst.classes_per_sequence = cfg.get_int("train.burst_classes", 3);
    SequenceSampler sampler(train_set, ens, mc.context_pairs, regime.mode,
                            MixPolicy{regime.gt_fraction}, burst);
    const uint64_t stream_seed = cfg.get_u64("train.seed", 5);
    const TrainRecord record = train(
        model,
        [&](int iter, int idx) {
            return sampler.sample(
                Rng::mix(stream_seed, static_cast<uint64_t>(iter), static_cast<uint64_t>(idx)));
        },
        tc);

    const std::string losses_path = cfg.path("train.losses_out", "losses.csv");
    save_train_record_csv(record, losses_path);
    write_manifest(cfg, "train", {tc.checkpoint_path, losses_path},
                   (fs::path(cfg.out_dir) / "manifest_train.json").string());
    if (!record.entries.empty()) {
        std::cout << "train: " << record.entries.size() << " iterations, final loss "
                  << record.entries.back().loss << "\n";
    }
    return 0;
}

int cmd_eval(Config& cfg) {
    ensure_out_dir(cfg);
    const std::string ckpt_path = cfg.path("eval.checkpoint", "model.ckpt");
    require(fs::exists(ckpt_path), Errc::MissingArtifact, ckpt_path + " (run train first)");
    const Model model = load_checkpoint(ckpt_path);

    if (cfg.has("train.regime")) {
        const RegimeSpec regime = resolve_regime(cfg);
        require(regime.mode == model.config().mode, Errc::ModeMismatch,
                "checkpoint mode differs from the configured regime " + regime.name);
    }

    const std::string ens_path = cfg.path("eval.ensemble", "ensemble.wce");
    require(fs::exists(ens_path), Errc::MissingArtifact, ens_path + " (run train-weak first)");
    const WeakEnsemble ens = load_ensemble(ens_path);
    require(ens.K == model.config().num_classes && ens.d == model.config().feature_dim &&
                ens.W == model.config().weak_count,
            Errc::DimensionMismatch, "checkpoint and ensemble disagree on (K, d, W)");

    const Dataset attacks_ds = load_required_dataset(cfg, "eval.attacks", "ood.csv");
    const Dataset normal_ds = load_required_dataset(cfg, "eval.normal", "normal_eval.csv");

    // Optionally keep only each attack's stealthiest records (nearest the
    // normal pool's mean), the regime where detection is genuinely hard.
    const double stealth = cfg.get_double("eval.ood_stealth_fraction", 1.0);
    require(stealth > 0.0 && stealth <= 1.0, Errc::ConfigInvalid,
            "eval.ood_stealth_fraction must lie in (0,1]");
    std::vector<double> normal_center(static_cast<size_t>(normal_ds.d), 0.0);
    for (const auto& rec : normal_ds.records) {
        for (int j = 0; j < normal_ds.d; ++j) {
            normal_center[static_cast<size_t>(j)] += rec.features[static_cast<size_t>(j)];
        }
    }
    for (auto& v : normal_center) {
        v /= static_cast<double>(normal_ds.records.size());
    }

    std::map<std::string, Dataset> pools;
    for (const auto& [id, name] : attacks_ds.class_names) {
        if (id == 0) {
            continue;
        }
        Dataset pool = filter_class(attacks_ds, id);
        if (pool.records.empty()) {
            continue;
        }
        if (stealth < 1.0) {
            std::vector<std::pair<double, size_t>> by_dist;
            for (size_t i = 0; i < pool.records.size(); ++i) {
                double d2 = 0.0;
                for (int j = 0; j < pool.d; ++j) {
                    const double dx = pool.records[i].features[static_cast<size_t>(j)] -
                                      normal_center[static_cast<size_t>(j)];
                    d2 += dx * dx;
                }
                by_dist.emplace_back(d2, i);
            }
            std::sort(by_dist.begin(), by_dist.end());
            Dataset kept;
            kept.d = pool.d;
            kept.class_names = pool.class_names;
            kept.norm_stats = pool.norm_stats;
            const size_t keep = std::max<size_t>(
                1, static_cast<size_t>(stealth * static_cast<double>(by_dist.size())));
            for (size_t i = 0; i < keep; ++i) {
                kept.records.push_back(pool.records[by_dist[i].second]);
            }
            pool = std::move(kept);
        }
        pools[name] = std::move(pool);
    }
    require(!pools.empty(), Errc::EmptyClass, "no attack classes in " +
                                                   cfg.path("eval.attacks", "ood.csv"));

    std::vector<int> default_shots;
    for (int n = 0; n < model.config().context_pairs; ++n) {
        default_shots.push_back(n);
    }
    const std::vector<int> shots = cfg.get_int_list("eval.shots", default_shots);
    const int trials = cfg.get_int("eval.trials", 500);
    const EvalReport report = evaluate_nshot(model, ens, normal_ds, pools, shots, trials,
                                             cfg.get_u64("eval.seed", 6));

    const std::string report_path = cfg.path("eval.report_out", "eval_report.json");
    const std::string trials_path = cfg.path("eval.trials_out", "trials.csv");
    const std::string plot_path = cfg.path("eval.plot_out", "shots_accuracy.csv");
    save_report_json(report, report_path);
    save_trials_csv(report, trials_path);
    save_plot_csv(report, plot_path);
    write_manifest(cfg, "eval", {report_path, trials_path, plot_path},
                   (fs::path(cfg.out_dir) / "manifest_eval.json").string());

    for (const auto& [name, cells] : report.attacks) {
        std::cout << "eval: " << name;
        for (const auto& [n, cell] : cells) {
            std::cout << "  " << n << "-shot " << cell.accuracy();
        }
        std::cout << "\n";
    }
    std::cout << "eval: normal " << report.normal.accuracy() << "\n";
    return 0;
}

int cmd_sensitivity(Config& cfg) {
    ensure_out_dir(cfg);
    const std::string ckpt_path = cfg.path("sensitivity.checkpoint", "model.ckpt");
    require(fs::exists(ckpt_path), Errc::MissingArtifact, ckpt_path + " (run train first)");
    const Model model = load_checkpoint(ckpt_path);
    const Dataset ood_ds = load_required_dataset(cfg, "sensitivity.attacks", "ood.csv");
    const Dataset normal_ds = load_required_dataset(cfg, "sensitivity.normal", "normal_eval.csv");

    SensitivityConfig sc;
    sc.trials = cfg.get_int("sensitivity.trials", 1000);
    sc.vote_samples = cfg.get_int("sensitivity.vote_samples", 10000);
    sc.measure_normal_fraction = cfg.get_double("sensitivity.normal_fraction", 0.0);
    sc.weak_count = cfg.get_int("sensitivity.weak_count", model.config().weak_count);

    const std::vector<double> accuracies = cfg.get_double_list(
        "sensitivity.accuracies", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
    const std::vector<uint64_t> seeds =
        cfg.get_u64_list("sensitivity.seeds", {cfg.get_u64("sensitivity.seed", 7)});

    const SensitivityCurve curve =
        sensitivity_sweep(model, accuracies, normal_ds, ood_ds, sc, seeds);

    const std::string json_path = cfg.path("sensitivity.json_out", "sensitivity.json");
    const std::string csv_path = cfg.path("sensitivity.csv_out", "sensitivity.csv");
    save_curve_json(curve, json_path);
    save_curve_csv(curve, csv_path);
    write_manifest(cfg, "sensitivity", {json_path, csv_path},
                   (fs::path(cfg.out_dir) / "manifest_sensitivity.json").string());
    for (const auto& p : curve.points) {
        std::cout << "sensitivity: a=" << p.target_accuracy << " vote=" << p.measured_hard_vote
                  << " zero-shot=" << p.zero_shot << "\n";
    }
    return 0;
}

int cmd_plan(Config& cfg) {
    ensure_out_dir(cfg);
    require(cfg.has("deploy.latency_table"), Errc::ConfigInvalid,
            "plan requires deploy.latency_table");
    const LatencyTable table = load_latency_table(cfg.get("deploy.latency_table", ""));

    RateConfig rates;
    rates.f_goose = cfg.get_double("deploy.f_goose", 250.0);
    rates.f_sv = cfg.get_double("deploy.f_sv", 4800.0);
    rates.t_pre = cfg.get_double("deploy.t_pre", 0.0);
    rates.t_transmission = cfg.get_double("deploy.t_transmission", 0.003);

    const std::vector<double> dg_grid = cfg.get_double_list("deploy.d_goose_grid", {1.0});
    const std::vector<double> dsv_grid = cfg.get_double_list(
        "deploy.d_sv_grid", {1.0 / 12.0, 1.0 / 6.0, 1.0 / 4.0, 1.0 / 2.0, 1.0});

    const DeploymentPlan plan = plan_deployment(table, rates, dg_grid, dsv_grid);
    const std::string plan_path = cfg.path("deploy.plan_out", "plan.json");
    save_plan(plan, rates, plan_path);
    write_manifest(cfg, "plan", {plan_path},
                   (fs::path(cfg.out_dir) / "manifest_plan.json").string());
    std::cout << "plan: " << (plan.feasible ? "feasible" : "infeasible") << " " << plan.hardware
              << " BS=" << plan.batch_size << " T_total=" << plan.latency.t_total << "s\n";
    return 0;
}

int cmd_bench(Config& cfg) {
    // Measured wall times cannot be bit-reproducible, which is what the
    // deterministic flag promises.
    require(!cfg.deterministic, Errc::ConfigInvalid,
            "bench measures wall time and cannot run under --deterministic");
    ensure_out_dir(cfg);
    const std::string ckpt_path = cfg.path("bench.checkpoint", "model.ckpt");
    require(fs::exists(ckpt_path), Errc::MissingArtifact, ckpt_path + " (run train first)");
    const Model model = load_checkpoint(ckpt_path);

    const std::vector<int> batch_sizes = cfg.get_int_list("bench.batch_sizes", {1, 10});
    const int trials = cfg.get_int("bench.trials", 30);
    const int warmup = cfg.get_int("bench.warmup", 5);

    std::vector<BenchTiming> raw;
    const LatencyTable table =
        benchmark_inference(model, batch_sizes, trials, warmup, cfg.get_u64("bench.seed", 8),
                            &raw);

    const std::string table_path = cfg.path("bench.table_out", "latency_local.csv");
    const std::string raw_path = cfg.path("bench.raw_out", "latency_local_raw.csv");
    save_latency_table(table, table_path);
    {
        std::ofstream out(raw_path, std::ios::trunc);
        require(out.good(), Errc::MissingFile, "cannot open " + raw_path + " for writing");
        out << "H,BS,trial,per_sample_s\n";
        char buf[96];
        for (const auto& r : raw) {
            std::snprintf(buf, sizeof(buf), "local,%d,%d,%.9g\n", r.batch_size, r.trial,
                          r.per_sample_s);
            out << buf;
        }
    }
    write_manifest(cfg, "bench", {table_path, raw_path},
                   (fs::path(cfg.out_dir) / "manifest_bench.json").string());
    for (const auto& r : table.rows) {
        std::cout << "bench: BS=" << r.batch_size << " mean=" << r.mean_s << "s std=" << r.std_s
                  << "s\n";
    }
    return 0;
}

int run_command(const std::string& name, Config& cfg) {
    if (name == "synth") {
        return cmd_synth(cfg);
    }
    if (name == "train-weak") {
        return cmd_train_weak(cfg);
    }
    if (name == "train") {
        return cmd_train(cfg);
    }
    if (name == "eval") {
        return cmd_eval(cfg);
    }
    if (name == "sensitivity") {
        return cmd_sensitivity(cfg);
    }
    if (name == "plan") {
        return cmd_plan(cfg);
    }
    if (name == "bench") {
        return cmd_bench(cfg);
    }
    fail(Errc::ConfigInvalid, "unknown command '" + name + "'");
}

}  // namespace iclids
