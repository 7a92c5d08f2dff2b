#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "iclids/commands.hpp"
#include "iclids/error.hpp"
#include "iclids/runconfig.hpp"
#include "test_support.hpp"

using namespace iclids;
using test_support::TempDir;
using test_support::read_file;
using test_support::write_file;

namespace {

namespace fs = std::filesystem;

Config tiny_pipeline_config(const std::string& out_dir) {
    Config cfg;
    cfg.out_dir = out_dir;
    cfg.set("fixture.num_classes", "5");
    cfg.set("fixture.per_class_count", "60");
    cfg.set("fixture.d", "6");
    cfg.set("fixture.cluster_separation", "5");
    cfg.set("dataset.ood_class", "attack4");
    cfg.set("multimix.total_attack_classes", "6");
    cfg.set("weak.count", "2");
    cfg.set("weak.max_epochs", "3");
    cfg.set("model.layers", "1");
    cfg.set("model.heads", "2");
    cfg.set("model.embed_dim", "16");
    cfg.set("model.context_pairs", "5");
    cfg.set("train.regime", "MTF");
    cfg.set("train.iterations", "40");
    cfg.set("train.batch", "2");
    cfg.set("train.lr", "0.002");
    cfg.set("eval.shots", "0,2");
    cfg.set("eval.trials", "20");
    cfg.set("sensitivity.accuracies", "0.5,1.0");
    cfg.set("sensitivity.trials", "10");
    cfg.set("sensitivity.vote_samples", "200");
    cfg.set("bench.batch_sizes", "1");
    cfg.set("bench.trials", "10");
    cfg.set("bench.warmup", "1");
    resolve_seeds(cfg);
    return cfg;
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string(ICLIDS_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config file parsing and overrides") {
    TempDir tmp("cfg");
    write_file(tmp.file("run.cfg"),
               "# comment\n"
               "train.regime = MDTF\n"
               "fixture.d=12\n"
               "\n"
               "deploy.d_sv_grid=1/12,1/6\n");
    Config cfg = load_config_file(tmp.file("run.cfg"));
    CHECK(cfg.get("train.regime", "") == "MDTF");
    CHECK(cfg.get_int("fixture.d", 0) == 12);
    const auto grid = cfg.get_double_list("deploy.d_sv_grid", {});
    REQUIRE(grid.size() == 2);
    CHECK(grid[0] == doctest::Approx(1.0 / 12.0).epsilon(1e-15));

    apply_override(cfg, "fixture.d=8");
    CHECK(cfg.get_int("fixture.d", 0) == 8);
    try {
        apply_override(cfg, "not-an-assignment");
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ConfigInvalid);
    }

    write_file(tmp.file("bad.cfg"), "justtext\n");
    try {
        load_config_file(tmp.file("bad.cfg"));
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ConfigInvalid);
    }
}

TEST_CASE("regime constraints") {
    Config cfg;
    cfg.set("train.regime", "MDTF");
    CHECK(resolve_regime(cfg).gt_fraction == 0.05);
    CHECK(resolve_regime(cfg).mode == SequenceMode::DTF);

    cfg.set("train.regime", "MTF");
    CHECK(resolve_regime(cfg).gt_fraction == 0.4);
    cfg.set("train.gt_fraction", "0.25");
    CHECK(resolve_regime(cfg).gt_fraction == 0.25);

    cfg.set("train.regime", "WCTF");
    try {
        resolve_regime(cfg);  // gt_fraction still 0.25
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ConfigInvalid);
    }
    cfg.set("train.gt_fraction", "0");
    CHECK(resolve_regime(cfg).gt_fraction == 0.0);
    CHECK(resolve_regime(cfg).mode == SequenceMode::TF);

    cfg.set("train.regime", "XTF");
    try {
        resolve_regime(cfg);
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ConfigInvalid);
    }
}

TEST_CASE("seed resolution pins every section stream") {
    Config cfg;
    cfg.set("seed.base", "99");
    cfg.set("weak.seed", "123");  // explicit values win
    resolve_seeds(cfg);
    CHECK(cfg.get_u64("weak.seed", 0) == 123);
    CHECK(cfg.has("fixture.seed"));
    CHECK(cfg.has("train.seed"));
    CHECK(cfg.has("eval.seed"));

    Config cfg2;
    cfg2.set("seed.base", "99");
    resolve_seeds(cfg2);
    Config cfg3;
    cfg3.set("seed.base", "100");
    resolve_seeds(cfg3);
    CHECK(cfg2.get("fixture.seed", "") != cfg3.get("fixture.seed", ""));
}

TEST_CASE("config hash is stable and value sensitive") {
    Config a;
    a.set("x.y", "1");
    a.set("z.w", "2");
    Config b;
    b.set("z.w", "2");
    b.set("x.y", "1");
    CHECK(config_hash(a.kv) == config_hash(b.kv));
    b.set("x.y", "3");
    CHECK(config_hash(a.kv) != config_hash(b.kv));
}

TEST_CASE("manifest round trip") {
    TempDir tmp("manifest");
    Config cfg = tiny_pipeline_config(tmp.str());
    cfg.deterministic = true;
    write_manifest(cfg, "synth", {"a.csv"}, tmp.file("m.json"));
    const Config back = config_from_manifest(tmp.file("m.json"));
    CHECK(back.kv == cfg.kv);
    CHECK(back.deterministic);
    CHECK(back.out_dir == cfg.out_dir);
    CHECK(back.out_dir_pinned);
}

TEST_CASE("full pipeline composes through the command layer") {
    TempDir tmp("pipe");
    Config cfg = tiny_pipeline_config(tmp.str());

    CHECK(cmd_synth(cfg) == 0);
    CHECK(fs::exists(tmp.file("train_set.csv")));
    CHECK(fs::exists(tmp.file("train_set.csv.meta.json")));
    CHECK(fs::exists(tmp.file("ood.csv")));
    CHECK(fs::exists(tmp.file("normal_eval.csv")));
    CHECK(fs::exists(tmp.file("mixture_log.json")));
    CHECK(fs::exists(tmp.file("manifest_synth.json")));

    CHECK(cmd_train_weak(cfg) == 0);
    CHECK(fs::exists(tmp.file("ensemble.wce")));
    CHECK(fs::exists(tmp.file("weak_metrics.json")));

    CHECK(cmd_train(cfg) == 0);
    CHECK(fs::exists(tmp.file("model.ckpt")));
    CHECK(fs::exists(tmp.file("losses.csv")));
    const std::string losses = read_file(tmp.file("losses.csv"));
    CHECK(losses.rfind("iteration,loss", 0) == 0);

    CHECK(cmd_eval(cfg) == 0);
    CHECK(fs::exists(tmp.file("eval_report.json")));
    CHECK(fs::exists(tmp.file("trials.csv")));
    CHECK(fs::exists(tmp.file("shots_accuracy.csv")));

    CHECK(cmd_sensitivity(cfg) == 0);
    CHECK(fs::exists(tmp.file("sensitivity.json")));
    CHECK(fs::exists(tmp.file("sensitivity.csv")));

    cfg.set("deploy.latency_table", std::string(ICLIDS_DATA_DIR) + "/latency_reference.csv");
    CHECK(cmd_plan(cfg) == 0);
    CHECK(fs::exists(tmp.file("plan.json")));
    const std::string plan = read_file(tmp.file("plan.json"));
    CHECK(plan.find("gpu_tensorrt") != std::string::npos);

    CHECK(cmd_bench(cfg) == 0);
    CHECK(fs::exists(tmp.file("latency_local.csv")));
    CHECK(fs::exists(tmp.file("latency_local_raw.csv")));
}

TEST_CASE("missing artifacts are reported with their command") {
    TempDir tmp("missing");
    Config cfg = tiny_pipeline_config(tmp.str());
    try {
        cmd_train(cfg);
        FAIL("expected MissingArtifact");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MissingArtifact);
    }
    try {
        cmd_eval(cfg);
        FAIL("expected MissingArtifact");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MissingArtifact);
    }
}

TEST_CASE("regime/checkpoint mode mismatch is rejected at eval") {
    TempDir tmp("modemix");
    Config cfg = tiny_pipeline_config(tmp.str());
    CHECK(cmd_synth(cfg) == 0);
    CHECK(cmd_train_weak(cfg) == 0);
    CHECK(cmd_train(cfg) == 0);  // MTF checkpoint
    cfg.set("train.regime", "MDTF");
    try {
        cmd_eval(cfg);
        FAIL("expected ModeMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ModeMismatch);
    }
}

TEST_CASE("bench refuses deterministic mode") {
    TempDir tmp("benchdet");
    Config cfg = tiny_pipeline_config(tmp.str());
    cfg.deterministic = true;
    try {
        cmd_bench(cfg);
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ConfigInvalid);
    }
}

TEST_CASE("binary exit codes are stable per error class") {
    TempDir tmp("exit");
    // Missing latency table: invalid configuration, exit 2.
    CHECK(run_binary("plan --out-dir " + tmp.str()) == 2);
    // Unknown regime: exit 2.
    CHECK(run_binary("train --out-dir " + tmp.str() + " --regime BOGUS") == 2);
    // Evaluating before training: missing artifact, exit 3.
    CHECK(run_binary("eval --out-dir " + tmp.str()) == 3);
    // Version banner exits 0.
    CHECK(run_binary("--version") == 0);
}

TEST_CASE("deterministic re-run from the manifest is bit-exact") {
    TempDir tmp("repro");
    Config cfg = tiny_pipeline_config(tmp.str());
    cfg.deterministic = true;
    CHECK(cmd_synth(cfg) == 0);
    const std::string first = read_file(tmp.file("train_set.csv"));
    const std::string first_manifest = read_file(tmp.file("manifest_synth.json"));

    Config replay = config_from_manifest(tmp.file("manifest_synth.json"));
    CHECK(cmd_synth(replay) == 0);
    CHECK(read_file(tmp.file("train_set.csv")) == first);
    CHECK(read_file(tmp.file("manifest_synth.json")) == first_manifest);
}
