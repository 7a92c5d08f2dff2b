#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "iclids/dataset.hpp"
#include "iclids/error.hpp"
#include "iclids/eval.hpp"
#include "iclids/rng.hpp"
#include "test_support.hpp"

using namespace iclids;
using test_support::TempDir;

namespace {

// Shared tiny trained model for the behavioral checks. Trained once per
// process on an in-distribution fixture with a synthetic labeling ensemble.
struct TrainedSetup {
    Dataset train_set;
    Dataset normal_pool;
    Dataset attack_pool;
    Model model;

    static const TrainedSetup& get() {
        static TrainedSetup setup = make();
        return setup;
    }

  private:
    static TrainedSetup make() {
        FixtureSpec spec;
        spec.num_classes = 6;
        spec.per_class_count = 80;
        spec.d = 6;
        spec.cluster_separation = 6.0;
        spec.seed = 29;
        Dataset train_set = fit_normalize(generate_fixture(spec)).first;

        ModelConfig mc;
        mc.layers = 1;
        mc.heads = 2;
        mc.embed_dim = 16;
        mc.context_pairs = 7;
        mc.num_classes = 6;
        mc.feature_dim = 6;
        mc.weak_count = 3;
        mc.mode = SequenceMode::TF;
        mc.seed = 31;
        Model model = Model::init(mc);

        const WeakEnsemble label_ens = make_synthetic_ensemble(0.8, 6, 6, 3, 37);
        SequenceSampler sampler(train_set, label_ens, mc.context_pairs, mc.mode, MixPolicy{0.3},
                                BurstConfig{});
        TrainConfig tc;
        tc.iterations = 500;
        tc.batch = 4;
        tc.optimizer.learning_rate = 2e-3;
        train(model,
              [&sampler](int iter, int idx) {
                  return sampler.sample(Rng::mix(101, static_cast<uint64_t>(iter),
                                                 static_cast<uint64_t>(idx)));
              },
              tc);

        TrainedSetup out{std::move(train_set), Dataset{}, Dataset{}, std::move(model)};
        out.normal_pool = filter_class(out.train_set, 0);
        out.attack_pool = filter_class(out.train_set, 5);
        return out;
    }
};

EvalCell cell_of(int successes, int trials) {
    EvalCell c;
    c.successes = successes;
    c.trials = trials;
    return c;
}

}  // namespace

TEST_CASE("evaluate_nshot contract and recountability") {
    const TrainedSetup& s = TrainedSetup::get();
    const WeakEnsemble ens = make_synthetic_ensemble(0.9, 6, 6, 3, 41);
    std::map<std::string, Dataset> pools;
    pools["attack5"] = s.attack_pool;

    try {
        evaluate_nshot(s.model, ens, s.normal_pool, pools, {0}, 0, 1);
        FAIL("expected InvalidConfig");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::InvalidConfig);
    }

    const EvalReport report = evaluate_nshot(s.model, ens, s.normal_pool, pools, {0, 3, 6}, 60,
                                             17);
    CHECK(report.N == 7);
    REQUIRE(report.attacks.count("attack5") == 1);
    CHECK(report.attacks.at("attack5").size() == 3);
    CHECK(report.normal.trials == 60);

    // Every aggregate is an exact ratio of logged trials.
    std::map<std::pair<std::string, int>, std::pair<int, int>> recount;
    for (const auto& t : report.trials_log) {
        if (t.subject == "normal") {
            continue;
        }
        auto& c = recount[{t.subject, t.shots}];
        c.first += t.correct ? 1 : 0;
        c.second += 1;
    }
    for (const auto& [name, cells] : report.attacks) {
        for (const auto& [shots, cell] : cells) {
            const auto& c = recount.at({name, shots});
            CHECK(c.first == cell.successes);
            CHECK(c.second == cell.trials);
        }
    }

    // Determinism: the same seed reproduces the report exactly.
    const EvalReport again = evaluate_nshot(s.model, ens, s.normal_pool, pools, {0, 3, 6}, 60,
                                            17);
    for (const auto& [name, cells] : report.attacks) {
        for (const auto& [shots, cell] : cells) {
            CHECK(again.attacks.at(name).at(shots).successes == cell.successes);
        }
    }
}

TEST_CASE("icl capability") {
    EvalReport report;
    report.N = 11;
    report.attacks["masquerade_fake_normal"][0] = cell_of(858, 1000);
    report.attacks["masquerade_fake_normal"][10] = cell_of(949, 1000);
    CHECK(icl_capability(report, "masquerade_fake_normal") ==
          doctest::Approx(0.091).epsilon(1e-12));

    report.attacks["flat"][0] = cell_of(700, 1000);
    report.attacks["flat"][10] = cell_of(700, 1000);
    CHECK(icl_capability(report, "flat") == 0.0);

    report.attacks["ceiling"][0] = cell_of(1000, 1000);
    report.attacks["ceiling"][10] = cell_of(993, 1000);
    CHECK(icl_capability(report, "ceiling") <= 0.0);

    try {
        icl_capability(report, "unknown");
        FAIL("expected MissingCell");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MissingCell);
    }
    report.attacks["only_zero"][0] = cell_of(1, 2);
    try {
        icl_capability(report, "only_zero");
        FAIL("expected MissingCell");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MissingCell);
    }
}

TEST_CASE("failure cases flag the sub-threshold cells") {
    // Voted weak-classifier row: two OOD attacks miss the 80% bar.
    EvalReport report;
    report.N = 11;
    report.attacks["poisoned_high_rate"][0] = cell_of(1000, 1000);
    report.attacks["masquerade_fake_fault"][0] = cell_of(999, 1000);
    report.attacks["masquerade_fake_normal"][0] = cell_of(608, 1000);
    report.attacks["random_replay"][0] = cell_of(517, 1000);
    report.attacks["high_status_number"][0] = cell_of(999, 1000);
    report.attacks["inverse_replay"][0] = cell_of(997, 1000);
    report.attacks["injection"][0] = cell_of(1000, 1000);
    report.attacks["sv_high_status_number"][0] = cell_of(978, 1000);
    report.attacks["sv_injection"][0] = cell_of(1000, 1000);
    report.normal = cell_of(1000, 1000);

    const std::vector<FailureCase> failures = failure_cases(report);
    REQUIRE(failures.size() == 2);
    CHECK(failures[0].subject == "masquerade_fake_normal");
    CHECK(failures[0].accuracy == doctest::Approx(0.608).epsilon(1e-12));
    CHECK(failures[1].subject == "random_replay");
    CHECK(failures[1].accuracy == doctest::Approx(0.517).epsilon(1e-12));

    // Stable under recomputation.
    const std::vector<FailureCase> again = failure_cases(report);
    REQUIRE(again.size() == failures.size());
    for (size_t i = 0; i < again.size(); ++i) {
        CHECK(again[i].subject == failures[i].subject);
    }

    EvalReport clean;
    clean.attacks["a"][0] = cell_of(10, 10);
    clean.normal = cell_of(10, 10);
    CHECK(failure_cases(clean).empty());

    EvalReport strict;
    strict.attacks["a"][0] = cell_of(10, 10);
    strict.normal = cell_of(999, 1000);
    const auto flagged = failure_cases(strict);
    REQUIRE(flagged.size() == 1);
    CHECK(flagged[0].subject == "normal");
}

TEST_CASE("better in-context labels never hurt accuracy") {
    const TrainedSetup& s = TrainedSetup::get();
    std::map<std::string, Dataset> pools;
    pools["attack5"] = s.attack_pool;

    for (const int shots : {0, 3, 6}) {
        double perfect_mean = 0.0;
        double weak_mean = 0.0;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            const WeakEnsemble perfect = make_synthetic_ensemble(1.0, 6, 6, 3, 1000 + seed);
            const WeakEnsemble weak = make_synthetic_ensemble(0.5, 6, 6, 3, 2000 + seed);
            perfect_mean += evaluate_nshot(s.model, perfect, s.normal_pool, pools, {shots}, 150,
                                           seed)
                                .attacks.at("attack5")
                                .at(shots)
                                .accuracy();
            weak_mean += evaluate_nshot(s.model, weak, s.normal_pool, pools, {shots}, 150, seed)
                             .attacks.at("attack5")
                             .at(shots)
                             .accuracy();
        }
        CHECK(perfect_mean / 5.0 >= weak_mean / 5.0);
    }
}

TEST_CASE("sensitivity sweep dedupes and sorts the grid") {
    const TrainedSetup& s = TrainedSetup::get();
    SensitivityConfig sc;
    sc.trials = 30;
    sc.vote_samples = 400;
    sc.weak_count = 3;
    const SensitivityCurve curve = sensitivity_sweep(
        s.model, {1.0, 0.5, 0.5, 0.2, 1.0}, s.normal_pool, s.attack_pool, sc, {3});
    REQUIRE(curve.points.size() == 3);
    CHECK(curve.points[0].target_accuracy == 0.2);
    CHECK(curve.points[1].target_accuracy == 0.5);
    CHECK(curve.points[2].target_accuracy == 1.0);
    // The a = 1.0 ensemble votes perfectly on attack records.
    CHECK(curve.points[2].measured_hard_vote >= 0.99);
}

TEST_CASE("diversity sweep aggregates per-K reports") {
    PipelineConfig cfg;
    cfg.fixture.num_classes = 5;
    cfg.fixture.per_class_count = 60;
    cfg.fixture.d = 6;
    cfg.fixture.cluster_separation = 5.0;
    cfg.ood_class = "attack4";
    cfg.k_syn = 6;
    cfg.weak.max_epochs = 3;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embed_dim = 16;
    cfg.context_pairs = 5;
    cfg.mode = SequenceMode::TF;
    cfg.gt_fraction = 0.4;
    cfg.train.iterations = 60;
    cfg.train.batch = 2;
    cfg.train.optimizer.learning_rate = 2e-3;
    cfg.shots = {0, 4};
    cfg.trials = 20;

    const DiversityResult single = diversity_sweep({6}, cfg, {1});
    REQUIRE(single.summary.size() == 1);
    REQUIRE(single.reports.at(6).size() == 1);
    CHECK(single.summary[0].k_syn == 6);
    CHECK(single.summary[0].std_capability == 0.0);  // one seed, no spread

    const DiversityResult multi = diversity_sweep({4, 6}, cfg, {1, 2});
    REQUIRE(multi.summary.size() == 2);
    CHECK(multi.reports.at(4).size() == 2);
    CHECK(multi.reports.at(6).size() == 2);
    for (const auto& s : multi.summary) {
        CHECK(s.mean_zero_shot >= 0.0);
        CHECK(s.mean_zero_shot <= 1.0);
        CHECK(s.mean_max_shot >= 0.0);
        CHECK(s.mean_max_shot <= 1.0);
        CHECK(s.std_capability >= 0.0);
    }
}

TEST_CASE("report persistence") {
    TempDir tmp("report");
    const TrainedSetup& s = TrainedSetup::get();
    const WeakEnsemble ens = make_synthetic_ensemble(0.9, 6, 6, 3, 43);
    std::map<std::string, Dataset> pools;
    pools["attack5"] = s.attack_pool;
    const EvalReport report = evaluate_nshot(s.model, ens, s.normal_pool, pools, {0, 6}, 20, 3);

    save_report_json(report, tmp.file("r.json"));
    save_trials_csv(report, tmp.file("t.csv"));
    save_plot_csv(report, tmp.file("p.csv"));
    const std::string json = test_support::read_file(tmp.file("r.json"));
    CHECK(json.find("attack5") != std::string::npos);
    const std::string plot = test_support::read_file(tmp.file("p.csv"));
    CHECK(plot.rfind("shots,attack5", 0) == 0);
    const std::string trials = test_support::read_file(tmp.file("t.csv"));
    CHECK(trials.find("subject,shots,trial,seed,query_true,query_pred,correct") == 0);
}
