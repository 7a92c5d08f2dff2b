#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iclids/context.hpp"
#include "iclids/dataset.hpp"
#include "iclids/model.hpp"
#include "iclids/multimix.hpp"
#include "iclids/weak.hpp"

namespace iclids {

// Accuracy cells stay count-based so every aggregate is recountable from the
// persisted per-trial outcomes.
struct EvalCell {
    int successes{0};
    int trials{0};

    double accuracy() const { return trials > 0 ? static_cast<double>(successes) / trials : 0.0; }
};

struct TrialOutcome {
    std::string subject;  // attack name, or "normal"
    int shots{0};
    int trial{0};
    uint64_t seed{0};
    int query_true{0};
    int query_pred{0};
    bool correct{false};
};

struct EvalReport {
    int N{0};
    std::map<std::string, std::map<int, EvalCell>> attacks;  // name -> shots -> cell
    EvalCell normal;  // normal queries in all-normal context (false-positive complement)
    std::vector<uint64_t> seeds;
    std::vector<TrialOutcome> trials_log;
};

// Detection accuracy is binary: an attack query counts as a success when the
// model predicts any non-normal class; a normal query when it predicts 0.
EvalReport evaluate_nshot(const Model& model, const WeakEnsemble& ensemble,
                          const Dataset& normal_pool,
                          const std::map<std::string, Dataset>& attack_pools,
                          const std::vector<int>& shots_range, int trials, uint64_t seed);

// Accuracy at the attack's largest evaluated shot count minus zero-shot
// accuracy.
double icl_capability(const EvalReport& report, const std::string& attack);

struct FailureCase {
    std::string subject;
    int shots{0};  // -1 for the normal row
    double accuracy{0.0};
    double threshold{0.0};
};

std::vector<FailureCase> failure_cases(const EvalReport& report, double attack_threshold = 0.80,
                                       double normal_threshold = 1.00);

void save_report_json(const EvalReport& report, const std::string& path);
void save_trials_csv(const EvalReport& report, const std::string& path);
void save_plot_csv(const EvalReport& report, const std::string& path);  // shots vs accuracy

// ---------------------------------------------------------------------------
// End-to-end fixture pipeline (synthesis -> weak ensemble -> training -> eval)
// ---------------------------------------------------------------------------

struct PipelineConfig {
    FixtureSpec fixture;
    std::string ood_class{"attack6"};     // the held-out class
    double eval_holdout_fraction{0.25};   // per-class rows reserved for eval pools
    // Evaluate on the stealthiest share of the held-out class: the records
    // closest to the training normal mean (1.0 keeps the whole class). Models
    // the attacks-that-look-normal case, which is where detection is hard.
    double ood_stealth_fraction{1.0};
    // Cap on per-class rows entering synthesis/training (0 = no cap). Lets the
    // fixture carry large evaluation pools without inflating training cost.
    int train_rows_per_class{0};
    int k_syn{32};
    int weak_count{3};
    WeakArchConfig weak;
    int layers{2};
    int heads{4};
    int embed_dim{32};
    int context_pairs{11};
    SequenceMode mode{SequenceMode::TF};
    double gt_fraction{0.4};
    BurstConfig burst;
    TrainConfig train;
    std::vector<int> shots{0, 10};
    int trials{500};
};

struct PipelineArtifacts {
    Dataset train_set;
    Dataset normal_eval;
    Dataset ood_eval;
    WeakEnsemble ensemble;
    Model model;
    TrainRecord record;
    EvalReport report;
};

// All stage seeds derive from the run seed, so one seed names one replica.
PipelineArtifacts run_pipeline(const PipelineConfig& cfg, uint64_t seed);

struct DiversitySummary {
    int k_syn{0};
    double mean_zero_shot{0.0};
    double mean_max_shot{0.0};
    double mean_capability{0.0};
    double std_capability{0.0};
};

struct DiversityResult {
    std::map<int, std::vector<EvalReport>> reports;  // k_syn -> per-seed reports
    std::vector<DiversitySummary> summary;           // ascending k_syn
};

DiversityResult diversity_sweep(const std::vector<int>& k_syn_list, const PipelineConfig& base,
                                const std::vector<uint64_t>& seeds);

// ---------------------------------------------------------------------------
// Weak-classifier sensitivity sweep
// ---------------------------------------------------------------------------

struct SensitivityPoint {
    double target_accuracy{0.0};
    double measured_hard_vote{0.0};  // binary detection rate of the voted ensemble
    double zero_shot{0.0};           // model accuracy on OOD queries, zero-shot
};

struct SensitivityCurve {
    std::vector<SensitivityPoint> points;  // ascending target accuracy
};

struct SensitivityConfig {
    int trials{1000};          // zero-shot sequences per accuracy level per seed
    int vote_samples{10000};   // records per hard-vote accuracy measurement
    double measure_normal_fraction{0.0};  // normal records mixed into the measurement set
    int weak_count{3};
};

// Replaces the real ensemble with accuracy-controlled synthetic classifiers
// at each level; x is the measured hard-vote accuracy, y the model's
// zero-shot detection accuracy, both averaged over seeds. Duplicate levels
// are deduplicated and the grid is sorted.
SensitivityCurve sensitivity_sweep(const Model& model, std::vector<double> accuracies,
                                   const Dataset& normal_pool, const Dataset& ood_pool,
                                   const SensitivityConfig& cfg,
                                   const std::vector<uint64_t>& seeds);

// Binary detection rate of hard_vote over `samples` draws from the pools.
double measure_hard_vote_accuracy(const WeakEnsemble& ens, const Dataset& attack_pool,
                                  const Dataset* normal_pool, double normal_fraction,
                                  int samples, uint64_t seed);

void save_curve_json(const SensitivityCurve& curve, const std::string& path);
void save_curve_csv(const SensitivityCurve& curve, const std::string& path);

}  // namespace iclids
