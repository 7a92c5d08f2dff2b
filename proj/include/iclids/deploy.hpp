#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iclids/model.hpp"

namespace iclids {

// Input-side rates and the real-time bound. Downsampling factors are in
// (0, 1]; times in seconds; rates in Hz.
struct RateConfig {
    double f_goose{250.0};
    double f_sv{4800.0};
    double d_goose{1.0};
    double d_sv{1.0};
    double t_pre{0.0};
    double t_transmission{0.003};
};

// Effective model input rate: max(F_GOOSE * D_GOOSE, F_SV * D_SV).
double effective_rate(const RateConfig& rates);

struct LatencyBreakdown {
    double t_tf{0.0};     // t_average * (BS - 1)
    double t_batch{0.0};  // BS / F_s
    double t_pro{0.0};    // t_batch + t_tf
    double t_total{0.0};  // t_pre + t_pro
};

LatencyBreakdown total_latency(double t_average, int batch_size, double f_s, double t_pre);

// Both constraints, strict: T_total < T_transmission and T_average < 1/F_s.
bool check_feasible(double t_average, int batch_size, const RateConfig& rates);

struct LatencyTable {
    struct Row {
        std::string hardware;
        int batch_size{1};
        double mean_s{0.0};
        double std_s{0.0};
    };
    std::vector<Row> rows;
};

LatencyTable load_latency_table(const std::string& path);  // CSV: H,BS,mean_s,std_s
void save_latency_table(const LatencyTable& table, const std::string& path);

struct DeploymentPlan {
    std::string hardware;
    int batch_size{1};
    double d_goose{1.0};
    double d_sv{1.0};
    double f_s{0.0};
    double t_average{0.0};
    LatencyBreakdown latency;
    bool feasible{false};
    // When infeasible: how far the least-violating tuple misses each bound.
    double excess_total{0.0};
    double excess_rate{0.0};
};

// Exhaustive search over (H, BS) x d_goose_grid x d_sv_grid. Among feasible
// tuples the smallest T_average wins; ties break toward larger F_s, then
// smaller BS. With no feasible tuple, returns feasible=false and the tuple
// with the smallest relative constraint violation.
DeploymentPlan plan_deployment(const LatencyTable& table, const RateConfig& base,
                               const std::vector<double>& d_goose_grid,
                               const std::vector<double>& d_sv_grid);

void save_plan(const DeploymentPlan& plan, const RateConfig& base, const std::string& path);

struct BenchTiming {
    int batch_size{0};
    int trial{0};
    double per_sample_s{0.0};
};

// Times forward passes of the local model on synthetic batches; per row,
// mean/std of per-sample wall time over `trials` timed repetitions after
// `warmup` untimed ones. Rows carry hardware tag "local".
LatencyTable benchmark_inference(const Model& model, const std::vector<int>& batch_sizes,
                                 int trials, int warmup, uint64_t seed,
                                 std::vector<BenchTiming>* raw_out = nullptr);

}  // namespace iclids
