#include "iclids/deploy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "iclids/error.hpp"
#include "iclids/rng.hpp"

namespace iclids {

namespace {

void validate_rates(const RateConfig& r) {
    require(r.f_goose > 0.0 && r.f_sv > 0.0, Errc::InvalidRate, "rates must be positive");
    require(r.d_goose > 0.0 && r.d_goose <= 1.0, Errc::InvalidRate, "d_goose must be in (0,1]");
    require(r.d_sv > 0.0 && r.d_sv <= 1.0, Errc::InvalidRate, "d_sv must be in (0,1]");
    require(r.t_transmission > 0.0, Errc::InvalidRate, "t_transmission must be positive");
    require(r.t_pre >= 0.0, Errc::InvalidRate, "t_pre must be >= 0");
}

}  // namespace

double effective_rate(const RateConfig& rates) {
    validate_rates(rates);
    return std::max(rates.f_goose * rates.d_goose, rates.f_sv * rates.d_sv);
}

LatencyBreakdown total_latency(double t_average, int batch_size, double f_s, double t_pre) {
    require(batch_size >= 1, Errc::InvalidBatch, "batch size must be >= 1");
    require(f_s > 0.0, Errc::InvalidRate, "F_s must be positive");
    LatencyBreakdown out;
    out.t_tf = t_average * static_cast<double>(batch_size - 1);
    out.t_batch = static_cast<double>(batch_size) / f_s;
    out.t_pro = out.t_batch + out.t_tf;
    out.t_total = t_pre + out.t_pro;
    return out;
}

bool check_feasible(double t_average, int batch_size, const RateConfig& rates) {
    const double f_s = effective_rate(rates);
    const LatencyBreakdown lat = total_latency(t_average, batch_size, f_s, rates.t_pre);
    return lat.t_total < rates.t_transmission && t_average < 1.0 / f_s;
}

LatencyTable load_latency_table(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Errc::MissingFile, path);
    LatencyTable table;
    std::string line;
    bool header = true;
    int row_no = 0;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        if (header) {
            header = false;
            continue;
        }
        std::stringstream ss(line);
        std::string h, bs, mean, sd;
        require(std::getline(ss, h, ',') && std::getline(ss, bs, ',') &&
                    std::getline(ss, mean, ',') && std::getline(ss, sd),
                Errc::SchemaMismatch, "latency table row " + std::to_string(row_no));
        LatencyTable::Row row;
        row.hardware = h;
        try {
            row.batch_size = std::stoi(bs);
            row.mean_s = std::stod(mean);
            row.std_s = std::stod(sd);
        } catch (const std::exception&) {
            fail(Errc::NonNumericFeature, "latency table row " + std::to_string(row_no));
        }
        require(row.batch_size >= 1, Errc::InvalidBatch, "BS must be >= 1");
        require(row.mean_s > 0.0, Errc::InvalidRate, "mean latency must be positive");
        table.rows.push_back(std::move(row));
    }
    require(!table.rows.empty(), Errc::EmptyTable, path + " has no rows");
    return table;
}

void save_latency_table(const LatencyTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << "H,BS,mean_s,std_s\n";
    char buf[128];
    for (const auto& r : table.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g\n", r.hardware.c_str(), r.batch_size,
                      r.mean_s, r.std_s);
        out << buf;
    }
}

DeploymentPlan plan_deployment(const LatencyTable& table, const RateConfig& base,
                               const std::vector<double>& d_goose_grid,
                               const std::vector<double>& d_sv_grid) {
    require(!table.rows.empty(), Errc::EmptyTable, "latency table is empty");
    require(!d_goose_grid.empty() && !d_sv_grid.empty(), Errc::InvalidRate,
            "downsampling grids must be nonempty");

    bool have_best = false;
    DeploymentPlan best;
    bool have_fallback = false;
    DeploymentPlan fallback;
    double fallback_violation = 0.0;

    for (const auto& row : table.rows) {
        for (const double dg : d_goose_grid) {
            for (const double dsv : d_sv_grid) {
                RateConfig rates = base;
                rates.d_goose = dg;
                rates.d_sv = dsv;
                const double f_s = effective_rate(rates);
                const LatencyBreakdown lat =
                    total_latency(row.mean_s, row.batch_size, f_s, rates.t_pre);

                DeploymentPlan cand;
                cand.hardware = row.hardware;
                cand.batch_size = row.batch_size;
                cand.d_goose = dg;
                cand.d_sv = dsv;
                cand.f_s = f_s;
                cand.t_average = row.mean_s;
                cand.latency = lat;
                cand.excess_total = std::max(0.0, lat.t_total - rates.t_transmission);
                cand.excess_rate = std::max(0.0, row.mean_s - 1.0 / f_s);
                cand.feasible =
                    lat.t_total < rates.t_transmission && row.mean_s < 1.0 / f_s;

                if (cand.feasible) {
                    const bool better =
                        !have_best || cand.t_average < best.t_average ||
                        (cand.t_average == best.t_average &&
                         (cand.f_s > best.f_s ||
                          (cand.f_s == best.f_s && cand.batch_size < best.batch_size)));
                    if (better) {
                        best = cand;
                        have_best = true;
                    }
                } else {
                    const double violation = cand.excess_total / base.t_transmission +
                                             cand.excess_rate * f_s;
                    if (!have_fallback || violation < fallback_violation) {
                        fallback = cand;
                        fallback_violation = violation;
                        have_fallback = true;
                    }
                }
            }
        }
    }
    return have_best ? best : fallback;
}

void save_plan(const DeploymentPlan& plan, const RateConfig& base, const std::string& path) {
    nlohmann::json j;
    j["feasible"] = plan.feasible;
    j["hardware"] = plan.hardware;
    j["batch_size"] = plan.batch_size;
    j["d_goose"] = plan.d_goose;
    j["d_sv"] = plan.d_sv;
    j["f_s_hz"] = plan.f_s;
    j["t_average_s"] = plan.t_average;
    j["t_tf_s"] = plan.latency.t_tf;
    j["t_batch_s"] = plan.latency.t_batch;
    j["t_pro_s"] = plan.latency.t_pro;
    j["t_total_s"] = plan.latency.t_total;
    j["t_pre_s"] = base.t_pre;
    j["t_transmission_s"] = base.t_transmission;
    j["f_goose_hz"] = base.f_goose;
    j["f_sv_hz"] = base.f_sv;
    if (!plan.feasible) {
        j["excess_total_s"] = plan.excess_total;
        j["excess_rate_s"] = plan.excess_rate;
    }
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::MissingFile, "cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

LatencyTable benchmark_inference(const Model& model, const std::vector<int>& batch_sizes,
                                 int trials, int warmup, uint64_t seed,
                                 std::vector<BenchTiming>* raw_out) {
    require(trials >= 10, Errc::InvalidBatch, "need at least 10 timed trials");
    require(warmup >= 0, Errc::InvalidBatch, "warmup must be >= 0");
    require(!batch_sizes.empty(), Errc::InvalidBatch, "no batch sizes given");

    const ModelConfig& c = model.config();
    Rng rng(Rng::mix(seed, 0xbe7cULL));

    // Synthetic full-length sequences with plausible token magnitudes.
    auto make_sequence = [&]() {
        ContextSequence seq;
        seq.mode = c.mode;
        seq.N = c.context_pairs;
        for (int n = 0; n < c.context_pairs; ++n) {
            ContextPair p;
            p.x.resize(static_cast<size_t>(c.feature_dim));
            for (auto& x : p.x) {
                x = rng.gaussian();
            }
            p.y_ctx.assign(static_cast<size_t>(c.y_input_dim()), 0.0);
            if (c.mode == SequenceMode::TF) {
                for (auto& y : p.y_ctx) {
                    y = -1.0;
                }
                for (int w = 0; w < std::max(1, c.weak_count); ++w) {
                    p.y_ctx[static_cast<size_t>(w)] =
                        static_cast<double>(rng.below(static_cast<uint64_t>(c.num_classes)));
                }
            } else {
                for (int w = 0; w < c.weak_count; ++w) {
                    const auto k = rng.below(static_cast<uint64_t>(c.num_classes));
                    p.y_ctx[static_cast<size_t>(w) * c.num_classes + k] = 1.0;
                }
            }
            p.y_true = 0;
            seq.pairs.push_back(std::move(p));
        }
        return seq;
    };

    LatencyTable table;
    for (const int bs : batch_sizes) {
        require(bs >= 1, Errc::InvalidBatch, "batch size must be >= 1");
        std::vector<ContextSequence> batch;
        batch.reserve(static_cast<size_t>(bs));
        for (int i = 0; i < bs; ++i) {
            batch.push_back(make_sequence());
        }
        volatile double sink = 0.0;
        for (int i = 0; i < warmup; ++i) {
            for (const auto& seq : batch) {
                sink = sink + model.forward(seq)[0];
            }
        }
        std::vector<double> per_sample(static_cast<size_t>(trials));
        for (int t = 0; t < trials; ++t) {
            const auto t0 = std::chrono::steady_clock::now();
            for (const auto& seq : batch) {
                sink = sink + model.forward(seq)[0];
            }
            const auto t1 = std::chrono::steady_clock::now();
            per_sample[static_cast<size_t>(t)] =
                std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(bs);
            if (raw_out) {
                raw_out->push_back(BenchTiming{bs, t, per_sample[static_cast<size_t>(t)]});
            }
        }
        double mean = 0.0;
        for (const double x : per_sample) {
            mean += x;
        }
        mean /= static_cast<double>(trials);
        double var = 0.0;
        for (const double x : per_sample) {
            var += (x - mean) * (x - mean);
        }
        var /= static_cast<double>(trials - 1);  // sample convention
        table.rows.push_back(LatencyTable::Row{"local", bs, mean, std::sqrt(var)});
    }
    return table;
}

}  // namespace iclids
