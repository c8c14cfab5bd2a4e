#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tracer/router.hpp"
#include "tracer/trace.hpp"

namespace tracer {

/// Gaussian-cluster world generator. K centroids spaced at least
/// `separation` apart (in within-cluster standard deviations); ground truth
/// is the cluster id; the teacher label is the ground truth flipped to a
/// uniformly chosen other class with probability `teacher_noise`.
/// separation = 0 puts every centroid at the origin, making labels
/// independent of the embedding.
struct SyntheticSpec {
    int num_classes = 10;
    int dim = 32;
    double separation = 8.0;
    double teacher_noise = 0.02;
    int per_day = 1000;
    int days = 5;
    std::uint64_t seed = 42;
};

/// Deterministic per seed. Days are tagged 1..days.
std::vector<TraceRecord> generate_synthetic(const SyntheticSpec& spec);

struct WorldData {
    std::vector<TraceRecord> train_records;
    std::vector<TraceRecord> test_records;  // fresh sample from the same clusters
};

/// Training volume plus a held-out test sample sized 30% of it, drawn from
/// the same centroids with an independent stream.
WorldData generate_world(const SyntheticSpec& spec);

struct DayRecord {
    int day = 0;
    std::size_t traces_so_far = 0;
    int version = 0;
    bool promoted = false;
    std::string family;  // empty when refused
    std::string reason;  // empty when promoted
    double cal_coverage = 0.0;
    double cal_ta = 0.0;
};

struct ProtocolResult {
    std::vector<DayRecord> day_records;
    RoutingState final_state;
    ReportBundle final_report;
    EvalMetrics test_metrics;
};

/// Day 1: fit on the first daily batch. Days 2..n: update with each
/// subsequent batch. The final state is evaluated on the supplied test
/// records. Throws when the records carry fewer than `days` distinct day
/// tags.
ProtocolResult run_protocol(const std::vector<TraceRecord>& records, int days,
                            const RouterConfig& cfg, const std::vector<TraceRecord>& test_records);

struct SweepRow {
    double alpha = 0.0;
    bool promoted = false;
    double coverage = 0.0;
    std::optional<double> ta;
    std::optional<double> gt_accuracy;
    double baseline_coverage = 0.0;
    std::optional<double> baseline_ta;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

/// Observer invoked with each alpha's full protocol result (e.g. to append
/// per-day records to a run log).
using ProtocolObserver = std::function<void(double alpha, const ProtocolResult&)>;

/// Independent protocol run per alpha with identical seed and splits, plus
/// the confidence-threshold baseline columns.
SweepResult run_alpha_sweep(const std::vector<TraceRecord>& records,
                            const std::vector<TraceRecord>& test_records,
                            const std::vector<double>& alphas, const RouterConfig& cfg,
                            const ProtocolObserver& observer = {});

/// Delimited table: alpha, cov, ta, gt_acc, baseline_cov, baseline_ta.
std::string sweep_table(const SweepResult& result);
nlohmann::json sweep_to_json(const SweepResult& result);

/// Hindsight comparator: one multinomial LR trained on every trace at once,
/// deferring inputs whose max class probability falls below a threshold
/// swept on the calibration split to maximize coverage at TA >= alpha.
/// Returns test metrics; an infeasible sweep yields coverage 0 with
/// undefined TA.
EvalMetrics baseline_confidence_threshold(const TraceBuffer& buffer,
                                          const std::vector<const Trace*>& test, Alpha alpha,
                                          const RouterConfig& cfg);

struct PriceModel {
    double rate_per_1000 = 2.60;  // currency per 1,000 teacher calls
    double daily_volume = 10000.0;
};

struct CostProjection {
    double daily_cost = 0.0;
    double yearly_cost = 0.0;
    double saving_fraction = 0.0;
};

CostProjection cost_projection(double coverage, const PriceModel& price);

}  // namespace tracer
