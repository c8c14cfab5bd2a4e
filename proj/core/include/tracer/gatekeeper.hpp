#pragma once

#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "tracer/acceptor.hpp"
#include "tracer/surrogate.hpp"
#include "tracer/trace.hpp"

namespace tracer {

/// Target teacher-agreement level, in (0, 1].
struct Alpha {
    double value = 0.95;

    void validate() const;
};

struct TauCalibration {
    double tau = 0.0;
    double coverage = 0.0;
    double ta = 0.0;
};

/// Sweeps every unique acceptor score as a threshold and returns the feasible
/// one (TA over handled >= alpha) with maximal coverage; coverage ties break
/// toward larger tau. Handled means score >= tau. Returns nothing when no
/// threshold is feasible.
std::optional<TauCalibration> calibrate_tau(const std::vector<double>& scores,
                                            const std::vector<std::uint8_t>& agreement,
                                            Alpha alpha);

enum class PipelineFamily { Global, L2D };

const char* pipeline_family_name(PipelineFamily f);

struct CalibrationMetrics {
    double coverage = 0.0;
    double ta = 0.0;

    bool operator==(const CalibrationMetrics&) const = default;
};

/// A (family, surrogate, acceptor?, tau) bundle. Global candidates carry no
/// acceptor and have coverage 1 by construction; L2D candidates satisfy
/// calibration TA >= alpha at their stored tau.
struct PipelineCandidate {
    PipelineFamily family = PipelineFamily::Global;
    std::shared_ptr<const SurrogateModel> surrogate;
    std::shared_ptr<const AcceptorModel> acceptor;  // null for Global
    double tau = 0.0;                               // unused for Global
    CalibrationMetrics calibration;
};

struct EvalMetrics {
    double coverage = 0.0;
    std::optional<double> ta_on_handled;  // empty when nothing was handled
    std::optional<double> gt_accuracy;    // empty when no ground truth present
    std::size_t n = 0;

    bool operator==(const EvalMetrics&) const = default;
};

/// Acceptor score the routing rule compares against tau. Global pipelines
/// score every input 1.
double pipeline_score(const PipelineCandidate& candidate, const ProbVector& proba);

std::optional<PipelineCandidate> build_global_candidate(
    std::shared_ptr<const SurrogateModel> model, const std::vector<const Trace*>& calibration,
    Alpha alpha);

std::optional<PipelineCandidate> build_l2d_candidate(
    std::shared_ptr<const SurrogateModel> model, std::shared_ptr<const AcceptorModel> acceptor,
    const std::vector<const Trace*>& calibration, Alpha alpha);

/// Coverage, TA over the handled subset, and (when ground truth is present)
/// end-to-end accuracy with surrogate output on handled traffic and the
/// teacher label on deferred traffic.
EvalMetrics evaluate_pipeline(const PipelineCandidate& candidate,
                              const std::vector<const Trace*>& data);

enum class RefusalReason { None, NoFeasibleTau, BelowCoverageFloor, NoCandidates };

const char* refusal_reason_name(RefusalReason r);

struct CandidateReport {
    PipelineFamily family = PipelineFamily::Global;
    double tau = 0.0;
    CalibrationMetrics calibration;
    EvalMetrics shadow;
    bool feasible = false;
};

struct GateVerdict {
    std::optional<PipelineCandidate> promoted;
    EvalMetrics shadow;  // shadow metrics of the promoted candidate
    RefusalReason reason = RefusalReason::None;
    std::vector<CandidateReport> candidates;  // per-candidate record for the run log

    bool is_promoted() const { return promoted.has_value(); }
};

/// Re-evaluates every candidate on the shadow split. Feasible: shadow TA
/// >= alpha and shadow coverage >= floor (a candidate handling nothing has
/// undefined TA and is infeasible). Promotes the feasible candidate with
/// maximal shadow coverage; ties prefer Global, then larger tau. An empty
/// feasible set always refuses, never degrades.
GateVerdict parity_gate(const std::vector<PipelineCandidate>& candidates,
                        const std::vector<const Trace*>& shadow, Alpha alpha, double floor);

nlohmann::json candidate_to_json(const PipelineCandidate& candidate);
PipelineCandidate candidate_from_json(const nlohmann::json& j);
nlohmann::json eval_metrics_to_json(const EvalMetrics& m);
EvalMetrics eval_metrics_from_json(const nlohmann::json& j);
nlohmann::json verdict_to_json(const GateVerdict& v);

}  // namespace tracer
