#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tracer/artifacts.hpp"
#include "tracer/gatekeeper.hpp"
#include "tracer/trace.hpp"

namespace tracer {

/// Everything one refit needs: the quality target, the gate floor, the split
/// scheme, optimizer settings and artifact caps.
struct RouterConfig {
    Alpha alpha{0.95};
    double coverage_floor = 0.05;
    SplitFractions splits;
    TrainConfig train;
    ArtifactConfig artifacts;
};

/// Live routing configuration. No pipeline means teacher-only: every input
/// defers. The version increases by exactly 1 per fit/update, even when the
/// verdict regresses to teacher-only.
struct RoutingState {
    int version = 0;
    int fitted_at_day = -1;
    std::optional<PipelineCandidate> pipeline;
    RefusalReason refusal = RefusalReason::NoCandidates;
    std::string refusal_note;

    bool is_active() const { return pipeline.has_value(); }
};

struct RouteDecision {
    bool handled = false;
    int label = -1;      // surrogate label index, valid when handled
    double score = 0.0;  // acceptor score; 1 for Global, 0 for teacher-only
};

/// Pure routing rule: surrogate when the acceptor score clears tau, teacher
/// otherwise. Never mutates state. Throws on a dimension mismatch against an
/// active pipeline.
RouteDecision route(const RoutingState& state, const Embedding& embedding);

struct TraceInput {
    std::string id;
    std::optional<std::string> text;
    Embedding embedding;
};

/// The expensive upstream classifier. classify returns the label string or
/// throws; failures must never surface as silent labels.
class TeacherClient {
public:
    virtual ~TeacherClient() = default;
    virtual std::string classify(const TraceInput& input) = 0;
};

/// Teacher-label lookup from a trace file. Total over the file's ids;
/// unknown ids throw.
class CachedOracleTeacher : public TeacherClient {
public:
    explicit CachedOracleTeacher(const std::string& trace_file);
    explicit CachedOracleTeacher(const std::vector<TraceRecord>& records);

    std::string classify(const TraceInput& input) override;
    std::size_t size() const { return labels_by_id_.size(); }

private:
    std::unordered_map<std::string, std::string> labels_by_id_;
};

/// HTTP teacher: POST {id, text?, embedding} to the endpoint, expect
/// {"label": "..."}. Any transport or protocol failure throws.
class RemoteTeacher : public TeacherClient {
public:
    explicit RemoteTeacher(std::string url);
    std::string classify(const TraceInput& input) override;

private:
    std::string base_url_;
    std::string path_;
};

struct ClassifyOutcome {
    std::string label;
    RouteDecision decision;
};

/// Handled inputs return the surrogate label and leave the buffer untouched.
/// Deferred inputs return the teacher label and append a new trace tagged
/// with `day` (novel teacher labels register on the fly). A teacher failure
/// propagates and nothing is appended.
ClassifyOutcome classify(const RoutingState& state, const TraceInput& input,
                         TeacherClient& teacher, TraceBuffer& buffer, int day);

struct FitResult {
    RoutingState state;
    ReportBundle report;
    GateVerdict verdict;
};

/// The full refit chain: split, train the pool, select by validation
/// macro-F1, fit the acceptor, build Global and L2D candidates on the
/// calibration split, gate on the shadow split, and generate artifacts.
/// Promotion yields an Active state; refusal yields teacher-only. Always
/// refits from scratch.
FitResult fit(const TraceBuffer& buffer, const RouterConfig& cfg);

/// Merges new traces into the buffer, then reruns the fit chain. The
/// previous state feeds the temporal-delta artifact and the version counter.
FitResult update(const RoutingState& previous, const std::vector<TraceRecord>& new_traces,
                 TraceBuffer& buffer, const RouterConfig& cfg);

nlohmann::json routing_state_to_json(const RoutingState& state);
RoutingState routing_state_from_json(const nlohmann::json& j);

}  // namespace tracer
