#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracer/gatekeeper.hpp"
#include "tracer/trace.hpp"

namespace tracer {

struct ArtifactConfig {
    int boundary_pair_cap = 5;    // most score-contrasting labels kept per report
    int disagreement_cap = 10;    // listed items per disagreement group

    bool operator==(const ArtifactConfig&) const = default;
};

/// One routed reference trace: the substrate every artifact is computed from.
struct RoutedExample {
    const Trace* trace = nullptr;
    bool handled = false;
    double score = 0.0;
    int surrogate_label = -1;
    int teacher_label = -1;
};

std::vector<RoutedExample> route_reference(const PipelineCandidate& pipeline,
                                           const std::vector<const Trace*>& reference);

/// Per-slice handled rate and TA. Label slices cover every routed example;
/// length slices (character-length terciles) cover the texted subset.
struct SliceSummary {
    std::string key;
    std::string kind;  // "label" or "length"
    std::size_t n = 0;
    double handled_rate = 0.0;
    std::optional<double> ta_on_handled;

    bool operator==(const SliceSummary&) const = default;
};

/// Empty slices are not emitted: the returned slices of each kind partition
/// their reference set. Length-bin edges are written to edges_out so the
/// binning is reproducible.
std::vector<SliceSummary> slice_summaries(const std::vector<RoutedExample>& routed,
                                          const LabelDictionary& labels,
                                          std::array<double, 2>* edges_out = nullptr);

/// The texted input closest to the embedding centroid of its (label, routing
/// group) cell; distance ties break toward the lower trace id.
struct ExampleCard {
    std::string slice;
    std::string group;  // "handled" or "deferred"
    std::string trace_id;
    std::string text;
    double distance_to_centroid = 0.0;

    bool operator==(const ExampleCard&) const = default;
};

std::vector<ExampleCard> representative_cards(const std::vector<RoutedExample>& routed,
                                              const LabelDictionary& labels);

/// Same teacher label, opposite routing decisions: the max-score handled
/// example against the min-score deferred one.
struct BoundaryPair {
    std::string label;
    std::string handled_id;
    std::string handled_text;
    double handled_score = 0.0;
    std::string deferred_id;
    std::string deferred_text;
    double deferred_score = 0.0;

    bool operator==(const BoundaryPair&) const = default;
};

std::vector<BoundaryPair> boundary_pairs(const std::vector<RoutedExample>& routed,
                                         const LabelDictionary& labels, int cap);

/// Per-label handled-rate movement between two routing states evaluated on
/// the same reference set.
struct TemporalDelta {
    std::string label;
    double previous_rate = 0.0;
    double current_rate = 0.0;
    double delta = 0.0;

    bool operator==(const TemporalDelta&) const = default;
};

/// previous_pipeline == nullptr means the previous state was teacher-only
/// (all previous rates 0). current_pipeline == nullptr likewise.
std::vector<TemporalDelta> temporal_deltas(const PipelineCandidate* previous_pipeline,
                                           const PipelineCandidate* current_pipeline,
                                           const std::vector<const Trace*>& reference,
                                           const LabelDictionary& labels);

struct DisagreementItem {
    std::string display;  // trace text when present, id otherwise
    std::string teacher_label;

    bool operator==(const DisagreementItem&) const = default;
};

/// Held-out surrogate/teacher disagreements grouped by the surrogate's
/// predicted class, largest group first. Listed items are capped; counts
/// are always exact.
struct DisagreementCard {
    std::string surrogate_label;
    std::size_t count = 0;
    std::vector<DisagreementItem> items;

    bool operator==(const DisagreementCard&) const = default;
};

std::vector<DisagreementCard> disagreement_cards(const SurrogateModel& model,
                                                 const std::vector<const Trace*>& heldout,
                                                 const LabelDictionary& labels, int cap);

struct VerdictSummary {
    bool promoted = false;
    std::string family;  // empty when refused
    double tau = 0.0;
    std::string reason;  // empty when promoted
    std::string note;
    CalibrationMetrics calibration;
    EvalMetrics shadow;

    bool operator==(const VerdictSummary&) const = default;
};

/// Per-refit artifact set. A refused verdict produces only the verdict
/// record: every artifact section stays empty.
struct ReportBundle {
    int version = 0;
    double alpha = 0.0;
    VerdictSummary verdict;
    std::array<double, 2> length_bin_edges{0.0, 0.0};
    std::vector<SliceSummary> slices;
    std::vector<ExampleCard> cards;
    std::vector<BoundaryPair> pairs;
    std::vector<TemporalDelta> deltas;
    std::vector<DisagreementCard> disagreements;

    bool operator==(const ReportBundle&) const = default;
};

enum class ReportFormat { Structured, HumanReadable };

/// Structured output round-trips through parse_report to an equal bundle.
/// Refused verdicts emit a verdict-only stub with no artifact sections.
std::string emit_report(const ReportBundle& bundle, ReportFormat format);
ReportBundle parse_report(const std::string& structured);

nlohmann::json report_to_json(const ReportBundle& bundle);
ReportBundle report_from_json(const nlohmann::json& j);

}  // namespace tracer
