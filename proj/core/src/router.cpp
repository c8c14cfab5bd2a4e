#include "tracer/router.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace tracer {

RouteDecision route(const RoutingState& state, const Embedding& embedding) {
    RouteDecision d;
    if (!state.pipeline) return d;  // teacher-only: defer everything, score 0

    const PipelineCandidate& p = *state.pipeline;
    const ProbVector proba = predict_proba(*p.surrogate, embedding);
    d.score = pipeline_score(p, proba);
    d.handled = p.family == PipelineFamily::Global || d.score >= p.tau;
    if (d.handled) d.label = argmax_index(proba);
    return d;
}

ClassifyOutcome classify(const RoutingState& state, const TraceInput& input,
                         TeacherClient& teacher, TraceBuffer& buffer, int day) {
    ClassifyOutcome out;
    out.decision = route(state, input.embedding);

    if (out.decision.handled) {
        out.label = state.pipeline->surrogate->label_snapshot[
            static_cast<std::size_t>(out.decision.label)];
        return out;  // buffer untouched
    }

    // Every deferred call produces a training example. A teacher failure
    // propagates before anything is appended.
    out.label = teacher.classify(input);
    Trace t;
    t.id = input.id;
    t.text = input.text;
    t.embedding = input.embedding;
    t.teacher_label = buffer.labels().intern(out.label);
    t.day = day;
    buffer.append(std::move(t));  // duplicate ids are skipped, ids stay unique
    return out;
}

namespace {

FitResult refit_chain(const TraceBuffer& buffer, const RouterConfig& cfg,
                      const RoutingState* previous) {
    cfg.alpha.validate();
    cfg.splits.validate();
    if (buffer.empty()) throw std::invalid_argument("cannot fit on an empty buffer");

    const int next_version = (previous ? previous->version : 0) + 1;
    const int fitted_day = buffer.max_day();

    FitResult result;
    result.state.version = next_version;
    result.state.fitted_at_day = fitted_day;

    ReportBundle& report = result.report;
    report.version = next_version;
    report.alpha = cfg.alpha.value;

    const auto refuse = [&](RefusalReason reason, std::string note) {
        result.state.pipeline.reset();
        result.state.refusal = reason;
        result.state.refusal_note = note;
        result.verdict.reason = reason;
        report.verdict.promoted = false;
        report.verdict.reason = refusal_reason_name(reason);
        report.verdict.note = std::move(note);
        return result;
    };

    const auto train = traces_for(buffer, Split::Train, cfg.splits);
    const auto validation = traces_for(buffer, Split::Validation, cfg.splits);
    const auto calibration = traces_for(buffer, Split::Calibration, cfg.splits);
    const auto shadow = traces_for(buffer, Split::Shadow, cfg.splits);

    // Degenerate-task guards before any training starts.
    if (train.empty() || calibration.empty() || shadow.empty()) {
        return refuse(RefusalReason::NoCandidates,
                      "a required split is empty at this buffer size");
    }
    {
        const int first = train.front()->teacher_label;
        const bool multi = std::any_of(train.begin(), train.end(), [&](const Trace* t) {
            return t->teacher_label != first;
        });
        if (!multi) {
            return refuse(RefusalReason::NoCandidates,
                          "training split has fewer than 2 teacher classes");
        }
    }
    if (!cfg.train.use_multinomial_lr && !cfg.train.use_mlp && !cfg.train.use_nearest_centroid) {
        return refuse(RefusalReason::NoCandidates, "surrogate pool is empty");
    }

    // Train the pool and select by validation macro-F1 against teacher labels.
    std::vector<SurrogateModel> pool = train_pool(train, buffer.labels(), cfg.train);
    const SelectionResult selection = select_best(pool, validation);
    auto best = std::make_shared<const SurrogateModel>(std::move(pool[selection.best_index]));

    // The acceptor learns agreement on the validation split, never on the
    // surrogate's own training data.
    std::vector<ConfidenceFeatures> features;
    std::vector<std::uint8_t> agreement;
    features.reserve(validation.size());
    for (const Trace* t : validation) {
        const ProbVector p = predict_proba(*best, t->embedding);
        features.push_back(confidence_features(p));
        agreement.push_back(argmax_index(p) == t->teacher_label ? 1 : 0);
    }
    AcceptorModel acceptor_model;
    if (!features.empty()) {
        acceptor_model = fit_acceptor(features, agreement, cfg.train.seed, cfg.train);
    } else {
        acceptor_model.bias = 10.0;  // no validation data: accept-everything stub
        acceptor_model.seed = cfg.train.seed;
    }
    auto acceptor = std::make_shared<const AcceptorModel>(acceptor_model);

    std::vector<PipelineCandidate> candidates;
    if (auto global = build_global_candidate(best, calibration, cfg.alpha)) {
        candidates.push_back(std::move(*global));
    }
    if (auto l2d = build_l2d_candidate(best, acceptor, calibration, cfg.alpha)) {
        candidates.push_back(std::move(*l2d));
    }

    result.verdict = parity_gate(candidates, shadow, cfg.alpha, cfg.coverage_floor);

    if (!result.verdict.is_promoted()) {
        // keep the full verdict (with per-candidate reports) for the run log
        GateVerdict gate = std::move(result.verdict);
        refuse(gate.reason, "");
        result.verdict = std::move(gate);
        return result;
    }

    result.state.pipeline = result.verdict.promoted;
    result.state.refusal = RefusalReason::None;

    // Artifacts are computed over the shadow split: the only data never
    // touched by training or threshold calibration.
    const PipelineCandidate& promoted = *result.state.pipeline;
    report.verdict.promoted = true;
    report.verdict.family = pipeline_family_name(promoted.family);
    report.verdict.tau = promoted.tau;
    report.verdict.calibration = promoted.calibration;
    report.verdict.shadow = result.verdict.shadow;

    const auto routed = route_reference(promoted, shadow);
    report.slices = slice_summaries(routed, buffer.labels(), &report.length_bin_edges);
    report.cards = representative_cards(routed, buffer.labels());
    if (promoted.family == PipelineFamily::L2D) {
        report.pairs = boundary_pairs(routed, buffer.labels(), cfg.artifacts.boundary_pair_cap);
    }
    if (previous) {
        const PipelineCandidate* prev_pipeline =
            previous->pipeline ? &*previous->pipeline : nullptr;
        report.deltas = temporal_deltas(prev_pipeline, &promoted, shadow, buffer.labels());
    }
    report.disagreements =
        disagreement_cards(*promoted.surrogate, shadow, buffer.labels(),
                           cfg.artifacts.disagreement_cap);
    return result;
}

}  // namespace

FitResult fit(const TraceBuffer& buffer, const RouterConfig& cfg) {
    return refit_chain(buffer, cfg, nullptr);
}

FitResult update(const RoutingState& previous, const std::vector<TraceRecord>& new_traces,
                 TraceBuffer& buffer, const RouterConfig& cfg) {
    buffer.ingest(new_traces);
    return refit_chain(buffer, cfg, &previous);
}

nlohmann::json routing_state_to_json(const RoutingState& state) {
    nlohmann::json j;
    j["format"] = "tracer-state/1";
    j["version"] = state.version;
    j["fitted_at_day"] = state.fitted_at_day;
    j["mode"] = state.is_active() ? "active" : "teacher_only";
    if (state.is_active()) {
        j["pipeline"] = candidate_to_json(*state.pipeline);
    } else {
        j["refusal_reason"] = refusal_reason_name(state.refusal);
        if (!state.refusal_note.empty()) j["refusal_note"] = state.refusal_note;
    }
    return j;
}

RoutingState routing_state_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tracer-state/1") {
        throw std::invalid_argument("unsupported state document format");
    }
    RoutingState state;
    state.version = j.at("version").get<int>();
    state.fitted_at_day = j.at("fitted_at_day").get<int>();
    if (j.at("mode").get<std::string>() == "active") {
        state.pipeline = candidate_from_json(j.at("pipeline"));
        state.refusal = RefusalReason::None;
    } else {
        const std::string reason = j.value("refusal_reason", "no-candidates");
        if (reason == "no-feasible-tau") state.refusal = RefusalReason::NoFeasibleTau;
        else if (reason == "below-coverage-floor") state.refusal = RefusalReason::BelowCoverageFloor;
        else state.refusal = RefusalReason::NoCandidates;
        state.refusal_note = j.value("refusal_note", "");
    }
    return state;
}

}  // namespace tracer
