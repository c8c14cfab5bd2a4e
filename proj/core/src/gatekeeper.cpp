#include "tracer/gatekeeper.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace tracer {

void Alpha::validate() const {
    if (!(value > 0.0) || value > 1.0) {
        throw std::invalid_argument("alpha must lie in (0, 1], got " + std::to_string(value));
    }
}

const char* pipeline_family_name(PipelineFamily f) {
    return f == PipelineFamily::Global ? "global" : "l2d";
}

const char* refusal_reason_name(RefusalReason r) {
    switch (r) {
        case RefusalReason::None: return "none";
        case RefusalReason::NoFeasibleTau: return "no-feasible-tau";
        case RefusalReason::BelowCoverageFloor: return "below-coverage-floor";
        case RefusalReason::NoCandidates: return "no-candidates";
    }
    return "?";
}

std::optional<TauCalibration> calibrate_tau(const std::vector<double>& scores,
                                            const std::vector<std::uint8_t>& agreement,
                                            Alpha alpha) {
    alpha.validate();
    if (scores.size() != agreement.size()) {
        throw std::invalid_argument("scores/agreement length mismatch");
    }
    const std::size_t n = scores.size();
    if (n == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    // Walking the scores in descending order, each distinct value is a
    // candidate tau whose handled set is exactly the prefix through the last
    // element with that value.
    std::optional<TauCalibration> best;
    std::size_t agreed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        agreed += agreement[order[i]];
        if (i + 1 < n && scores[order[i + 1]] == scores[order[i]]) continue;

        const double ta = static_cast<double>(agreed) / static_cast<double>(i + 1);
        if (ta < alpha.value) continue;
        const double coverage = static_cast<double>(i + 1) / static_cast<double>(n);
        const double tau = scores[order[i]];
        if (!best || coverage > best->coverage ||
            (coverage == best->coverage && tau > best->tau)) {
            best = TauCalibration{tau, coverage, ta};
        }
    }
    return best;
}

double pipeline_score(const PipelineCandidate& candidate, const ProbVector& proba) {
    if (candidate.family == PipelineFamily::Global) return 1.0;
    return acceptor_score(*candidate.acceptor, confidence_features(proba));
}

std::optional<PipelineCandidate> build_global_candidate(
    std::shared_ptr<const SurrogateModel> model, const std::vector<const Trace*>& calibration,
    Alpha alpha) {
    alpha.validate();
    if (calibration.empty()) throw std::invalid_argument("calibration split is empty");

    std::size_t agreed = 0;
    for (const Trace* t : calibration) {
        if (predict_label(*model, t->embedding) == t->teacher_label) ++agreed;
    }
    const double ta = static_cast<double>(agreed) / static_cast<double>(calibration.size());
    if (ta < alpha.value) return std::nullopt;

    PipelineCandidate c;
    c.family = PipelineFamily::Global;
    c.surrogate = std::move(model);
    c.calibration = {1.0, ta};
    return c;
}

std::optional<PipelineCandidate> build_l2d_candidate(
    std::shared_ptr<const SurrogateModel> model, std::shared_ptr<const AcceptorModel> acceptor,
    const std::vector<const Trace*>& calibration, Alpha alpha) {
    alpha.validate();
    if (calibration.empty()) throw std::invalid_argument("calibration split is empty");

    std::vector<double> scores;
    std::vector<std::uint8_t> agreement;
    scores.reserve(calibration.size());
    agreement.reserve(calibration.size());
    for (const Trace* t : calibration) {
        const ProbVector p = predict_proba(*model, t->embedding);
        scores.push_back(acceptor_score(*acceptor, confidence_features(p)));
        agreement.push_back(argmax_index(p) == t->teacher_label ? 1 : 0);
    }

    const auto cal = calibrate_tau(scores, agreement, alpha);
    if (!cal) return std::nullopt;

    PipelineCandidate c;
    c.family = PipelineFamily::L2D;
    c.surrogate = std::move(model);
    c.acceptor = std::move(acceptor);
    c.tau = cal->tau;
    c.calibration = {cal->coverage, cal->ta};
    return c;
}

EvalMetrics evaluate_pipeline(const PipelineCandidate& candidate,
                              const std::vector<const Trace*>& data) {
    EvalMetrics m;
    m.n = data.size();
    if (data.empty()) return m;

    std::size_t handled = 0, agreed = 0, gt_total = 0, gt_correct = 0;
    for (const Trace* t : data) {
        const ProbVector p = predict_proba(*candidate.surrogate, t->embedding);
        const double score = pipeline_score(candidate, p);
        const bool is_handled =
            candidate.family == PipelineFamily::Global || score >= candidate.tau;
        const int surrogate_label = argmax_index(p);
        if (is_handled) {
            ++handled;
            if (surrogate_label == t->teacher_label) ++agreed;
        }
        if (t->ground_truth) {
            ++gt_total;
            const int final_label = is_handled ? surrogate_label : t->teacher_label;
            if (final_label == *t->ground_truth) ++gt_correct;
        }
    }

    m.coverage = static_cast<double>(handled) / static_cast<double>(data.size());
    if (handled > 0) m.ta_on_handled = static_cast<double>(agreed) / static_cast<double>(handled);
    if (gt_total > 0) m.gt_accuracy = static_cast<double>(gt_correct) / static_cast<double>(gt_total);
    return m;
}

GateVerdict parity_gate(const std::vector<PipelineCandidate>& candidates,
                        const std::vector<const Trace*>& shadow, Alpha alpha, double floor) {
    alpha.validate();
    if (floor < 0.0 || floor > 1.0) {
        throw std::invalid_argument("coverage floor must lie in [0, 1]");
    }

    GateVerdict verdict;
    if (candidates.empty()) {
        verdict.reason = RefusalReason::NoCandidates;
        return verdict;
    }

    std::optional<std::size_t> best;
    bool some_failed_floor_only = false;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        CandidateReport report;
        report.family = candidates[i].family;
        report.tau = candidates[i].tau;
        report.calibration = candidates[i].calibration;
        report.shadow = evaluate_pipeline(candidates[i], shadow);

        // TA over an empty handled set is undefined: such candidates cannot
        // certify TA >= alpha and are infeasible by convention.
        const bool ta_ok = report.shadow.ta_on_handled.has_value() &&
                           *report.shadow.ta_on_handled >= alpha.value;
        const bool floor_ok = report.shadow.coverage >= floor;
        report.feasible = ta_ok && floor_ok;
        if (ta_ok && !floor_ok) some_failed_floor_only = true;

        if (report.feasible) {
            if (!best) {
                best = i;
            } else {
                const CandidateReport& b = verdict.candidates[*best];
                const double cov = report.shadow.coverage;
                const double bcov = b.shadow.coverage;
                const bool wins =
                    cov > bcov ||
                    (cov == bcov &&
                     (static_cast<int>(report.family) < static_cast<int>(b.family) ||
                      (report.family == b.family && report.tau > b.tau)));
                if (wins) best = i;
            }
        }
        verdict.candidates.push_back(std::move(report));
    }

    if (best) {
        verdict.promoted = candidates[*best];
        verdict.shadow = verdict.candidates[*best].shadow;
        verdict.reason = RefusalReason::None;
    } else {
        verdict.reason = some_failed_floor_only ? RefusalReason::BelowCoverageFloor
                                                : RefusalReason::NoFeasibleTau;
    }
    return verdict;
}

nlohmann::json eval_metrics_to_json(const EvalMetrics& m) {
    nlohmann::json j;
    j["coverage"] = m.coverage;
    j["ta"] = m.ta_on_handled ? nlohmann::json(*m.ta_on_handled) : nlohmann::json(nullptr);
    j["gt_accuracy"] = m.gt_accuracy ? nlohmann::json(*m.gt_accuracy) : nlohmann::json(nullptr);
    j["n"] = m.n;
    return j;
}

EvalMetrics eval_metrics_from_json(const nlohmann::json& j) {
    EvalMetrics m;
    m.coverage = j.at("coverage").get<double>();
    if (!j.at("ta").is_null()) m.ta_on_handled = j["ta"].get<double>();
    if (!j.at("gt_accuracy").is_null()) m.gt_accuracy = j["gt_accuracy"].get<double>();
    m.n = j.at("n").get<std::size_t>();
    return m;
}

nlohmann::json candidate_to_json(const PipelineCandidate& candidate) {
    nlohmann::json j;
    j["family"] = pipeline_family_name(candidate.family);
    j["tau"] = candidate.tau;
    j["calibration"] = {{"coverage", candidate.calibration.coverage},
                        {"ta", candidate.calibration.ta}};
    j["surrogate"] = surrogate_to_json(*candidate.surrogate);
    if (candidate.acceptor) j["acceptor"] = acceptor_to_json(*candidate.acceptor);
    return j;
}

PipelineCandidate candidate_from_json(const nlohmann::json& j) {
    PipelineCandidate c;
    const std::string family = j.at("family").get<std::string>();
    if (family == "global") {
        c.family = PipelineFamily::Global;
    } else if (family == "l2d") {
        c.family = PipelineFamily::L2D;
    } else {
        throw std::invalid_argument("unknown pipeline family: " + family);
    }
    c.tau = j.at("tau").get<double>();
    c.calibration.coverage = j.at("calibration").at("coverage").get<double>();
    c.calibration.ta = j.at("calibration").at("ta").get<double>();
    c.surrogate = std::make_shared<SurrogateModel>(surrogate_from_json(j.at("surrogate")));
    if (j.contains("acceptor")) {
        c.acceptor = std::make_shared<AcceptorModel>(acceptor_from_json(j.at("acceptor")));
    }
    return c;
}

nlohmann::json verdict_to_json(const GateVerdict& v) {
    nlohmann::json j;
    j["promoted"] = v.is_promoted();
    j["reason"] = refusal_reason_name(v.reason);
    if (v.is_promoted()) {
        j["family"] = pipeline_family_name(v.promoted->family);
        j["tau"] = v.promoted->tau;
        j["shadow"] = eval_metrics_to_json(v.shadow);
        j["calibration"] = {{"coverage", v.promoted->calibration.coverage},
                            {"ta", v.promoted->calibration.ta}};
    }
    nlohmann::json cands = nlohmann::json::array();
    for (const CandidateReport& r : v.candidates) {
        cands.push_back({{"family", pipeline_family_name(r.family)},
                         {"tau", r.tau},
                         {"calibration",
                          {{"coverage", r.calibration.coverage}, {"ta", r.calibration.ta}}},
                         {"shadow", eval_metrics_to_json(r.shadow)},
                         {"feasible", r.feasible}});
    }
    j["candidates"] = std::move(cands);
    return j;
}

}  // namespace tracer
