#include "tracer/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tracer {

std::vector<RoutedExample> route_reference(const PipelineCandidate& pipeline,
                                           const std::vector<const Trace*>& reference) {
    std::vector<RoutedExample> routed;
    routed.reserve(reference.size());
    for (const Trace* t : reference) {
        const ProbVector p = predict_proba(*pipeline.surrogate, t->embedding);
        RoutedExample r;
        r.trace = t;
        r.score = pipeline_score(pipeline, p);
        r.handled = pipeline.family == PipelineFamily::Global || r.score >= pipeline.tau;
        r.surrogate_label = argmax_index(p);
        r.teacher_label = t->teacher_label;
        routed.push_back(r);
    }
    return routed;
}

namespace {

struct SliceAccumulator {
    std::size_t n = 0;
    std::size_t handled = 0;
    std::size_t agreed = 0;

    void add(const RoutedExample& r) {
        ++n;
        if (r.handled) {
            ++handled;
            if (r.surrogate_label == r.teacher_label) ++agreed;
        }
    }

    SliceSummary summary(std::string key, std::string kind) const {
        SliceSummary s;
        s.key = std::move(key);
        s.kind = std::move(kind);
        s.n = n;
        s.handled_rate = n == 0 ? 0.0 : static_cast<double>(handled) / static_cast<double>(n);
        if (handled > 0) s.ta_on_handled = static_cast<double>(agreed) / static_cast<double>(handled);
        return s;
    }
};

}  // namespace

std::vector<SliceSummary> slice_summaries(const std::vector<RoutedExample>& routed,
                                          const LabelDictionary& labels,
                                          std::array<double, 2>* edges_out) {
    if (routed.empty()) throw std::invalid_argument("no routed examples to summarize");

    std::map<int, SliceAccumulator> by_label;
    for (const RoutedExample& r : routed) by_label[r.teacher_label].add(r);

    std::vector<SliceSummary> out;
    for (const auto& [label, acc] : by_label) {
        out.push_back(acc.summary(labels.name(label), "label"));
    }

    // Length bins: character-length terciles over the texted subset.
    std::vector<std::size_t> lengths;
    for (const RoutedExample& r : routed) {
        if (r.trace->text) lengths.push_back(r.trace->text->size());
    }
    if (edges_out) *edges_out = {0.0, 0.0};
    if (!lengths.empty()) {
        std::sort(lengths.begin(), lengths.end());
        const std::size_t m = lengths.size();
        const auto edge = [&](std::size_t third) {
            const std::size_t pos = (m * third + 2) / 3;  // ceil(m*third/3)
            return static_cast<double>(lengths[std::min(m - 1, pos == 0 ? 0 : pos - 1)]);
        };
        const double e1 = edge(1);
        const double e2 = edge(2);
        if (edges_out) *edges_out = {e1, e2};

        SliceAccumulator bins[3];
        for (const RoutedExample& r : routed) {
            if (!r.trace->text) continue;
            const double len = static_cast<double>(r.trace->text->size());
            const int b = len <= e1 ? 0 : (len <= e2 ? 1 : 2);
            bins[b].add(r);
        }
        const char* names[3] = {"short", "medium", "long"};
        for (int b = 0; b < 3; ++b) {
            if (bins[b].n > 0) out.push_back(bins[b].summary(names[b], "length"));
        }
    }
    return out;
}

namespace {

double euclidean(const Embedding& a, const Embedding& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

}  // namespace

std::vector<ExampleCard> representative_cards(const std::vector<RoutedExample>& routed,
                                               const LabelDictionary& labels) {
    // Cell = (teacher label, routing group), texted traces only.
    std::map<std::pair<int, bool>, std::vector<const RoutedExample*>> cells;
    for (const RoutedExample& r : routed) {
        if (!r.trace->text) continue;
        cells[{r.teacher_label, r.handled}].push_back(&r);
    }

    std::vector<ExampleCard> cards;
    for (const auto& [key, members] : cells) {
        const std::size_t dim = members.front()->trace->embedding.size();
        Embedding centroid(dim, 0.0);
        for (const RoutedExample* m : members) {
            for (std::size_t j = 0; j < dim; ++j) centroid[j] += m->trace->embedding[j];
        }
        for (double& v : centroid) v /= static_cast<double>(members.size());

        const RoutedExample* best = nullptr;
        double best_dist = 0.0;
        for (const RoutedExample* m : members) {
            const double dist = euclidean(m->trace->embedding, centroid);
            if (!best || dist < best_dist ||
                (dist == best_dist && m->trace->id < best->trace->id)) {
                best = m;
                best_dist = dist;
            }
        }

        ExampleCard card;
        card.slice = labels.name(key.first);
        card.group = key.second ? "handled" : "deferred";
        card.trace_id = best->trace->id;
        card.text = *best->trace->text;
        card.distance_to_centroid = best_dist;
        cards.push_back(std::move(card));
    }
    return cards;
}

std::vector<BoundaryPair> boundary_pairs(const std::vector<RoutedExample>& routed,
                                         const LabelDictionary& labels, int cap) {
    struct Cell {
        const RoutedExample* handled = nullptr;
        const RoutedExample* deferred = nullptr;
    };
    std::map<int, Cell> by_label;
    for (const RoutedExample& r : routed) {
        if (!r.trace->text) continue;
        Cell& cell = by_label[r.teacher_label];
        if (r.handled) {
            if (!cell.handled || r.score > cell.handled->score) cell.handled = &r;
        } else {
            if (!cell.deferred || r.score < cell.deferred->score) cell.deferred = &r;
        }
    }

    std::vector<BoundaryPair> pairs;
    for (const auto& [label, cell] : by_label) {
        if (!cell.handled || !cell.deferred) continue;
        BoundaryPair p;
        p.label = labels.name(label);
        p.handled_id = cell.handled->trace->id;
        p.handled_text = *cell.handled->trace->text;
        p.handled_score = cell.handled->score;
        p.deferred_id = cell.deferred->trace->id;
        p.deferred_text = *cell.deferred->trace->text;
        p.deferred_score = cell.deferred->score;
        pairs.push_back(std::move(p));
    }

    // Keep the most score-contrasting labels.
    std::stable_sort(pairs.begin(), pairs.end(), [](const BoundaryPair& a, const BoundaryPair& b) {
        return a.handled_score - a.deferred_score > b.handled_score - b.deferred_score;
    });
    if (cap >= 0 && pairs.size() > static_cast<std::size_t>(cap)) {
        pairs.resize(static_cast<std::size_t>(cap));
    }
    return pairs;
}

std::vector<TemporalDelta> temporal_deltas(const PipelineCandidate* previous_pipeline,
                                           const PipelineCandidate* current_pipeline,
                                           const std::vector<const Trace*>& reference,
                                           const LabelDictionary& labels) {
    struct Rates {
        std::size_t n = 0;
        std::size_t prev_handled = 0;
        std::size_t curr_handled = 0;
    };
    std::map<int, Rates> by_label;

    const auto handled_flags = [&](const PipelineCandidate* pipeline) {
        std::vector<bool> flags(reference.size(), false);
        if (!pipeline) return flags;  // teacher-only handles nothing
        const auto routed = route_reference(*pipeline, reference);
        for (std::size_t i = 0; i < routed.size(); ++i) flags[i] = routed[i].handled;
        return flags;
    };
    const std::vector<bool> prev = handled_flags(previous_pipeline);
    const std::vector<bool> curr = handled_flags(current_pipeline);

    for (std::size_t i = 0; i < reference.size(); ++i) {
        Rates& r = by_label[reference[i]->teacher_label];
        ++r.n;
        if (prev[i]) ++r.prev_handled;
        if (curr[i]) ++r.curr_handled;
    }

    std::vector<TemporalDelta> deltas;
    for (const auto& [label, r] : by_label) {
        TemporalDelta d;
        d.label = labels.name(label);
        d.previous_rate = static_cast<double>(r.prev_handled) / static_cast<double>(r.n);
        d.current_rate = static_cast<double>(r.curr_handled) / static_cast<double>(r.n);
        d.delta = d.current_rate - d.previous_rate;
        deltas.push_back(std::move(d));
    }
    return deltas;
}

std::vector<DisagreementCard> disagreement_cards(const SurrogateModel& model,
                                                 const std::vector<const Trace*>& heldout,
                                                 const LabelDictionary& labels, int cap) {
    if (heldout.empty()) throw std::invalid_argument("held-out split is empty");

    std::map<int, DisagreementCard> groups;
    for (const Trace* t : heldout) {
        const int pred = predict_label(model, t->embedding);
        if (pred == t->teacher_label) continue;
        DisagreementCard& card = groups[pred];
        card.count += 1;
        if (cap < 0 || card.items.size() < static_cast<std::size_t>(cap)) {
            DisagreementItem item;
            item.display = t->text ? *t->text : t->id;
            item.teacher_label = labels.name(t->teacher_label);
            card.items.push_back(std::move(item));
        }
    }

    std::vector<DisagreementCard> cards;
    for (auto& [label, card] : groups) {
        card.surrogate_label = labels.name(label);
        cards.push_back(std::move(card));
    }
    std::stable_sort(cards.begin(), cards.end(),
                     [](const DisagreementCard& a, const DisagreementCard& b) {
                         return a.count > b.count;
                     });
    return cards;
}

namespace {

nlohmann::json verdict_summary_to_json(const VerdictSummary& v) {
    nlohmann::json j;
    j["promoted"] = v.promoted;
    if (!v.family.empty()) j["family"] = v.family;
    j["tau"] = v.tau;
    if (!v.reason.empty()) j["reason"] = v.reason;
    if (!v.note.empty()) j["note"] = v.note;
    j["calibration"] = {{"coverage", v.calibration.coverage}, {"ta", v.calibration.ta}};
    j["shadow"] = eval_metrics_to_json(v.shadow);
    return j;
}

VerdictSummary verdict_summary_from_json(const nlohmann::json& j) {
    VerdictSummary v;
    v.promoted = j.at("promoted").get<bool>();
    v.family = j.value("family", "");
    v.tau = j.at("tau").get<double>();
    v.reason = j.value("reason", "");
    v.note = j.value("note", "");
    v.calibration.coverage = j.at("calibration").at("coverage").get<double>();
    v.calibration.ta = j.at("calibration").at("ta").get<double>();
    v.shadow = eval_metrics_from_json(j.at("shadow"));
    return v;
}

}  // namespace

nlohmann::json report_to_json(const ReportBundle& bundle) {
    nlohmann::json j;
    j["format"] = "tracer-report/1";
    j["version"] = bundle.version;
    j["alpha"] = bundle.alpha;
    j["verdict"] = verdict_summary_to_json(bundle.verdict);
    if (!bundle.verdict.promoted) return j;  // verdict-only stub

    j["length_bin_edges"] = bundle.length_bin_edges;
    nlohmann::json slices = nlohmann::json::array();
    for (const SliceSummary& s : bundle.slices) {
        slices.push_back({{"key", s.key},
                          {"kind", s.kind},
                          {"n", s.n},
                          {"handled_rate", s.handled_rate},
                          {"ta", s.ta_on_handled ? nlohmann::json(*s.ta_on_handled)
                                                 : nlohmann::json(nullptr)}});
    }
    j["slices"] = std::move(slices);

    nlohmann::json cards = nlohmann::json::array();
    for (const ExampleCard& c : bundle.cards) {
        cards.push_back({{"slice", c.slice},
                         {"group", c.group},
                         {"trace_id", c.trace_id},
                         {"text", c.text},
                         {"distance", c.distance_to_centroid}});
    }
    j["example_cards"] = std::move(cards);

    nlohmann::json pairs = nlohmann::json::array();
    for (const BoundaryPair& p : bundle.pairs) {
        pairs.push_back({{"label", p.label},
                         {"handled_id", p.handled_id},
                         {"handled_text", p.handled_text},
                         {"handled_score", p.handled_score},
                         {"deferred_id", p.deferred_id},
                         {"deferred_text", p.deferred_text},
                         {"deferred_score", p.deferred_score}});
    }
    j["boundary_pairs"] = std::move(pairs);

    nlohmann::json deltas = nlohmann::json::array();
    for (const TemporalDelta& d : bundle.deltas) {
        deltas.push_back({{"label", d.label},
                          {"previous_rate", d.previous_rate},
                          {"current_rate", d.current_rate},
                          {"delta", d.delta}});
    }
    j["temporal_deltas"] = std::move(deltas);

    nlohmann::json groups = nlohmann::json::array();
    for (const DisagreementCard& c : bundle.disagreements) {
        nlohmann::json items = nlohmann::json::array();
        for (const DisagreementItem& it : c.items) {
            items.push_back({{"display", it.display}, {"teacher_label", it.teacher_label}});
        }
        groups.push_back({{"surrogate_label", c.surrogate_label},
                          {"count", c.count},
                          {"items", std::move(items)}});
    }
    j["disagreements"] = std::move(groups);
    return j;
}

ReportBundle report_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tracer-report/1") {
        throw std::invalid_argument("unsupported report document format");
    }
    ReportBundle b;
    b.version = j.at("version").get<int>();
    b.alpha = j.at("alpha").get<double>();
    b.verdict = verdict_summary_from_json(j.at("verdict"));
    if (!b.verdict.promoted) return b;

    const auto edges = j.at("length_bin_edges").get<std::vector<double>>();
    if (edges.size() == 2) b.length_bin_edges = {edges[0], edges[1]};
    for (const auto& s : j.at("slices")) {
        SliceSummary slice;
        slice.key = s.at("key").get<std::string>();
        slice.kind = s.at("kind").get<std::string>();
        slice.n = s.at("n").get<std::size_t>();
        slice.handled_rate = s.at("handled_rate").get<double>();
        if (!s.at("ta").is_null()) slice.ta_on_handled = s["ta"].get<double>();
        b.slices.push_back(std::move(slice));
    }
    for (const auto& c : j.at("example_cards")) {
        ExampleCard card;
        card.slice = c.at("slice").get<std::string>();
        card.group = c.at("group").get<std::string>();
        card.trace_id = c.at("trace_id").get<std::string>();
        card.text = c.at("text").get<std::string>();
        card.distance_to_centroid = c.at("distance").get<double>();
        b.cards.push_back(std::move(card));
    }
    for (const auto& p : j.at("boundary_pairs")) {
        BoundaryPair pair;
        pair.label = p.at("label").get<std::string>();
        pair.handled_id = p.at("handled_id").get<std::string>();
        pair.handled_text = p.at("handled_text").get<std::string>();
        pair.handled_score = p.at("handled_score").get<double>();
        pair.deferred_id = p.at("deferred_id").get<std::string>();
        pair.deferred_text = p.at("deferred_text").get<std::string>();
        pair.deferred_score = p.at("deferred_score").get<double>();
        b.pairs.push_back(std::move(pair));
    }
    for (const auto& d : j.at("temporal_deltas")) {
        TemporalDelta delta;
        delta.label = d.at("label").get<std::string>();
        delta.previous_rate = d.at("previous_rate").get<double>();
        delta.current_rate = d.at("current_rate").get<double>();
        delta.delta = d.at("delta").get<double>();
        b.deltas.push_back(std::move(delta));
    }
    for (const auto& g : j.at("disagreements")) {
        DisagreementCard card;
        card.surrogate_label = g.at("surrogate_label").get<std::string>();
        card.count = g.at("count").get<std::size_t>();
        for (const auto& it : g.at("items")) {
            card.items.push_back({it.at("display").get<std::string>(),
                                  it.at("teacher_label").get<std::string>()});
        }
        b.disagreements.push_back(std::move(card));
    }
    return b;
}

namespace {

std::string format_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%5.1f%%", v * 100.0);
    return buf;
}

std::string format_opt(const std::optional<double>& v) {
    if (!v) return "   --";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", *v);
    return buf;
}

std::string render_text(const ReportBundle& b) {
    std::ostringstream out;
    out << "=== Routing report v" << b.version << " (alpha " << b.alpha << ") ===\n";
    const VerdictSummary& v = b.verdict;
    if (!v.promoted) {
        out << "Verdict: REFUSED (" << v.reason << ")\n";
        if (!v.note.empty()) out << "Note: " << v.note << "\n";
        out << "Routing falls back to full teacher reliance; no artifacts generated.\n";
        return out.str();
    }

    out << "Verdict: PROMOTED " << v.family;
    if (v.family == "l2d") out << " (tau " << v.tau << ")";
    out << "\n";
    out << "Calibration: coverage " << format_rate(v.calibration.coverage) << ", TA "
        << format_opt(v.calibration.ta) << "\n";
    out << "Shadow:      coverage " << format_rate(v.shadow.coverage) << ", TA "
        << format_opt(v.shadow.ta_on_handled) << " (n=" << v.shadow.n << ")\n";

    out << "\n-- Slice summaries (length bin edges: " << b.length_bin_edges[0] << ", "
        << b.length_bin_edges[1] << " chars) --\n";
    for (const SliceSummary& s : b.slices) {
        out << "  [" << s.kind << "] " << s.key << ": handled " << format_rate(s.handled_rate)
            << ", TA " << format_opt(s.ta_on_handled) << ", n=" << s.n << "\n";
    }

    out << "\n-- Representative examples --\n";
    for (const ExampleCard& c : b.cards) {
        out << "  " << c.slice << " / " << c.group << ": \"" << c.text << "\" (dist "
            << c.distance_to_centroid << ")\n";
    }

    out << "\n-- Boundary pairs --\n";
    if (b.pairs.empty()) out << "  none (no label has both handled and deferred traffic)\n";
    for (const BoundaryPair& p : b.pairs) {
        out << "  " << p.label << ":\n";
        out << "    handled  (" << format_opt(p.handled_score) << "): \"" << p.handled_text
            << "\"\n";
        out << "    deferred (" << format_opt(p.deferred_score) << "): \"" << p.deferred_text
            << "\"\n";
    }

    out << "\n-- Temporal deltas --\n";
    if (b.deltas.empty()) out << "  first refit: no previous state to compare\n";
    for (const TemporalDelta& d : b.deltas) {
        out << "  " << d.label << ": " << format_rate(d.previous_rate) << " -> "
            << format_rate(d.current_rate) << " (delta " << (d.delta >= 0 ? "+" : "")
            << d.delta << ")\n";
    }

    out << "\n-- Disagreements (surrogate vs teacher, held out) --\n";
    if (b.disagreements.empty()) out << "  none\n";
    for (const DisagreementCard& c : b.disagreements) {
        out << "  predicted " << c.surrogate_label << " (" << c.count << "):\n";
        for (const DisagreementItem& it : c.items) {
            out << "    \"" << it.display << "\" -> teacher said " << it.teacher_label << "\n";
        }
    }
    return out.str();
}

}  // namespace

std::string emit_report(const ReportBundle& bundle, ReportFormat format) {
    if (format == ReportFormat::Structured) return report_to_json(bundle).dump(2);
    return render_text(bundle);
}

ReportBundle parse_report(const std::string& structured) {
    return report_from_json(nlohmann::json::parse(structured));
}

}  // namespace tracer
