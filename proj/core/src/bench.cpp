#include "tracer/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tracer/rng.hpp"

namespace tracer {

namespace {

std::string class_name(int k) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "class_%02d", k);
    return buf;
}

std::vector<Embedding> place_centroids(const SyntheticSpec& spec, Rng& rng) {
    std::vector<Embedding> centroids;
    if (spec.separation <= 0.0) {
        // Coincident centroids: embeddings carry no label information.
        centroids.assign(static_cast<std::size_t>(spec.num_classes),
                         Embedding(static_cast<std::size_t>(spec.dim), 0.0));
        return centroids;
    }

    // Random directions at growing radius, rejection-checked so every pair
    // sits at least `separation` apart.
    double radius = spec.separation;
    for (int k = 0; k < spec.num_classes; ++k) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 0 && attempt % 64 == 0) radius *= 1.25;
            Embedding c(static_cast<std::size_t>(spec.dim));
            double norm = 0.0;
            for (double& v : c) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            if (norm <= 0.0) continue;
            for (double& v : c) v = v / norm * radius;

            bool ok = true;
            for (const Embedding& other : centroids) {
                double dist2 = 0.0;
                for (std::size_t j = 0; j < c.size(); ++j) {
                    const double d = c[j] - other[j];
                    dist2 += d * d;
                }
                if (std::sqrt(dist2) < spec.separation) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                centroids.push_back(std::move(c));
                break;
            }
        }
    }
    return centroids;
}

std::vector<TraceRecord> sample_records(const SyntheticSpec& spec,
                                        const std::vector<Embedding>& centroids,
                                        std::uint64_t stream_seed, int n, int first_day,
                                        int per_day, const std::string& id_prefix) {
    Rng rng(stream_seed);
    std::vector<TraceRecord> records;
    records.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int gt = static_cast<int>(rng.index(static_cast<std::size_t>(spec.num_classes)));
        int teacher = gt;
        if (spec.teacher_noise > 0.0 && rng.uniform() < spec.teacher_noise) {
            // Resample uniformly among the other classes.
            int other = static_cast<int>(rng.index(static_cast<std::size_t>(spec.num_classes - 1)));
            if (other >= gt) ++other;
            teacher = other;
        }

        TraceRecord r;
        const int day = first_day + i / per_day;
        r.id = id_prefix + std::to_string(i);
        r.day = day;
        r.embedding.resize(static_cast<std::size_t>(spec.dim));
        const Embedding& c = centroids[static_cast<std::size_t>(gt)];
        for (std::size_t j = 0; j < r.embedding.size(); ++j) {
            r.embedding[j] = c[j] + rng.normal();  // unit within-cluster std
        }
        r.teacher_label = class_name(teacher);
        r.ground_truth = class_name(gt);
        r.text = "sample " + std::to_string(i) + " near cluster " + std::to_string(gt) +
                 (i % 3 == 0 ? " with a longer synthetic utterance body" : "");
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace

std::vector<TraceRecord> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw std::invalid_argument("need at least 2 classes");
    if (spec.dim < 2) throw std::invalid_argument("need dimension >= 2");
    if (spec.days < 1 || spec.per_day < 1) throw std::invalid_argument("need days, per_day >= 1");

    Rng geometry(spec.seed);
    const auto centroids = place_centroids(spec, geometry);
    return sample_records(spec, centroids, spec.seed ^ 0x706f696e7473ULL,
                          spec.per_day * spec.days, 1, spec.per_day, "synth-");
}

WorldData generate_world(const SyntheticSpec& spec) {
    WorldData world;
    world.train_records = generate_synthetic(spec);

    Rng geometry(spec.seed);
    const auto centroids = place_centroids(spec, geometry);
    const int test_n = std::max(1, static_cast<int>(0.3 * spec.per_day * spec.days));
    world.test_records = sample_records(spec, centroids, spec.seed ^ 0x74657374ULL, test_n,
                                        spec.days + 1, test_n, "test-");
    return world;
}

ProtocolResult run_protocol(const std::vector<TraceRecord>& records, int days,
                            const RouterConfig& cfg,
                            const std::vector<TraceRecord>& test_records) {
    if (days < 1) throw std::invalid_argument("protocol needs at least 1 day");

    std::map<int, std::vector<TraceRecord>> batches;
    for (const TraceRecord& r : records) batches[r.day].push_back(r);
    if (static_cast<int>(batches.size()) < days) {
        throw std::invalid_argument("records carry " + std::to_string(batches.size()) +
                                    " distinct day tags, protocol needs " + std::to_string(days));
    }

    ProtocolResult result;
    TraceBuffer buffer;
    RoutingState state;
    ReportBundle report;

    auto it = batches.begin();
    for (int d = 0; d < days; ++d, ++it) {
        FitResult fitted;
        if (d == 0) {
            buffer.ingest(it->second);
            fitted = fit(buffer, cfg);
        } else {
            fitted = update(state, it->second, buffer, cfg);
        }
        state = std::move(fitted.state);
        report = std::move(fitted.report);

        DayRecord day_record;
        day_record.day = it->first;
        day_record.traces_so_far = buffer.size();
        day_record.version = state.version;
        day_record.promoted = state.is_active();
        if (state.is_active()) {
            day_record.family = pipeline_family_name(state.pipeline->family);
            day_record.cal_coverage = state.pipeline->calibration.coverage;
            day_record.cal_ta = state.pipeline->calibration.ta;
        } else {
            day_record.reason = refusal_reason_name(state.refusal);
        }
        result.day_records.push_back(std::move(day_record));
    }

    result.final_state = std::move(state);
    result.final_report = std::move(report);

    if (!test_records.empty()) {
        // Index the test records through a copy of the buffer so they share
        // its label dictionary; the freshly appended tail is the test view.
        TraceBuffer test_buffer = buffer;
        std::vector<TraceRecord> fresh;
        for (const TraceRecord& r : test_records) {
            if (!test_buffer.contains(r.id)) fresh.push_back(r);
        }
        const std::size_t tail = test_buffer.size();
        test_buffer.ingest(fresh);
        std::vector<const Trace*> test_view;
        for (std::size_t i = tail; i < test_buffer.size(); ++i) {
            test_view.push_back(&test_buffer.traces()[i]);
        }

        if (result.final_state.is_active()) {
            result.test_metrics = evaluate_pipeline(*result.final_state.pipeline, test_view);
        } else {
            EvalMetrics m;
            m.n = test_view.size();
            m.coverage = 0.0;
            std::size_t gt_total = 0, gt_correct = 0;
            for (const Trace* t : test_view) {
                if (!t->ground_truth) continue;
                ++gt_total;
                if (t->teacher_label == *t->ground_truth) ++gt_correct;
            }
            if (gt_total > 0) {
                m.gt_accuracy = static_cast<double>(gt_correct) / static_cast<double>(gt_total);
            }
            result.test_metrics = m;
        }
    }
    return result;
}

EvalMetrics baseline_confidence_threshold(const TraceBuffer& buffer,
                                          const std::vector<const Trace*>& test, Alpha alpha,
                                          const RouterConfig& cfg) {
    alpha.validate();
    if (buffer.empty()) throw std::invalid_argument("baseline needs a non-empty buffer");

    // Trained on all traces at once: the hindsight comparator.
    std::vector<const Trace*> all;
    all.reserve(buffer.size());
    for (const Trace& t : buffer.traces()) all.push_back(&t);
    const SurrogateModel model = fit_multinomial_lr(all, buffer.labels(), cfg.train);

    // Sweep unique max-probability values on the calibration split.
    const auto calibration = traces_for(buffer, Split::Calibration, cfg.splits);
    std::vector<double> scores;
    std::vector<std::uint8_t> agreement;
    for (const Trace* t : calibration) {
        const ProbVector p = predict_proba(model, t->embedding);
        scores.push_back(p[static_cast<std::size_t>(argmax_index(p))]);
        agreement.push_back(argmax_index(p) == t->teacher_label ? 1 : 0);
    }
    auto swept = calibrate_tau(scores, agreement, alpha);

    // The no-deferral option: when the model's overall calibration agreement
    // already clears alpha, a threshold of 0 handles everything (including
    // test points scoring below the calibration minimum).
    if (!scores.empty()) {
        std::size_t agreed = 0;
        for (const auto a : agreement) agreed += a;
        const double overall = static_cast<double>(agreed) / static_cast<double>(scores.size());
        if (overall >= alpha.value) swept = TauCalibration{0.0, 1.0, overall};
    }

    EvalMetrics m;
    m.n = test.size();
    if (!swept) return m;  // infeasible: defer everything

    const double threshold = swept->tau;
    std::size_t handled = 0, agreed = 0, gt_total = 0, gt_correct = 0;
    for (const Trace* t : test) {
        const ProbVector p = predict_proba(model, t->embedding);
        const int label = argmax_index(p);
        const bool is_handled = p[static_cast<std::size_t>(label)] >= threshold;
        if (is_handled) {
            ++handled;
            if (label == t->teacher_label) ++agreed;
        }
        if (t->ground_truth) {
            ++gt_total;
            const int final_label = is_handled ? label : t->teacher_label;
            if (final_label == *t->ground_truth) ++gt_correct;
        }
    }
    if (!test.empty()) {
        m.coverage = static_cast<double>(handled) / static_cast<double>(test.size());
    }
    if (handled > 0) m.ta_on_handled = static_cast<double>(agreed) / static_cast<double>(handled);
    if (gt_total > 0) m.gt_accuracy = static_cast<double>(gt_correct) / static_cast<double>(gt_total);
    return m;
}

SweepResult run_alpha_sweep(const std::vector<TraceRecord>& records,
                            const std::vector<TraceRecord>& test_records,
                            const std::vector<double>& alphas, const RouterConfig& cfg,
                            const ProtocolObserver& observer) {
    if (alphas.empty()) throw std::invalid_argument("alpha sweep needs at least one alpha");

    std::set<int> day_tags;
    for (const TraceRecord& r : records) day_tags.insert(r.day);
    const int days = static_cast<int>(day_tags.size());

    // Baseline inputs are alpha-independent: build them once. The baseline
    // trains on the trace records only; the test partition lives in an
    // extended copy whose dictionary is a superset of the training one.
    TraceBuffer train_only;
    train_only.ingest(records);
    TraceBuffer eval_buffer = train_only;
    std::vector<TraceRecord> fresh_test;
    for (const TraceRecord& r : test_records) {
        if (!eval_buffer.contains(r.id)) fresh_test.push_back(r);
    }
    const std::size_t test_start = eval_buffer.size();
    eval_buffer.ingest(fresh_test);
    std::vector<const Trace*> test_view;
    for (std::size_t i = test_start; i < eval_buffer.size(); ++i) {
        test_view.push_back(&eval_buffer.traces()[i]);
    }

    SweepResult result;
    for (const double a : alphas) {
        RouterConfig run_cfg = cfg;
        run_cfg.alpha = Alpha{a};

        const ProtocolResult protocol = run_protocol(records, days, run_cfg, test_records);
        if (observer) observer(a, protocol);
        const EvalMetrics baseline =
            baseline_confidence_threshold(train_only, test_view, Alpha{a}, run_cfg);

        SweepRow row;
        row.alpha = a;
        row.promoted = protocol.final_state.is_active();
        row.coverage = protocol.test_metrics.coverage;
        row.ta = protocol.test_metrics.ta_on_handled;
        row.gt_accuracy = protocol.test_metrics.gt_accuracy;
        row.baseline_coverage = baseline.coverage;
        row.baseline_ta = baseline.ta_on_handled;
        result.rows.push_back(row);
    }
    return result;
}

std::string sweep_table(const SweepResult& result) {
    std::ostringstream out;
    out << "alpha,cov,ta,gt_acc,baseline_cov,baseline_ta\n";
    const auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", *v);
        return std::string(buf);
    };
    for (const SweepRow& r : result.rows) {
        char head[64];
        std::snprintf(head, sizeof(head), "%.2f,%.4f,", r.alpha, r.coverage);
        out << head << opt(r.ta) << ',' << opt(r.gt_accuracy) << ',';
        char base[32];
        std::snprintf(base, sizeof(base), "%.4f", r.baseline_coverage);
        out << base << ',' << opt(r.baseline_ta) << '\n';
    }
    return out.str();
}

nlohmann::json sweep_to_json(const SweepResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const SweepRow& r : result.rows) {
        rows.push_back(
            {{"alpha", r.alpha},
             {"promoted", r.promoted},
             {"coverage", r.coverage},
             {"ta", r.ta ? nlohmann::json(*r.ta) : nlohmann::json(nullptr)},
             {"gt_accuracy", r.gt_accuracy ? nlohmann::json(*r.gt_accuracy) : nlohmann::json(nullptr)},
             {"baseline_coverage", r.baseline_coverage},
             {"baseline_ta",
              r.baseline_ta ? nlohmann::json(*r.baseline_ta) : nlohmann::json(nullptr)}});
    }
    return nlohmann::json{{"rows", std::move(rows)}};
}

CostProjection cost_projection(double coverage, const PriceModel& price) {
    if (coverage < 0.0 || coverage > 1.0) {
        throw std::invalid_argument("coverage must lie in [0, 1]");
    }
    if (price.rate_per_1000 < 0.0 || price.daily_volume < 0.0) {
        throw std::invalid_argument("price model must be non-negative");
    }
    CostProjection c;
    c.daily_cost = price.daily_volume / 1000.0 * price.rate_per_1000 * (1.0 - coverage);
    c.yearly_cost = c.daily_cost * 365.0;
    c.saving_fraction = coverage;
    return c;
}

}  // namespace tracer
