#pragma once

// Shared fixtures and independent brute-force oracles for the test suites.
// Oracles here must stay independent of the implementation paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tracer/acceptor.hpp"
#include "tracer/gatekeeper.hpp"
#include "tracer/rng.hpp"
#include "tracer/surrogate.hpp"
#include "tracer/trace.hpp"

namespace test_helpers {

inline tracer::TraceRecord make_record(std::string id, tracer::Embedding emb, std::string label,
                                       int day = 1,
                                       std::optional<std::string> text = std::nullopt,
                                       std::optional<std::string> gt = std::nullopt) {
    tracer::TraceRecord r;
    r.id = std::move(id);
    r.embedding = std::move(emb);
    r.teacher_label = std::move(label);
    r.day = day;
    r.text = std::move(text);
    r.ground_truth = std::move(gt);
    return r;
}

/// Gaussian blobs around the given centers, one label per center.
inline std::vector<tracer::TraceRecord> blob_records(
    const std::vector<tracer::Embedding>& centers, int per_center, double noise,
    std::uint64_t seed, const std::string& id_prefix = "t") {
    tracer::Rng rng(seed);
    std::vector<tracer::TraceRecord> records;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        for (int i = 0; i < per_center; ++i) {
            tracer::Embedding e(centers[c].size());
            for (std::size_t j = 0; j < e.size(); ++j) {
                e[j] = centers[c][j] + noise * rng.normal();
            }
            records.push_back(make_record(
                id_prefix + std::to_string(c) + "-" + std::to_string(i), std::move(e),
                "label_" + std::to_string(c), 1,
                "text " + id_prefix + std::to_string(c) + "-" + std::to_string(i)));
        }
    }
    return records;
}

struct BufferFixture {
    tracer::TraceBuffer buffer;

    explicit BufferFixture(const std::vector<tracer::TraceRecord>& records) {
        buffer.ingest(records);
    }

    std::vector<const tracer::Trace*> all() const {
        std::vector<const tracer::Trace*> view;
        for (const tracer::Trace& t : buffer.traces()) view.push_back(&t);
        return view;
    }
};

/// A surrogate whose outputs are fully programmed: a nearest-centroid model
/// with hand-placed centroids. An input equal to centroid k yields class k
/// with probability near 1 at a small temperature.
inline tracer::SurrogateModel programmable_surrogate(
    const std::vector<tracer::Embedding>& centroids, double temperature,
    std::vector<std::string> labels) {
    tracer::SurrogateModel m;
    m.family = tracer::SurrogateFamily::NearestCentroid;
    m.input_dim = static_cast<int>(centroids.front().size());
    m.num_classes = static_cast<int>(centroids.size());
    m.label_snapshot = std::move(labels);
    tracer::CentroidParams p;
    p.temperature = temperature;
    p.present.assign(centroids.size(), 1);
    for (const tracer::Embedding& c : centroids) {
        p.centroids.insert(p.centroids.end(), c.begin(), c.end());
    }
    m.params = std::move(p);
    return m;
}

// --- independent oracles ---------------------------------------------------

/// Exhaustive threshold sweep: every unique score, O(n^2).
inline std::optional<tracer::TauCalibration> tau_oracle(
    const std::vector<double>& scores, const std::vector<std::uint8_t>& agreement,
    double alpha) {
    std::vector<double> taus = scores;
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

    std::optional<tracer::TauCalibration> best;
    for (const double tau : taus) {
        std::size_t handled = 0, agreed = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= tau) {
                ++handled;
                agreed += agreement[i];
            }
        }
        if (handled == 0) continue;
        const double ta = static_cast<double>(agreed) / static_cast<double>(handled);
        if (ta < alpha) continue;
        const double coverage = static_cast<double>(handled) / static_cast<double>(scores.size());
        if (!best || coverage > best->coverage ||
            (coverage == best->coverage && tau > best->tau)) {
            best = tracer::TauCalibration{tau, coverage, ta};
        }
    }
    return best;
}

/// Macro-F1 from a full confusion matrix, skipping classes without reference
/// support.
inline double macro_f1_oracle(const std::vector<int>& pred, const std::vector<int>& ref, int k) {
    std::vector<std::vector<std::size_t>> confusion(
        static_cast<std::size_t>(k), std::vector<std::size_t>(static_cast<std::size_t>(k), 0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        confusion[static_cast<std::size_t>(ref[i])][static_cast<std::size_t>(pred[i])] += 1;
    }
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < k; ++c) {
        std::size_t support = 0, tp = confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
        std::size_t row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
            col += confusion[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        }
        support = row;
        if (support == 0) continue;
        const double precision_den = static_cast<double>(col);
        const double recall_den = static_cast<double>(row);
        const double precision = precision_den == 0.0 ? 0.0 : static_cast<double>(tp) / precision_den;
        const double recall = static_cast<double>(tp) / recall_den;
        const double f1 =
            precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        sum += f1;
        ++classes;
    }
    return classes == 0 ? 0.0 : sum / static_cast<double>(classes);
}

/// AUC by brute-force pair counting (ties count half).
inline double auc_brute(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    double concordant = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) concordant += 1.0;
            else if (scores[i] == scores[j]) concordant += 0.5;
        }
    }
    return pairs == 0 ? 0.0 : concordant / static_cast<double>(pairs);
}

inline double euclidean(const tracer::Embedding& a, const tracer::Embedding& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Best linear separator on 2-D points found by sweeping directions and
/// thresholds; used to certify an instance is not linearly separable.
inline double best_linear_accuracy_2d(const std::vector<tracer::Embedding>& xs,
                                      const std::vector<int>& ys) {
    double best = 0.0;
    for (int step = 0; step < 360; ++step) {
        const double theta = step * 3.14159265358979323846 / 360.0;
        const double nx = std::cos(theta), ny = std::sin(theta);
        std::vector<double> proj(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) proj[i] = nx * xs[i][0] + ny * xs[i][1];
        std::vector<double> cuts = proj;
        std::sort(cuts.begin(), cuts.end());
        cuts.push_back(cuts.back() + 1.0);
        for (const double cut : cuts) {
            // Binary case only: class 1 on one side.
            std::size_t right0 = 0, wrong0 = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                const bool side = proj[i] >= cut;
                if ((ys[i] == 1) == side) ++right0;
                else ++wrong0;
            }
            best = std::max(best, static_cast<double>(std::max(right0, wrong0)) /
                                      static_cast<double>(xs.size()));
        }
    }
    return best;
}

}  // namespace test_helpers
