#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tracer/surrogate.hpp"

namespace tracer {

/// The four confidence signals derived from a surrogate probability vector.
/// All live in [0,1]; margin is exactly top1 - top2; norm_entropy is
/// -sum(p ln p) / ln K with 0 ln 0 := 0.
struct ConfidenceFeatures {
    double top1 = 0.0;
    double top2 = 0.0;
    double margin = 0.0;
    double norm_entropy = 0.0;

    std::array<double, 4> as_array() const { return {top1, top2, margin, norm_entropy}; }

    bool operator==(const ConfidenceFeatures&) const = default;
};

/// Throws std::invalid_argument when K < 2.
ConfidenceFeatures confidence_features(const ProbVector& p);

/// Binary scorer over confidence features predicting surrogate-teacher
/// agreement: score = sigmoid(w . f + b).
struct AcceptorModel {
    std::array<double, 4> weights{0.0, 0.0, 0.0, 0.0};
    double bias = 0.0;
    std::uint64_t seed = 0;

    bool operator==(const AcceptorModel&) const = default;
};

double sigmoid(double x);

/// Deterministic binary cross-entropy fit with the surrogate optimizer
/// defaults. An all-1 or all-0 agreement vector yields the constant-score
/// model (bias +-10, zero weights) so downstream calibration can still run.
/// Throws std::invalid_argument on empty or mismatched inputs.
AcceptorModel fit_acceptor(const std::vector<ConfidenceFeatures>& features,
                           const std::vector<std::uint8_t>& agreement, std::uint64_t seed,
                           const TrainConfig& cfg = {});

double acceptor_score(const AcceptorModel& model, const ConfidenceFeatures& features);

nlohmann::json acceptor_to_json(const AcceptorModel& model);
AcceptorModel acceptor_from_json(const nlohmann::json& j);

}  // namespace tracer
