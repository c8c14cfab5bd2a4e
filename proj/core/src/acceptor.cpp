#include "tracer/acceptor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "tracer/rng.hpp"

namespace tracer {

ConfidenceFeatures confidence_features(const ProbVector& p) {
    if (p.size() < 2) {
        throw std::invalid_argument("confidence features need at least 2 classes");
    }

    // Accumulate in sorted order so permutations of p produce bit-identical
    // features.
    ProbVector sorted = p;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());

    double entropy = 0.0;
    for (const double v : sorted) {
        if (v > 0.0) entropy -= v * std::log(v);
    }
    double norm = entropy / std::log(static_cast<double>(sorted.size()));
    norm = std::clamp(norm, 0.0, 1.0);

    ConfidenceFeatures f;
    f.top1 = sorted[0];
    f.top2 = sorted[1];
    f.margin = f.top1 - f.top2;
    f.norm_entropy = norm;
    return f;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double acceptor_score(const AcceptorModel& model, const ConfidenceFeatures& features) {
    const auto f = features.as_array();
    double z = model.bias;
    for (std::size_t i = 0; i < 4; ++i) z += model.weights[i] * f[i];
    return sigmoid(z);
}

AcceptorModel fit_acceptor(const std::vector<ConfidenceFeatures>& features,
                           const std::vector<std::uint8_t>& agreement, std::uint64_t seed,
                           const TrainConfig& cfg) {
    if (features.empty()) throw std::invalid_argument("acceptor training set is empty");
    if (features.size() != agreement.size()) {
        throw std::invalid_argument("features/agreement length mismatch");
    }

    const std::size_t n = features.size();
    const std::size_t positives =
        static_cast<std::size_t>(std::count(agreement.begin(), agreement.end(), 1));

    AcceptorModel model;
    model.seed = seed;
    if (positives == 0 || positives == n) {
        // Degenerate agreement: constant-score model so tau calibration can
        // still run downstream.
        model.bias = positives == n ? 10.0 : -10.0;
        return model;
    }

    // Binary cross-entropy, same optimizer contract as the surrogates.
    std::array<double, 5> params{};  // w0..w3, bias
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate / std::sqrt(static_cast<double>(epoch));
        rng.shuffle(order);
        for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t end = std::min(n, begin + batch);
            std::array<double, 5> grad{};
            const double inv = 1.0 / static_cast<double>(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const auto x = features[order[i]].as_array();
                double z = params[4];
                for (std::size_t j = 0; j < 4; ++j) z += params[j] * x[j];
                const double delta = (sigmoid(z) - static_cast<double>(agreement[order[i]])) * inv;
                for (std::size_t j = 0; j < 4; ++j) grad[j] += delta * x[j];
                grad[4] += delta;
            }
            for (std::size_t j = 0; j < 4; ++j) grad[j] += cfg.l2 * params[j];
            for (std::size_t j = 0; j < 5; ++j) params[j] -= lr * grad[j];
        }
    }

    model.weights = {params[0], params[1], params[2], params[3]};
    model.bias = params[4];
    return model;
}

nlohmann::json acceptor_to_json(const AcceptorModel& model) {
    nlohmann::json j;
    j["format"] = "tracer-acceptor/1";
    j["weights"] = model.weights;
    j["bias"] = model.bias;
    j["seed"] = model.seed;
    return j;
}

AcceptorModel acceptor_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tracer-acceptor/1") {
        throw std::invalid_argument("unsupported acceptor document format");
    }
    AcceptorModel model;
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != 4) throw std::invalid_argument("acceptor weight vector must have length 4");
    std::copy(w.begin(), w.end(), model.weights.begin());
    model.bias = j.at("bias").get<double>();
    model.seed = j.at("seed").get<std::uint64_t>();
    return model;
}

}  // namespace tracer
