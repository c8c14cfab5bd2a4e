#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tracer/trace.hpp"

namespace tracer {

/// Length-K vector of class probabilities: non-negative, sums to 1.
using ProbVector = std::vector<double>;

bool is_valid_prob_vector(const ProbVector& p, double tol = 1e-6);
int argmax_index(const ProbVector& p);

/// Numerically stable softmax (max-shifted).
ProbVector softmax(std::vector<double> logits);

enum class SurrogateFamily { MultinomialLR, Mlp, NearestCentroid };

const char* family_name(SurrogateFamily f);
SurrogateFamily family_from_name(const std::string& name);

struct TrainConfig {
    std::uint64_t seed = 42;
    int epochs = 200;
    double learning_rate = 0.1;  // decayed by 1/sqrt(epoch)
    double l2 = 1e-4;
    int batch_size = 256;
    int hidden_width = 64;
    double centroid_temperature = 1.0;
    bool use_multinomial_lr = true;
    bool use_mlp = true;
    bool use_nearest_centroid = true;

    bool operator==(const TrainConfig&) const = default;
};

struct LrParams {
    std::vector<double> weights;  // K x d, row-major
    std::vector<double> bias;     // K

    bool operator==(const LrParams&) const = default;
};

struct MlpParams {
    int hidden = 0;
    std::vector<double> w1;  // H x d
    std::vector<double> b1;  // H
    std::vector<double> w2;  // K x H
    std::vector<double> b2;  // K

    bool operator==(const MlpParams&) const = default;
};

struct CentroidParams {
    std::vector<double> centroids;      // K x d; rows of absent classes are zero
    std::vector<std::uint8_t> present;  // K; classes seen in the training split
    double temperature = 1.0;

    bool operator==(const CentroidParams&) const = default;
};

/// A fitted probabilistic classifier over embeddings, with the label
/// dictionary frozen at fit time.
struct SurrogateModel {
    SurrogateFamily family = SurrogateFamily::MultinomialLR;
    int input_dim = 0;
    int num_classes = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> label_snapshot;
    std::variant<LrParams, MlpParams, CentroidParams> params;

    bool operator==(const SurrogateModel&) const = default;
};

/// Cross-entropy loss and analytic gradient of the flat multinomial-LR
/// parameter vector [weights (K*d), bias (K)]. L2 applies to weights only,
/// as 0.5 * l2 * ||W||^2. Exposed so the gradient can be checked against
/// finite differences.
struct LossAndGradient {
    double loss = 0.0;
    std::vector<double> gradient;
};

LossAndGradient lr_loss_and_gradient(std::span<const Embedding* const> xs,
                                     std::span<const int> ys, int num_classes, int dim,
                                     const std::vector<double>& flat_params, double l2);

/// Deterministic mini-batch gradient-descent fit against teacher labels.
/// Throws std::invalid_argument on an empty split or a single-class split.
SurrogateModel fit_multinomial_lr(const std::vector<const Trace*>& train,
                                  const LabelDictionary& labels, const TrainConfig& cfg);

/// One hidden ReLU layer, softmax head, same optimizer contract.
SurrogateModel fit_mlp(const std::vector<const Trace*>& train, const LabelDictionary& labels,
                       const TrainConfig& cfg);

/// Per-class centroids with a softmax over negative Euclidean distances at
/// the configured temperature.
SurrogateModel fit_nearest_centroid(const std::vector<const Trace*>& train,
                                    const LabelDictionary& labels, const TrainConfig& cfg);

/// Throws std::invalid_argument on an embedding-dimension mismatch.
ProbVector predict_proba(const SurrogateModel& model, const Embedding& embedding);

int predict_label(const SurrogateModel& model, const Embedding& embedding);

/// Unweighted mean F1 over classes with reference support in the evaluation
/// set; classes with zero reference support are skipped.
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& reference,
                const LabelDictionary& labels);

struct SelectionResult {
    std::size_t best_index = 0;
    std::vector<double> scores;  // validation macro-F1 per candidate
};

/// Picks the candidate with maximal validation macro-F1 against teacher
/// labels. Ties break by family order (MultinomialLR, Mlp, NearestCentroid),
/// then by lower seed. An empty validation split scores every candidate 0,
/// leaving the tie rule to decide.
SelectionResult select_best(const std::vector<SurrogateModel>& candidates,
                            const std::vector<const Trace*>& validation);

/// Trains the enabled families concurrently (independent data views and
/// seeds; fitted models are immutable).
std::vector<SurrogateModel> train_pool(const std::vector<const Trace*>& train,
                                       const LabelDictionary& labels, const TrainConfig& cfg);

nlohmann::json surrogate_to_json(const SurrogateModel& model);
SurrogateModel surrogate_from_json(const nlohmann::json& j);

}  // namespace tracer
