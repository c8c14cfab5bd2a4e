#include "tracer/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tracer/rng.hpp"

namespace tracer {

namespace {

void check_train_input(const std::vector<const Trace*>& train, const LabelDictionary& labels) {
    if (train.empty()) throw std::invalid_argument("training split is empty");
    if (labels.size() < 2) throw std::invalid_argument("label dictionary has fewer than 2 classes");
    int first = train.front()->teacher_label;
    bool multi = false;
    for (const Trace* t : train) {
        if (t->teacher_label != first) {
            multi = true;
            break;
        }
    }
    if (!multi) {
        throw std::invalid_argument("degenerate task: training split has a single teacher class");
    }
}

int check_dim(const std::vector<const Trace*>& train) {
    const int d = static_cast<int>(train.front()->embedding.size());
    for (const Trace* t : train) {
        if (static_cast<int>(t->embedding.size()) != d) {
            throw std::invalid_argument("inconsistent embedding dimensions in training split");
        }
    }
    return d;
}

/// Shared mini-batch loop. `grad_fn(batch_indices, params, grad_out)` returns
/// the mean batch loss and fills the gradient; `full_loss(params)` evaluates
/// the objective on the whole split.
template <typename GradFn, typename LossFn>
std::vector<double> minimize(std::vector<double> params, std::size_t n, const TrainConfig& cfg,
                             std::uint64_t seed, GradFn&& grad_fn, LossFn&& full_loss) {
    const double initial = full_loss(params);
    const std::vector<double> start = params;

    for (int attempt = 0; attempt < 2; ++attempt) {
        const double lr0 = cfg.learning_rate / (attempt == 0 ? 1.0 : 10.0);
        Rng rng(seed);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::vector<double> grad(params.size());
        const std::size_t batch = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size));

        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            const double lr = lr0 / std::sqrt(static_cast<double>(epoch));
            rng.shuffle(order);
            for (std::size_t begin = 0; begin < n; begin += batch) {
                const std::size_t end = std::min(n, begin + batch);
                grad_fn({order.begin() + begin, order.begin() + end}, params, grad);
                for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
            }
        }
        if (full_loss(params) <= initial) return params;
        params = start;  // diverged; retry once with a smaller step
    }
    return params;
}

}  // namespace

bool is_valid_prob_vector(const ProbVector& p, double tol) {
    if (p.empty()) return false;
    double sum = 0.0;
    for (const double v : p) {
        if (!(v >= 0.0)) return false;
        sum += v;
    }
    return std::abs(sum - 1.0) <= tol;
}

int argmax_index(const ProbVector& p) {
    if (p.empty()) throw std::invalid_argument("argmax of empty vector");
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

ProbVector softmax(std::vector<double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : logits) v /= sum;
    return logits;
}

const char* family_name(SurrogateFamily f) {
    switch (f) {
        case SurrogateFamily::MultinomialLR: return "multinomial_lr";
        case SurrogateFamily::Mlp: return "mlp";
        case SurrogateFamily::NearestCentroid: return "nearest_centroid";
    }
    return "?";
}

SurrogateFamily family_from_name(const std::string& name) {
    if (name == "multinomial_lr") return SurrogateFamily::MultinomialLR;
    if (name == "mlp") return SurrogateFamily::Mlp;
    if (name == "nearest_centroid") return SurrogateFamily::NearestCentroid;
    throw std::invalid_argument("unknown surrogate family: " + name);
}

LossAndGradient lr_loss_and_gradient(std::span<const Embedding* const> xs, std::span<const int> ys,
                                     int num_classes, int dim,
                                     const std::vector<double>& flat_params, double l2) {
    const std::size_t k = static_cast<std::size_t>(num_classes);
    const std::size_t d = static_cast<std::size_t>(dim);
    if (flat_params.size() != k * d + k) {
        throw std::invalid_argument("flat parameter vector has the wrong size");
    }
    if (xs.size() != ys.size() || xs.empty()) {
        throw std::invalid_argument("loss needs equal-length, non-empty inputs");
    }

    LossAndGradient out;
    out.gradient.assign(flat_params.size(), 0.0);
    const double* w = flat_params.data();
    const double* b = flat_params.data() + k * d;
    double* gw = out.gradient.data();
    double* gb = out.gradient.data() + k * d;
    const double inv_n = 1.0 / static_cast<double>(xs.size());

    std::vector<double> logits(k);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Embedding& x = *xs[i];
        for (std::size_t c = 0; c < k; ++c) {
            double v = b[c];
            const double* row = w + c * d;
            for (std::size_t j = 0; j < d; ++j) v += row[j] * x[j];
            logits[c] = v;
        }
        const ProbVector p = softmax(logits);
        const std::size_t y = static_cast<std::size_t>(ys[i]);
        out.loss -= inv_n * std::log(std::max(p[y], 1e-300));
        for (std::size_t c = 0; c < k; ++c) {
            const double delta = (p[c] - (c == y ? 1.0 : 0.0)) * inv_n;
            gb[c] += delta;
            double* grow = gw + c * d;
            for (std::size_t j = 0; j < d; ++j) grow[j] += delta * x[j];
        }
    }

    // L2 on the weight matrix only; the bias stays unregularized.
    for (std::size_t i = 0; i < k * d; ++i) {
        out.loss += 0.5 * l2 * w[i] * w[i];
        out.gradient[i] += l2 * w[i];
    }
    return out;
}

SurrogateModel fit_multinomial_lr(const std::vector<const Trace*>& train,
                                  const LabelDictionary& labels, const TrainConfig& cfg) {
    check_train_input(train, labels);
    const int d = check_dim(train);
    const int k = labels.size();
    const std::size_t n = train.size();

    std::vector<const Embedding*> xs(n);
    std::vector<int> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = &train[i]->embedding;
        ys[i] = train[i]->teacher_label;
    }

    std::vector<double> params(static_cast<std::size_t>(k) * d + k, 0.0);
    std::vector<const Embedding*> batch_x;
    std::vector<int> batch_y;

    auto grad_fn = [&](std::span<const std::size_t> idx, const std::vector<double>& p,
                       std::vector<double>& grad) {
        batch_x.clear();
        batch_y.clear();
        for (const std::size_t i : idx) {
            batch_x.push_back(xs[i]);
            batch_y.push_back(ys[i]);
        }
        grad = lr_loss_and_gradient(batch_x, batch_y, k, d, p, cfg.l2).gradient;
    };
    auto loss_fn = [&](const std::vector<double>& p) {
        return lr_loss_and_gradient(xs, ys, k, d, p, cfg.l2).loss;
    };

    params = minimize(std::move(params), n, cfg, cfg.seed, grad_fn, loss_fn);

    SurrogateModel model;
    model.family = SurrogateFamily::MultinomialLR;
    model.input_dim = d;
    model.num_classes = k;
    model.seed = cfg.seed;
    model.label_snapshot = labels.names();
    LrParams lp;
    lp.weights.assign(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(k) * d);
    lp.bias.assign(params.begin() + static_cast<std::ptrdiff_t>(k) * d, params.end());
    model.params = std::move(lp);
    return model;
}

namespace {

struct MlpLayout {
    std::size_t k, d, h;
    std::size_t w1_off = 0, b1_off, w2_off, b2_off, total;

    MlpLayout(int num_classes, int dim, int hidden)
        : k(static_cast<std::size_t>(num_classes)),
          d(static_cast<std::size_t>(dim)),
          h(static_cast<std::size_t>(hidden)) {
        b1_off = h * d;
        w2_off = b1_off + h;
        b2_off = w2_off + k * h;
        total = b2_off + k;
    }
};

double mlp_batch(const MlpLayout& L, std::span<const std::size_t> idx,
                 const std::vector<const Embedding*>& xs, const std::vector<int>& ys,
                 const std::vector<double>& p, double l2, std::vector<double>* grad) {
    const double* w1 = p.data() + L.w1_off;
    const double* b1 = p.data() + L.b1_off;
    const double* w2 = p.data() + L.w2_off;
    const double* b2 = p.data() + L.b2_off;
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);

    const double inv_n = 1.0 / static_cast<double>(idx.size());
    double loss = 0.0;
    std::vector<double> hidden(L.h), logits(L.k), dhidden(L.h);

    for (const std::size_t i : idx) {
        const Embedding& x = *xs[i];
        for (std::size_t u = 0; u < L.h; ++u) {
            double v = b1[u];
            const double* row = w1 + u * L.d;
            for (std::size_t j = 0; j < L.d; ++j) v += row[j] * x[j];
            hidden[u] = v > 0.0 ? v : 0.0;
        }
        for (std::size_t c = 0; c < L.k; ++c) {
            double v = b2[c];
            const double* row = w2 + c * L.h;
            for (std::size_t u = 0; u < L.h; ++u) v += row[u] * hidden[u];
            logits[c] = v;
        }
        const ProbVector prob = softmax(logits);
        const std::size_t y = static_cast<std::size_t>(ys[i]);
        loss -= inv_n * std::log(std::max(prob[y], 1e-300));
        if (!grad) continue;

        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        double* g = grad->data();
        for (std::size_t c = 0; c < L.k; ++c) {
            const double delta = (prob[c] - (c == y ? 1.0 : 0.0)) * inv_n;
            g[L.b2_off + c] += delta;
            double* grow = g + L.w2_off + c * L.h;
            const double* row = w2 + c * L.h;
            for (std::size_t u = 0; u < L.h; ++u) {
                grow[u] += delta * hidden[u];
                dhidden[u] += delta * row[u];
            }
        }
        for (std::size_t u = 0; u < L.h; ++u) {
            if (hidden[u] <= 0.0) continue;  // ReLU gate
            g[L.b1_off + u] += dhidden[u];
            double* grow = g + L.w1_off + u * L.d;
            for (std::size_t j = 0; j < L.d; ++j) grow[j] += dhidden[u] * x[j];
        }
    }

    for (std::size_t i = 0; i < L.b1_off; ++i) {  // w1
        loss += 0.5 * l2 * p[i] * p[i];
        if (grad) (*grad)[i] += l2 * p[i];
    }
    for (std::size_t i = L.w2_off; i < L.b2_off; ++i) {  // w2
        loss += 0.5 * l2 * p[i] * p[i];
        if (grad) (*grad)[i] += l2 * p[i];
    }
    return loss;
}

}  // namespace

SurrogateModel fit_mlp(const std::vector<const Trace*>& train, const LabelDictionary& labels,
                       const TrainConfig& cfg) {
    check_train_input(train, labels);
    const int d = check_dim(train);
    const int k = labels.size();
    const std::size_t n = train.size();
    const MlpLayout L(k, d, std::max(1, cfg.hidden_width));

    std::vector<const Embedding*> xs(n);
    std::vector<int> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = &train[i]->embedding;
        ys[i] = train[i]->teacher_label;
    }

    // Glorot-uniform weights, zero biases.
    std::vector<double> params(L.total, 0.0);
    Rng init(cfg.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    const double a1 = std::sqrt(6.0 / static_cast<double>(L.d + L.h));
    for (std::size_t i = 0; i < L.h * L.d; ++i) params[L.w1_off + i] = init.uniform(-a1, a1);
    const double a2 = std::sqrt(6.0 / static_cast<double>(L.h + L.k));
    for (std::size_t i = 0; i < L.k * L.h; ++i) params[L.w2_off + i] = init.uniform(-a2, a2);

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);

    auto grad_fn = [&](std::span<const std::size_t> idx, const std::vector<double>& p,
                       std::vector<double>& grad) { mlp_batch(L, idx, xs, ys, p, cfg.l2, &grad); };
    auto loss_fn = [&](const std::vector<double>& p) {
        return mlp_batch(L, all, xs, ys, p, cfg.l2, nullptr);
    };

    params = minimize(std::move(params), n, cfg, cfg.seed, grad_fn, loss_fn);

    SurrogateModel model;
    model.family = SurrogateFamily::Mlp;
    model.input_dim = d;
    model.num_classes = k;
    model.seed = cfg.seed;
    model.label_snapshot = labels.names();
    MlpParams mp;
    mp.hidden = static_cast<int>(L.h);
    mp.w1.assign(params.begin() + L.w1_off, params.begin() + L.b1_off);
    mp.b1.assign(params.begin() + L.b1_off, params.begin() + L.w2_off);
    mp.w2.assign(params.begin() + L.w2_off, params.begin() + L.b2_off);
    mp.b2.assign(params.begin() + L.b2_off, params.end());
    model.params = std::move(mp);
    return model;
}

SurrogateModel fit_nearest_centroid(const std::vector<const Trace*>& train,
                                    const LabelDictionary& labels, const TrainConfig& cfg) {
    check_train_input(train, labels);
    const int d = check_dim(train);
    const int k = labels.size();

    CentroidParams cp;
    cp.centroids.assign(static_cast<std::size_t>(k) * d, 0.0);
    cp.present.assign(static_cast<std::size_t>(k), 0);
    cp.temperature = cfg.centroid_temperature;
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);

    for (const Trace* t : train) {
        const std::size_t c = static_cast<std::size_t>(t->teacher_label);
        double* row = cp.centroids.data() + c * d;
        for (int j = 0; j < d; ++j) row[j] += t->embedding[static_cast<std::size_t>(j)];
        counts[c] += 1;
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
        if (counts[c] == 0) continue;
        cp.present[c] = 1;
        double* row = cp.centroids.data() + c * d;
        for (int j = 0; j < d; ++j) row[j] /= static_cast<double>(counts[c]);
    }

    SurrogateModel model;
    model.family = SurrogateFamily::NearestCentroid;
    model.input_dim = d;
    model.num_classes = k;
    model.seed = cfg.seed;
    model.label_snapshot = labels.names();
    model.params = std::move(cp);
    return model;
}

ProbVector predict_proba(const SurrogateModel& model, const Embedding& embedding) {
    const std::size_t d = static_cast<std::size_t>(model.input_dim);
    const std::size_t k = static_cast<std::size_t>(model.num_classes);
    if (embedding.size() != d) {
        throw std::invalid_argument("embedding dimension " + std::to_string(embedding.size()) +
                                    " does not match model dimension " + std::to_string(d));
    }

    std::vector<double> logits(k);
    if (const auto* lr = std::get_if<LrParams>(&model.params)) {
        for (std::size_t c = 0; c < k; ++c) {
            double v = lr->bias[c];
            const double* row = lr->weights.data() + c * d;
            for (std::size_t j = 0; j < d; ++j) v += row[j] * embedding[j];
            logits[c] = v;
        }
    } else if (const auto* mlp = std::get_if<MlpParams>(&model.params)) {
        const std::size_t h = static_cast<std::size_t>(mlp->hidden);
        std::vector<double> hidden(h);
        for (std::size_t u = 0; u < h; ++u) {
            double v = mlp->b1[u];
            const double* row = mlp->w1.data() + u * d;
            for (std::size_t j = 0; j < d; ++j) v += row[j] * embedding[j];
            hidden[u] = v > 0.0 ? v : 0.0;
        }
        for (std::size_t c = 0; c < k; ++c) {
            double v = mlp->b2[c];
            const double* row = mlp->w2.data() + c * h;
            for (std::size_t u = 0; u < h; ++u) v += row[u] * hidden[u];
            logits[c] = v;
        }
    } else {
        const auto& cp = std::get<CentroidParams>(model.params);
        for (std::size_t c = 0; c < k; ++c) {
            if (!cp.present[c]) {
                logits[c] = -std::numeric_limits<double>::infinity();
                continue;
            }
            const double* row = cp.centroids.data() + c * d;
            double dist2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = embedding[j] - row[j];
                dist2 += diff * diff;
            }
            logits[c] = -std::sqrt(dist2) / cp.temperature;
        }
    }
    return softmax(std::move(logits));
}

int predict_label(const SurrogateModel& model, const Embedding& embedding) {
    return argmax_index(predict_proba(model, embedding));
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& reference,
                const LabelDictionary& labels) {
    if (predicted.size() != reference.size()) {
        throw std::invalid_argument("predicted/reference length mismatch");
    }
    if (predicted.empty()) throw std::invalid_argument("macro_f1 of empty inputs");

    const std::size_t k = static_cast<std::size_t>(labels.size());
    std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int p = predicted[i];
        const int r = reference[i];
        if (r < 0 || r >= labels.size() || p < 0 || p >= labels.size()) {
            throw std::invalid_argument("label index outside the dictionary");
        }
        if (p == r) {
            tp[static_cast<std::size_t>(p)] += 1;
        } else {
            fp[static_cast<std::size_t>(p)] += 1;
            fn[static_cast<std::size_t>(r)] += 1;
        }
    }

    double sum = 0.0;
    std::size_t classes = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (tp[c] + fn[c] == 0) continue;  // no reference support: skipped
        sum += 2.0 * static_cast<double>(tp[c]) /
               static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        classes += 1;
    }
    return classes == 0 ? 0.0 : sum / static_cast<double>(classes);
}

namespace {

int family_rank(SurrogateFamily f) {
    switch (f) {
        case SurrogateFamily::MultinomialLR: return 0;
        case SurrogateFamily::Mlp: return 1;
        case SurrogateFamily::NearestCentroid: return 2;
    }
    return 3;
}

}  // namespace

SelectionResult select_best(const std::vector<SurrogateModel>& candidates,
                            const std::vector<const Trace*>& validation) {
    if (candidates.empty()) throw std::invalid_argument("no surrogate candidates to select from");

    SelectionResult result;
    result.scores.reserve(candidates.size());
    for (const SurrogateModel& m : candidates) {
        if (validation.empty()) {
            result.scores.push_back(0.0);
            continue;
        }
        std::vector<int> pred, ref;
        pred.reserve(validation.size());
        ref.reserve(validation.size());
        for (const Trace* t : validation) {
            pred.push_back(predict_label(m, t->embedding));
            ref.push_back(t->teacher_label);
        }
        // The dictionary snapshot of the model defines the class set here; all
        // pool members share the same snapshot within one refit.
        LabelDictionary dict;
        for (const std::string& name : m.label_snapshot) dict.intern(name);
        result.scores.push_back(macro_f1(pred, ref, dict));
    }

    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const std::size_t b = result.best_index;
        const double si = result.scores[i];
        const double sb = result.scores[b];
        if (si > sb) {
            result.best_index = i;
        } else if (si == sb) {
            const int ri = family_rank(candidates[i].family);
            const int rb = family_rank(candidates[b].family);
            if (ri < rb || (ri == rb && candidates[i].seed < candidates[b].seed)) {
                result.best_index = i;
            }
        }
    }
    return result;
}

std::vector<SurrogateModel> train_pool(const std::vector<const Trace*>& train,
                                       const LabelDictionary& labels, const TrainConfig& cfg) {
    std::vector<std::future<SurrogateModel>> futures;
    if (cfg.use_multinomial_lr) {
        futures.push_back(std::async(std::launch::async,
                                     [&] { return fit_multinomial_lr(train, labels, cfg); }));
    }
    if (cfg.use_mlp) {
        futures.push_back(std::async(std::launch::async, [&] { return fit_mlp(train, labels, cfg); }));
    }
    if (cfg.use_nearest_centroid) {
        futures.push_back(std::async(std::launch::async,
                                     [&] { return fit_nearest_centroid(train, labels, cfg); }));
    }
    std::vector<SurrogateModel> pool;
    pool.reserve(futures.size());
    for (auto& f : futures) pool.push_back(f.get());
    return pool;
}

nlohmann::json surrogate_to_json(const SurrogateModel& model) {
    nlohmann::json j;
    j["format"] = "tracer-surrogate/1";
    j["family"] = family_name(model.family);
    j["input_dim"] = model.input_dim;
    j["num_classes"] = model.num_classes;
    j["seed"] = model.seed;
    j["labels"] = model.label_snapshot;
    nlohmann::json p;
    if (const auto* lr = std::get_if<LrParams>(&model.params)) {
        p["weights"] = lr->weights;
        p["bias"] = lr->bias;
    } else if (const auto* mlp = std::get_if<MlpParams>(&model.params)) {
        p["hidden"] = mlp->hidden;
        p["w1"] = mlp->w1;
        p["b1"] = mlp->b1;
        p["w2"] = mlp->w2;
        p["b2"] = mlp->b2;
    } else {
        const auto& cp = std::get<CentroidParams>(model.params);
        p["centroids"] = cp.centroids;
        p["present"] = cp.present;
        p["temperature"] = cp.temperature;
    }
    j["params"] = std::move(p);
    return j;
}

SurrogateModel surrogate_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "tracer-surrogate/1") {
        throw std::invalid_argument("unsupported surrogate document format");
    }
    SurrogateModel model;
    model.family = family_from_name(j.at("family").get<std::string>());
    model.input_dim = j.at("input_dim").get<int>();
    model.num_classes = j.at("num_classes").get<int>();
    model.seed = j.at("seed").get<std::uint64_t>();
    model.label_snapshot = j.at("labels").get<std::vector<std::string>>();
    const nlohmann::json& p = j.at("params");
    switch (model.family) {
        case SurrogateFamily::MultinomialLR: {
            LrParams lp;
            lp.weights = p.at("weights").get<std::vector<double>>();
            lp.bias = p.at("bias").get<std::vector<double>>();
            model.params = std::move(lp);
            break;
        }
        case SurrogateFamily::Mlp: {
            MlpParams mp;
            mp.hidden = p.at("hidden").get<int>();
            mp.w1 = p.at("w1").get<std::vector<double>>();
            mp.b1 = p.at("b1").get<std::vector<double>>();
            mp.w2 = p.at("w2").get<std::vector<double>>();
            mp.b2 = p.at("b2").get<std::vector<double>>();
            model.params = std::move(mp);
            break;
        }
        case SurrogateFamily::NearestCentroid: {
            CentroidParams cp;
            cp.centroids = p.at("centroids").get<std::vector<double>>();
            cp.present = p.at("present").get<std::vector<std::uint8_t>>();
            cp.temperature = p.at("temperature").get<double>();
            model.params = std::move(cp);
            break;
        }
    }
    return model;
}

}  // namespace tracer
