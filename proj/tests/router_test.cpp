#include <doctest.h>

#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <memory>

#include "helpers.hpp"
#include "tracer/bench.hpp"
#include "tracer/router.hpp"

using namespace tracer;
using test_helpers::make_record;
using test_helpers::programmable_surrogate;

namespace {

// Teacher that answers from a user-supplied function; counts calls.
class StubTeacher : public TeacherClient {
public:
    explicit StubTeacher(std::function<std::string(const TraceInput&)> fn)
        : fn_(std::move(fn)) {}
    std::string classify(const TraceInput& input) override {
        ++calls;
        return fn_(input);
    }
    int calls = 0;

private:
    std::function<std::string(const TraceInput&)> fn_;
};

RoutingState active_l2d_state(std::shared_ptr<const SurrogateModel> surrogate, double tau) {
    RoutingState s;
    s.version = 1;
    s.fitted_at_day = 1;
    PipelineCandidate c;
    c.family = PipelineFamily::L2D;
    c.surrogate = std::move(surrogate);
    c.acceptor = std::make_shared<AcceptorModel>(AcceptorModel{{0, 0, 8, 0}, -4.0, 0});
    c.tau = tau;
    s.pipeline = std::move(c);
    return s;
}

}  // namespace

TEST_CASE("teacher-only states defer every input") {
    RoutingState s;
    for (int i = 0; i < 10; ++i) {
        const RouteDecision d = route(s, {double(i), 1.0});
        CHECK_FALSE(d.handled);
        CHECK(d.score == 0.0);
    }
}

TEST_CASE("active Global states handle every input") {
    TraceBuffer buffer;
    buffer.ingest({make_record("a", {0.0, 0.0}, "c0"), make_record("b", {8.0, 0.0}, "c1")});
    RoutingState s;
    s.version = 1;
    PipelineCandidate c;
    c.family = PipelineFamily::Global;
    c.surrogate = std::make_shared<SurrogateModel>(
        programmable_surrogate({{0.0, 0.0}, {8.0, 0.0}}, 1.0, buffer.labels().names()));
    s.pipeline = std::move(c);

    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        const RouteDecision d = route(s, {rng.uniform(-10, 10), rng.uniform(-10, 10)});
        CHECK(d.handled);
        CHECK(d.score == 1.0);
    }
}

TEST_CASE("L2D routing splits on the acceptor score against tau") {
    TraceBuffer buffer;
    buffer.ingest({make_record("a", {0.0, 0.0}, "c0"), make_record("b", {8.0, 0.0}, "c1")});
    auto surrogate = std::make_shared<const SurrogateModel>(
        programmable_surrogate({{0.0, 0.0}, {8.0, 0.0}}, 1.0, buffer.labels().names()));
    const RoutingState s = active_l2d_state(surrogate, 0.9);

    // At the centroid the margin-keyed score is ~0.982 >= 0.9 -> handled; at
    // x=3 the score is ~0.89 < 0.9 -> deferred.
    const RouteDecision handled = route(s, {0.0, 0.0});
    CHECK(handled.handled);
    CHECK(handled.score > 0.9);
    CHECK(handled.label == 0);

    const RouteDecision deferred = route(s, {3.0, 0.0});
    CHECK_FALSE(deferred.handled);
    CHECK(deferred.score < 0.9);
    CHECK(deferred.score > 0.0);

    CHECK_THROWS_AS(route(s, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("routing is pure: repeated calls do not mutate anything") {
    TraceBuffer buffer;
    buffer.ingest({make_record("a", {0.0, 0.0}, "c0"), make_record("b", {8.0, 0.0}, "c1")});
    auto surrogate = std::make_shared<const SurrogateModel>(
        programmable_surrogate({{0.0, 0.0}, {8.0, 0.0}}, 1.0, buffer.labels().names()));
    const RoutingState s = active_l2d_state(surrogate, 0.5);
    const RouteDecision first = route(s, {1.0, 0.5});
    for (int i = 0; i < 5; ++i) {
        const RouteDecision again = route(s, {1.0, 0.5});
        CHECK(again.handled == first.handled);
        CHECK(again.score == first.score);
    }
    CHECK(s.version == 1);
}

TEST_CASE("classify defers to the teacher and logs exactly one trace") {
    TraceBuffer buffer;
    buffer.ingest({make_record("seed-a", {0.0, 0.0}, "c0"), make_record("seed-b", {8.0, 0.0}, "c1")});
    auto surrogate = std::make_shared<const SurrogateModel>(
        programmable_surrogate({{0.0, 0.0}, {8.0, 0.0}}, 1.0, buffer.labels().names()));
    const RoutingState s = active_l2d_state(surrogate, 0.9);
    StubTeacher teacher([](const TraceInput&) { return std::string("c1"); });

    SUBCASE("deferred input grows the buffer by exactly 1") {
        const std::size_t before = buffer.size();
        const auto out = classify(s, {"new-1", std::nullopt, {3.0, 0.0}}, teacher, buffer, 2);
        CHECK_FALSE(out.decision.handled);
        CHECK(out.label == "c1");
        CHECK(buffer.size() == before + 1);
        CHECK(buffer.contains("new-1"));
        CHECK(teacher.calls == 1);
    }

    SUBCASE("handled input leaves the buffer unchanged") {
        const std::size_t before = buffer.size();
        const auto out = classify(s, {"new-2", std::nullopt, {0.0, 0.0}}, teacher, buffer, 2);
        CHECK(out.decision.handled);
        CHECK(out.label == "c0");
        CHECK(buffer.size() == before);
        CHECK(teacher.calls == 0);
    }

    SUBCASE("a teacher failure propagates and appends nothing") {
        StubTeacher failing([](const TraceInput&) -> std::string {
            throw std::runtime_error("teacher down");
        });
        const std::size_t before = buffer.size();
        CHECK_THROWS_WITH(classify(s, {"new-3", std::nullopt, {3.0, 0.0}}, failing, buffer, 2),
                          "teacher down");
        CHECK(buffer.size() == before);
    }

    SUBCASE("novel teacher labels register on the fly") {
        StubTeacher novel([](const TraceInput&) { return std::string("hotel_launchpad"); });
        const int k_before = buffer.labels().size();
        classify(s, {"new-4", std::nullopt, {3.0, 0.0}}, novel, buffer, 2);
        CHECK(buffer.labels().size() == k_before + 1);
    }
}

TEST_CASE("deferral volume over a stream matches the binomial oracle") {
    // Pipeline with deterministic coverage ~0.8: 80% of inputs at the
    // centroid (handled), 20% near the midpoint (deferred), sampled randomly.
    TraceBuffer buffer;
    buffer.ingest({make_record("seed-a", {0.0, 0.0}, "c0"), make_record("seed-b", {8.0, 0.0}, "c1")});
    auto surrogate = std::make_shared<const SurrogateModel>(
        programmable_surrogate({{0.0, 0.0}, {8.0, 0.0}}, 1.0, buffer.labels().names()));
    const RoutingState s = active_l2d_state(surrogate, 0.9);
    StubTeacher teacher([](const TraceInput&) { return std::string("c0"); });

    Rng rng(29);
    const int n = 1000;
    const double p_defer = 0.2;
    int deferred = 0;
    for (int i = 0; i < n; ++i) {
        const bool hard = rng.uniform() < p_defer;
        const Embedding x = hard ? Embedding{3.5 + 0.2 * rng.normal(), 0.0}
                                 : Embedding{0.2 * rng.normal(), 0.0};
        const auto out = classify(s, {"live-" + std::to_string(i), std::nullopt, x}, teacher,
                                  buffer, 2);
        if (!out.decision.handled) ++deferred;
    }
    const double sigma = std::sqrt(n * p_defer * (1.0 - p_defer));
    CHECK(std::abs(deferred - n * p_defer) <= 3.0 * sigma);
    CHECK(buffer.size() == 2 + static_cast<std::size_t>(deferred));  // flywheel conservation
}

TEST_CASE("fit promotes a Global pipeline on a separable world at alpha 0.80") {
    SyntheticSpec spec;
    spec.num_classes = 5;
    spec.dim = 8;
    spec.separation = 8.0;
    spec.teacher_noise = 0.0;
    spec.per_day = 400;
    spec.days = 1;
    spec.seed = 31;
    TraceBuffer buffer;
    buffer.ingest(generate_synthetic(spec));

    RouterConfig cfg;
    cfg.alpha = Alpha{0.80};
    cfg.train.seed = 31;
    cfg.train.epochs = 120;

    const FitResult r = fit(buffer, cfg);
    REQUIRE(r.state.is_active());
    CHECK(r.state.version == 1);
    CHECK(r.state.pipeline->family == PipelineFamily::Global);
    CHECK(r.verdict.shadow.coverage == 1.0);
    CHECK(r.report.verdict.promoted);
}

TEST_CASE("fit refuses a label-randomized world") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.dim = 8;
    spec.separation = 0.0;  // labels independent of embeddings
    spec.teacher_noise = 0.0;
    spec.per_day = 600;
    spec.days = 1;
    spec.seed = 17;
    TraceBuffer buffer;
    buffer.ingest(generate_synthetic(spec));

    RouterConfig cfg;
    cfg.alpha = Alpha{0.85};
    cfg.train.seed = 17;
    cfg.train.epochs = 120;

    const FitResult r = fit(buffer, cfg);
    CHECK_FALSE(r.state.is_active());
    CHECK(r.state.version == 1);
    CHECK_FALSE(r.report.verdict.promoted);
    CHECK(r.report.slices.empty());  // refusal produces a stub bundle
}

TEST_CASE("fit with a single teacher class lands in teacher-only with a note") {
    std::vector<TraceRecord> records;
    for (int i = 0; i < 200; ++i) {
        records.push_back(make_record("mono" + std::to_string(i), {double(i % 9), 1.0}, "only"));
    }
    TraceBuffer buffer;
    buffer.ingest(records);
    RouterConfig cfg;
    const FitResult r = fit(buffer, cfg);
    CHECK_FALSE(r.state.is_active());
    CHECK(r.state.refusal == RefusalReason::NoCandidates);
    CHECK(r.state.refusal_note.find("2 teacher classes") != std::string::npos);
}

TEST_CASE("update with no new traces reproduces the previous verdict bit for bit") {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.dim = 8;
    spec.separation = 6.0;
    spec.teacher_noise = 0.05;
    spec.per_day = 300;
    spec.days = 1;
    spec.seed = 23;
    TraceBuffer buffer;
    buffer.ingest(generate_synthetic(spec));

    RouterConfig cfg;
    cfg.alpha = Alpha{0.85};
    cfg.train.seed = 23;
    cfg.train.epochs = 120;

    const FitResult first = fit(buffer, cfg);
    REQUIRE(first.state.is_active());

    const FitResult second = update(first.state, {}, buffer, cfg);
    CHECK(second.state.version == first.state.version + 1);
    REQUIRE(second.state.is_active());
    CHECK(*second.state.pipeline->surrogate == *first.state.pipeline->surrogate);
    CHECK(second.state.pipeline->tau == first.state.pipeline->tau);
    CHECK(second.state.pipeline->calibration == first.state.pipeline->calibration);
    CHECK(second.verdict.shadow == first.verdict.shadow);
}

TEST_CASE("a refusal can turn into a promotion once enough traces accumulate") {
    // Small day-1 batch undertrains the surrogate below alpha; the merged
    // buffer after more days clears the gate.
    SyntheticSpec spec;
    spec.num_classes = 10;
    spec.dim = 24;
    spec.separation = 3.5;
    spec.teacher_noise = 0.0;
    spec.per_day = 100;
    spec.days = 8;
    spec.seed = 1;
    const auto records = generate_synthetic(spec);

    RouterConfig cfg;
    cfg.alpha = Alpha{0.95};
    cfg.train.seed = 1;
    cfg.train.epochs = 150;

    std::map<int, std::vector<TraceRecord>> batches;
    for (const auto& r : records) batches[r.day].push_back(r);

    TraceBuffer buffer;
    buffer.ingest(batches.at(1));
    FitResult result = fit(buffer, cfg);
    const bool day1_promoted = result.state.is_active();

    bool promoted_later = false;
    for (int day = 2; day <= spec.days; ++day) {
        result = update(result.state, batches.at(day), buffer, cfg);
        if (result.state.is_active()) {
            promoted_later = true;
            break;
        }
    }
    CHECK_FALSE(day1_promoted);
    CHECK(promoted_later);
}

TEST_CASE("versions increase by exactly one per refit") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.dim = 6;
    spec.separation = 7.0;
    spec.per_day = 150;
    spec.days = 3;
    spec.seed = 41;
    const auto records = generate_synthetic(spec);
    std::map<int, std::vector<TraceRecord>> batches;
    for (const auto& r : records) batches[r.day].push_back(r);

    RouterConfig cfg;
    cfg.alpha = Alpha{0.8};
    cfg.train.seed = 41;
    cfg.train.epochs = 80;

    TraceBuffer buffer;
    buffer.ingest(batches.at(1));
    FitResult r = fit(buffer, cfg);
    CHECK(r.state.version == 1);
    r = update(r.state, batches.at(2), buffer, cfg);
    CHECK(r.state.version == 2);
    r = update(r.state, batches.at(3), buffer, cfg);
    CHECK(r.state.version == 3);
    CHECK(buffer.size() == records.size());
}

TEST_CASE("concurrent routing against an immutable pipeline matches sequential results") {
    TraceBuffer buffer;
    buffer.ingest({make_record("a", {0.0, 0.0}, "c0"), make_record("b", {8.0, 0.0}, "c1")});
    auto surrogate = std::make_shared<const SurrogateModel>(
        programmable_surrogate({{0.0, 0.0}, {8.0, 0.0}}, 1.0, buffer.labels().names()));
    const RoutingState state = active_l2d_state(surrogate, 0.5);

    std::vector<Embedding> inputs;
    Rng rng(63);
    for (int i = 0; i < 2000; ++i) inputs.push_back({rng.uniform(-2, 10), rng.normal()});

    std::vector<RouteDecision> sequential;
    for (const Embedding& x : inputs) sequential.push_back(route(state, x));

    std::vector<std::future<std::vector<RouteDecision>>> workers;
    for (int w = 0; w < 4; ++w) {
        workers.push_back(std::async(std::launch::async, [&] {
            std::vector<RouteDecision> out;
            for (const Embedding& x : inputs) out.push_back(route(state, x));
            return out;
        }));
    }
    for (auto& worker : workers) {
        const auto decisions = worker.get();
        REQUIRE(decisions.size() == sequential.size());
        for (std::size_t i = 0; i < decisions.size(); ++i) {
            CHECK(decisions[i].handled == sequential[i].handled);
            CHECK(decisions[i].score == sequential[i].score);
        }
    }
}

TEST_CASE("the cached oracle teacher is total over its file and fails on unknown ids") {
    std::vector<TraceRecord> records = {make_record("known-1", {1.0}, "labelA"),
                                        make_record("known-2", {2.0}, "labelB")};
    CachedOracleTeacher teacher(records);
    CHECK(teacher.classify({"known-1", std::nullopt, {1.0}}) == "labelA");
    CHECK(teacher.classify({"known-2", std::nullopt, {9.0}}) == "labelB");
    CHECK_THROWS_WITH_AS(teacher.classify({"unknown", std::nullopt, {1.0}}),
                         doctest::Contains("unknown"), std::runtime_error);
}
