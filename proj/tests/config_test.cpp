#include <doctest.h>

#include <cstdlib>

#include "tracer/config.hpp"

using namespace tracer;

TEST_CASE("run configs validate their ranges") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    RunConfig bad_alpha = cfg;
    bad_alpha.alpha = 0.0;
    CHECK_THROWS_AS(bad_alpha.validate(), std::invalid_argument);

    RunConfig bad_floor = cfg;
    bad_floor.floor = 1.5;
    CHECK_THROWS_AS(bad_floor.validate(), std::invalid_argument);

    RunConfig no_pool = cfg;
    no_pool.pool_lr = no_pool.pool_mlp = no_pool.pool_centroid = false;
    CHECK_THROWS_AS(no_pool.validate(), std::invalid_argument);

    RunConfig both_teachers = cfg;
    both_teachers.teacher_oracle = "a.jsonl";
    both_teachers.teacher_url = "http://x/classify";
    CHECK_THROWS_AS(both_teachers.validate(), std::invalid_argument);
}

TEST_CASE("config documents round-trip through JSON") {
    RunConfig cfg;
    cfg.alpha = 0.9;
    cfg.floor = 0.07;
    cfg.seed = 1234;
    cfg.splits = {0.6, 0.2, 0.1, 0.1};
    cfg.pool_mlp = false;
    cfg.teacher_oracle = "oracle.jsonl";
    cfg.out_dir = "out-x";
    cfg.train.epochs = 77;
    cfg.artifacts.boundary_pair_cap = 9;

    const RunConfig back = run_config_from_json(run_config_to_json(cfg));
    CHECK(back.alpha == cfg.alpha);
    CHECK(back.floor == cfg.floor);
    CHECK(back.seed == cfg.seed);
    CHECK(back.splits.validation == 0.2);
    CHECK(back.pool_lr);
    CHECK_FALSE(back.pool_mlp);
    CHECK(back.teacher_oracle == "oracle.jsonl");
    CHECK(back.out_dir == "out-x");
    CHECK(back.train.epochs == 77);
    CHECK(back.artifacts.boundary_pair_cap == 9);
}

TEST_CASE("partial config documents only override the fields they carry") {
    const RunConfig cfg = run_config_from_json(nlohmann::json{{"alpha", 0.85}});
    CHECK(cfg.alpha == 0.85);
    CHECK(cfg.floor == 0.05);  // untouched default
    CHECK(cfg.pool_mlp);
}

TEST_CASE("environment variables override an already-resolved config") {
    RunConfig cfg;
    cfg.alpha = 0.8;
    cfg.out_dir = "from-flags";

    setenv("TRACER_ALPHA", "0.92", 1);
    setenv("TRACER_OUT", "from-env", 1);
    setenv("TRACER_POOL", "lr,centroid", 1);
    apply_env_overrides(cfg);
    unsetenv("TRACER_ALPHA");
    unsetenv("TRACER_OUT");
    unsetenv("TRACER_POOL");

    CHECK(cfg.alpha == 0.92);
    CHECK(cfg.out_dir == "from-env");
    CHECK(cfg.pool_lr);
    CHECK_FALSE(cfg.pool_mlp);
    CHECK(cfg.pool_centroid);
}

TEST_CASE("router_config carries the seed and pool flags into training") {
    RunConfig cfg;
    cfg.seed = 555;
    cfg.pool_mlp = false;
    const RouterConfig rc = cfg.router_config();
    CHECK(rc.train.seed == 555);
    CHECK(rc.train.use_multinomial_lr);
    CHECK_FALSE(rc.train.use_mlp);
    CHECK(rc.alpha.value == cfg.alpha);
}
