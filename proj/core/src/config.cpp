#include "tracer/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tracer {

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    return parts;
}

}  // namespace

void RunConfig::validate() const {
    Alpha{alpha}.validate();
    if (floor < 0.0 || floor > 1.0) {
        throw std::invalid_argument("coverage floor must lie in [0, 1]");
    }
    splits.validate();
    if (!pool_lr && !pool_mlp && !pool_centroid) {
        throw std::invalid_argument("surrogate pool must enable at least one family");
    }
    if (!teacher_oracle.empty() && !teacher_url.empty()) {
        throw std::invalid_argument("configure either a teacher oracle file or a teacher URL");
    }
    if (train.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(train.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (train.l2 < 0.0) throw std::invalid_argument("l2 must be >= 0");
}

RouterConfig RunConfig::router_config() const {
    RouterConfig cfg;
    cfg.alpha = Alpha{alpha};
    cfg.coverage_floor = floor;
    cfg.splits = splits;
    cfg.train = train;
    cfg.train.seed = seed;
    cfg.train.use_multinomial_lr = pool_lr;
    cfg.train.use_mlp = pool_mlp;
    cfg.train.use_nearest_centroid = pool_centroid;
    cfg.artifacts = artifacts;
    return cfg;
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base) {
    RunConfig c = std::move(base);
    c.alpha = j.value("alpha", c.alpha);
    c.floor = j.value("floor", c.floor);
    c.seed = j.value("seed", c.seed);
    if (j.contains("splits")) {
        const auto v = j["splits"].get<std::vector<double>>();
        if (v.size() != 4) throw std::invalid_argument("splits must list 4 fractions");
        c.splits = {v[0], v[1], v[2], v[3]};
    }
    if (j.contains("pool")) {
        c.pool_lr = c.pool_mlp = c.pool_centroid = false;
        for (const auto& name : j["pool"].get<std::vector<std::string>>()) {
            if (name == "lr") c.pool_lr = true;
            else if (name == "mlp") c.pool_mlp = true;
            else if (name == "centroid") c.pool_centroid = true;
            else throw std::invalid_argument("unknown pool family: " + name);
        }
    }
    c.teacher_oracle = j.value("teacher_oracle", c.teacher_oracle);
    c.teacher_url = j.value("teacher_url", c.teacher_url);
    c.out_dir = j.value("out", c.out_dir);
    if (j.contains("train")) {
        const auto& t = j["train"];
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.l2 = t.value("l2", c.train.l2);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.hidden_width = t.value("hidden_width", c.train.hidden_width);
        c.train.centroid_temperature = t.value("centroid_temperature", c.train.centroid_temperature);
    }
    if (j.contains("artifacts")) {
        const auto& a = j["artifacts"];
        c.artifacts.boundary_pair_cap = a.value("boundary_pair_cap", c.artifacts.boundary_pair_cap);
        c.artifacts.disagreement_cap = a.value("disagreement_cap", c.artifacts.disagreement_cap);
    }
    return c;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["alpha"] = cfg.alpha;
    j["floor"] = cfg.floor;
    j["seed"] = cfg.seed;
    j["splits"] = {cfg.splits.train, cfg.splits.validation, cfg.splits.calibration,
                   cfg.splits.shadow};
    std::vector<std::string> pool;
    if (cfg.pool_lr) pool.push_back("lr");
    if (cfg.pool_mlp) pool.push_back("mlp");
    if (cfg.pool_centroid) pool.push_back("centroid");
    j["pool"] = pool;
    if (!cfg.teacher_oracle.empty()) j["teacher_oracle"] = cfg.teacher_oracle;
    if (!cfg.teacher_url.empty()) j["teacher_url"] = cfg.teacher_url;
    j["out"] = cfg.out_dir;
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"learning_rate", cfg.train.learning_rate},
                  {"l2", cfg.train.l2},
                  {"batch_size", cfg.train.batch_size},
                  {"hidden_width", cfg.train.hidden_width},
                  {"centroid_temperature", cfg.train.centroid_temperature}};
    j["artifacts"] = {{"boundary_pair_cap", cfg.artifacts.boundary_pair_cap},
                      {"disagreement_cap", cfg.artifacts.disagreement_cap}};
    return j;
}

RunConfig load_run_config_file(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return run_config_from_json(j, std::move(base));
}

void apply_env_overrides(RunConfig& cfg) {
    const auto env = [](const char* name) -> std::optional<std::string> {
        const char* v = std::getenv(name);
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    };

    if (const auto v = env("TRACER_ALPHA")) cfg.alpha = std::stod(*v);
    if (const auto v = env("TRACER_FLOOR")) cfg.floor = std::stod(*v);
    if (const auto v = env("TRACER_SEED")) cfg.seed = std::stoull(*v);
    if (const auto v = env("TRACER_SPLITS")) {
        const auto parts = split_csv(*v);
        if (parts.size() != 4) throw std::invalid_argument("TRACER_SPLITS needs 4 fractions");
        cfg.splits = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2]),
                      std::stod(parts[3])};
    }
    if (const auto v = env("TRACER_POOL")) {
        cfg.pool_lr = cfg.pool_mlp = cfg.pool_centroid = false;
        for (const auto& name : split_csv(*v)) {
            if (name == "lr") cfg.pool_lr = true;
            else if (name == "mlp") cfg.pool_mlp = true;
            else if (name == "centroid") cfg.pool_centroid = true;
            else throw std::invalid_argument("TRACER_POOL: unknown family " + name);
        }
    }
    if (const auto v = env("TRACER_TEACHER_ORACLE")) cfg.teacher_oracle = *v;
    if (const auto v = env("TRACER_TEACHER_URL")) cfg.teacher_url = *v;
    if (const auto v = env("TRACER_OUT")) cfg.out_dir = *v;
}

void append_run_log(const std::string& path, const nlohmann::json& entry) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to run log: " + path);
    out << entry.dump() << '\n';
}

}  // namespace tracer
