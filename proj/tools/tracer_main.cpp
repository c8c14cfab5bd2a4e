// tracer: trace-driven deferral engine CLI.
//
// Subcommands: synth, fit, update, eval, sweep, report, serve.
// Exit codes: 0 success/promoted, 2 parity-gate refusal, 1 operational error.

#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "tracer/bench.hpp"
#include "tracer/config.hpp"
#include "tracer/router.hpp"
#include "tracer/service.hpp"
#include "tracer/trace_io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitRefused = 2;

std::string iso_timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct CommonFlags {
    std::string config_file;
    std::vector<double> splits;
    std::vector<std::string> pool;
    tracer::RunConfig cfg;

    // CLI11 writes into these; only values the user actually passed override
    // the config file.
    double alpha = 0.95;
    double floor = 0.05;
    std::uint64_t seed = 42;
    std::string teacher_oracle, teacher_url, out_dir;
    int epochs = 200;
    int hidden = 64;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "JSON config file");
        app->add_option("--alpha", alpha, "teacher-agreement target in (0,1]");
        app->add_option("--floor", floor, "coverage floor for the parity gate");
        app->add_option("--seed", seed, "training seed");
        app->add_option("--splits", splits, "train,validation,calibration,shadow fractions")
            ->delimiter(',')
            ->expected(4);
        app->add_option("--pool", pool, "surrogate families: lr,mlp,centroid")->delimiter(',');
        app->add_option("--teacher-oracle", teacher_oracle, "trace file with cached teacher labels");
        app->add_option("--teacher-url", teacher_url, "remote teacher endpoint");
        app->add_option("--out", out_dir, "output directory");
        app->add_option("--epochs", epochs, "optimizer epochs");
        app->add_option("--hidden", hidden, "MLP hidden width");
    }

    tracer::RunConfig resolve(const CLI::App* app) {
        tracer::RunConfig c;
        if (!config_file.empty()) c = tracer::load_run_config_file(config_file, c);
        if (app->count("--alpha")) c.alpha = alpha;
        if (app->count("--floor")) c.floor = floor;
        if (app->count("--seed")) c.seed = seed;
        if (app->count("--splits")) c.splits = {splits[0], splits[1], splits[2], splits[3]};
        if (app->count("--pool")) {
            c.pool_lr = c.pool_mlp = c.pool_centroid = false;
            for (const auto& name : pool) {
                if (name == "lr") c.pool_lr = true;
                else if (name == "mlp") c.pool_mlp = true;
                else if (name == "centroid") c.pool_centroid = true;
                else throw CLI::ValidationError("--pool", "unknown family " + name);
            }
        }
        if (app->count("--teacher-oracle")) c.teacher_oracle = teacher_oracle;
        if (app->count("--teacher-url")) c.teacher_url = teacher_url;
        if (app->count("--out")) c.out_dir = out_dir;
        if (app->count("--epochs")) c.train.epochs = epochs;
        if (app->count("--hidden")) c.train.hidden_width = hidden;
        tracer::apply_env_overrides(c);
        c.validate();
        return c;
    }
};

std::vector<tracer::TraceRecord> load_traces_checked(const std::string& path) {
    auto records = tracer::read_trace_file(path);
    if (records.empty()) {
        throw std::runtime_error(path + ": trace file contains no records");
    }
    return records;
}

void write_outputs(const tracer::RunConfig& cfg, const tracer::FitResult& result,
                   const tracer::TraceBuffer& buffer, const std::string& command) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    {
        std::ofstream out(cfg.out_dir + "/state.json", std::ios::trunc);
        out << tracer::routing_state_to_json(result.state).dump(2) << '\n';
    }
    tracer::write_trace_file(cfg.out_dir + "/buffer.jsonl", buffer.to_records());

    const std::string stem = cfg.out_dir + "/report_v" + std::to_string(result.state.version);
    {
        std::ofstream out(stem + ".json", std::ios::trunc);
        out << tracer::emit_report(result.report, tracer::ReportFormat::Structured) << '\n';
    }
    {
        std::ofstream out(stem + ".txt", std::ios::trunc);
        out << tracer::emit_report(result.report, tracer::ReportFormat::HumanReadable);
    }

    nlohmann::json entry = tracer::verdict_to_json(result.verdict);
    entry["ts"] = iso_timestamp();
    entry["event"] = command;
    entry["alpha"] = cfg.alpha;
    entry["floor"] = cfg.floor;
    entry["version"] = result.state.version;
    entry["config"] = tracer::run_config_to_json(cfg);
    entry["report_files"] = {stem + ".json", stem + ".txt"};
    tracer::append_run_log(cfg.out_dir + "/runlog.jsonl", entry);
}

int report_verdict(const tracer::FitResult& result) {
    const tracer::RoutingState& state = result.state;
    if (state.is_active()) {
        const auto& p = *state.pipeline;
        char line[160];
        std::snprintf(line, sizeof(line),
                      "Promoted: %s, cov=%.3f, ta=%.3f (shadow), version=%d",
                      tracer::pipeline_family_name(p.family), result.verdict.shadow.coverage,
                      result.verdict.shadow.ta_on_handled.value_or(0.0), state.version);
        std::cout << line << "\n";
        return kExitOk;
    }
    std::cout << "Refused: " << tracer::refusal_reason_name(state.refusal);
    if (!state.refusal_note.empty()) std::cout << " (" << state.refusal_note << ")";
    std::cout << ", version=" << state.version << "\n";
    return kExitRefused;
}

int cmd_fit(const tracer::RunConfig& cfg, const std::string& traces_path) {
    tracer::TraceBuffer buffer;
    buffer.ingest(load_traces_checked(traces_path));
    const tracer::FitResult result = tracer::fit(buffer, cfg.router_config());
    write_outputs(cfg, result, buffer, "fit");
    return report_verdict(result);
}

int cmd_update(const tracer::RunConfig& cfg, const std::string& traces_path) {
    const std::string state_path = cfg.out_dir + "/state.json";
    const std::string buffer_path = cfg.out_dir + "/buffer.jsonl";
    std::ifstream state_in(state_path);
    if (!state_in) {
        throw std::runtime_error("no previous state at " + state_path + "; run fit first");
    }
    nlohmann::json state_json;
    state_in >> state_json;
    const tracer::RoutingState previous = tracer::routing_state_from_json(state_json);

    tracer::TraceBuffer buffer;
    buffer.ingest(tracer::read_trace_file(buffer_path));
    const auto new_records = tracer::read_trace_file(traces_path);

    const tracer::FitResult result =
        tracer::update(previous, new_records, buffer, cfg.router_config());
    write_outputs(cfg, result, buffer, "update");
    return report_verdict(result);
}

int cmd_eval(const tracer::RunConfig& cfg, const std::string& traces_path) {
    const std::string state_path = cfg.out_dir + "/state.json";
    std::ifstream state_in(state_path);
    if (!state_in) throw std::runtime_error("no state at " + state_path);
    nlohmann::json state_json;
    state_in >> state_json;
    const tracer::RoutingState state = tracer::routing_state_from_json(state_json);

    tracer::TraceBuffer buffer;
    // Seed the dictionary with the pipeline's label snapshot so the stored
    // model's indices line up with freshly ingested records.
    if (state.is_active()) {
        for (const std::string& name : state.pipeline->surrogate->label_snapshot) {
            buffer.labels().intern(name);
        }
    }
    buffer.ingest(load_traces_checked(traces_path));
    std::vector<const tracer::Trace*> view;
    for (const tracer::Trace& t : buffer.traces()) view.push_back(&t);

    tracer::EvalMetrics m;
    m.n = view.size();
    if (state.is_active()) m = tracer::evaluate_pipeline(*state.pipeline, view);

    nlohmann::json j = tracer::eval_metrics_to_json(m);
    j["version"] = state.version;
    j["mode"] = state.is_active() ? "active" : "teacher_only";
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_sweep(const tracer::RunConfig& cfg, const std::string& traces_path,
              const std::string& test_path, std::vector<double> alphas) {
    const auto records = load_traces_checked(traces_path);
    std::vector<tracer::TraceRecord> test_records;
    if (!test_path.empty()) test_records = load_traces_checked(test_path);

    if (alphas.empty()) alphas = {0.80, 0.85, 0.90, 0.95};

    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string runlog = cfg.out_dir + "/runlog.jsonl";

    const auto log_protocol = [&](double alpha, const tracer::ProtocolResult& protocol) {
        for (const tracer::DayRecord& day : protocol.day_records) {
            nlohmann::json entry;
            entry["ts"] = iso_timestamp();
            entry["event"] = "sweep-day";
            entry["alpha"] = alpha;
            entry["day"] = day.day;
            entry["traces"] = day.traces_so_far;
            entry["version"] = day.version;
            entry["promoted"] = day.promoted;
            if (day.promoted) {
                entry["family"] = day.family;
                entry["cal_coverage"] = day.cal_coverage;
                entry["cal_ta"] = day.cal_ta;
            } else {
                entry["reason"] = day.reason;
            }
            entry["config"] = tracer::run_config_to_json(cfg);
            tracer::append_run_log(runlog, entry);
        }
    };
    const tracer::SweepResult result = tracer::run_alpha_sweep(
        records, test_records, alphas, cfg.router_config(), log_protocol);

    const std::string table = tracer::sweep_table(result);
    std::cout << table;
    {
        std::ofstream out(cfg.out_dir + "/sweep.csv", std::ios::trunc);
        out << table;
    }
    {
        std::ofstream out(cfg.out_dir + "/sweep.json", std::ios::trunc);
        out << tracer::sweep_to_json(result).dump(2) << '\n';
    }
    return kExitOk;
}

int cmd_synth(const tracer::SyntheticSpec& spec, const std::string& out_file,
              const std::string& test_file) {
    if (!test_file.empty()) {
        const tracer::WorldData world = tracer::generate_world(spec);
        tracer::write_trace_file(out_file, world.train_records);
        tracer::write_trace_file(test_file, world.test_records);
        std::cout << "wrote " << world.train_records.size() << " traces to " << out_file
                  << " and " << world.test_records.size() << " to " << test_file << "\n";
    } else {
        const auto records = tracer::generate_synthetic(spec);
        tracer::write_trace_file(out_file, records);
        std::cout << "wrote " << records.size() << " traces to " << out_file << "\n";
    }
    return kExitOk;
}

int cmd_report(const tracer::RunConfig& cfg, int version, const std::string& format) {
    namespace fs = std::filesystem;
    int v = version;
    if (v < 0) {
        // Latest version on disk.
        for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("report_v", 0) == 0 && name.size() > 13 &&
                name.substr(name.size() - 5) == ".json") {
                v = std::max(v, std::stoi(name.substr(8, name.size() - 13)));
            }
        }
        if (v < 0) throw std::runtime_error("no reports under " + cfg.out_dir);
    }
    const std::string path = cfg.out_dir + "/report_v" + std::to_string(v) + ".json";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("no report at " + path);
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const tracer::ReportBundle bundle = tracer::parse_report(body);
    if (format == "json") {
        std::cout << tracer::emit_report(bundle, tracer::ReportFormat::Structured) << "\n";
    } else {
        std::cout << tracer::emit_report(bundle, tracer::ReportFormat::HumanReadable);
    }
    return kExitOk;
}

tracer::TracerService* g_service = nullptr;

int cmd_serve(const tracer::RunConfig& cfg, const std::string& host, int port) {
    tracer::RoutingState state;
    tracer::TraceBuffer buffer;

    const std::string state_path = cfg.out_dir + "/state.json";
    if (std::ifstream in(state_path); in) {
        nlohmann::json j;
        in >> j;
        state = tracer::routing_state_from_json(j);
        std::cerr << "loaded state v" << state.version << " from " << state_path << "\n";
    }
    const std::string buffer_path = cfg.out_dir + "/buffer.jsonl";
    if (std::filesystem::exists(buffer_path)) {
        buffer.ingest(tracer::read_trace_file(buffer_path));
        std::cerr << "loaded " << buffer.size() << " traces from " << buffer_path << "\n";
    }

    std::unique_ptr<tracer::TeacherClient> teacher;
    if (!cfg.teacher_oracle.empty()) {
        teacher = std::make_unique<tracer::CachedOracleTeacher>(cfg.teacher_oracle);
    } else if (!cfg.teacher_url.empty()) {
        teacher = std::make_unique<tracer::RemoteTeacher>(cfg.teacher_url);
    }
    if (!state.is_active() && !teacher) {
        throw std::runtime_error("no routing state and no teacher configured; nothing can serve");
    }

    tracer::TracerService service(cfg, std::move(state), std::move(buffer), std::move(teacher));
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
    });

    std::cerr << "serving on " << host << ":" << port << "\n";
    const bool ok = service.listen(host, port);
    service.flush();  // graceful shutdown persists the buffer
    g_service = nullptr;
    if (!ok) throw std::runtime_error("failed to bind " + host + ":" + std::to_string(port));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trace-driven deferral engine"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic trace world");
    tracer::SyntheticSpec spec;
    std::string synth_out = "traces.jsonl", synth_test;
    synth->add_option("--classes", spec.num_classes, "number of classes");
    synth->add_option("--dim", spec.dim, "embedding dimension");
    synth->add_option("--sep", spec.separation, "centroid separation in within-cluster stds");
    synth->add_option("--noise", spec.teacher_noise, "teacher label flip probability");
    synth->add_option("--per-day", spec.per_day, "traces per day");
    synth->add_option("--days", spec.days, "number of days");
    synth->add_option("--seed", spec.seed, "world seed");
    synth->add_option("--out-file", synth_out, "output trace file");
    synth->add_option("--with-test", synth_test, "also write a fresh test sample here");

    // fit / update / eval
    auto* fit_cmd = app.add_subcommand("fit", "fit a first pipeline and apply the parity gate");
    CommonFlags fit_flags;
    std::string fit_traces;
    fit_cmd->add_option("--traces", fit_traces, "trace file")->required();
    fit_flags.attach(fit_cmd);

    auto* update_cmd = app.add_subcommand("update", "merge new traces and refit from scratch");
    CommonFlags update_flags;
    std::string update_traces;
    update_cmd->add_option("--traces", update_traces, "new trace batch")->required();
    update_flags.attach(update_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate the stored pipeline on a trace file");
    CommonFlags eval_flags;
    std::string eval_traces;
    eval_cmd->add_option("--traces", eval_traces, "evaluation trace file")->required();
    eval_flags.attach(eval_cmd);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "alpha sweep with the confidence baseline");
    CommonFlags sweep_flags;
    std::string sweep_traces, sweep_test;
    std::vector<double> sweep_alphas;
    sweep_cmd->add_option("--traces", sweep_traces, "trace file")->required();
    sweep_cmd->add_option("--test", sweep_test, "held-out test trace file");
    sweep_cmd->add_option("--alphas", sweep_alphas, "alpha values")->delimiter(',');
    sweep_flags.attach(sweep_cmd);

    // report
    auto* report_cmd = app.add_subcommand("report", "print a stored refit report");
    CommonFlags report_flags;
    int report_version = -1;
    std::string report_format = "text";
    report_cmd->add_option("--version", report_version, "report version (default: latest)");
    report_cmd->add_option("--format", report_format, "text or json")
        ->check(CLI::IsMember({"text", "json"}));
    report_flags.attach(report_cmd);

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "host the routing service");
    CommonFlags serve_flags;
    std::string serve_host = "127.0.0.1";
    int serve_port = 8787;
    serve_cmd->add_option("--host", serve_host, "bind host");
    serve_cmd->add_option("--port", serve_port, "bind port");
    serve_flags.attach(serve_cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(spec, synth_out, synth_test);
        if (fit_cmd->parsed()) return cmd_fit(fit_flags.resolve(fit_cmd), fit_traces);
        if (update_cmd->parsed()) return cmd_update(update_flags.resolve(update_cmd), update_traces);
        if (eval_cmd->parsed()) return cmd_eval(eval_flags.resolve(eval_cmd), eval_traces);
        if (sweep_cmd->parsed()) {
            return cmd_sweep(sweep_flags.resolve(sweep_cmd), sweep_traces, sweep_test,
                             sweep_alphas);
        }
        if (report_cmd->parsed()) {
            return cmd_report(report_flags.resolve(report_cmd), report_version, report_format);
        }
        if (serve_cmd->parsed()) {
            return cmd_serve(serve_flags.resolve(serve_cmd), serve_host, serve_port);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
