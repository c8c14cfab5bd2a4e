#include "tracer/service.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "tracer/trace_io.hpp"

namespace tracer {

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, nlohmann::json{{"error", message}}, status);
}

}  // namespace

struct TracerService::Impl {
    RunConfig cfg;
    RoutingState state;
    TraceBuffer buffer;
    std::unique_ptr<TeacherClient> teacher;
    ReportBundle latest_report;
    bool has_report = false;

    mutable std::shared_mutex state_mutex;  // exclusive during refit
    mutable std::mutex buffer_mutex;        // serializes deferral appends
    httplib::Server server;
    std::thread worker;

    void register_routes();
    nlohmann::json state_json() const;
    void persist() const;
};

nlohmann::json TracerService::Impl::state_json() const {
    nlohmann::json j;
    j["version"] = state.version;
    j["mode"] = state.is_active() ? "active" : "teacher_only";
    j["alpha"] = cfg.alpha;
    j["buffer_size"] = buffer.size();
    j["dimension"] = buffer.dimension();
    if (state.is_active()) {
        j["family"] = pipeline_family_name(state.pipeline->family);
        if (state.pipeline->family == PipelineFamily::L2D) j["tau"] = state.pipeline->tau;
    } else {
        j["refusal_reason"] = refusal_reason_name(state.refusal);
    }
    return j;
}

void TracerService::Impl::persist() const {
    std::filesystem::create_directories(cfg.out_dir);
    {
        std::ofstream out(cfg.out_dir + "/state.json", std::ios::trunc);
        out << routing_state_to_json(state).dump(2) << '\n';
    }
    write_trace_file(cfg.out_dir + "/buffer.jsonl", buffer.to_records());
}

void TracerService::Impl::register_routes() {
    server.Get("/state", [this](const httplib::Request&, httplib::Response& res) {
        std::shared_lock lock(state_mutex);
        send_json(res, state_json());
    });

    server.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
        TraceInput input;
        try {
            const auto j = nlohmann::json::parse(req.body);
            input.id = j.at("id").get<std::string>();
            input.embedding = j.at("embedding").get<std::vector<double>>();
            if (j.contains("text") && !j["text"].is_null()) {
                input.text = j["text"].get<std::string>();
            }
        } catch (const std::exception& e) {
            send_error(res, 400, std::string("malformed classify body: ") + e.what());
            return;
        }

        // Routing is pure and runs under the shared state lock; only the
        // deferral append takes the buffer mutex, so concurrent classifies
        // do not serialize on the teacher round-trip.
        std::shared_lock lock(state_mutex);
        try {
            const RouteDecision decision = route(state, input.embedding);
            std::string label;
            if (decision.handled) {
                label = state.pipeline->surrogate->label_snapshot[
                    static_cast<std::size_t>(decision.label)];
            } else {
                if (!teacher) {
                    send_error(res, 409, "deferred input but no teacher is configured");
                    return;
                }
                label = teacher->classify(input);
                Trace t;
                t.id = input.id;
                t.text = input.text;
                t.embedding = input.embedding;
                t.day = state.fitted_at_day + 1;
                std::lock_guard buffer_lock(buffer_mutex);
                t.teacher_label = buffer.labels().intern(label);
                buffer.append(std::move(t));
            }
            nlohmann::json j;
            j["label"] = label;
            j["decision"] = decision.handled ? "handled" : "deferred";
            j["score"] = decision.score;
            j["version"] = state.version;
            send_json(res, j);
        } catch (const std::invalid_argument& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            send_error(res, 502, std::string("teacher failure: ") + e.what());
        }
    });

    server.Post("/traces", [this](const httplib::Request& req, httplib::Response& res) {
        std::vector<TraceRecord> records;
        try {
            const auto j = nlohmann::json::parse(req.body);
            if (!j.is_array()) throw std::invalid_argument("body must be a JSON array of records");
            for (const auto& item : j) records.push_back(record_from_json(item));
        } catch (const std::exception& e) {
            send_error(res, 400, std::string("malformed trace batch: ") + e.what());
            return;
        }
        std::shared_lock lock(state_mutex);
        std::lock_guard buffer_lock(buffer_mutex);
        try {
            buffer.ingest(records);
        } catch (const std::exception& e) {
            send_error(res, 400, e.what());
            return;
        }
        send_json(res, nlohmann::json{{"ingested", records.size()},
                                      {"buffer_size", buffer.size()}});
    });

    server.Post("/refit", [this](const httplib::Request&, httplib::Response& res) {
        std::unique_lock lock(state_mutex);
        try {
            FitResult fitted = update(state, {}, buffer, cfg.router_config());
            state = std::move(fitted.state);
            latest_report = std::move(fitted.report);
            has_report = true;

            const std::string stem = cfg.out_dir + "/report_v" + std::to_string(state.version);
            nlohmann::json log_entry = verdict_to_json(fitted.verdict);
            log_entry["ts"] = iso_timestamp();
            log_entry["event"] = "refit";
            log_entry["alpha"] = cfg.alpha;
            log_entry["floor"] = cfg.floor;
            log_entry["version"] = state.version;
            log_entry["report_files"] = {stem + ".json", stem + ".txt"};
            append_run_log(cfg.out_dir + "/runlog.jsonl", log_entry);
            persist();
            {
                std::ofstream out(stem + ".json", std::ios::trunc);
                out << emit_report(latest_report, ReportFormat::Structured) << '\n';
            }
            {
                std::ofstream out(stem + ".txt", std::ios::trunc);
                out << emit_report(latest_report, ReportFormat::HumanReadable);
            }

            nlohmann::json j = state_json();
            j["promoted"] = state.is_active();
            send_json(res, j);
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });

    server.Get("/report/latest", [this](const httplib::Request&, httplib::Response& res) {
        std::shared_lock lock(state_mutex);
        if (!has_report) {
            send_error(res, 404, "no report generated yet");
            return;
        }
        send_json(res, report_to_json(latest_report));
    });
}

TracerService::TracerService(RunConfig cfg, RoutingState state, TraceBuffer buffer,
                             std::unique_ptr<TeacherClient> teacher)
    : impl_(std::make_unique<Impl>()) {
    impl_->cfg = std::move(cfg);
    impl_->state = std::move(state);
    impl_->buffer = std::move(buffer);
    impl_->teacher = std::move(teacher);
    impl_->register_routes();
}

TracerService::~TracerService() {
    stop();
}

bool TracerService::listen(const std::string& host, int port) {
    return impl_->server.listen(host, port);
}

int TracerService::start_background(const std::string& host) {
    const int port = impl_->server.bind_to_any_port(host);
    if (port < 0) return -1;
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port;
}

void TracerService::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

void TracerService::flush() const {
    std::shared_lock lock(impl_->state_mutex);
    std::lock_guard buffer_lock(impl_->buffer_mutex);
    impl_->persist();
}

int TracerService::version() const {
    std::shared_lock lock(impl_->state_mutex);
    return impl_->state.version;
}

}  // namespace tracer
