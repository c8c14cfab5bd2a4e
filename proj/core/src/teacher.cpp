#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

#include "tracer/router.hpp"
#include "tracer/trace_io.hpp"

namespace tracer {

CachedOracleTeacher::CachedOracleTeacher(const std::string& trace_file) {
    for (const TraceRecord& r : read_trace_file(trace_file)) {
        labels_by_id_.emplace(r.id, r.teacher_label);
    }
}

CachedOracleTeacher::CachedOracleTeacher(const std::vector<TraceRecord>& records) {
    for (const TraceRecord& r : records) {
        labels_by_id_.emplace(r.id, r.teacher_label);
    }
}

std::string CachedOracleTeacher::classify(const TraceInput& input) {
    const auto it = labels_by_id_.find(input.id);
    if (it == labels_by_id_.end()) {
        throw std::runtime_error("oracle has no cached label for id '" + input.id + "'");
    }
    return it->second;
}

RemoteTeacher::RemoteTeacher(std::string url) {
    // Split "http://host:port/path" into the client base and request path.
    const auto scheme = url.find("://");
    const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
        base_url_ = std::move(url);
        path_ = "/classify";
    } else {
        base_url_ = url.substr(0, path_start);
        path_ = url.substr(path_start);
    }
}

std::string RemoteTeacher::classify(const TraceInput& input) {
    httplib::Client client(base_url_);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(30, 0);

    nlohmann::json body;
    body["id"] = input.id;
    if (input.text) body["text"] = *input.text;
    body["embedding"] = input.embedding;

    const auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) {
        throw std::runtime_error("teacher endpoint unreachable: " + base_url_ + path_);
    }
    if (res->status != 200) {
        throw std::runtime_error("teacher endpoint returned HTTP " +
                                 std::to_string(res->status));
    }
    const auto j = nlohmann::json::parse(res->body);
    if (!j.contains("label") || !j["label"].is_string()) {
        throw std::runtime_error("teacher response is missing a label");
    }
    return j["label"].get<std::string>();
}

}  // namespace tracer
