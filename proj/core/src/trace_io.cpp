#include "tracer/trace_io.hpp"

#include <fstream>
#include <stdexcept>

namespace tracer {

nlohmann::json record_to_json(const TraceRecord& record) {
    nlohmann::json j;
    j["id"] = record.id;
    if (record.text) j["text"] = *record.text;
    j["embedding"] = record.embedding;
    j["teacher_label"] = record.teacher_label;
    j["day"] = record.day;
    if (record.ground_truth) j["ground_truth"] = *record.ground_truth;
    return j;
}

TraceRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("trace record must be a JSON object");
    TraceRecord r;
    r.id = j.at("id").get<std::string>();
    if (j.contains("text") && !j["text"].is_null()) r.text = j["text"].get<std::string>();
    r.embedding = j.at("embedding").get<std::vector<double>>();
    r.teacher_label = j.at("teacher_label").get<std::string>();
    r.day = j.at("day").get<int>();
    if (j.contains("ground_truth") && !j["ground_truth"].is_null()) {
        r.ground_truth = j["ground_truth"].get<std::string>();
    }
    return r;
}

std::vector<TraceRecord> read_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);

    std::vector<TraceRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void write_trace_file(const std::string& path, const std::vector<TraceRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    for (const TraceRecord& r : records) {
        out << record_to_json(r).dump() << '\n';
    }
}

}  // namespace tracer
