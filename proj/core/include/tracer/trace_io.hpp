#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tracer/trace.hpp"

namespace tracer {

// Trace files are line-delimited JSON, one record per line:
//   {"id": "...", "text": "...", "embedding": [...], "teacher_label": "...",
//    "day": 0, "ground_truth": "..."}
// "text" and "ground_truth" are optional. This format is the replay contract
// for real benchmark traces.

nlohmann::json record_to_json(const TraceRecord& record);
TraceRecord record_from_json(const nlohmann::json& j);

/// Throws std::runtime_error with "<path>:<line>: ..." on malformed input.
std::vector<TraceRecord> read_trace_file(const std::string& path);

void write_trace_file(const std::string& path, const std::vector<TraceRecord>& records);

}  // namespace tracer
