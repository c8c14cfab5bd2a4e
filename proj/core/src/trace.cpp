#include "tracer/trace.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "tracer/rng.hpp"

namespace tracer {

int LabelDictionary::intern(const std::string& label) {
    auto it = index_.find(label);
    if (it != index_.end()) return it->second;
    const int idx = static_cast<int>(names_.size());
    names_.push_back(label);
    index_.emplace(label, idx);
    return idx;
}

std::optional<int> LabelDictionary::find(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const std::string& LabelDictionary::name(int index) const {
    if (index < 0 || index >= size()) {
        throw std::out_of_range("label index " + std::to_string(index) + " out of range");
    }
    return names_[static_cast<std::size_t>(index)];
}

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Calibration: return "calibration";
        case Split::Shadow: return "shadow";
    }
    return "?";
}

void SplitFractions::validate() const {
    const double parts[] = {train, validation, calibration, shadow};
    double sum = 0.0;
    for (const double p : parts) {
        if (p < 0.0) throw std::invalid_argument("split fractions must be non-negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must sum to 1, got " + std::to_string(sum));
    }
}

Split assign_split(std::string_view trace_id, const SplitFractions& fractions) {
    fractions.validate();
    const double u = static_cast<double>(stable_hash64(trace_id) >> 11) * 0x1.0p-53;
    double edge = fractions.train;
    if (u < edge) return Split::Train;
    edge += fractions.validation;
    if (u < edge) return Split::Validation;
    edge += fractions.calibration;
    if (u < edge) return Split::Calibration;
    return Split::Shadow;
}

void TraceBuffer::ingest(const std::vector<TraceRecord>& records) {
    if (records.empty()) return;

    // Validate the whole batch before touching the buffer.
    int dim = dim_;
    std::unordered_set<std::string> batch_ids;
    for (const TraceRecord& r : records) {
        if (r.embedding.empty()) {
            throw std::invalid_argument("trace '" + r.id + "' has an empty embedding");
        }
        if (dim == 0) {
            dim = static_cast<int>(r.embedding.size());
        } else if (static_cast<int>(r.embedding.size()) != dim) {
            throw std::invalid_argument("trace '" + r.id + "' embedding dimension " +
                                        std::to_string(r.embedding.size()) + " does not match " +
                                        std::to_string(dim));
        }
        if (r.day < 0) {
            throw std::invalid_argument("trace '" + r.id + "' has a negative day tag");
        }
        if (by_id_.count(r.id) || !batch_ids.insert(r.id).second) {
            throw std::invalid_argument("duplicate trace id '" + r.id + "'");
        }
    }

    dim_ = dim;
    traces_.reserve(traces_.size() + records.size());
    for (const TraceRecord& r : records) {
        Trace t;
        t.id = r.id;
        t.text = r.text;
        t.embedding = r.embedding;
        t.teacher_label = labels_.intern(r.teacher_label);
        t.day = r.day;
        if (r.ground_truth) t.ground_truth = labels_.intern(*r.ground_truth);
        by_id_.emplace(t.id, traces_.size());
        day_counts_[t.day] += 1;
        traces_.push_back(std::move(t));
    }
}

bool TraceBuffer::append(Trace trace) {
    if (by_id_.count(trace.id)) return false;
    if (trace.embedding.empty()) {
        throw std::invalid_argument("trace '" + trace.id + "' has an empty embedding");
    }
    if (dim_ == 0) {
        dim_ = static_cast<int>(trace.embedding.size());
    } else if (static_cast<int>(trace.embedding.size()) != dim_) {
        throw std::invalid_argument("trace '" + trace.id + "' embedding dimension " +
                                    std::to_string(trace.embedding.size()) +
                                    " does not match " + std::to_string(dim_));
    }
    if (trace.teacher_label < 0 || trace.teacher_label >= labels_.size()) {
        throw std::invalid_argument("trace '" + trace.id + "' carries an unregistered label index");
    }
    by_id_.emplace(trace.id, traces_.size());
    day_counts_[trace.day] += 1;
    traces_.push_back(std::move(trace));
    return true;
}

bool TraceBuffer::contains(std::string_view id) const {
    return by_id_.count(std::string(id)) > 0;
}

int TraceBuffer::max_day() const {
    if (day_counts_.empty()) return -1;
    return day_counts_.rbegin()->first;
}

std::vector<TraceRecord> TraceBuffer::to_records() const {
    std::vector<TraceRecord> out;
    out.reserve(traces_.size());
    for (const Trace& t : traces_) {
        TraceRecord r;
        r.id = t.id;
        r.text = t.text;
        r.embedding = t.embedding;
        r.teacher_label = labels_.name(t.teacher_label);
        r.day = t.day;
        if (t.ground_truth) r.ground_truth = labels_.name(*t.ground_truth);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<const Trace*> traces_for(const TraceBuffer& buffer, Split split,
                                     const SplitFractions& fractions) {
    std::vector<const Trace*> out;
    for (const Trace& t : buffer.traces()) {
        if (assign_split(t.id, fractions) == split) out.push_back(&t);
    }
    return out;
}

}  // namespace tracer
