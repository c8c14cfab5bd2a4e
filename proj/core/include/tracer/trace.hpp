#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tracer {

using Embedding = std::vector<double>;

/// One production record: an input embedding paired with the teacher's label.
/// Text is optional; it is only needed for the report cards, never for
/// training. Ground truth is carried for evaluation and nothing else.
struct Trace {
    std::string id;
    std::optional<std::string> text;
    Embedding embedding;
    int teacher_label = -1;  // index into the owning buffer's dictionary
    int day = 0;
    std::optional<int> ground_truth;
};

/// Raw record as it appears in a trace file: labels are still strings.
struct TraceRecord {
    std::string id;
    std::optional<std::string> text;
    Embedding embedding;
    std::string teacher_label;
    int day = 0;
    std::optional<std::string> ground_truth;
};

/// Bidirectional label-string <-> contiguous-index map. Open-ended: an unseen
/// label gets the next free index, and once assigned an index never changes.
class LabelDictionary {
public:
    int intern(const std::string& label);
    std::optional<int> find(std::string_view label) const;
    const std::string& name(int index) const;
    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
};

enum class Split { Train, Validation, Calibration, Shadow };

inline constexpr std::array<Split, 4> kAllSplits = {Split::Train, Split::Validation,
                                                    Split::Calibration, Split::Shadow};

const char* split_name(Split s);

struct SplitFractions {
    double train = 0.70;
    double validation = 0.10;
    double calibration = 0.10;
    double shadow = 0.10;

    /// Throws std::invalid_argument unless non-negative and summing to 1
    /// within 1e-9.
    void validate() const;
};

/// Deterministic split assignment from the trace id alone: a fixed 64-bit
/// hash mapped to [0,1) and bucketed by cumulative fractions. Stable across
/// refits and buffer growth, so the shadow split is never contaminated.
Split assign_split(std::string_view trace_id, const SplitFractions& fractions);

/// Append-only trace store with an open label dictionary and per-day counts.
/// Appends never mutate existing records; ids are unique.
class TraceBuffer {
public:
    /// All-or-nothing batch ingest. Unseen label strings (teacher or ground
    /// truth) are registered with fresh indices. Throws std::invalid_argument
    /// naming the offending id on a dimension mismatch or duplicate id.
    void ingest(const std::vector<TraceRecord>& records);

    /// Single append used by the live deferral path. Returns false (and
    /// leaves the buffer untouched) when the id is already present.
    bool append(Trace trace);

    const std::vector<Trace>& traces() const { return traces_; }
    std::size_t size() const { return traces_.size(); }
    bool empty() const { return traces_.empty(); }
    bool contains(std::string_view id) const;

    /// 0 until the first record arrives.
    int dimension() const { return dim_; }

    const LabelDictionary& labels() const { return labels_; }
    LabelDictionary& labels() { return labels_; }

    const std::map<int, std::size_t>& day_counts() const { return day_counts_; }
    int max_day() const;

    std::vector<TraceRecord> to_records() const;

private:
    std::vector<Trace> traces_;
    std::unordered_map<std::string, std::size_t> by_id_;
    LabelDictionary labels_;
    std::map<int, std::size_t> day_counts_;
    int dim_ = 0;
};

/// Traces whose id hashes into the requested split, in ingestion order.
/// Pointers stay valid until the next append.
std::vector<const Trace*> traces_for(const TraceBuffer& buffer, Split split,
                                     const SplitFractions& fractions);

}  // namespace tracer
