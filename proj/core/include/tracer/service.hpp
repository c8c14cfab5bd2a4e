#pragma once

#include <memory>
#include <shared_mutex>
#include <string>

#include "tracer/config.hpp"
#include "tracer/router.hpp"

namespace tracer {

/// HTTP surface around a routing state and its trace buffer.
///
///   POST /classify   {id, embedding, text?} -> {label, decision, score, version}
///   POST /traces     [record, ...]          -> {ingested, buffer_size}
///   POST /refit      {}                     -> verdict summary
///   GET  /report/latest
///   GET  /state
///
/// Classification runs under a shared lock against an immutable pipeline;
/// buffer appends are serialized; a refit takes the state exclusively and
/// publishes the new version atomically.
class TracerService {
public:
    TracerService(RunConfig cfg, RoutingState state, TraceBuffer buffer,
                  std::unique_ptr<TeacherClient> teacher);
    ~TracerService();

    /// Blocks until stop(). Returns false when the port cannot be bound.
    bool listen(const std::string& host, int port);

    /// Binds an ephemeral port and serves in a background thread; returns
    /// the bound port (-1 on failure). Used by tests.
    int start_background(const std::string& host);

    void stop();

    /// Persists the buffer and state into cfg.out_dir.
    void flush() const;

    int version() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tracer
