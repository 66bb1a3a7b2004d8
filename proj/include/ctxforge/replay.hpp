#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxforge/hybrid.hpp"
#include "ctxforge/syncorpus.hpp"

namespace ctxforge {

// Retention: a critical sentence counts as retained when its rare tokens
// (document frequency 1 in the snapshot's frozen table; all its tokens when
// none are rare) all appear among the assembled entries of its own document.
struct QueryOutcome {
    QueryMetrics metrics;
    bool retention_applicable = false;  // trace row listed critical sentences
    double retention = 0.0;
};

struct ReplayAggregates {
    uint64_t query_count = 0;
    uint64_t p50_latency_us = 0;  // nearest-rank percentiles
    uint64_t p99_latency_us = 0;
    double hit_rate = 0.0;
    double mean_context_tokens = 0.0;
    double compression_ratio = 0.0;  // cache entry tokens vs corpus tokens
    uint64_t retrieval_calls = 0;
    uint64_t evictions = 0;
    bool retention_applicable = false;
    double retention = 0.0;  // mean over queries with criticals
};

struct ReplayReport {
    std::vector<QueryOutcome> queries;
    ReplayAggregates aggregates;
};

ReplayReport run_replay(Engine& engine, const std::vector<TraceRecord>& trace);

// {"aggregates": {...}, "queries": [...]}; retention is null where not
// applicable. Latency fields (elapsed_us, p50/p99) are the only
// non-deterministic content.
nlohmann::json report_json(const ReplayReport& report);

}  // namespace ctxforge
