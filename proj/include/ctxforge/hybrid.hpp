#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxforge/cache.hpp"
#include "ctxforge/config.hpp"
#include "ctxforge/rank.hpp"

namespace ctxforge {

struct HybridConfig {
    double hit_threshold_tau = 0.6;
    uint64_t retrieval_m = 3;
    uint64_t miss_summary_tokens = 24;
};

struct HitProbe {
    bool hit = false;
    double best_similarity = 0.0;  // 0 when nothing is loaded
};

// Max cosine between the query and any loaded entry, compared against tau.
HitProbe detect_cache_hit(const CacheSnapshot& snapshot, const EmbeddingVector& q_vec,
                          double tau);

struct AssembledEntry {
    std::string node_id;
    std::string text;
    double score = 0.0;
    uint64_t tokens = 0;
    bool retrieved = false;     // fetched by this very query (vs already cached)
    std::string source_doc_id;  // carried for retention scoring, not emitted
};

struct AssembledContext {
    std::string query_id;
    std::vector<AssembledEntry> entries;  // sorted by (-score, node_id)
    uint64_t total_tokens = 0;
};

// Query tokens not covered by any entry of the current context, deduplicated
// in first-seen order, space-joined; when the context covers every token the
// full query token sequence comes back.
std::string distill_query(const std::string& query_text, const AssembledContext& context);

struct QueryMetrics {
    std::string query_id;
    bool hit = false;
    uint64_t retrieved = 0;
    uint64_t evicted = 0;
    uint64_t context_tokens = 0;
    uint64_t elapsed_us = 0;
};

// The hybrid loop body (buffer already updated with this query): load
// segments, probe for a hit; on a miss distill the query, fetch the top-m
// docs, summarize each against the distilled query, score with the live
// buffer, pin-insert under the budget, evict overflow; assemble the loaded
// entries. Fills every metrics field except elapsed_us.
AssembledContext augment(CacheSnapshot& snapshot, const VectorIndex& corpus_index,
                         const std::string& query_id, const std::string& query_text,
                         const QueryBuffer& buffer, const EngineConfig& cfg,
                         QueryMetrics& metrics);

nlohmann::json context_json(const AssembledContext& context);
nlohmann::json metrics_json(const QueryMetrics& metrics);

// Serving core: owns the snapshot, the recency buffer and the document-level
// retrieval index. Queries mutate shared state (buffer, loaded flags, cache
// contents on a miss), so callers serialize access.
class Engine {
public:
    Engine(CacheSnapshot snapshot, EngineConfig cfg,
           std::optional<PolicyParams> policy = std::nullopt);

    static Engine build(const CorpusStore& store, const EngineConfig& cfg,
                        const PolicyParams* policy = nullptr);

    const CacheSnapshot& snapshot() const { return snap_; }
    const EngineConfig& config() const { return cfg_; }
    const QueryBuffer& buffer() const { return buffer_; }

    AssembledContext answer(const std::string& query_id, const std::string& query_text,
                            QueryMetrics& metrics);

    std::vector<std::string> apply(const ChangeEvent& event);

private:
    void rebuild_doc_index();
    const PolicyParams* policy_ptr() const {
        return policy_.has_value() ? &*policy_ : nullptr;
    }

    CacheSnapshot snap_;
    EngineConfig cfg_;
    QueryBuffer buffer_;
    VectorIndex doc_index_;
    std::optional<PolicyParams> policy_;
};

}  // namespace ctxforge
