#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ctxforge/config.hpp"
#include "ctxforge/corpus.hpp"
#include "ctxforge/embed.hpp"
#include "ctxforge/policy.hpp"

namespace ctxforge {

// Scores and centroids are stored as float32 so that a snapshot round-trips
// bit-exactly; all math lifts them back to double. The corpus centroid and
// document-frequency table are frozen at build time so that re-compressing an
// unchanged document reproduces its entries bit-for-bit.
struct CacheEntry {
    std::string node_id;
    std::string text;
    uint64_t token_count = 0;
    float score = 0.0f;
    std::string source_doc_id;
    uint64_t doc_version = 0;
};

struct CacheSegment {
    uint32_t segment_id = 0;
    std::vector<float> centroid;  // kEmbedDim
    bool loaded = false;
    std::vector<CacheEntry> entries;  // sorted by (-score, node_id)
};

struct CacheSnapshot {
    uint64_t total_budget = 0;
    std::string config_digest;
    std::string config_json;  // canonical engine config, authoritative at load
    std::map<std::string, uint64_t> corpus_version;
    std::vector<CacheSegment> segments;

    // Engine state frozen at build:
    CorpusStore store;
    std::vector<float> corpus_centroid;          // kEmbedDim
    std::map<std::string, uint32_t> df_table;    // document frequency per token
    uint64_t n_docs_at_build = 0;

    uint64_t loaded_tokens() const;
    uint64_t total_entry_tokens() const;
    size_t entry_count() const;
    const CacheSegment* find_segment(uint32_t segment_id) const;
};

EmbeddingVector lift(const std::vector<float>& v);
std::vector<float> lower(const EmbeddingVector& v);

// IDF with a fixed built-in stopword list (stopwords get 0). Tokens absent
// from the table score as df=1.
bool is_stopword(std::string_view token);
double idf_of(const std::map<std::string, uint32_t>& df_table, uint64_t n_docs,
              std::string_view token);

// Keeps the ceil(keep_fraction * n) token occurrences with the highest IDF
// (ties keep earlier positions), emitted in original order. keep_fraction=1
// returns the input verbatim; non-empty input never truncates to empty.
std::string truncate_tokens(const std::string& text, double keep_fraction,
                            const std::map<std::string, uint32_t>& df_table,
                            uint64_t n_docs);

// k-means over cosine distance d = 1 - cos. Seeding is k-means++ driven by
// mt19937_64(seed) with the unit_double protocol: the first centroid index is
// floor(u * n); later ones are drawn by inverse-CDF over weights d_i^2 where
// d_i is the distance to the nearest chosen centroid (all-zero weights pick
// the lowest unchosen index). Lloyd iterations run until assignments are
// stable or 50 rounds; point ties go to the lowest segment_id; an empty
// cluster is reseeded with the point farthest from its centroid (tie: lowest
// point index); k > n collapses to k = n.
std::map<std::string, uint32_t> cluster_segments(
    const std::vector<std::pair<std::string, EmbeddingVector>>& entries, size_t k,
    uint64_t seed);

struct ChangeEvent {
    enum class Op { Add, Edit, Delete };
    Op op = Op::Add;
    Document doc;  // Delete carries doc_id + version only
};

std::vector<ChangeEvent> parse_change_feed(std::string_view content);
std::vector<ChangeEvent> load_change_feed(const std::string& path);

// Compresses one document: per-document cold-start rank cut (top_fraction of
// sentences by (1-alpha)*prior), threshold descent against the frozen corpus
// centroid, optional policy refinement (budget 1.5x the resolved size, so the
// policy trims low-relevance content rather than enforcing the context
// budget), then saliency truncation. Deterministic given config + centroid +
// df table.
std::vector<CacheEntry> compress_document(const CorpusEntry& entry,
                                          const EngineConfig& cfg,
                                          const EmbeddingVector& corpus_centroid,
                                          const std::map<std::string, uint32_t>& df_table,
                                          uint64_t n_docs, const PolicyParams* policy);

CacheSnapshot build_cache(const CorpusStore& store, const EngineConfig& cfg,
                          const PolicyParams* policy);

// Removes loaded, unpinned entries in ascending (score, descending node_id)
// order until freed >= tokens_needed. Errors (leaving the snapshot untouched)
// when the evictable total is insufficient, reporting the shortfall.
std::vector<std::string> evict(CacheSnapshot& snapshot, uint64_t tokens_needed,
                               const std::set<std::string>& pinned);

// Add/Edit re-compress the document and place entries in the segment with the
// nearest centroid (re-clustering everything when a segment grows beyond 2x
// the mean entry count); Delete drops entries. Any change unloads all
// segments. Returns the node ids re-processed (the affected document's tree).
std::vector<std::string> apply_change(CacheSnapshot& snapshot, const ChangeEvent& event,
                                      const EngineConfig& cfg, const PolicyParams* policy);

// Marks loaded the max_segments segments with the highest centroid cosine
// (ties: lowest segment_id); all others are unloaded.
std::vector<uint32_t> load_segments_for_query(CacheSnapshot& snapshot,
                                              const EmbeddingVector& q_vec,
                                              uint64_t max_segments);

// Snapshot file: magic "CTXCACHE1", little-endian integers, float32 floats,
// length-prefixed segment blocks.
std::string serialize_snapshot(const CacheSnapshot& snapshot);
CacheSnapshot deserialize_snapshot(std::string_view bytes);
void save_snapshot(const CacheSnapshot& snapshot, const std::string& path);
CacheSnapshot load_snapshot(const std::string& path);

// One segment's serialized block (used by the update-locality checks).
std::string serialize_segment(const CacheSegment& segment);

}  // namespace ctxforge
