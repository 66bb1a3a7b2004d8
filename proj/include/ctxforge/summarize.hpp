#pragma once

#include <string>
#include <vector>

#include "ctxforge/corpus.hpp"
#include "ctxforge/embed.hpp"

namespace ctxforge {

struct SummaryBudgets {
    size_t doc_summary_tokens = 64;
    size_t para_summary_tokens = 24;
};

struct DescentConfig {
    double relevance_threshold = 0.55;
};

// Extractive summary: greedily take whole descendant sentences in descending
// cosine(sentence, query_vec) (ties by document order), stopping when the
// next pick would overflow target_tokens; the single best sentence is always
// included even if it alone overflows. Output re-ordered to document order.
// A node with no sentence descendants is a Validation error.
std::string summarize_node(const HierarchyNode& node, size_t target_tokens,
                           const EmbeddingVector& query_vec);

struct ContextPiece {
    std::string node_id;
    std::string text;
    Level level = Level::Sentence;
};

// Top-down threshold descent: emit a node's level summary when its cosine to
// the query meets the threshold, otherwise descend; sentences emit themselves.
// Nodes without sentence descendants emit nothing.
std::vector<ContextPiece> resolve_context(const HierarchyNode& tree,
                                          const EmbeddingVector& query_vec,
                                          const DescentConfig& cfg,
                                          const SummaryBudgets& budgets);

// 1 - emitted/original; original_tokens must be >= 1.
double compression_ratio(size_t original_tokens, size_t emitted_tokens);

}  // namespace ctxforge
