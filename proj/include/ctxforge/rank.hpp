#pragma once

#include <string>
#include <vector>

#include "ctxforge/embed.hpp"

namespace ctxforge {

enum class PriorMode { Uniform, CentroidSimilarity };

// FIFO ring of the last N query embeddings, most recent last.
class QueryBuffer {
public:
    explicit QueryBuffer(size_t capacity);

    void push(EmbeddingVector q_vec);
    size_t size() const { return entries_.size(); }
    size_t capacity() const { return capacity_; }
    const std::vector<EmbeddingVector>& entries() const { return entries_; }

private:
    size_t capacity_;
    std::vector<EmbeddingVector> entries_;
};

struct ScoredSnippet {
    std::string node_id;
    double score = 0.0;
};

// score(s) = alpha * (1/|entries|) * sum_i clamp01(cos(s, q_i))
//          + (1 - alpha) * prior.
// Empty buffer drops the real-time term entirely: score = (1-alpha)*prior.
double snippet_score(const EmbeddingVector& s_vec, const QueryBuffer& buffer, double prior,
                     double alpha);

// Uniform => 0.5 for every snippet; CentroidSimilarity => clamp01 of the
// cosine against the corpus centroid (normalized mean of snippet embeddings).
double offline_prior(const EmbeddingVector& s_vec, const EmbeddingVector& corpus_centroid,
                     PriorMode mode);

// Keeps the ceil(top_fraction * n) highest-scored snippets, ties by ascending
// node_id; output sorted by (-score, node_id).
std::vector<ScoredSnippet> select_top_fraction(std::vector<ScoredSnippet> scored,
                                               double top_fraction);

}  // namespace ctxforge
