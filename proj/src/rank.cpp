#include "ctxforge/rank.hpp"

#include <algorithm>
#include <cmath>

#include "ctxforge/common.hpp"

namespace ctxforge {

QueryBuffer::QueryBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity_ < 1) fail(ErrorKind::Validation, "QueryBuffer capacity must be >= 1");
}

void QueryBuffer::push(EmbeddingVector q_vec) {
    entries_.push_back(std::move(q_vec));
    if (entries_.size() > capacity_) entries_.erase(entries_.begin());
}

double snippet_score(const EmbeddingVector& s_vec, const QueryBuffer& buffer, double prior,
                     double alpha) {
    if (prior < 0.0 || prior > 1.0) fail(ErrorKind::Validation, "prior must be in [0,1]");
    if (alpha < 0.0 || alpha > 1.0) fail(ErrorKind::Validation, "alpha must be in [0,1]");
    double realtime = 0.0;
    if (!buffer.entries().empty()) {
        double sum = 0.0;
        for (const EmbeddingVector& q : buffer.entries()) {
            sum += clamp01(cosine(s_vec, q));
        }
        realtime = sum / static_cast<double>(buffer.entries().size());
    }
    return alpha * realtime + (1.0 - alpha) * prior;
}

double offline_prior(const EmbeddingVector& s_vec, const EmbeddingVector& corpus_centroid,
                     PriorMode mode) {
    if (mode == PriorMode::Uniform) return 0.5;
    return clamp01(cosine(s_vec, corpus_centroid));
}

std::vector<ScoredSnippet> select_top_fraction(std::vector<ScoredSnippet> scored,
                                               double top_fraction) {
    if (top_fraction <= 0.0 || top_fraction > 1.0) {
        fail(ErrorKind::Validation, "top_fraction must be in (0,1]");
    }
    if (scored.empty()) return scored;
    std::sort(scored.begin(), scored.end(), [](const ScoredSnippet& a, const ScoredSnippet& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.node_id < b.node_id;
    });
    size_t keep = static_cast<size_t>(
        std::ceil(top_fraction * static_cast<double>(scored.size())));
    if (keep < scored.size()) scored.resize(keep);
    return scored;
}

}  // namespace ctxforge
