#include "ctxforge/embed.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ctxforge/common.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

size_t token_bucket(std::string_view token) {
    return static_cast<size_t>(fnv1a64(token) % kEmbedDim);
}

EmbeddingVector embed_tokens(const std::vector<std::string>& tokens) {
    EmbeddingVector v(kEmbedDim, 0.0);
    if (tokens.empty()) return v;
    std::map<std::string_view, size_t> tf;
    for (const std::string& tok : tokens) ++tf[tok];
    for (const auto& [tok, count] : tf) {
        v[token_bucket(tok)] += std::log(1.0 + static_cast<double>(count));
    }
    double norm = l2_norm(v);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
    return v;
}

EmbeddingVector embed_text(std::string_view text) {
    return embed_tokens(tokenize(text));
}

double l2_norm(const EmbeddingVector& v) {
    double sum = 0.0;
    for (double x : v) sum += x * x;
    return std::sqrt(sum);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) {
        fail(ErrorKind::Validation, "cosine: dimension mismatch " + std::to_string(a.size()) +
                                        " vs " + std::to_string(b.size()));
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

EmbeddingVector normalized_mean(const std::vector<EmbeddingVector>& vectors) {
    EmbeddingVector mean(kEmbedDim, 0.0);
    if (vectors.empty()) return mean;
    for (const EmbeddingVector& v : vectors) {
        for (size_t i = 0; i < kEmbedDim; ++i) mean[i] += v[i];
    }
    for (double& x : mean) x /= static_cast<double>(vectors.size());
    double norm = l2_norm(mean);
    if (norm > 0.0) {
        for (double& x : mean) x /= norm;
    }
    return mean;
}

void VectorIndex::add(std::string doc_id, EmbeddingVector vec) {
    for (const std::string& existing : ids_) {
        if (existing == doc_id) {
            fail(ErrorKind::Validation, "VectorIndex: duplicate doc_id " + doc_id);
        }
    }
    ids_.push_back(std::move(doc_id));
    vectors_.push_back(std::move(vec));
}

std::vector<ScoredDoc> index_topm(const VectorIndex& index, const EmbeddingVector& q,
                                  size_t m) {
    std::vector<ScoredDoc> scored(index.size());
    for (size_t i = 0; i < index.size(); ++i) {
        scored[i] = ScoredDoc{index.ids()[i], cosine(index.vectors()[i], q)};
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    if (scored.size() > m) scored.resize(m);
    return scored;
}

}  // namespace ctxforge
