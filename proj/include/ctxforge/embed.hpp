#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ctxforge {

constexpr size_t kEmbedDim = 256;

using EmbeddingVector = std::vector<double>;

// Deterministic hashed bag-of-words embedding:
//   bucket(token) = fnv1a64(token) mod kEmbedDim
//   weight[bucket] += log(1 + tf(token))   once per distinct token
// then L2-normalize. No tokens => the zero vector.
EmbeddingVector embed_text(std::string_view text);
EmbeddingVector embed_tokens(const std::vector<std::string>& tokens);

size_t token_bucket(std::string_view token);

double l2_norm(const EmbeddingVector& v);

// Either vector all-zero => 0.0. Dimension mismatch is a Validation error.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Mean of the inputs, L2-normalized; empty input or zero mean => zero vector.
EmbeddingVector normalized_mean(const std::vector<EmbeddingVector>& vectors);

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

// Exact brute-force top-m index over (doc_id, vector) pairs.
class VectorIndex {
public:
    // Duplicate doc_id is a Validation error; insertion order is preserved.
    void add(std::string doc_id, EmbeddingVector vec);
    size_t size() const { return ids_.size(); }

    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<EmbeddingVector>& vectors() const { return vectors_; }

private:
    std::vector<std::string> ids_;
    std::vector<EmbeddingVector> vectors_;
};

// Top-m by descending cosine, ties by ascending doc_id; returns all entries
// when the index holds fewer than m.
std::vector<ScoredDoc> index_topm(const VectorIndex& index, const EmbeddingVector& q,
                                  size_t m);

}  // namespace ctxforge
