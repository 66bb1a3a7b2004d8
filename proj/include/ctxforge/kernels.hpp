#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxforge/embed.hpp"

namespace ctxforge {

// Batch kernels come in a serial reference implementation and an OpenMP
// variant that parallelizes over independent outputs only, so both produce
// bit-identical results. The active backend defaults to Parallel when built
// with OpenMP; CTXFORGE_BACKEND=serial|parallel overrides at startup.
enum class Backend { Serial, Parallel };

Backend active_backend();
void set_backend(Backend backend);
bool parallel_available();

std::vector<EmbeddingVector> embed_many(const std::vector<std::string>& texts);
std::vector<EmbeddingVector> embed_many_serial(const std::vector<std::string>& texts);

std::vector<double> cosine_many(const std::vector<EmbeddingVector>& vectors,
                                const EmbeddingVector& query);
std::vector<double> cosine_many_serial(const std::vector<EmbeddingVector>& vectors,
                                       const EmbeddingVector& query);

// For each point, the index of the nearest centroid by max cosine
// (tie: lowest centroid index).
std::vector<size_t> kmeans_assign(const std::vector<EmbeddingVector>& points,
                                  const std::vector<EmbeddingVector>& centroids);
std::vector<size_t> kmeans_assign_serial(const std::vector<EmbeddingVector>& points,
                                         const std::vector<EmbeddingVector>& centroids);

// Normalized mean of each cluster's members; clusters listed in `empty_out`
// keep a zero vector for the caller to repair.
std::vector<EmbeddingVector> kmeans_update(const std::vector<EmbeddingVector>& points,
                                           const std::vector<size_t>& assignment,
                                           size_t k, std::vector<size_t>& empty_out);
std::vector<EmbeddingVector> kmeans_update_serial(const std::vector<EmbeddingVector>& points,
                                                  const std::vector<size_t>& assignment,
                                                  size_t k, std::vector<size_t>& empty_out);

}  // namespace ctxforge
