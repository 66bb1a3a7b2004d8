#include "ctxforge/kernels.hpp"

#include <cstdlib>
#include <cstring>

#ifdef CTXFORGE_HAVE_OPENMP
#include <omp.h>
#endif

namespace ctxforge {

namespace {

Backend initial_backend() {
#ifdef CTXFORGE_HAVE_OPENMP
    Backend backend = Backend::Parallel;
#else
    Backend backend = Backend::Serial;
#endif
    if (const char* env = std::getenv("CTXFORGE_BACKEND")) {
        if (std::strcmp(env, "serial") == 0) backend = Backend::Serial;
        if (std::strcmp(env, "parallel") == 0 && parallel_available()) {
            backend = Backend::Parallel;
        }
    }
    return backend;
}

Backend& backend_ref() {
    static Backend backend = initial_backend();
    return backend;
}

}  // namespace

bool parallel_available() {
#ifdef CTXFORGE_HAVE_OPENMP
    return true;
#else
    return false;
#endif
}

Backend active_backend() { return backend_ref(); }

void set_backend(Backend backend) {
    if (backend == Backend::Parallel && !parallel_available()) backend = Backend::Serial;
    backend_ref() = backend;
}

std::vector<EmbeddingVector> embed_many_serial(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out(texts.size());
    for (size_t i = 0; i < texts.size(); ++i) out[i] = embed_text(texts[i]);
    return out;
}

std::vector<EmbeddingVector> embed_many(const std::vector<std::string>& texts) {
#ifdef CTXFORGE_HAVE_OPENMP
    if (active_backend() == Backend::Parallel) {
        std::vector<EmbeddingVector> out(texts.size());
        int64_t n = static_cast<int64_t>(texts.size());
#pragma omp parallel for schedule(dynamic, 8)
        for (int64_t i = 0; i < n; ++i) {
            out[static_cast<size_t>(i)] = embed_text(texts[static_cast<size_t>(i)]);
        }
        return out;
    }
#endif
    return embed_many_serial(texts);
}

std::vector<double> cosine_many_serial(const std::vector<EmbeddingVector>& vectors,
                                       const EmbeddingVector& query) {
    std::vector<double> out(vectors.size());
    for (size_t i = 0; i < vectors.size(); ++i) out[i] = cosine(vectors[i], query);
    return out;
}

std::vector<double> cosine_many(const std::vector<EmbeddingVector>& vectors,
                                const EmbeddingVector& query) {
#ifdef CTXFORGE_HAVE_OPENMP
    if (active_backend() == Backend::Parallel) {
        std::vector<double> out(vectors.size());
        int64_t n = static_cast<int64_t>(vectors.size());
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            out[static_cast<size_t>(i)] = cosine(vectors[static_cast<size_t>(i)], query);
        }
        return out;
    }
#endif
    return cosine_many_serial(vectors, query);
}

namespace {

size_t nearest_centroid(const EmbeddingVector& point,
                        const std::vector<EmbeddingVector>& centroids) {
    size_t best = 0;
    double best_sim = -2.0;
    for (size_t c = 0; c < centroids.size(); ++c) {
        double sim = cosine(point, centroids[c]);
        if (sim > best_sim) {
            best_sim = sim;
            best = c;
        }
    }
    return best;
}

}  // namespace

std::vector<size_t> kmeans_assign_serial(const std::vector<EmbeddingVector>& points,
                                         const std::vector<EmbeddingVector>& centroids) {
    std::vector<size_t> out(points.size());
    for (size_t i = 0; i < points.size(); ++i) out[i] = nearest_centroid(points[i], centroids);
    return out;
}

std::vector<size_t> kmeans_assign(const std::vector<EmbeddingVector>& points,
                                  const std::vector<EmbeddingVector>& centroids) {
#ifdef CTXFORGE_HAVE_OPENMP
    if (active_backend() == Backend::Parallel) {
        std::vector<size_t> out(points.size());
        int64_t n = static_cast<int64_t>(points.size());
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            out[static_cast<size_t>(i)] = nearest_centroid(points[static_cast<size_t>(i)], centroids);
        }
        return out;
    }
#endif
    return kmeans_assign_serial(points, centroids);
}

namespace {

// Sums cluster members in ascending point order regardless of thread count,
// so the parallel variant (parallel over clusters) matches the serial one.
EmbeddingVector cluster_mean(const std::vector<EmbeddingVector>& points,
                             const std::vector<size_t>& assignment, size_t cluster,
                             bool& empty) {
    EmbeddingVector mean(kEmbedDim, 0.0);
    size_t count = 0;
    for (size_t i = 0; i < points.size(); ++i) {
        if (assignment[i] != cluster) continue;
        for (size_t d = 0; d < kEmbedDim; ++d) mean[d] += points[i][d];
        ++count;
    }
    empty = count == 0;
    if (count == 0) return mean;
    for (double& x : mean) x /= static_cast<double>(count);
    double norm = l2_norm(mean);
    if (norm > 0.0) {
        for (double& x : mean) x /= norm;
    }
    return mean;
}

}  // namespace

std::vector<EmbeddingVector> kmeans_update_serial(const std::vector<EmbeddingVector>& points,
                                                  const std::vector<size_t>& assignment,
                                                  size_t k, std::vector<size_t>& empty_out) {
    std::vector<EmbeddingVector> centroids(k);
    std::vector<char> empty_flags(k, 0);
    for (size_t c = 0; c < k; ++c) {
        bool empty = false;
        centroids[c] = cluster_mean(points, assignment, c, empty);
        empty_flags[c] = empty ? 1 : 0;
    }
    empty_out.clear();
    for (size_t c = 0; c < k; ++c) {
        if (empty_flags[c]) empty_out.push_back(c);
    }
    return centroids;
}

std::vector<EmbeddingVector> kmeans_update(const std::vector<EmbeddingVector>& points,
                                           const std::vector<size_t>& assignment, size_t k,
                                           std::vector<size_t>& empty_out) {
#ifdef CTXFORGE_HAVE_OPENMP
    if (active_backend() == Backend::Parallel) {
        std::vector<EmbeddingVector> centroids(k);
        std::vector<char> empty_flags(k, 0);
        int64_t kk = static_cast<int64_t>(k);
#pragma omp parallel for schedule(dynamic, 1)
        for (int64_t c = 0; c < kk; ++c) {
            bool empty = false;
            centroids[static_cast<size_t>(c)] =
                cluster_mean(points, assignment, static_cast<size_t>(c), empty);
            empty_flags[static_cast<size_t>(c)] = empty ? 1 : 0;
        }
        empty_out.clear();
        for (size_t c = 0; c < k; ++c) {
            if (empty_flags[c]) empty_out.push_back(c);
        }
        return centroids;
    }
#endif
    return kmeans_update_serial(points, assignment, k, empty_out);
}

}  // namespace ctxforge
