#include <chrono>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ctxforge/embed.hpp"
#include "ctxforge/kernels.hpp"

namespace {

using namespace ctxforge;
using clock_type = std::chrono::steady_clock;

double run_ms(const std::function<void()>& fn, int repeats) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        auto t0 = clock_type::now();
        fn();
        auto t1 = clock_type::now();
        double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (ms < best) best = ms;
    }
    return best;
}

std::vector<std::string> synth_texts(size_t n, size_t tokens_each, uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::vector<std::string> texts(n);
    for (size_t i = 0; i < n; ++i) {
        std::string t;
        for (size_t j = 0; j < tokens_each; ++j) {
            if (j) t += ' ';
            t += "w" + std::to_string(gen() % 5000);
        }
        texts[i] = std::move(t);
    }
    return texts;
}

bool bit_equal(const std::vector<EmbeddingVector>& a, const std::vector<EmbeddingVector>& b) {
    return a == b;
}

void report(const char* name, double serial_ms, double parallel_ms, bool exact) {
    std::printf("%-14s %10.3f ms %10.3f ms %8.2fx   %s\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, exact ? "exact" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs parallel kernel timings"};
    size_t n = 20000;
    size_t tokens_each = 40;
    size_t k = 64;
    int repeats = 3;
    uint64_t seed = 1;
    app.add_option("--n", n, "number of texts / vectors");
    app.add_option("--tokens", tokens_each, "tokens per text");
    app.add_option("--k", k, "centroid count for the k-means kernels");
    app.add_option("--repeats", repeats, "timing repeats (best-of)");
    app.add_option("--seed", seed, "data seed");
    CLI11_PARSE(app, argc, argv);

    if (!parallel_available()) {
        std::printf("parallel backend unavailable (built without OpenMP); "
                    "timings compare identical serial paths\n");
    }

    std::vector<std::string> texts = synth_texts(n, tokens_each, seed);

    std::vector<EmbeddingVector> vec_serial, vec_parallel;
    double embed_s = run_ms([&] { vec_serial = embed_many_serial(texts); }, repeats);
    set_backend(Backend::Parallel);
    double embed_p = run_ms([&] { vec_parallel = embed_many(texts); }, repeats);
    bool embed_ok = bit_equal(vec_serial, vec_parallel);

    const std::vector<EmbeddingVector>& points = vec_serial;
    EmbeddingVector query = points.empty() ? EmbeddingVector{} : points[0];
    std::vector<double> cos_serial, cos_parallel;
    double cos_s = run_ms([&] { cos_serial = cosine_many_serial(points, query); }, repeats);
    double cos_p = run_ms([&] { cos_parallel = cosine_many(points, query); }, repeats);
    bool cos_ok = cos_serial == cos_parallel;

    if (k > points.size()) k = points.size();
    std::vector<EmbeddingVector> centroids(points.begin(),
                                           points.begin() + static_cast<long>(k));
    std::vector<size_t> asg_serial, asg_parallel;
    double asg_s =
        run_ms([&] { asg_serial = kmeans_assign_serial(points, centroids); }, repeats);
    double asg_p = run_ms([&] { asg_parallel = kmeans_assign(points, centroids); }, repeats);
    bool asg_ok = asg_serial == asg_parallel;

    std::vector<size_t> empty_s, empty_p;
    std::vector<EmbeddingVector> upd_serial, upd_parallel;
    double upd_s = run_ms(
        [&] { upd_serial = kmeans_update_serial(points, asg_serial, k, empty_s); }, repeats);
    double upd_p = run_ms(
        [&] { upd_parallel = kmeans_update(points, asg_serial, k, empty_p); }, repeats);
    bool upd_ok = bit_equal(upd_serial, upd_parallel) && empty_s == empty_p;

    std::printf("n=%zu tokens=%zu k=%zu repeats=%d (best-of)\n", n, tokens_each, k, repeats);
    std::printf("%-14s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");
    report("embed_many", embed_s, embed_p, embed_ok);
    report("cosine_many", cos_s, cos_p, cos_ok);
    report("kmeans_assign", asg_s, asg_p, asg_ok);
    report("kmeans_update", upd_s, upd_p, upd_ok);

    return (embed_ok && cos_ok && asg_ok && upd_ok) ? 0 : 1;
}
