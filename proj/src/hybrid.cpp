#include "ctxforge/hybrid.hpp"

#include <algorithm>
#include <chrono>
#include <unordered_set>

#include "ctxforge/common.hpp"
#include "ctxforge/summarize.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

namespace {

bool entry_order(const CacheEntry& a, const CacheEntry& b) {
    double sa = static_cast<double>(a.score);
    double sb = static_cast<double>(b.score);
    if (sa != sb) return sa > sb;
    return a.node_id < b.node_id;
}

void refresh_centroid(CacheSegment& segment) {
    if (segment.entries.empty()) {
        segment.centroid.assign(kEmbedDim, 0.0f);
        return;
    }
    std::vector<EmbeddingVector> vecs;
    vecs.reserve(segment.entries.size());
    for (const auto& e : segment.entries) vecs.push_back(embed_text(e.text));
    segment.centroid = lower(normalized_mean(vecs));
}

AssembledContext assemble_loaded(const CacheSnapshot& snapshot, const std::string& query_id,
                                 const std::unordered_set<std::string>& fresh) {
    AssembledContext ctx;
    ctx.query_id = query_id;
    for (const auto& seg : snapshot.segments) {
        if (!seg.loaded) continue;
        for (const auto& e : seg.entries) {
            AssembledEntry a;
            a.node_id = e.node_id;
            a.text = e.text;
            a.score = static_cast<double>(e.score);
            a.tokens = e.token_count;
            a.retrieved = fresh.count(e.node_id) > 0;
            a.source_doc_id = e.source_doc_id;
            ctx.entries.push_back(std::move(a));
        }
    }
    std::sort(ctx.entries.begin(), ctx.entries.end(),
              [](const AssembledEntry& a, const AssembledEntry& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.node_id < b.node_id;
              });
    ctx.total_tokens = 0;
    for (const auto& e : ctx.entries) ctx.total_tokens += e.tokens;
    return ctx;
}

}  // namespace

HitProbe detect_cache_hit(const CacheSnapshot& snapshot, const EmbeddingVector& q_vec,
                          double tau) {
    HitProbe probe;
    bool any = false;
    double best = 0.0;
    for (const auto& seg : snapshot.segments) {
        if (!seg.loaded) continue;
        for (const auto& e : seg.entries) {
            double c = cosine(embed_text(e.text), q_vec);
            if (!any || c > best) best = c;
            any = true;
        }
    }
    probe.best_similarity = any ? best : 0.0;
    probe.hit = any && probe.best_similarity >= tau;
    return probe;
}

std::string distill_query(const std::string& query_text, const AssembledContext& context) {
    auto q_tokens = tokenize(query_text);
    std::unordered_set<std::string> covered;
    for (const auto& e : context.entries)
        for (auto& tok : tokenize(e.text)) covered.insert(std::move(tok));
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& tok : q_tokens) {
        if (covered.count(tok)) continue;
        if (seen.insert(tok).second) out.push_back(tok);
    }
    if (out.empty()) return join_tokens(q_tokens);
    return join_tokens(out);
}

nlohmann::json context_json(const AssembledContext& context) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : context.entries) {
        entries.push_back({{"node_id", e.node_id},
                           {"origin", e.retrieved ? "retrieved" : "cached"},
                           {"score", e.score},
                           {"text", e.text},
                           {"tokens", e.tokens}});
    }
    return {{"entries", std::move(entries)},
            {"query_id", context.query_id},
            {"total_tokens", context.total_tokens}};
}

nlohmann::json metrics_json(const QueryMetrics& metrics) {
    return {{"context_tokens", metrics.context_tokens},
            {"elapsed_us", metrics.elapsed_us},
            {"evicted", metrics.evicted},
            {"hit", metrics.hit},
            {"query_id", metrics.query_id},
            {"retrieved", metrics.retrieved}};
}

AssembledContext augment(CacheSnapshot& snapshot, const VectorIndex& corpus_index,
                         const std::string& query_id, const std::string& query_text,
                         const QueryBuffer& buffer, const EngineConfig& cfg,
                         QueryMetrics& metrics) {
    metrics.query_id = query_id;
    metrics.hit = false;
    metrics.retrieved = 0;
    metrics.evicted = 0;

    EmbeddingVector q_vec = embed_text(query_text);
    load_segments_for_query(snapshot, q_vec, cfg.max_segments);
    HitProbe probe = detect_cache_hit(snapshot, q_vec, cfg.tau);
    metrics.hit = probe.hit;

    std::unordered_set<std::string> fresh;
    const uint64_t budget = snapshot.total_budget;

    if (!probe.hit) {
        std::string distilled =
            distill_query(query_text, assemble_loaded(snapshot, query_id, {}));
        EmbeddingVector d_vec = embed_text(distilled);
        auto top = index_topm(corpus_index, d_vec, cfg.retrieval_m);
        metrics.retrieved = top.size();
        EmbeddingVector corpus_centroid = lift(snapshot.corpus_centroid);

        struct Fetched {
            CacheEntry entry;
            EmbeddingVector vec;
        };
        std::vector<Fetched> fetched;
        for (const auto& sd : top) {
            const CorpusEntry* ce = snapshot.store.find(sd.doc_id);
            if (ce == nullptr || collect_sentences(ce->tree).empty()) continue;
            Fetched f;
            f.entry.node_id = ce->tree.node_id;
            f.entry.text = summarize_node(ce->tree, cfg.miss_summary_tokens, d_vec);
            f.entry.token_count = count_tokens(f.entry.text);
            f.vec = embed_text(f.entry.text);
            double prior = offline_prior(f.vec, corpus_centroid, cfg.prior_mode);
            f.entry.score =
                static_cast<float>(snippet_score(f.vec, buffer, prior, cfg.alpha));
            f.entry.source_doc_id = ce->doc.doc_id;
            f.entry.doc_version = ce->doc.version;
            fetched.push_back(std::move(f));
        }
        std::sort(fetched.begin(), fetched.end(), [](const Fetched& a, const Fetched& b) {
            return entry_order(a.entry, b.entry);
        });

        // Pin-prefix: accept fetched entries best-first while they fit the
        // total budget (everything unpinned is evictable); the best entry not
        // fitting at all is a configuration error.
        std::vector<Fetched> accepted;
        uint64_t pinned_tokens = 0;
        for (auto& f : fetched) {
            if (pinned_tokens + f.entry.token_count <= budget) {
                pinned_tokens += f.entry.token_count;
                accepted.push_back(std::move(f));
            } else if (accepted.empty()) {
                fail(ErrorKind::Validation,
                     "token_budget " + std::to_string(budget) +
                         " cannot hold the best retrieved summary; minimum viable budget is " +
                         std::to_string(f.entry.token_count));
            } else {
                break;
            }
        }

        if (!accepted.empty()) {
            bool any_loaded = false;
            for (const auto& seg : snapshot.segments) any_loaded = any_loaded || seg.loaded;
            if (!any_loaded) {
                if (snapshot.segments.empty()) {
                    CacheSegment seg;
                    seg.segment_id = 0;
                    snapshot.segments.push_back(std::move(seg));
                }
                snapshot.segments.front().loaded = true;
            }

            std::vector<uint32_t> touched;
            for (auto& f : accepted) {
                for (auto& seg : snapshot.segments) {
                    size_t before = seg.entries.size();
                    seg.entries.erase(
                        std::remove_if(seg.entries.begin(), seg.entries.end(),
                                       [&](const CacheEntry& e) {
                                           return e.node_id == f.entry.node_id;
                                       }),
                        seg.entries.end());
                    if (seg.entries.size() != before) touched.push_back(seg.segment_id);
                }
                CacheSegment* best_seg = nullptr;
                double best_sim = 0.0;
                for (auto& seg : snapshot.segments) {
                    if (!seg.loaded) continue;
                    double c = cosine(lift(seg.centroid), f.vec);
                    if (best_seg == nullptr || c > best_sim ||
                        (c == best_sim && seg.segment_id < best_seg->segment_id)) {
                        best_seg = &seg;
                        best_sim = c;
                    }
                }
                fresh.insert(f.entry.node_id);
                touched.push_back(best_seg->segment_id);
                auto it = std::lower_bound(best_seg->entries.begin(),
                                           best_seg->entries.end(), f.entry, entry_order);
                best_seg->entries.insert(it, std::move(f.entry));
            }
            std::sort(touched.begin(), touched.end());
            touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
            for (uint32_t sid : touched)
                for (auto& seg : snapshot.segments)
                    if (seg.segment_id == sid) refresh_centroid(seg);

            uint64_t loaded_now = snapshot.loaded_tokens();
            if (loaded_now > budget) {
                std::set<std::string> pins(fresh.begin(), fresh.end());
                metrics.evicted += evict(snapshot, loaded_now - budget, pins).size();
            }
        }
    }

    uint64_t loaded_now = snapshot.loaded_tokens();
    if (loaded_now > budget)
        metrics.evicted += evict(snapshot, loaded_now - budget, {}).size();

    AssembledContext ctx = assemble_loaded(snapshot, query_id, fresh);
    metrics.context_tokens = ctx.total_tokens;
    return ctx;
}

Engine::Engine(CacheSnapshot snapshot, EngineConfig cfg, std::optional<PolicyParams> policy)
    : snap_(std::move(snapshot)),
      cfg_(std::move(cfg)),
      buffer_(cfg_.buffer_n),
      policy_(std::move(policy)) {
    cfg_.validate();
    if (cfg_.policy_mode == PolicyMode::Learned && !policy_)
        policy_ = load_policy(cfg_.policy_path);
    rebuild_doc_index();
}

Engine Engine::build(const CorpusStore& store, const EngineConfig& cfg,
                     const PolicyParams* policy) {
    std::optional<PolicyParams> params;
    if (cfg.policy_mode == PolicyMode::Learned) {
        if (policy != nullptr) params = *policy;
        else params = load_policy(cfg.policy_path);
    }
    CacheSnapshot snap = build_cache(store, cfg, params ? &*params : nullptr);
    return Engine(std::move(snap), cfg, std::move(params));
}

void Engine::rebuild_doc_index() {
    doc_index_ = VectorIndex();
    for (const auto& [doc_id, entry] : snap_.store.entries())
        doc_index_.add(doc_id, embed_text(entry.doc.text));
}

std::vector<std::string> Engine::apply(const ChangeEvent& event) {
    auto recomputed = apply_change(snap_, event, cfg_, policy_ptr());
    rebuild_doc_index();
    return recomputed;
}

AssembledContext Engine::answer(const std::string& query_id, const std::string& query_text,
                                QueryMetrics& metrics) {
    auto t0 = std::chrono::steady_clock::now();
    metrics = QueryMetrics{};
    buffer_.push(embed_text(query_text));
    AssembledContext ctx =
        augment(snap_, doc_index_, query_id, query_text, buffer_, cfg_, metrics);
    metrics.elapsed_us = static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::steady_clock::now() - t0)
            .count());
    return ctx;
}

}  // namespace ctxforge
