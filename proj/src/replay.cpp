#include "ctxforge/replay.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "ctxforge/common.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

namespace {

uint64_t nearest_rank(std::vector<uint64_t> samples, double percentile) {
    if (samples.empty()) return 0;
    std::sort(samples.begin(), samples.end());
    auto rank = static_cast<size_t>(
        std::ceil(percentile / 100.0 * static_cast<double>(samples.size())));
    if (rank < 1) rank = 1;
    if (rank > samples.size()) rank = samples.size();
    return samples[rank - 1];
}

struct LocatedSentence {
    std::string doc_id;
    const HierarchyNode* node = nullptr;
};

LocatedSentence locate_sentence(const CorpusStore& store, const std::string& node_id) {
    LocatedSentence found;
    size_t slash = node_id.find('/');
    if (slash != std::string::npos) {
        if (const CorpusEntry* entry = store.find(node_id.substr(0, slash))) {
            if (const HierarchyNode* node = find_node(entry->tree, node_id)) {
                found.doc_id = entry->doc.doc_id;
                found.node = node;
                return found;
            }
        }
    }
    for (const auto& [doc_id, entry] : store.entries()) {
        if (const HierarchyNode* node = find_node(entry.tree, node_id)) {
            found.doc_id = doc_id;
            found.node = node;
            return found;
        }
    }
    return found;
}

double query_retention(const CacheSnapshot& snapshot, const AssembledContext& context,
                       const std::vector<std::string>& critical_ids) {
    size_t retained = 0;
    for (const auto& cid : critical_ids) {
        LocatedSentence loc = locate_sentence(snapshot.store, cid);
        if (loc.node == nullptr) continue;  // critical no longer in the corpus

        auto sentence_tokens = tokenize(loc.node->text);
        std::vector<std::string> rare;
        for (const auto& tok : sentence_tokens) {
            auto it = snapshot.df_table.find(tok);
            uint32_t df = it == snapshot.df_table.end() ? 1 : it->second;
            if (df == 1) rare.push_back(tok);
        }
        const auto& must_cover = rare.empty() ? sentence_tokens : rare;

        std::unordered_set<std::string> covered;
        for (const auto& e : context.entries) {
            if (e.source_doc_id != loc.doc_id) continue;
            for (auto& tok : tokenize(e.text)) covered.insert(std::move(tok));
        }
        bool ok = true;
        for (const auto& tok : must_cover)
            if (covered.count(tok) == 0) ok = false;
        if (ok) ++retained;
    }
    return critical_ids.empty()
               ? 0.0
               : static_cast<double>(retained) / static_cast<double>(critical_ids.size());
}

}  // namespace

ReplayReport run_replay(Engine& engine, const std::vector<TraceRecord>& trace) {
    std::set<std::string> seen_ids;
    for (const auto& rec : trace)
        if (!seen_ids.insert(rec.query_id).second)
            fail(ErrorKind::Validation,
                 "trace has duplicate query_id '" + rec.query_id + "'");

    ReplayReport report;
    std::vector<uint64_t> latencies;
    uint64_t hits = 0;
    uint64_t token_sum = 0;
    double retention_sum = 0.0;
    uint64_t retention_count = 0;

    for (const auto& rec : trace) {
        QueryOutcome outcome;
        AssembledContext ctx = engine.answer(rec.query_id, rec.text, outcome.metrics);
        if (!rec.critical_sentence_ids.empty()) {
            outcome.retention_applicable = true;
            outcome.retention =
                query_retention(engine.snapshot(), ctx, rec.critical_sentence_ids);
            retention_sum += outcome.retention;
            ++retention_count;
        }
        latencies.push_back(outcome.metrics.elapsed_us);
        hits += outcome.metrics.hit ? 1 : 0;
        token_sum += outcome.metrics.context_tokens;
        report.aggregates.retrieval_calls += outcome.metrics.retrieved;
        report.aggregates.evictions += outcome.metrics.evicted;
        report.queries.push_back(std::move(outcome));
    }

    auto& agg = report.aggregates;
    agg.query_count = trace.size();
    agg.p50_latency_us = nearest_rank(latencies, 50.0);
    agg.p99_latency_us = nearest_rank(latencies, 99.0);
    if (!trace.empty()) {
        agg.hit_rate = static_cast<double>(hits) / static_cast<double>(trace.size());
        agg.mean_context_tokens =
            static_cast<double>(token_sum) / static_cast<double>(trace.size());
    }
    const auto& snap = engine.snapshot();
    size_t corpus_tokens = snap.store.total_tokens();
    if (corpus_tokens > 0)
        agg.compression_ratio =
            1.0 - static_cast<double>(snap.total_entry_tokens()) /
                      static_cast<double>(corpus_tokens);
    if (retention_count > 0) {
        agg.retention_applicable = true;
        agg.retention = retention_sum / static_cast<double>(retention_count);
    }
    return report;
}

nlohmann::json report_json(const ReplayReport& report) {
    nlohmann::json queries = nlohmann::json::array();
    for (const auto& q : report.queries) {
        nlohmann::json row = metrics_json(q.metrics);
        row["retention"] =
            q.retention_applicable ? nlohmann::json(q.retention) : nlohmann::json();
        queries.push_back(std::move(row));
    }
    const auto& agg = report.aggregates;
    nlohmann::json aggregates = {
        {"compression_ratio", agg.compression_ratio},
        {"evictions", agg.evictions},
        {"hit_rate", agg.hit_rate},
        {"mean_context_tokens", agg.mean_context_tokens},
        {"p50_latency_us", agg.p50_latency_us},
        {"p99_latency_us", agg.p99_latency_us},
        {"query_count", agg.query_count},
        {"retention",
         agg.retention_applicable ? nlohmann::json(agg.retention) : nlohmann::json()},
        {"retrieval_calls", agg.retrieval_calls}};
    return {{"aggregates", std::move(aggregates)}, {"queries", std::move(queries)}};
}

}  // namespace ctxforge
