#include "ctxforge/summarize.hpp"

#include <algorithm>

#include "ctxforge/common.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

std::string summarize_node(const HierarchyNode& node, size_t target_tokens,
                           const EmbeddingVector& query_vec) {
    if (target_tokens < 1) fail(ErrorKind::Validation, "target_tokens must be >= 1");
    std::vector<const HierarchyNode*> sentences = collect_sentences(node);
    if (sentences.empty()) {
        fail(ErrorKind::Validation, "summarize_node: no sentence descendants under " + node.node_id);
    }

    // (relevance, document position)
    std::vector<std::pair<double, size_t>> order(sentences.size());
    for (size_t i = 0; i < sentences.size(); ++i) {
        order[i] = {cosine(embed_text(sentences[i]->text), query_vec), i};
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    std::vector<size_t> picked;
    size_t used = 0;
    for (const auto& [rel, pos] : order) {
        size_t cost = sentences[pos]->token_count;
        if (picked.empty()) {
            picked.push_back(pos);
            used = cost;
            continue;
        }
        if (used + cost > target_tokens) break;
        picked.push_back(pos);
        used += cost;
    }
    std::sort(picked.begin(), picked.end());

    std::string out;
    for (size_t i = 0; i < picked.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += sentences[picked[i]]->text;
    }
    return out;
}

namespace {

void resolve_into(const HierarchyNode& node, const EmbeddingVector& query_vec,
                  const DescentConfig& cfg, const SummaryBudgets& budgets,
                  std::vector<ContextPiece>& out) {
    if (node.level == Level::Sentence) {
        out.push_back(ContextPiece{node.node_id, node.text, node.level});
        return;
    }
    if (collect_sentences(node).empty()) return;
    size_t budget = node.level == Level::Document ? budgets.doc_summary_tokens
                                                  : budgets.para_summary_tokens;
    std::string summary = summarize_node(node, budget, query_vec);
    if (cosine(embed_text(summary), query_vec) >= cfg.relevance_threshold) {
        out.push_back(ContextPiece{node.node_id, summary, node.level});
        return;
    }
    for (const HierarchyNode& child : node.children) {
        resolve_into(child, query_vec, cfg, budgets, out);
    }
}

}  // namespace

std::vector<ContextPiece> resolve_context(const HierarchyNode& tree,
                                          const EmbeddingVector& query_vec,
                                          const DescentConfig& cfg,
                                          const SummaryBudgets& budgets) {
    std::vector<ContextPiece> out;
    resolve_into(tree, query_vec, cfg, budgets, out);
    return out;
}

double compression_ratio(size_t original_tokens, size_t emitted_tokens) {
    if (original_tokens < 1) fail(ErrorKind::Validation, "original_tokens must be >= 1");
    return 1.0 - static_cast<double>(emitted_tokens) / static_cast<double>(original_tokens);
}

}  // namespace ctxforge
