#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ctxforge {

enum class Level : uint8_t { Document = 0, Paragraph = 1, Sentence = 2 };

const char* level_name(Level level);

struct Document {
    std::string doc_id;
    std::string text;
    std::string topic_hint;
    uint64_t version = 1;
};

// Node ids: "<doc_id>" for the document root, "<doc_id>/p<i>" for paragraph i,
// "<doc_id>/p<i>/s<j>" for sentence j of paragraph i. Internal token_count is
// the sum over children, which equals the tokenizer count of the node text.
struct HierarchyNode {
    std::string node_id;
    Level level = Level::Document;
    std::string text;
    size_t token_count = 0;
    std::vector<HierarchyNode> children;
};

// Paragraphs split on blank lines (empty or whitespace-only lines); sentences
// split at '.', '?' or '!' followed by whitespace or end-of-text. A trailing
// fragment with no terminator is still a sentence. Whitespace-only pieces are
// dropped, so every leaf is non-empty.
std::vector<std::string> split_paragraphs(std::string_view text);
std::vector<std::string> split_sentences(std::string_view paragraph);

HierarchyNode segment_document(const Document& doc);

size_t tree_node_count(const HierarchyNode& root);
size_t tree_sentence_count(const HierarchyNode& root);

const HierarchyNode* find_node(const HierarchyNode& root, std::string_view node_id);

// Pre-order sentence leaves (document order).
std::vector<const HierarchyNode*> collect_sentences(const HierarchyNode& root);

struct CorpusEntry {
    Document doc;
    HierarchyNode tree;
};

// Keyed by doc_id; lexicographic iteration order is what every consumer
// relies on for determinism.
class CorpusStore {
public:
    // Inserts, or replaces when version >= the stored one. Returns whether
    // the store changed.
    bool upsert(const Document& doc);
    bool erase(const std::string& doc_id);
    const CorpusEntry* find(const std::string& doc_id) const;
    size_t size() const { return entries_.size(); }

    const std::map<std::string, CorpusEntry>& entries() const { return entries_; }

    size_t total_tokens() const;
    size_t total_nodes() const;

private:
    std::map<std::string, CorpusEntry> entries_;
};

// Corpus JSONL: one object per line {"doc_id", "text", "topic_hint", "version"};
// topic_hint may be null/absent, version defaults to 1. Blank lines skipped.
// Malformed lines, empty doc_id, version < 1 and duplicate (doc_id, version)
// pairs are Parse errors naming the line; duplicate doc_id otherwise keeps
// the highest version.
CorpusStore parse_corpus_jsonl(std::string_view content);
CorpusStore load_corpus_jsonl(const std::string& path);

}  // namespace ctxforge
