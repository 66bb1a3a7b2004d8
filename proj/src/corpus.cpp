#include "ctxforge/corpus.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ctxforge/common.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

namespace {

bool is_blank(std::string_view line) {
    for (unsigned char c : line) {
        if (!std::isspace(c)) return false;
    }
    return true;
}

std::string_view trim(std::string_view s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

const char* level_name(Level level) {
    switch (level) {
        case Level::Document: return "document";
        case Level::Paragraph: return "paragraph";
        case Level::Sentence: return "sentence";
    }
    return "unknown";
}

std::vector<std::string> split_paragraphs(std::string_view text) {
    std::vector<std::string> paragraphs;
    std::string current;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        std::string_view line =
            nl == std::string_view::npos ? text.substr(pos) : text.substr(pos, nl - pos);
        if (is_blank(line)) {
            if (!is_blank(current)) paragraphs.push_back(current);
            current.clear();
        } else {
            if (!current.empty()) current.push_back('\n');
            current.append(line);
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    if (!is_blank(current)) paragraphs.push_back(current);
    return paragraphs;
}

std::vector<std::string> split_sentences(std::string_view paragraph) {
    std::vector<std::string> sentences;
    size_t start = 0;
    for (size_t i = 0; i < paragraph.size(); ++i) {
        char c = paragraph[i];
        if (c != '.' && c != '?' && c != '!') continue;
        bool at_end = i + 1 == paragraph.size();
        if (!at_end && !std::isspace(static_cast<unsigned char>(paragraph[i + 1]))) continue;
        std::string_view piece = trim(paragraph.substr(start, i + 1 - start));
        if (!piece.empty()) sentences.emplace_back(piece);
        start = i + 1;
    }
    if (start < paragraph.size()) {
        std::string_view piece = trim(paragraph.substr(start));
        if (!piece.empty()) sentences.emplace_back(piece);
    }
    return sentences;
}

HierarchyNode segment_document(const Document& doc) {
    HierarchyNode root;
    root.node_id = doc.doc_id;
    root.level = Level::Document;
    root.text = doc.text;
    std::vector<std::string> paragraphs = split_paragraphs(doc.text);
    for (size_t p = 0; p < paragraphs.size(); ++p) {
        HierarchyNode para;
        para.node_id = doc.doc_id + "/p" + std::to_string(p);
        para.level = Level::Paragraph;
        para.text = paragraphs[p];
        std::vector<std::string> sentences = split_sentences(paragraphs[p]);
        for (size_t s = 0; s < sentences.size(); ++s) {
            HierarchyNode sent;
            sent.node_id = para.node_id + "/s" + std::to_string(s);
            sent.level = Level::Sentence;
            sent.text = sentences[s];
            sent.token_count = count_tokens(sent.text);
            para.token_count += sent.token_count;
            para.children.push_back(std::move(sent));
        }
        if (para.children.empty()) continue;
        root.token_count += para.token_count;
        root.children.push_back(std::move(para));
    }
    return root;
}

size_t tree_node_count(const HierarchyNode& root) {
    size_t n = 1;
    for (const auto& child : root.children) n += tree_node_count(child);
    return n;
}

size_t tree_sentence_count(const HierarchyNode& root) {
    if (root.level == Level::Sentence) return 1;
    size_t n = 0;
    for (const auto& child : root.children) n += tree_sentence_count(child);
    return n;
}

const HierarchyNode* find_node(const HierarchyNode& root, std::string_view node_id) {
    if (root.node_id == node_id) return &root;
    for (const auto& child : root.children) {
        if (const HierarchyNode* hit = find_node(child, node_id)) return hit;
    }
    return nullptr;
}

namespace {

void collect_sentences_into(const HierarchyNode& node,
                            std::vector<const HierarchyNode*>& out) {
    if (node.level == Level::Sentence) {
        out.push_back(&node);
        return;
    }
    for (const auto& child : node.children) collect_sentences_into(child, out);
}

}  // namespace

std::vector<const HierarchyNode*> collect_sentences(const HierarchyNode& root) {
    std::vector<const HierarchyNode*> out;
    collect_sentences_into(root, out);
    return out;
}

bool CorpusStore::upsert(const Document& doc) {
    auto it = entries_.find(doc.doc_id);
    if (it != entries_.end() && doc.version < it->second.doc.version) return false;
    CorpusEntry entry;
    entry.doc = doc;
    entry.tree = segment_document(doc);
    entries_[doc.doc_id] = std::move(entry);
    return true;
}

bool CorpusStore::erase(const std::string& doc_id) {
    return entries_.erase(doc_id) > 0;
}

const CorpusEntry* CorpusStore::find(const std::string& doc_id) const {
    auto it = entries_.find(doc_id);
    return it == entries_.end() ? nullptr : &it->second;
}

size_t CorpusStore::total_tokens() const {
    size_t n = 0;
    for (const auto& [id, entry] : entries_) n += entry.tree.token_count;
    return n;
}

size_t CorpusStore::total_nodes() const {
    size_t n = 0;
    for (const auto& [id, entry] : entries_) n += tree_node_count(entry.tree);
    return n;
}

namespace {

Document parse_corpus_line(const nlohmann::json& obj, size_t line_no) {
    auto bad = [&](const std::string& what) {
        fail(ErrorKind::Parse, "corpus line " + std::to_string(line_no) + ": " + what);
    };
    if (!obj.is_object()) bad("expected a JSON object");
    if (!obj.contains("doc_id") || !obj["doc_id"].is_string()) bad("missing string doc_id");
    if (!obj.contains("text") || !obj["text"].is_string()) bad("missing string text");
    Document doc;
    doc.doc_id = obj["doc_id"].get<std::string>();
    if (doc.doc_id.empty()) bad("doc_id must be non-empty");
    doc.text = obj["text"].get<std::string>();
    if (obj.contains("topic_hint") && obj["topic_hint"].is_string()) {
        doc.topic_hint = obj["topic_hint"].get<std::string>();
    }
    if (obj.contains("version") && !obj["version"].is_null()) {
        if (!obj["version"].is_number_integer() && !obj["version"].is_number_unsigned()) {
            bad("version must be an integer");
        }
        int64_t v = obj["version"].get<int64_t>();
        if (v < 1) bad("version must be >= 1");
        doc.version = static_cast<uint64_t>(v);
    }
    return doc;
}

}  // namespace

CorpusStore parse_corpus_jsonl(std::string_view content) {
    CorpusStore store;
    std::set<std::pair<std::string, uint64_t>> seen;
    size_t pos = 0;
    size_t line_no = 0;
    while (pos <= content.size()) {
        size_t nl = content.find('\n', pos);
        std::string_view line =
            nl == std::string_view::npos ? content.substr(pos) : content.substr(pos, nl - pos);
        ++line_no;
        if (!is_blank(line)) {
            nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
            if (obj.is_discarded()) {
                fail(ErrorKind::Parse, "corpus line " + std::to_string(line_no) + ": invalid JSON");
            }
            Document doc = parse_corpus_line(obj, line_no);
            if (!seen.insert({doc.doc_id, doc.version}).second) {
                fail(ErrorKind::Parse, "corpus line " + std::to_string(line_no) +
                                           ": duplicate (doc_id, version) pair " + doc.doc_id +
                                           " v" + std::to_string(doc.version));
            }
            store.upsert(doc);
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return store;
}

CorpusStore load_corpus_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open corpus file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_corpus_jsonl(buf.str());
}

}  // namespace ctxforge
