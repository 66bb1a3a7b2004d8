#include <random>
#include <string>
#include <vector>

#include "doctest.h"

#include "ctxforge/common.hpp"
#include "ctxforge/corpus.hpp"
#include "ctxforge/tokenize.hpp"

using namespace ctxforge;

namespace {

Document make_doc(std::string id, std::string text) {
    Document d;
    d.doc_id = std::move(id);
    d.text = std::move(text);
    return d;
}

void check_tree_invariants(const HierarchyNode& node) {
    CHECK(node.token_count == count_tokens(node.text));
    for (const auto& child : node.children) {
        CHECK(static_cast<int>(child.level) == static_cast<int>(node.level) + 1);
        check_tree_invariants(child);
    }
    if (!node.children.empty()) {
        // Children cover the parent's tokens exactly, in order.
        std::vector<std::string> merged;
        for (const auto& child : node.children)
            for (auto& tok : tokenize(child.text)) merged.push_back(std::move(tok));
        CHECK(merged == tokenize(node.text));
        size_t sum = 0;
        for (const auto& child : node.children) sum += child.token_count;
        CHECK(sum == node.token_count);
    }
    if (node.level == Level::Sentence) {
        CHECK(node.children.empty());
        CHECK(!tokenize(node.text).empty());
    }
}

}  // namespace

TEST_CASE("segment_document: one paragraph, one sentence") {
    HierarchyNode tree = segment_document(make_doc("d", "A b."));
    CHECK(tree.level == Level::Document);
    REQUIRE(tree.children.size() == 1);
    REQUIRE(tree.children[0].children.size() == 1);
    CHECK(tree.children[0].children[0].level == Level::Sentence);
    CHECK(tree.children[0].children[0].text == "A b.");
    check_tree_invariants(tree);
}

TEST_CASE("segment_document: blank line splits paragraphs, terminators split sentences") {
    HierarchyNode tree = segment_document(make_doc("d", "A b. C d.\n\nE f."));
    REQUIRE(tree.children.size() == 2);
    CHECK(tree.children[0].children.size() == 2);
    CHECK(tree.children[1].children.size() == 1);
    check_tree_invariants(tree);
}

TEST_CASE("segment_document: unterminated trailing text is a sentence") {
    HierarchyNode tree = segment_document(make_doc("d", "a b c"));
    REQUIRE(tree.children.size() == 1);
    REQUIRE(tree.children[0].children.size() == 1);
    CHECK(tree.children[0].children[0].text == "a b c");
}

TEST_CASE("segment_document: empty text gives a childless document node") {
    HierarchyNode tree = segment_document(make_doc("d", ""));
    CHECK(tree.children.empty());
    CHECK(tree.token_count == 0);
    CHECK(tree.node_id == "d");
}

TEST_CASE("segment_document: question and exclamation marks terminate sentences") {
    HierarchyNode tree = segment_document(make_doc("d", "Really? Yes! Sure."));
    REQUIRE(tree.children.size() == 1);
    CHECK(tree.children[0].children.size() == 3);
    check_tree_invariants(tree);
}

TEST_CASE("segment_document: node ids follow the doc/p<i>/s<j> scheme") {
    HierarchyNode tree = segment_document(make_doc("doc9", "A b. C d.\n\nE f."));
    CHECK(tree.node_id == "doc9");
    CHECK(tree.children[0].node_id == "doc9/p0");
    CHECK(tree.children[0].children[1].node_id == "doc9/p0/s1");
    CHECK(tree.children[1].children[0].node_id == "doc9/p1/s0");
    CHECK(find_node(tree, "doc9/p1/s0") != nullptr);
    CHECK(find_node(tree, "doc9/p9") == nullptr);
}

TEST_CASE("collect_sentences walks leaves in document order") {
    HierarchyNode tree = segment_document(make_doc("d", "One a. Two b.\n\nThree c."));
    auto leaves = collect_sentences(tree);
    REQUIRE(leaves.size() == 3);
    CHECK(leaves[0]->text == "One a.");
    CHECK(leaves[2]->text == "Three c.");
    CHECK(tree_sentence_count(tree) == 3);
    CHECK(tree_node_count(tree) == 1 + 2 + 3);
}

// Random synthetic documents keep every structural invariant.
TEST_CASE("segment_document: invariants hold on fuzzed documents") {
    std::mt19937_64 gen(23);
    for (int iter = 0; iter < 100; ++iter) {
        std::string text;
        size_t paras = gen() % 4;
        for (size_t p = 0; p < paras; ++p) {
            if (p > 0) text += "\n\n";
            size_t sents = 1 + gen() % 4;
            for (size_t s = 0; s < sents; ++s) {
                size_t words = 1 + gen() % 6;
                for (size_t w = 0; w < words; ++w) {
                    text += "w" + std::to_string(gen() % 50);
                    if (w + 1 < words) text += " ";
                }
                const char* terms[] = {". ", "? ", "! ", ".", ""};
                text += terms[gen() % 5];
            }
        }
        check_tree_invariants(segment_document(make_doc("f", text)));
    }
}

TEST_CASE("CorpusStore: upsert keeps the highest version") {
    CorpusStore store;
    Document v1 = make_doc("a", "old text.");
    v1.version = 1;
    Document v3 = make_doc("a", "new text.");
    v3.version = 3;
    Document v2 = make_doc("a", "middle.");
    v2.version = 2;
    CHECK(store.upsert(v1));
    CHECK(store.upsert(v3));
    CHECK_FALSE(store.upsert(v2));  // stale
    REQUIRE(store.find("a") != nullptr);
    CHECK(store.find("a")->doc.version == 3);
    CHECK(store.find("a")->doc.text == "new text.");
    CHECK(store.size() == 1);
    CHECK(store.erase("a"));
    CHECK_FALSE(store.erase("a"));
}

TEST_CASE("parse_corpus_jsonl: happy path and accounting") {
    std::string content =
        R"({"doc_id": "a", "text": "A b. C d.", "topic_hint": "t", "version": 1})"
        "\n"
        R"({"doc_id": "b", "text": "E f.", "topic_hint": null, "version": 2})"
        "\n\n";
    CorpusStore store = parse_corpus_jsonl(content);
    CHECK(store.size() == 2);
    CHECK(store.find("a")->doc.topic_hint == "t");
    CHECK(store.find("b")->doc.version == 2);
    CHECK(store.total_tokens() == 4 + 2);
    CHECK(store.total_nodes() == (1 + 1 + 2) + (1 + 1 + 1));
}

TEST_CASE("parse_corpus_jsonl: duplicate doc_id keeps highest version") {
    std::string content =
        R"({"doc_id": "a", "text": "one.", "version": 2})"
        "\n"
        R"({"doc_id": "a", "text": "two.", "version": 1})"
        "\n";
    CorpusStore store = parse_corpus_jsonl(content);
    CHECK(store.size() == 1);
    CHECK(store.find("a")->doc.version == 2);
    CHECK(store.find("a")->doc.text == "one.");
}

TEST_CASE("parse_corpus_jsonl: rejections name the line") {
    auto expect_parse_error = [](const std::string& content, const char* needle) {
        try {
            parse_corpus_jsonl(content);
            FAIL_CHECK("expected a parse error for: " << needle);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Parse);
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    expect_parse_error("{not json}\n", "line 1");
    expect_parse_error(R"({"doc_id": "", "text": "x.", "version": 1})"
                       "\n",
                       "line 1");
    expect_parse_error(R"({"doc_id": "a", "text": "x.", "version": 0})"
                       "\n",
                       "line 1");
    expect_parse_error(R"({"doc_id": "a", "text": "x.", "version": 1})"
                       "\n"
                       R"({"doc_id": "a", "text": "y.", "version": 1})"
                       "\n",
                       "line 2");
}

TEST_CASE("parse_corpus_jsonl: ingesting the same content twice is identical") {
    std::string content =
        R"({"doc_id": "a", "text": "A b. C?\n\nD!", "version": 1})"
        "\n"
        R"({"doc_id": "b", "text": "E f g.", "version": 4})"
        "\n";
    CorpusStore s1 = parse_corpus_jsonl(content);
    CorpusStore s2 = parse_corpus_jsonl(content);
    REQUIRE(s1.size() == s2.size());
    auto it1 = s1.entries().begin();
    auto it2 = s2.entries().begin();
    for (; it1 != s1.entries().end(); ++it1, ++it2) {
        CHECK(it1->first == it2->first);
        CHECK(it1->second.doc.text == it2->second.doc.text);
        CHECK(it1->second.tree.node_id == it2->second.tree.node_id);
        CHECK(tree_node_count(it1->second.tree) == tree_node_count(it2->second.tree));
    }
}
