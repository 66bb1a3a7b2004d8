#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ctxforge/corpus.hpp"
#include "ctxforge/policy.hpp"

namespace ctxforge {

// Synthetic corpus shape. Every topic owns a disjoint vocabulary
// ("t<T>w<J>"-style; names may carry a suffix so that no two planted tokens
// share an embedding bucket). Critical sentences carry five distinct topic
// tokens plus one unique answer token (df = 1); filler sentences carry one
// topic token and six sentence-unique junk tokens, with a shared cross-topic
// token on every fifth filler. One extra document per topic is generated but
// withheld from the corpus (hidden vocabulary), providing guaranteed-miss
// queries.
struct CorpusSpec {
    uint64_t n_topics = 3;
    uint64_t docs_per_topic = 8;
    uint64_t sentences_per_doc = 12;
    uint64_t critical_per_doc = 2;
    uint64_t vocab_per_topic = 8;
    uint64_t shared_vocab = 6;
    uint64_t seed = 7;
    uint64_t trace_queries = 0;  // 0 = two queries per live critical sentence

    void validate() const;
};

CorpusSpec parse_corpus_spec(std::string_view json_text);
CorpusSpec load_corpus_spec(const std::string& path);

struct TraceRecord {
    std::string query_id;
    std::string text;
    std::vector<std::string> relevant_doc_ids;
    std::vector<std::string> critical_sentence_ids;
};

struct GroundTruth {
    std::string query_id;
    std::vector<std::string> answer_tokens;
    std::vector<std::string> critical_sentence_ids;
    std::vector<std::string> source_doc_ids;
};

struct PlantedCritical {
    std::string doc_id;
    std::string node_id;
    std::string answer_token;
    std::vector<std::string> topic_tokens;  // the sentence's topic draws, in order
    uint64_t topic = 0;
    bool withheld = false;
};

struct GeneratedCorpus {
    CorpusStore store;  // live documents only
    std::vector<TraceRecord> trace;
    std::vector<GroundTruth> truth;  // parallel to trace
    std::vector<PlantedCritical> criticals;  // live then withheld, generation order
    double bucket_collision_rate = 0.0;  // fraction of distinct corpus tokens
                                         // sharing an embedding bucket

    std::string corpus_jsonl;
    std::string trace_jsonl;
    std::string truth_jsonl;
};

// Fully determined by spec.seed. The trace's first half are in-cache queries
// (subsets of a live critical sentence's topic tokens plus its answer token);
// the second half are miss queries built the same way from withheld docs.
GeneratedCorpus generate(const CorpusSpec& spec);

std::string corpus_to_jsonl(const CorpusStore& store);
std::string trace_to_jsonl(const std::vector<TraceRecord>& trace);
std::string truth_to_jsonl(const std::vector<GroundTruth>& truth);

std::vector<TraceRecord> parse_trace_jsonl(std::string_view content);
std::vector<TraceRecord> load_trace_jsonl(const std::string& path);

// Episode factory for policy training: each episode seeds one fresh synthetic
// document (same recipe as generate) plus a query vector (doc centroid or a
// critical-focused query, 50/50); budget = ceil(1.5 x document tokens),
// criticals = the document's planted sentences.
std::unique_ptr<CompressionEnv> make_training_env(const CorpusSpec& spec,
                                                  double lambda_cost);

}  // namespace ctxforge
