#include "ctxforge/syncorpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "ctxforge/common.hpp"
#include "ctxforge/embed.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

namespace {

std::string junk_token(uint64_t t, uint64_t d, uint64_t s, uint64_t k) {
    return "x" + std::to_string(t) + "d" + std::to_string(d) + "s" + std::to_string(s) +
           "n" + std::to_string(k);
}

// Planted-signal tokens (topic, hidden, shared, answer) get pairwise-distinct
// embedding buckets: a numeric suffix is appended until the bucket is free.
// Otherwise FNV on these short sequential names aliases families onto each
// other (e.g. a withheld answer landing in a live topic bucket), which lets
// miss queries score against content they share no vocabulary with. Junk
// tokens stay unplanned; their collisions are diffuse, measured, and
// reported. Purely a function of the spec's dimensions, so token names are
// stable across seeds.
class TokenPlan {
public:
    explicit TokenPlan(const CorpusSpec& spec) {
        for (uint64_t j = 0; j < spec.shared_vocab; ++j)
            shareds_.push_back(alloc("shared" + std::to_string(j)));
        for (uint64_t t = 0; t < spec.n_topics; ++t) {
            for (uint64_t j = 0; j < spec.vocab_per_topic; ++j)
                topics_.push_back(alloc("t" + std::to_string(t) + "w" + std::to_string(j)));
            for (uint64_t j = 0; j < spec.vocab_per_topic; ++j)
                hiddens_.push_back(alloc("t" + std::to_string(t) + "h" + std::to_string(j)));
        }
        vocab_ = spec.vocab_per_topic;
        docs_ = spec.docs_per_topic + 1;  // +1: the withheld document per topic
        crits_ = spec.critical_per_doc;
        for (uint64_t t = 0; t < spec.n_topics; ++t)
            for (uint64_t d = 0; d < docs_; ++d)
                for (uint64_t c = 0; c < crits_; ++c)
                    answers_.push_back(alloc("ans" + std::to_string(t) + "d" +
                                             std::to_string(d) + "c" + std::to_string(c)));
    }

    const std::string& topic(uint64_t t, uint64_t j) const {
        return topics_[t * vocab_ + j];
    }
    const std::string& hidden(uint64_t t, uint64_t j) const {
        return hiddens_[t * vocab_ + j];
    }
    const std::string& shared(uint64_t j) const { return shareds_[j]; }
    const std::string& answer(uint64_t t, uint64_t d, uint64_t c) const {
        return answers_[(t * docs_ + d) * crits_ + c];
    }

private:
    std::string alloc(std::string base) {
        // Specs larger than the bucket space can't be collision-free; give up
        // on planning once full rather than loop forever.
        if (used_.size() >= kEmbedDim) return base;
        std::string candidate = base;
        for (uint64_t suffix = 2; !used_.insert(token_bucket(candidate)).second; ++suffix)
            candidate = base + "v" + std::to_string(suffix);
        return candidate;
    }

    std::set<size_t> used_;
    uint64_t vocab_ = 0, docs_ = 0, crits_ = 0;
    std::vector<std::string> topics_, hiddens_, shareds_, answers_;
};

// A critical sentence carries this many distinct topic tokens (fewer when the
// vocabulary is smaller). With the answer token that makes six, few enough
// that default truncation keeps the sentence intact.
constexpr uint64_t kCriticalTopicTokens = 5;
// Filler sentences: one topic token, six single-use junk tokens, and a shared
// token on every fifth filler. Junk-heavy fillers sink below criticals in
// centroid-prior ranking and carry the bulk of the compressible mass.
constexpr uint64_t kFillerJunkTokens = 6;
constexpr uint64_t kSharedEvery = 5;

// One synthetic document; gen is consumed in a fixed order so the whole
// corpus is a function of the master seed. Critical sentences sit at
// floor(i * sentences / criticals).
Document make_document(const CorpusSpec& spec, const TokenPlan& plan, uint64_t t, uint64_t d,
                       bool withheld, std::mt19937_64& gen,
                       std::vector<PlantedCritical>& crits_out) {
    Document doc;
    doc.doc_id = withheld ? "wdoc" + std::to_string(t)
                          : "doc" + std::to_string(t) + "_" + std::to_string(d);
    doc.topic_hint = "topic" + std::to_string(t);
    doc.version = 1;

    std::set<uint64_t> crit_positions;
    for (uint64_t i = 0; i < spec.critical_per_doc; ++i)
        crit_positions.insert(i * spec.sentences_per_doc / spec.critical_per_doc);

    auto vocab_tok = [&](uint64_t j) -> const std::string& {
        return withheld ? plan.hidden(t, j) : plan.topic(t, j);
    };

    struct CritMeta {
        uint64_t index;
        std::string answer;
        std::vector<std::string> topic_tokens;
    };
    std::vector<CritMeta> metas;
    std::vector<std::string> sentences;
    uint64_t crit_index = 0;
    uint64_t filler_index = 0;
    for (uint64_t s = 0; s < spec.sentences_per_doc; ++s) {
        std::vector<std::string> toks;
        if (crit_positions.count(s)) {
            CritMeta meta;
            meta.index = crit_index;
            // Distinct draws via partial Fisher-Yates; order stays random so a
            // query's leading k tokens form a uniform k-subset.
            uint64_t draws = std::min(kCriticalTopicTokens, spec.vocab_per_topic);
            std::vector<uint64_t> idx(spec.vocab_per_topic);
            std::iota(idx.begin(), idx.end(), 0);
            for (uint64_t i = 0; i < draws; ++i) {
                std::swap(idx[i], idx[i + gen() % (spec.vocab_per_topic - i)]);
                meta.topic_tokens.push_back(vocab_tok(idx[i]));
                toks.push_back(meta.topic_tokens.back());
            }
            meta.answer = plan.answer(t, d, crit_index);
            toks.push_back(meta.answer);
            metas.push_back(std::move(meta));
            ++crit_index;
        } else {
            toks.push_back(vocab_tok(gen() % spec.vocab_per_topic));
            for (uint64_t k = 0; k < kFillerJunkTokens; ++k)
                toks.push_back(junk_token(t, d, s, k));
            if (spec.shared_vocab > 0 && filler_index % kSharedEvery == 0)
                toks.push_back(plan.shared(gen() % spec.shared_vocab));
            ++filler_index;
        }
        sentences.push_back(join_tokens(toks) + ".");
    }

    std::string text;
    for (size_t s = 0; s < sentences.size(); ++s) {
        if (s > 0) text += (s % 3 == 0) ? "\n\n" : " ";
        text += sentences[s];
    }
    doc.text = std::move(text);

    // Recover each critical's node id from the real segmenter rather than by
    // arithmetic, so id derivation can never drift from corpus splitting.
    HierarchyNode tree = segment_document(doc);
    auto leaves = collect_sentences(tree);
    for (const auto& meta : metas) {
        PlantedCritical crit;
        crit.doc_id = doc.doc_id;
        crit.answer_token = meta.answer;
        crit.topic_tokens = meta.topic_tokens;
        crit.topic = t;
        crit.withheld = withheld;
        for (const auto* leaf : leaves) {
            auto toks = tokenize(leaf->text);
            if (std::find(toks.begin(), toks.end(), meta.answer) != toks.end()) {
                crit.node_id = leaf->node_id;
                break;
            }
        }
        if (crit.node_id.empty())
            fail(ErrorKind::State, "generator lost a planted critical sentence");
        crits_out.push_back(std::move(crit));
    }
    return doc;
}

std::string query_text_for(const PlantedCritical& crit, std::mt19937_64& gen) {
    uint64_t k = 2 + gen() % 3;  // 2..4 topic tokens, varying hit strength
    std::vector<std::string> toks;
    std::unordered_set<std::string> seen;
    for (const auto& tok : crit.topic_tokens) {
        if (toks.size() >= k) break;
        if (seen.insert(tok).second) toks.push_back(tok);
    }
    toks.push_back(crit.answer_token);
    return join_tokens(toks);
}

template <typename T>
void shuffle_with(std::vector<T>& v, std::mt19937_64& gen) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = gen() % i;
        std::swap(v[i - 1], v[j]);
    }
}

nlohmann::json string_array(const std::vector<std::string>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : v) arr.push_back(s);
    return arr;
}

}  // namespace

void CorpusSpec::validate() const {
    auto need = [](bool ok, const char* msg) {
        if (!ok) fail(ErrorKind::Validation, msg);
    };
    need(n_topics >= 1, "n_topics must be >= 1");
    need(docs_per_topic >= 1, "docs_per_topic must be >= 1");
    need(sentences_per_doc >= 1, "sentences_per_doc must be >= 1");
    need(critical_per_doc >= 1, "critical_per_doc must be >= 1");
    need(critical_per_doc <= sentences_per_doc,
         "critical_per_doc must be <= sentences_per_doc");
    need(vocab_per_topic >= 1, "vocab_per_topic must be >= 1");
}

CorpusSpec parse_corpus_spec(std::string_view json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        fail(ErrorKind::Parse, "corpus spec must be a JSON object");
    static const std::set<std::string> kKnown = {
        "n_topics",        "docs_per_topic", "sentences_per_doc",
        "critical_per_doc", "vocab_per_topic", "shared_vocab",
        "seed",            "trace_queries"};
    for (const auto& [key, value] : j.items())
        if (kKnown.count(key) == 0)
            fail(ErrorKind::Parse, "corpus spec has unknown key '" + key + "'");
    CorpusSpec spec;
    auto get_u64 = [&](const char* key, uint64_t& out) {
        if (!j.contains(key)) return;
        if (!j[key].is_number_unsigned())
            fail(ErrorKind::Parse, std::string("corpus spec key '") + key +
                                       "' must be a non-negative integer");
        out = j[key].get<uint64_t>();
    };
    get_u64("n_topics", spec.n_topics);
    get_u64("docs_per_topic", spec.docs_per_topic);
    get_u64("sentences_per_doc", spec.sentences_per_doc);
    get_u64("critical_per_doc", spec.critical_per_doc);
    get_u64("vocab_per_topic", spec.vocab_per_topic);
    get_u64("shared_vocab", spec.shared_vocab);
    get_u64("seed", spec.seed);
    get_u64("trace_queries", spec.trace_queries);
    spec.validate();
    return spec;
}

CorpusSpec load_corpus_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open corpus spec: " + path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    return parse_corpus_spec(content);
}

GeneratedCorpus generate(const CorpusSpec& spec) {
    spec.validate();
    GeneratedCorpus out;
    std::mt19937_64 gen(spec.seed);
    TokenPlan plan(spec);

    std::vector<PlantedCritical> live;
    std::vector<PlantedCritical> withheld;
    for (uint64_t t = 0; t < spec.n_topics; ++t) {
        for (uint64_t d = 0; d < spec.docs_per_topic; ++d) {
            Document doc = make_document(spec, plan, t, d, /*withheld=*/false, gen, live);
            out.store.upsert(doc);
        }
        // one withheld doc per topic, hidden vocabulary, absent from the store
        make_document(spec, plan, t, spec.docs_per_topic, /*withheld=*/true, gen, withheld);
    }

    std::vector<PlantedCritical> live_order = live;
    std::vector<PlantedCritical> miss_order = withheld;
    shuffle_with(live_order, gen);
    shuffle_with(miss_order, gen);

    uint64_t total = spec.trace_queries != 0
                         ? spec.trace_queries
                         : 2 * static_cast<uint64_t>(live_order.size());
    uint64_t n_in = (total + 1) / 2;
    for (uint64_t q = 0; q < total; ++q) {
        bool in_cache = q < n_in;
        const PlantedCritical& crit =
            in_cache ? live_order[q % live_order.size()]
                     : miss_order[(q - n_in) % miss_order.size()];
        TraceRecord rec;
        rec.query_id = "q" + std::to_string(q);
        rec.text = query_text_for(crit, gen);
        GroundTruth truth;
        truth.query_id = rec.query_id;
        truth.answer_tokens.push_back(crit.answer_token);
        if (in_cache) {
            rec.relevant_doc_ids.push_back(crit.doc_id);
            rec.critical_sentence_ids.push_back(crit.node_id);
            truth.critical_sentence_ids.push_back(crit.node_id);
            truth.source_doc_ids.push_back(crit.doc_id);
        }
        out.trace.push_back(std::move(rec));
        out.truth.push_back(std::move(truth));
    }

    out.criticals = std::move(live);
    for (auto& c : withheld) out.criticals.push_back(std::move(c));

    // Collision rate: distinct corpus tokens whose embedding bucket is shared
    // with another distinct token.
    {
        std::unordered_set<std::string> distinct;
        for (const auto& [doc_id, entry] : out.store.entries())
            for (auto& tok : tokenize(entry.doc.text)) distinct.insert(std::move(tok));
        std::unordered_map<size_t, uint64_t> bucket_counts;
        for (const auto& tok : distinct) bucket_counts[token_bucket(tok)] += 1;
        uint64_t colliding = 0;
        for (const auto& tok : distinct)
            if (bucket_counts[token_bucket(tok)] > 1) ++colliding;
        out.bucket_collision_rate =
            distinct.empty() ? 0.0
                             : static_cast<double>(colliding) /
                                   static_cast<double>(distinct.size());
    }

    out.corpus_jsonl = corpus_to_jsonl(out.store);
    out.trace_jsonl = trace_to_jsonl(out.trace);
    out.truth_jsonl = truth_to_jsonl(out.truth);
    return out;
}

std::string corpus_to_jsonl(const CorpusStore& store) {
    std::string out;
    for (const auto& [doc_id, entry] : store.entries()) {
        nlohmann::json j = {{"doc_id", entry.doc.doc_id},
                            {"text", entry.doc.text},
                            {"topic_hint", entry.doc.topic_hint},
                            {"version", entry.doc.version}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string trace_to_jsonl(const std::vector<TraceRecord>& trace) {
    std::string out;
    for (const auto& rec : trace) {
        nlohmann::json j = {{"query_id", rec.query_id},
                            {"text", rec.text},
                            {"relevant_doc_ids", string_array(rec.relevant_doc_ids)},
                            {"critical_sentence_ids",
                             string_array(rec.critical_sentence_ids)}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string truth_to_jsonl(const std::vector<GroundTruth>& truth) {
    std::string out;
    for (const auto& rec : truth) {
        nlohmann::json j = {{"query_id", rec.query_id},
                            {"answer_tokens", string_array(rec.answer_tokens)},
                            {"critical_sentence_ids",
                             string_array(rec.critical_sentence_ids)},
                            {"source_doc_ids", string_array(rec.source_doc_ids)}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<TraceRecord> parse_trace_jsonl(std::string_view content) {
    std::vector<TraceRecord> trace;
    std::set<std::string> seen_ids;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= content.size()) {
        size_t end = content.find('\n', pos);
        std::string_view line = end == std::string_view::npos
                                    ? content.substr(pos)
                                    : content.substr(pos, end - pos);
        pos = end == std::string_view::npos ? content.size() + 1 : end + 1;
        ++line_no;
        bool blank = true;
        for (char c : line)
            if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
        if (blank) continue;

        auto parse_err = [&](const std::string& msg) {
            fail(ErrorKind::Parse,
                 "trace line " + std::to_string(line_no) + ": " + msg);
        };
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) parse_err("invalid JSON object");
        if (!j.contains("query_id") || !j["query_id"].is_string() ||
            j["query_id"].get<std::string>().empty())
            parse_err("missing query_id");
        if (!j.contains("text") || !j["text"].is_string()) parse_err("missing text");
        TraceRecord rec;
        rec.query_id = j["query_id"];
        rec.text = j["text"];
        auto read_list = [&](const char* key, std::vector<std::string>& out_list) {
            if (!j.contains(key) || j[key].is_null()) return;
            if (!j[key].is_array()) parse_err(std::string(key) + " must be an array");
            for (const auto& item : j[key]) {
                if (!item.is_string()) parse_err(std::string(key) + " must hold strings");
                out_list.push_back(item.get<std::string>());
            }
        };
        read_list("relevant_doc_ids", rec.relevant_doc_ids);
        read_list("critical_sentence_ids", rec.critical_sentence_ids);
        if (!seen_ids.insert(rec.query_id).second)
            parse_err("duplicate query_id '" + rec.query_id + "'");
        trace.push_back(std::move(rec));
    }
    return trace;
}

std::vector<TraceRecord> load_trace_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open trace: " + path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    return parse_trace_jsonl(content);
}

namespace {

// Training environment: one fresh synthetic document per episode with the
// document's planted criticals as the reward's critical set.
class DocCompressionEnv : public CompressionEnv {
public:
    DocCompressionEnv(CorpusSpec spec, double lambda_cost)
        : spec_(std::move(spec)), plan_(spec_), lambda_(lambda_cost) {
        spec_.validate();
        reset(0);
    }

    void reset(uint64_t episode_seed) override {
        std::mt19937_64 gen(fnv1a64("docenv", episode_seed));
        uint64_t t = gen() % spec_.n_topics;
        uint64_t d = gen() % spec_.docs_per_topic;
        std::vector<PlantedCritical> crits;
        Document doc = make_document(spec_, plan_, t, d, /*withheld=*/false, gen, crits);
        tree_ = segment_document(doc);

        EmbeddingVector query;
        if (gen() % 2 == 0) {
            std::vector<EmbeddingVector> vecs;
            for (const auto* s : collect_sentences(tree_)) vecs.push_back(embed_text(s->text));
            query = normalized_mean(vecs);
        } else {
            const auto& crit = crits[gen() % crits.size()];
            std::vector<std::string> toks = crit.topic_tokens;
            toks.push_back(crit.answer_token);
            query = embed_text(join_tokens(toks));
        }

        reward_cfg_ = RewardConfig{};
        reward_cfg_.lambda_cost = lambda_;
        for (const auto& crit : crits)
            reward_cfg_.critical_sentence_ids.push_back(crit.node_id);

        auto doc_tokens = static_cast<int64_t>(tree_.token_count);
        int64_t budget = std::max<int64_t>(
            1, static_cast<int64_t>(std::ceil(1.5 * static_cast<double>(doc_tokens))));
        state_ = initial_state(tree_, budget, std::move(query), SummaryBudgets{});
    }

    const HierarchyNode& tree() const override { return tree_; }
    const CompressionState& state() const override { return state_; }

    StepResult step(ActionKind action) override {
        StepResult result = mdp_step(state_, action, tree_, reward_cfg_);
        state_ = result.state;
        return result;
    }

    double forced_stop_reward() const override {
        return terminal_reward(state_, tree_, reward_cfg_);
    }

    size_t step_cap() const override { return 3 * tree_node_count(tree_) + 1; }

private:
    CorpusSpec spec_;
    TokenPlan plan_;
    double lambda_;
    HierarchyNode tree_;
    RewardConfig reward_cfg_;
    CompressionState state_;
};

}  // namespace

std::unique_ptr<CompressionEnv> make_training_env(const CorpusSpec& spec,
                                                  double lambda_cost) {
    return std::make_unique<DocCompressionEnv>(spec, lambda_cost);
}

}  // namespace ctxforge
