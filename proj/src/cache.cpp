#include "ctxforge/cache.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <unordered_set>

#include "json.hpp"

#include "ctxforge/common.hpp"
#include "ctxforge/kernels.hpp"
#include "ctxforge/rank.hpp"
#include "ctxforge/summarize.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

namespace {

constexpr char kSnapshotMagic[] = {'C', 'T', 'X', 'C', 'A', 'C', 'H', 'E', '1'};
constexpr size_t kMagicLen = sizeof(kSnapshotMagic);
constexpr size_t kLloydCap = 50;

const std::unordered_set<std::string>& stopword_set() {
    static const std::unordered_set<std::string> kStopwords = {
        "a",     "an",    "and",   "are",  "as",   "at",   "be",   "but",
        "by",    "for",   "from",  "had",  "has",  "have", "if",   "in",
        "is",    "it",    "its",   "no",   "not",  "of",   "on",   "or",
        "that",  "the",   "their", "then", "there", "these", "they", "this",
        "to",    "was",   "were",  "which", "will", "with"};
    return kStopwords;
}

bool entry_order(const CacheEntry& a, const CacheEntry& b) {
    double sa = static_cast<double>(a.score);
    double sb = static_cast<double>(b.score);
    if (sa != sb) return sa > sb;
    return a.node_id < b.node_id;
}

void sort_entries(std::vector<CacheEntry>& entries) {
    std::sort(entries.begin(), entries.end(), entry_order);
}

void refresh_segment_centroid(CacheSegment& segment) {
    if (segment.entries.empty()) {
        segment.centroid.assign(kEmbedDim, 0.0f);
        return;
    }
    std::vector<std::string> texts;
    texts.reserve(segment.entries.size());
    for (const auto& e : segment.entries) texts.push_back(e.text);
    segment.centroid = lower(normalized_mean(embed_many(texts)));
}

void collect_node_ids(const HierarchyNode& node, std::vector<std::string>& out) {
    out.push_back(node.node_id);
    for (const auto& child : node.children) collect_node_ids(child, out);
}

// Rebuilds the hierarchy keeping only the sentences in `keep`; paragraphs and
// documents left with no sentences vanish. Internal text becomes the
// space-join of surviving descendants, preserving token_count = sum over
// children.
std::optional<HierarchyNode> filter_tree(const HierarchyNode& node,
                                         const std::unordered_set<std::string>& keep) {
    if (node.level == Level::Sentence) {
        if (keep.count(node.node_id) == 0) return std::nullopt;
        return node;
    }
    HierarchyNode out;
    out.node_id = node.node_id;
    out.level = node.level;
    std::string text;
    size_t tokens = 0;
    for (const auto& child : node.children) {
        auto kept = filter_tree(child, keep);
        if (!kept) continue;
        if (!text.empty()) text += ' ';
        text += kept->text;
        tokens += kept->token_count;
        out.children.push_back(std::move(*kept));
    }
    if (out.children.empty()) return std::nullopt;
    out.text = std::move(text);
    out.token_count = tokens;
    return out;
}

struct OccurrenceRank {
    double idf = 0.0;
    size_t position = 0;
};

std::map<std::string, uint32_t> build_df_table(const CorpusStore& store) {
    std::map<std::string, uint32_t> df;
    for (const auto& [doc_id, entry] : store.entries()) {
        std::unordered_set<std::string> distinct;
        for (auto& tok : tokenize(entry.doc.text)) distinct.insert(std::move(tok));
        for (const auto& tok : distinct) df[tok] += 1;
    }
    return df;
}

// --- binary snapshot helpers -------------------------------------------------

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(out, bits);
}

void put_str(std::string& out, std::string_view s) {
    if (s.size() > 0xffffffffull) fail(ErrorKind::Validation, "string too long to serialize");
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.append(s.data(), s.size());
}

struct ByteReader {
    std::string_view data;
    size_t pos = 0;

    void require(size_t n) const {
        if (pos + n > data.size()) fail(ErrorKind::Parse, "snapshot truncated");
    }
    uint8_t get_u8() {
        require(1);
        return static_cast<uint8_t>(data[pos++]);
    }
    uint32_t get_u32() {
        require(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t get_u64() {
        require(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<uint8_t>(data[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float get_f32() {
        uint32_t bits = get_u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string get_str() {
        uint32_t n = get_u32();
        require(n);
        std::string s(data.substr(pos, n));
        pos += n;
        return s;
    }
    bool done() const { return pos == data.size(); }
};

std::vector<float> read_f32_vec(ByteReader& r) {
    uint32_t dim = r.get_u32();
    if (dim != kEmbedDim) fail(ErrorKind::Parse, "snapshot centroid has wrong dimension");
    std::vector<float> v(dim);
    for (uint32_t i = 0; i < dim; ++i) v[i] = r.get_f32();
    return v;
}

void put_f32_vec(std::string& out, const std::vector<float>& v) {
    if (v.size() != kEmbedDim) fail(ErrorKind::Validation, "centroid has wrong dimension");
    put_u32(out, static_cast<uint32_t>(v.size()));
    for (float x : v) put_f32(out, x);
}

CacheEntry read_entry(ByteReader& r) {
    CacheEntry e;
    e.node_id = r.get_str();
    e.text = r.get_str();
    e.token_count = r.get_u64();
    e.score = r.get_f32();
    e.source_doc_id = r.get_str();
    e.doc_version = r.get_u64();
    return e;
}

void put_entry(std::string& out, const CacheEntry& e) {
    put_str(out, e.node_id);
    put_str(out, e.text);
    put_u64(out, e.token_count);
    put_f32(out, e.score);
    put_str(out, e.source_doc_id);
    put_u64(out, e.doc_version);
}

// One refinement pass driven by the heuristic or learned controller, starting
// from the threshold-descent representation.
void refine_state(CompressionState& state, const HierarchyNode& tree,
                  const EngineConfig& cfg, const PolicyParams* policy) {
    if (cfg.policy_mode == PolicyMode::Off) return;
    if (cfg.policy_mode == PolicyMode::Learned && policy == nullptr)
        fail(ErrorKind::Validation, "learned policy mode requires loaded policy parameters");
    RewardConfig reward_cfg;
    reward_cfg.lambda_cost = cfg.lambda_cost;
    const size_t cap = 3 * tree_node_count(tree) + 1;
    for (size_t step = 0; step < cap; ++step) {
        ActionKind action = cfg.policy_mode == PolicyMode::Heuristic
                                ? heuristic_policy(state, tree)
                                : policy_act(*policy, state, tree, /*deterministic=*/true, 0);
        if (action == ActionKind::Stop) break;
        StepResult result = mdp_step(state, action, tree, reward_cfg);
        bool changed = result.state.node_status != state.node_status;
        state = std::move(result.state);
        if (result.terminal || !changed) break;
    }
}

uint32_t nearest_segment(const std::vector<CacheSegment>& segments,
                         const EmbeddingVector& vec) {
    double best = -2.0;
    uint32_t best_id = segments.front().segment_id;
    for (const auto& seg : segments) {
        double c = cosine(lift(seg.centroid), vec);
        if (c > best || (c == best && seg.segment_id < best_id)) {
            best = c;
            best_id = seg.segment_id;
        }
    }
    return best_id;
}

CacheSegment* segment_by_id(CacheSnapshot& snapshot, uint32_t id) {
    for (auto& seg : snapshot.segments)
        if (seg.segment_id == id) return &seg;
    return nullptr;
}

void remove_doc_entries(CacheSnapshot& snapshot, const std::string& doc_id,
                        std::vector<uint32_t>& touched) {
    for (auto& seg : snapshot.segments) {
        size_t before = seg.entries.size();
        seg.entries.erase(std::remove_if(seg.entries.begin(), seg.entries.end(),
                                         [&](const CacheEntry& e) {
                                             return e.source_doc_id == doc_id;
                                         }),
                          seg.entries.end());
        if (seg.entries.size() != before) touched.push_back(seg.segment_id);
    }
}

// Full re-cluster with the build seed when any segment exceeds twice the mean
// entry count; keeps the segment count, unloads everything.
void maybe_recluster(CacheSnapshot& snapshot, const EngineConfig& cfg) {
    if (snapshot.segments.empty()) return;
    size_t total = snapshot.entry_count();
    if (total == 0) return;
    double mean = static_cast<double>(total) / static_cast<double>(snapshot.segments.size());
    bool oversized = false;
    for (const auto& seg : snapshot.segments)
        if (static_cast<double>(seg.entries.size()) > 2.0 * mean) oversized = true;
    if (!oversized) return;

    std::vector<CacheEntry> all;
    all.reserve(total);
    for (auto& seg : snapshot.segments)
        for (auto& e : seg.entries) all.push_back(std::move(e));
    sort_entries(all);
    std::vector<std::pair<std::string, EmbeddingVector>> points;
    points.reserve(all.size());
    {
        std::vector<std::string> texts;
        texts.reserve(all.size());
        for (const auto& e : all) texts.push_back(e.text);
        auto vecs = embed_many(texts);
        for (size_t i = 0; i < all.size(); ++i)
            points.emplace_back(all[i].node_id, std::move(vecs[i]));
    }
    auto assign = cluster_segments(points, snapshot.segments.size(), cfg.seed);
    std::vector<CacheSegment> fresh(snapshot.segments.size());
    for (size_t i = 0; i < fresh.size(); ++i) {
        fresh[i].segment_id = static_cast<uint32_t>(i);
        fresh[i].loaded = false;
    }
    for (auto& e : all) {
        uint32_t sid = assign.at(e.node_id);
        fresh[sid].entries.push_back(std::move(e));
    }
    for (auto& seg : fresh) {
        sort_entries(seg.entries);
        refresh_segment_centroid(seg);
    }
    snapshot.segments = std::move(fresh);
}

}  // namespace

// --- snapshot accessors ------------------------------------------------------

uint64_t CacheSnapshot::loaded_tokens() const {
    uint64_t total = 0;
    for (const auto& seg : segments)
        if (seg.loaded)
            for (const auto& e : seg.entries) total += e.token_count;
    return total;
}

uint64_t CacheSnapshot::total_entry_tokens() const {
    uint64_t total = 0;
    for (const auto& seg : segments)
        for (const auto& e : seg.entries) total += e.token_count;
    return total;
}

size_t CacheSnapshot::entry_count() const {
    size_t n = 0;
    for (const auto& seg : segments) n += seg.entries.size();
    return n;
}

const CacheSegment* CacheSnapshot::find_segment(uint32_t segment_id) const {
    for (const auto& seg : segments)
        if (seg.segment_id == segment_id) return &seg;
    return nullptr;
}

EmbeddingVector lift(const std::vector<float>& v) {
    EmbeddingVector out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
    return out;
}

std::vector<float> lower(const EmbeddingVector& v) {
    std::vector<float> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

bool is_stopword(std::string_view token) {
    return stopword_set().count(std::string(token)) > 0;
}

double idf_of(const std::map<std::string, uint32_t>& df_table, uint64_t n_docs,
              std::string_view token) {
    if (is_stopword(token)) return 0.0;
    if (n_docs < 1) return 0.0;
    auto it = df_table.find(std::string(token));
    double df = it == df_table.end() ? 1.0 : static_cast<double>(it->second);
    if (df < 1.0) df = 1.0;
    return std::log(static_cast<double>(n_docs) / df);
}

std::string truncate_tokens(const std::string& text, double keep_fraction,
                            const std::map<std::string, uint32_t>& df_table,
                            uint64_t n_docs) {
    if (keep_fraction <= 0.0 || keep_fraction > 1.0)
        fail(ErrorKind::Validation, "keep_fraction must be in (0, 1]");
    if (keep_fraction >= 1.0) return text;
    auto tokens = tokenize(text);
    size_t n = tokens.size();
    if (n == 0) return text;
    auto keep = static_cast<size_t>(
        std::ceil(keep_fraction * static_cast<double>(n)));
    if (keep < 1) keep = 1;
    if (keep > n) keep = n;

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> idf(n);
    for (size_t i = 0; i < n; ++i) idf[i] = idf_of(df_table, n_docs, tokens[i]);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (idf[a] != idf[b]) return idf[a] > idf[b];
        return a < b;
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());

    std::string out;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i) out += ' ';
        out += tokens[order[i]];
    }
    return out;
}

std::map<std::string, uint32_t> cluster_segments(
    const std::vector<std::pair<std::string, EmbeddingVector>>& entries, size_t k,
    uint64_t seed) {
    std::map<std::string, uint32_t> out;
    size_t n = entries.size();
    if (n == 0) return out;
    if (k == 0) fail(ErrorKind::Validation, "cluster count must be >= 1");
    if (k > n) k = n;
    std::vector<EmbeddingVector> points;
    points.reserve(n);
    for (const auto& [id, vec] : entries) {
        if (vec.size() != kEmbedDim)
            fail(ErrorKind::Validation, "clustering input has wrong dimension");
        points.push_back(vec);
    }

    // k-means++ seeding: first index floor(u*n); then inverse-CDF over squared
    // cosine distance to the nearest chosen centroid.
    std::mt19937_64 gen(seed);
    std::vector<size_t> seeds;
    std::vector<char> chosen(n, 0);
    size_t first = static_cast<size_t>(unit_double(gen()) * static_cast<double>(n));
    if (first >= n) first = n - 1;
    seeds.push_back(first);
    chosen[first] = 1;
    std::vector<double> best_cos = cosine_many(points, points[first]);
    while (seeds.size() < k) {
        std::vector<double> weights(n, 0.0);
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            double d = 1.0 - best_cos[i];
            if (d < 0.0) d = 0.0;
            weights[i] = d * d;
            total += weights[i];
        }
        size_t pick = n;
        if (total <= 0.0) {
            for (size_t i = 0; i < n; ++i)
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
        } else {
            double r = unit_double(gen()) * total;
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                if (weights[i] <= 0.0) continue;
                acc += weights[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
                pick = i;  // guards against accumulated rounding at the tail
            }
        }
        if (pick >= n) break;  // every point already chosen
        seeds.push_back(pick);
        chosen[pick] = 1;
        auto cs = cosine_many(points, points[pick]);
        for (size_t i = 0; i < n; ++i) best_cos[i] = std::max(best_cos[i], cs[i]);
    }
    k = seeds.size();

    std::vector<EmbeddingVector> centroids;
    centroids.reserve(k);
    for (size_t idx : seeds) centroids.push_back(points[idx]);

    std::vector<size_t> assign = kmeans_assign(points, centroids);
    for (size_t round = 0; round < kLloydCap; ++round) {
        std::vector<size_t> empties;
        auto next = kmeans_update(points, assign, k, empties);
        bool reseeded = false;
        std::vector<char> stolen(n, 0);
        for (size_t e : empties) {
            size_t far_idx = n;
            double far_d = -1.0;
            for (size_t i = 0; i < n; ++i) {
                if (stolen[i]) continue;
                double d = 1.0 - cosine(points[i], next[assign[i]]);
                if (d > far_d) {
                    far_d = d;
                    far_idx = i;
                }
            }
            if (far_idx < n) {
                next[e] = points[far_idx];
                stolen[far_idx] = 1;
                reseeded = true;
            }
        }
        auto next_assign = kmeans_assign(points, next);
        bool stable = !reseeded && next_assign == assign;
        centroids = std::move(next);
        assign = std::move(next_assign);
        if (stable) break;
    }

    for (size_t i = 0; i < n; ++i)
        out[entries[i].first] = static_cast<uint32_t>(assign[i]);
    return out;
}

std::vector<ChangeEvent> parse_change_feed(std::string_view content) {
    std::vector<ChangeEvent> events;
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

        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            fail(ErrorKind::Parse, "change feed line " + std::to_string(line_no) +
                                       ": invalid JSON object");
        auto parse_err = [&](const std::string& msg) {
            fail(ErrorKind::Parse,
                 "change feed line " + std::to_string(line_no) + ": " + msg);
        };
        if (!j.contains("op") || !j["op"].is_string()) parse_err("missing op");
        std::string op = j["op"];
        ChangeEvent ev;
        if (op == "add") ev.op = ChangeEvent::Op::Add;
        else if (op == "edit") ev.op = ChangeEvent::Op::Edit;
        else if (op == "delete") ev.op = ChangeEvent::Op::Delete;
        else parse_err("unknown op '" + op + "'");
        if (!j.contains("doc_id") || !j["doc_id"].is_string() ||
            j["doc_id"].get<std::string>().empty())
            parse_err("missing doc_id");
        ev.doc.doc_id = j["doc_id"];
        if (!j.contains("version") || !j["version"].is_number_unsigned() ||
            j["version"].get<uint64_t>() < 1)
            parse_err("version must be an integer >= 1");
        ev.doc.version = j["version"];
        if (ev.op != ChangeEvent::Op::Delete) {
            if (!j.contains("text") || !j["text"].is_string())
                parse_err("add/edit require text");
            ev.doc.text = j["text"];
        }
        if (j.contains("topic_hint") && j["topic_hint"].is_string())
            ev.doc.topic_hint = j["topic_hint"];
        events.push_back(std::move(ev));
    }
    return events;
}

std::vector<ChangeEvent> load_change_feed(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open change feed: " + path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    return parse_change_feed(content);
}

std::vector<CacheEntry> compress_document(const CorpusEntry& entry,
                                          const EngineConfig& cfg,
                                          const EmbeddingVector& corpus_centroid,
                                          const std::map<std::string, uint32_t>& df_table,
                                          uint64_t n_docs, const PolicyParams* policy) {
    auto sentences = collect_sentences(entry.tree);
    if (sentences.empty()) return {};

    QueryBuffer empty_buffer(cfg.buffer_n);
    std::vector<ScoredSnippet> scored;
    scored.reserve(sentences.size());
    {
        std::vector<std::string> texts;
        texts.reserve(sentences.size());
        for (const auto* s : sentences) texts.push_back(s->text);
        auto vecs = embed_many(texts);
        for (size_t i = 0; i < sentences.size(); ++i) {
            double prior = offline_prior(vecs[i], corpus_centroid, cfg.prior_mode);
            scored.push_back({sentences[i]->node_id,
                              snippet_score(vecs[i], empty_buffer, prior, cfg.alpha)});
        }
    }
    auto kept = select_top_fraction(scored, cfg.top_fraction);
    std::unordered_set<std::string> keep_ids;
    for (const auto& s : kept) keep_ids.insert(s.node_id);

    auto filtered = filter_tree(entry.tree, keep_ids);
    if (!filtered) return {};

    CompressionState state = initial_state(*filtered, /*total_budget=*/1,
                                           corpus_centroid, cfg.summary_budgets());
    auto pieces = resolve_context(*filtered, corpus_centroid, cfg.descent_config(),
                                  cfg.summary_budgets());
    for (const auto& piece : pieces)
        if (piece.level != Level::Sentence)
            state.node_status[piece.node_id] = NodeStatus::Summarized;
    auto used0 = static_cast<int64_t>(tokens_used(state, *filtered));
    int64_t refine_budget =
        std::max<int64_t>(1, static_cast<int64_t>(
                                 std::ceil(1.5 * static_cast<double>(used0))));
    state.total_budget = refine_budget;
    state.remaining_budget = refine_budget - used0;
    refine_state(state, *filtered, cfg, policy);

    std::vector<CacheEntry> out;
    for (const auto& unit : frontier_units(state, *filtered)) {
        CacheEntry e;
        e.node_id = unit.node_id;
        e.text = truncate_tokens(unit.text, cfg.keep_fraction, df_table, n_docs);
        e.token_count = count_tokens(e.text);
        auto vec = embed_text(e.text);
        double prior = offline_prior(vec, corpus_centroid, cfg.prior_mode);
        e.score = static_cast<float>(
            snippet_score(vec, empty_buffer, prior, cfg.alpha));
        e.source_doc_id = entry.doc.doc_id;
        e.doc_version = entry.doc.version;
        out.push_back(std::move(e));
    }
    return out;
}

CacheSnapshot build_cache(const CorpusStore& store, const EngineConfig& cfg,
                          const PolicyParams* policy) {
    cfg.validate();
    if (store.size() == 0) fail(ErrorKind::Validation, "cannot build from an empty corpus");
    if (cfg.policy_mode == PolicyMode::Learned && policy == nullptr)
        fail(ErrorKind::Validation, "learned policy mode requires loaded policy parameters");

    CacheSnapshot snap;
    snap.total_budget = cfg.token_budget;
    snap.config_digest = cfg.digest();
    snap.config_json = cfg.canonical_json();
    snap.store = store;
    snap.n_docs_at_build = store.size();
    snap.df_table = build_df_table(store);

    // Corpus centroid over every sentence embedding, frozen through float32 so
    // later re-compressions see the exact same value the build used.
    {
        std::vector<std::string> texts;
        for (const auto& [doc_id, entry] : store.entries())
            for (const auto* s : collect_sentences(entry.tree)) texts.push_back(s->text);
        snap.corpus_centroid = lower(normalized_mean(embed_many(texts)));
    }
    EmbeddingVector centroid = lift(snap.corpus_centroid);

    std::vector<CacheEntry> all;
    for (const auto& [doc_id, entry] : store.entries()) {
        snap.corpus_version[doc_id] = entry.doc.version;
        auto entries = compress_document(entry, cfg, centroid, snap.df_table,
                                         snap.n_docs_at_build, policy);
        for (auto& e : entries) all.push_back(std::move(e));
    }
    sort_entries(all);

    size_t k = cfg.k_segments != 0
                   ? cfg.k_segments
                   : static_cast<size_t>(std::max<long long>(
                         1, std::llround(std::sqrt(static_cast<double>(store.size())))));
    if (!all.empty() && k > all.size()) k = all.size();
    if (k == 0) k = 1;

    std::vector<CacheSegment> segments(k);
    for (size_t i = 0; i < k; ++i) {
        segments[i].segment_id = static_cast<uint32_t>(i);
        segments[i].loaded = false;
    }
    if (!all.empty()) {
        std::vector<std::pair<std::string, EmbeddingVector>> points;
        points.reserve(all.size());
        {
            std::vector<std::string> texts;
            texts.reserve(all.size());
            for (const auto& e : all) texts.push_back(e.text);
            auto vecs = embed_many(texts);
            for (size_t i = 0; i < all.size(); ++i)
                points.emplace_back(all[i].node_id, std::move(vecs[i]));
        }
        auto assign = cluster_segments(points, k, cfg.seed);
        for (auto& e : all) {
            uint32_t sid = assign.at(e.node_id);
            segments[sid].entries.push_back(std::move(e));
        }
    }
    for (auto& seg : segments) {
        sort_entries(seg.entries);
        refresh_segment_centroid(seg);
    }
    snap.segments = std::move(segments);
    return snap;
}

std::vector<std::string> evict(CacheSnapshot& snapshot, uint64_t tokens_needed,
                               const std::set<std::string>& pinned) {
    struct Victim {
        double score;
        std::string node_id;
        uint64_t tokens;
    };
    std::vector<Victim> victims;
    uint64_t evictable = 0;
    for (const auto& seg : snapshot.segments) {
        if (!seg.loaded) continue;
        for (const auto& e : seg.entries) {
            if (pinned.count(e.node_id)) continue;
            victims.push_back({static_cast<double>(e.score), e.node_id, e.token_count});
            evictable += e.token_count;
        }
    }
    if (evictable < tokens_needed)
        fail(ErrorKind::Validation,
             "eviction shortfall: need " + std::to_string(tokens_needed) +
                 " tokens but only " + std::to_string(evictable) + " are evictable");

    std::sort(victims.begin(), victims.end(), [](const Victim& a, const Victim& b) {
        if (a.score != b.score) return a.score < b.score;
        return a.node_id > b.node_id;
    });

    std::vector<std::string> evicted;
    std::unordered_set<std::string> evicted_set;
    uint64_t freed = 0;
    for (const auto& v : victims) {
        if (freed >= tokens_needed) break;
        freed += v.tokens;
        evicted.push_back(v.node_id);
        evicted_set.insert(v.node_id);
    }
    if (evicted.empty()) return evicted;

    for (auto& seg : snapshot.segments) {
        if (!seg.loaded) continue;
        size_t before = seg.entries.size();
        seg.entries.erase(std::remove_if(seg.entries.begin(), seg.entries.end(),
                                         [&](const CacheEntry& e) {
                                             return evicted_set.count(e.node_id) > 0;
                                         }),
                          seg.entries.end());
        if (seg.entries.size() != before) refresh_segment_centroid(seg);
    }
    return evicted;
}

std::vector<std::string> apply_change(CacheSnapshot& snapshot, const ChangeEvent& event,
                                      const EngineConfig& cfg, const PolicyParams* policy) {
    if (cfg.digest() != snapshot.config_digest)
        fail(ErrorKind::Validation,
             "config digest mismatch: snapshot was built with a different configuration");

    const std::string& doc_id = event.doc.doc_id;
    auto known = snapshot.corpus_version.find(doc_id);
    std::vector<std::string> recomputed;
    std::vector<uint32_t> touched;

    switch (event.op) {
        case ChangeEvent::Op::Add: {
            if (known != snapshot.corpus_version.end())
                fail(ErrorKind::Validation,
                     "add rejected: document '" + doc_id + "' already exists");
            break;
        }
        case ChangeEvent::Op::Edit:
        case ChangeEvent::Op::Delete: {
            if (known == snapshot.corpus_version.end())
                fail(ErrorKind::Validation,
                     "change rejected: unknown document '" + doc_id + "'");
            if (event.doc.version <= known->second)
                fail(ErrorKind::Validation,
                     "stale change for '" + doc_id + "': version " +
                         std::to_string(event.doc.version) + " <= " +
                         std::to_string(known->second));
            break;
        }
    }

    if (event.op == ChangeEvent::Op::Delete) {
        remove_doc_entries(snapshot, doc_id, touched);
        snapshot.store.erase(doc_id);
        snapshot.corpus_version.erase(doc_id);
    } else {
        snapshot.store.upsert(event.doc);
        snapshot.corpus_version[doc_id] = event.doc.version;
        const CorpusEntry* entry = snapshot.store.find(doc_id);
        collect_node_ids(entry->tree, recomputed);

        remove_doc_entries(snapshot, doc_id, touched);
        EmbeddingVector centroid = lift(snapshot.corpus_centroid);
        auto entries = compress_document(*entry, cfg, centroid, snapshot.df_table,
                                         snapshot.n_docs_at_build, policy);
        if (snapshot.segments.empty()) {
            CacheSegment seg;
            seg.segment_id = 0;
            seg.loaded = false;
            snapshot.segments.push_back(std::move(seg));
        }
        for (auto& e : entries) {
            auto vec = embed_text(e.text);
            uint32_t sid = nearest_segment(snapshot.segments, vec);
            CacheSegment* seg = segment_by_id(snapshot, sid);
            auto it = std::lower_bound(seg->entries.begin(), seg->entries.end(), e,
                                       entry_order);
            seg->entries.insert(it, std::move(e));
            touched.push_back(sid);
        }
    }

    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (uint32_t sid : touched) {
        if (CacheSegment* seg = segment_by_id(snapshot, sid))
            refresh_segment_centroid(*seg);
    }
    maybe_recluster(snapshot, cfg);
    for (auto& seg : snapshot.segments) seg.loaded = false;
    return recomputed;
}

std::vector<uint32_t> load_segments_for_query(CacheSnapshot& snapshot,
                                              const EmbeddingVector& q_vec,
                                              uint64_t max_segments) {
    struct Ranked {
        double sim;
        uint32_t segment_id;
    };
    std::vector<Ranked> ranked;
    ranked.reserve(snapshot.segments.size());
    for (const auto& seg : snapshot.segments)
        ranked.push_back({cosine(lift(seg.centroid), q_vec), seg.segment_id});
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.segment_id < b.segment_id;
    });
    std::set<uint32_t> keep;
    std::vector<uint32_t> loaded;
    for (const auto& r : ranked) {
        if (loaded.size() >= max_segments) break;
        keep.insert(r.segment_id);
        loaded.push_back(r.segment_id);
    }
    for (auto& seg : snapshot.segments) seg.loaded = keep.count(seg.segment_id) > 0;
    return loaded;
}

std::string serialize_segment(const CacheSegment& segment) {
    std::string out;
    put_u32(out, segment.segment_id);
    put_f32_vec(out, segment.centroid);
    put_u8(out, segment.loaded ? 1 : 0);
    put_u32(out, static_cast<uint32_t>(segment.entries.size()));
    for (const auto& e : segment.entries) put_entry(out, e);
    return out;
}

std::string serialize_snapshot(const CacheSnapshot& snapshot) {
    std::string out;
    out.append(kSnapshotMagic, kMagicLen);
    put_u64(out, snapshot.total_budget);
    put_str(out, snapshot.config_digest);
    put_str(out, snapshot.config_json);
    put_u32(out, static_cast<uint32_t>(snapshot.corpus_version.size()));
    for (const auto& [doc_id, version] : snapshot.corpus_version) {
        put_str(out, doc_id);
        put_u64(out, version);
    }
    put_u32(out, static_cast<uint32_t>(snapshot.store.size()));
    for (const auto& [doc_id, entry] : snapshot.store.entries()) {
        put_str(out, entry.doc.doc_id);
        put_str(out, entry.doc.text);
        put_str(out, entry.doc.topic_hint);
        put_u64(out, entry.doc.version);
    }
    put_f32_vec(out, snapshot.corpus_centroid);
    put_u32(out, static_cast<uint32_t>(snapshot.df_table.size()));
    for (const auto& [token, df] : snapshot.df_table) {
        put_str(out, token);
        put_u32(out, df);
    }
    put_u64(out, snapshot.n_docs_at_build);
    put_u32(out, static_cast<uint32_t>(snapshot.segments.size()));
    for (const auto& seg : snapshot.segments) {
        std::string block = serialize_segment(seg);
        put_u32(out, static_cast<uint32_t>(block.size()));
        out += block;
    }
    return out;
}

CacheSnapshot deserialize_snapshot(std::string_view bytes) {
    ByteReader r{bytes};
    r.require(kMagicLen);
    if (bytes.substr(0, kMagicLen) != std::string_view(kSnapshotMagic, kMagicLen))
        fail(ErrorKind::Parse, "not a cache snapshot (bad magic)");
    r.pos = kMagicLen;

    CacheSnapshot snap;
    snap.total_budget = r.get_u64();
    snap.config_digest = r.get_str();
    snap.config_json = r.get_str();
    uint32_t n_versions = r.get_u32();
    for (uint32_t i = 0; i < n_versions; ++i) {
        std::string doc_id = r.get_str();
        uint64_t version = r.get_u64();
        snap.corpus_version[doc_id] = version;
    }
    uint32_t n_docs = r.get_u32();
    for (uint32_t i = 0; i < n_docs; ++i) {
        Document doc;
        doc.doc_id = r.get_str();
        doc.text = r.get_str();
        doc.topic_hint = r.get_str();
        doc.version = r.get_u64();
        snap.store.upsert(doc);
    }
    snap.corpus_centroid = read_f32_vec(r);
    uint32_t n_df = r.get_u32();
    for (uint32_t i = 0; i < n_df; ++i) {
        std::string token = r.get_str();
        uint32_t df = r.get_u32();
        snap.df_table[token] = df;
    }
    snap.n_docs_at_build = r.get_u64();
    uint32_t n_segments = r.get_u32();
    for (uint32_t i = 0; i < n_segments; ++i) {
        uint32_t block_len = r.get_u32();
        r.require(block_len);
        ByteReader sr{bytes.substr(r.pos, block_len)};
        r.pos += block_len;
        CacheSegment seg;
        seg.segment_id = sr.get_u32();
        seg.centroid = read_f32_vec(sr);
        seg.loaded = sr.get_u8() != 0;
        uint32_t n_entries = sr.get_u32();
        for (uint32_t e = 0; e < n_entries; ++e) seg.entries.push_back(read_entry(sr));
        if (!sr.done()) fail(ErrorKind::Parse, "snapshot segment block has trailing bytes");
        snap.segments.push_back(std::move(seg));
    }
    if (!r.done()) fail(ErrorKind::Parse, "snapshot has trailing bytes");
    return snap;
}

void save_snapshot(const CacheSnapshot& snapshot, const std::string& path) {
    std::string bytes = serialize_snapshot(snapshot);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write snapshot: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorKind::Io, "failed writing snapshot: " + path);
}

CacheSnapshot load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open snapshot: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return deserialize_snapshot(bytes);
}

}  // namespace ctxforge
