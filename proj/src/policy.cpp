#include "ctxforge/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ctxforge/common.hpp"
#include "ctxforge/tokenize.hpp"

namespace ctxforge {

const char* action_name(ActionKind kind) {
    switch (kind) {
        case ActionKind::PruneLowestScore: return "prune_lowest_score";
        case ActionKind::SummarizeLargest: return "summarize_largest";
        case ActionKind::DescendLowestScore: return "descend_lowest_score";
        case ActionKind::Stop: return "stop";
    }
    return "unknown";
}

namespace {

void collect_status_defaults(const HierarchyNode& node,
                             std::map<std::string, NodeStatus>& status) {
    status[node.node_id] = NodeStatus::Full;
    for (const auto& child : node.children) collect_status_defaults(child, status);
}

NodeStatus status_of(const CompressionState& state, const std::string& node_id) {
    auto it = state.node_status.find(node_id);
    if (it == state.node_status.end()) {
        fail(ErrorKind::Validation, "state has no status for node " + node_id);
    }
    return it->second;
}

bool subtree_all_full(const CompressionState& state, const HierarchyNode& node) {
    if (status_of(state, node.node_id) != NodeStatus::Full) return false;
    for (const auto& child : node.children) {
        if (!subtree_all_full(state, child)) return false;
    }
    return true;
}

size_t level_budget(const SummaryBudgets& budgets, Level level) {
    return level == Level::Document ? budgets.doc_summary_tokens
                                    : budgets.para_summary_tokens;
}

// The representation walk. Also reports the internal Full nodes eligible for
// SummarizeLargest (all-Full subtree with at least one sentence, reachable
// through Full ancestors only).
void walk_representation(const CompressionState& state, const HierarchyNode& node,
                         std::vector<FrontierUnit>* units,
                         std::vector<const HierarchyNode*>* summarizable) {
    NodeStatus status = status_of(state, node.node_id);
    if (status == NodeStatus::Pruned) return;
    if (status == NodeStatus::Summarized) {
        if (units) {
            std::string summary = summarize_node(
                node, level_budget(state.summary_budgets, node.level), state.query_vec);
            FrontierUnit unit;
            unit.node_id = node.node_id;
            unit.tokens = count_tokens(summary);
            unit.relevance = clamp01(cosine(embed_text(summary), state.query_vec));
            unit.text = std::move(summary);
            unit.status = NodeStatus::Summarized;
            units->push_back(std::move(unit));
        }
        return;
    }
    if (node.level == Level::Sentence) {
        if (units) {
            FrontierUnit unit;
            unit.node_id = node.node_id;
            unit.text = node.text;
            unit.tokens = node.token_count;
            unit.relevance = clamp01(cosine(embed_text(node.text), state.query_vec));
            unit.status = NodeStatus::Full;
            units->push_back(std::move(unit));
        }
        return;
    }
    if (summarizable && !node.children.empty() && subtree_all_full(state, node)) {
        summarizable->push_back(&node);
    }
    for (const auto& child : node.children) {
        walk_representation(state, child, units, summarizable);
    }
}

void check_consistency(const CompressionState& state, const HierarchyNode& tree) {
    std::map<std::string, NodeStatus> expected;
    collect_status_defaults(tree, expected);
    if (expected.size() != state.node_status.size()) {
        fail(ErrorKind::Validation, "state/tree mismatch: " +
                                        std::to_string(state.node_status.size()) +
                                        " statuses for " + std::to_string(expected.size()) +
                                        " nodes");
    }
    for (const auto& [id, status] : state.node_status) {
        if (!expected.count(id)) {
            fail(ErrorKind::Validation, "state references unknown node " + id);
        }
    }
    // Non-Full nodes must have all-Full descendants.
    struct Checker {
        const CompressionState& state;
        void run(const HierarchyNode& node, bool under_non_full) {
            NodeStatus status = status_of(state, node.node_id);
            if (under_non_full && status != NodeStatus::Full) {
                fail(ErrorKind::Validation,
                     "nested non-Full status at node " + node.node_id);
            }
            bool non_full = status != NodeStatus::Full;
            for (const auto& child : node.children) {
                run(child, under_non_full || non_full);
            }
        }
    };
    Checker{state}.run(tree, false);
}

}  // namespace

std::vector<FrontierUnit> frontier_units(const CompressionState& state,
                                         const HierarchyNode& tree) {
    std::vector<FrontierUnit> units;
    walk_representation(state, tree, &units, nullptr);
    return units;
}

size_t tokens_used(const CompressionState& state, const HierarchyNode& tree) {
    size_t used = 0;
    for (const FrontierUnit& unit : frontier_units(state, tree)) used += unit.tokens;
    return used;
}

CompressionState initial_state(const HierarchyNode& tree, int64_t total_budget,
                               EmbeddingVector query_vec, SummaryBudgets budgets) {
    if (total_budget < 1) fail(ErrorKind::Validation, "total_budget must be >= 1");
    CompressionState state;
    collect_status_defaults(tree, state.node_status);
    state.total_budget = total_budget;
    state.query_vec = std::move(query_vec);
    state.summary_budgets = budgets;
    state.remaining_budget =
        total_budget - static_cast<int64_t>(tokens_used(state, tree));
    return state;
}

namespace {

// Selected-sentence set of the extractive summary, mirroring summarize_node's
// greedy rule; used for the "inside an emitted summary" retention check.
std::vector<const HierarchyNode*> summary_selection(const HierarchyNode& node,
                                                    size_t target_tokens,
                                                    const EmbeddingVector& query_vec) {
    std::vector<const HierarchyNode*> sentences = collect_sentences(node);
    std::vector<std::pair<double, size_t>> order(sentences.size());
    for (size_t i = 0; i < sentences.size(); ++i) {
        order[i] = {cosine(embed_text(sentences[i]->text), query_vec), i};
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<const HierarchyNode*> picked;
    size_t used = 0;
    for (const auto& [rel, pos] : order) {
        size_t cost = sentences[pos]->token_count;
        if (picked.empty()) {
            picked.push_back(sentences[pos]);
            used = cost;
            continue;
        }
        if (used + cost > target_tokens) break;
        picked.push_back(sentences[pos]);
        used += cost;
    }
    return picked;
}

// Effective representation of one sentence: verbatim on the frontier, inside
// a Summarized ancestor's selection, or absent.
bool sentence_represented(const CompressionState& state, const HierarchyNode& tree,
                          const std::string& sentence_id) {
    // Walk the path root -> sentence, honoring the first non-Full status.
    const HierarchyNode* node = &tree;
    while (true) {
        NodeStatus status = status_of(state, node->node_id);
        if (status == NodeStatus::Pruned) return false;
        if (status == NodeStatus::Summarized) {
            auto picked = summary_selection(
                *node, level_budget(state.summary_budgets, node->level), state.query_vec);
            for (const HierarchyNode* s : picked) {
                if (s->node_id == sentence_id) return true;
            }
            return false;
        }
        if (node->node_id == sentence_id) return true;
        const HierarchyNode* next = nullptr;
        for (const auto& child : node->children) {
            if (sentence_id.rfind(child.node_id, 0) == 0 &&
                (sentence_id.size() == child.node_id.size() ||
                 sentence_id[child.node_id.size()] == '/')) {
                next = &child;
                break;
            }
        }
        if (!next) return false;
        node = next;
    }
}

}  // namespace

double representation_quality(const CompressionState& state, const HierarchyNode& tree,
                              const RewardConfig& reward_cfg) {
    if (reward_cfg.critical_sentence_ids.empty()) return 1.0;
    double total = 0.0;
    double kept = 0.0;
    for (const std::string& id : reward_cfg.critical_sentence_ids) {
        const HierarchyNode* sentence = find_node(tree, id);
        if (!sentence || sentence->level != Level::Sentence) {
            fail(ErrorKind::Validation, "critical sentence not in tree: " + id);
        }
        double w = clamp01(cosine(embed_text(sentence->text), state.query_vec));
        total += w;
        if (sentence_represented(state, tree, id)) kept += w;
    }
    if (total == 0.0) return 1.0;
    return kept / total;
}

double terminal_reward(const CompressionState& state, const HierarchyNode& tree,
                       const RewardConfig& reward_cfg) {
    double quality = representation_quality(state, tree, reward_cfg);
    double used = static_cast<double>(tokens_used(state, tree));
    double ratio = std::min(1.0, used / static_cast<double>(state.total_budget));
    return quality - reward_cfg.lambda_cost * ratio;
}

StepResult mdp_step(const CompressionState& state, ActionKind action,
                    const HierarchyNode& tree, const RewardConfig& reward_cfg) {
    check_consistency(state, tree);

    if (action == ActionKind::Stop) {
        return StepResult{state, terminal_reward(state, tree, reward_cfg), true};
    }

    CompressionState next = state;
    bool changed = false;

    if (action == ActionKind::PruneLowestScore) {
        std::vector<FrontierUnit> units = frontier_units(state, tree);
        const FrontierUnit* pick = nullptr;
        for (const FrontierUnit& unit : units) {
            if (!pick || unit.relevance < pick->relevance ||
                (unit.relevance == pick->relevance && unit.node_id < pick->node_id)) {
                pick = &unit;
            }
        }
        if (pick) {
            next.node_status[pick->node_id] = NodeStatus::Pruned;
            changed = true;
        }
    } else if (action == ActionKind::SummarizeLargest) {
        std::vector<const HierarchyNode*> candidates;
        walk_representation(state, tree, nullptr, &candidates);
        const HierarchyNode* pick = nullptr;
        for (const HierarchyNode* node : candidates) {
            if (!pick || node->token_count > pick->token_count ||
                (node->token_count == pick->token_count && node->node_id < pick->node_id)) {
                pick = node;
            }
        }
        if (pick) {
            next.node_status[pick->node_id] = NodeStatus::Summarized;
            changed = true;
        }
    } else if (action == ActionKind::DescendLowestScore) {
        std::vector<FrontierUnit> units = frontier_units(state, tree);
        const FrontierUnit* pick = nullptr;
        for (const FrontierUnit& unit : units) {
            if (unit.status != NodeStatus::Summarized) continue;
            if (!pick || unit.relevance < pick->relevance ||
                (unit.relevance == pick->relevance && unit.node_id < pick->node_id)) {
                pick = &unit;
            }
        }
        if (pick) {
            next.node_status[pick->node_id] = NodeStatus::Full;
            changed = true;
        }
    }

    if (!changed) return StepResult{state, 0.0, false};

    next.remaining_budget =
        next.total_budget - static_cast<int64_t>(tokens_used(next, tree));
    if (next.remaining_budget < 0) {
        return StepResult{next, terminal_reward(next, tree, reward_cfg), true};
    }
    return StepResult{std::move(next), 0.0, false};
}

ActionKind heuristic_policy(const CompressionState& state, const HierarchyNode& tree) {
    (void)tree;
    int64_t used = state.total_budget - state.remaining_budget;
    if (state.remaining_budget < 0) return ActionKind::PruneLowestScore;
    if (static_cast<double>(used) > 0.9 * static_cast<double>(state.total_budget)) {
        return ActionKind::SummarizeLargest;
    }
    return ActionKind::Stop;
}

namespace {

void collect_levels(const HierarchyNode& node, std::map<std::string, Level>& levels) {
    levels[node.node_id] = node.level;
    for (const auto& child : node.children) collect_levels(child, levels);
}

}  // namespace

std::array<double, kFeatureDim> featurize(const CompressionState& state,
                                          const HierarchyNode& tree) {
    std::array<double, kFeatureDim> f{};
    std::map<std::string, Level> levels;
    collect_levels(tree, levels);
    double total_nodes = static_cast<double>(levels.size());
    for (const auto& [id, status] : state.node_status) {
        auto it = levels.find(id);
        if (it == levels.end()) {
            fail(ErrorKind::Validation, "state references unknown node " + id);
        }
        size_t idx = static_cast<size_t>(it->second) * 3 + static_cast<size_t>(status);
        f[idx] += 1.0 / total_nodes;
    }
    double budget = static_cast<double>(state.total_budget);
    f[9] = std::clamp(static_cast<double>(state.remaining_budget) / budget, -1.0, 1.0);
    std::vector<FrontierUnit> units = frontier_units(state, tree);
    if (!units.empty()) {
        double sum = 0.0;
        double mx = units[0].relevance;
        double mn = units[0].relevance;
        for (const FrontierUnit& unit : units) {
            sum += unit.relevance;
            mx = std::max(mx, unit.relevance);
            mn = std::min(mn, unit.relevance);
        }
        f[10] = sum / static_cast<double>(units.size());
        f[11] = mx;
        f[12] = mn;
    }
    f[13] = 1.0;
    double used = static_cast<double>(state.total_budget - state.remaining_budget);
    f[14] = std::min(used / budget, 2.0);
    f[15] = static_cast<double>(units.size()) / total_nodes;
    for (double x : f) {
        if (!std::isfinite(x)) fail(ErrorKind::Validation, "non-finite feature");
    }
    return f;
}

size_t PolicyParams::parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + wa.size() + ba.size() +
           wv.size() + bv.size();
}

PolicyParams init_params(uint64_t seed) {
    PolicyParams p;
    p.w1.assign(kHiddenDim * kFeatureDim, 0.0);
    p.b1.assign(kHiddenDim, 0.0);
    p.w2.assign(kHiddenDim * kHiddenDim, 0.0);
    p.b2.assign(kHiddenDim, 0.0);
    p.wa.assign(kActionCount * kHiddenDim, 0.0);
    p.ba.assign(kActionCount, 0.0);
    p.wv.assign(kHiddenDim, 0.0);
    p.bv.assign(1, 0.0);
    std::mt19937_64 gen(seed);
    auto fill = [&](std::vector<double>& w, size_t fan_in) {
        double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& x : w) x = (2.0 * unit_double(gen()) - 1.0) * scale;
    };
    fill(p.w1, kFeatureDim);
    fill(p.w2, kHiddenDim);
    fill(p.wa, kHiddenDim);
    fill(p.wv, kHiddenDim);
    return p;
}

PolicyForward policy_forward(const PolicyParams& params,
                             const std::array<double, kFeatureDim>& features) {
    std::array<double, kHiddenDim> h1{};
    for (size_t i = 0; i < kHiddenDim; ++i) {
        double acc = params.b1[i];
        const double* row = &params.w1[i * kFeatureDim];
        for (size_t j = 0; j < kFeatureDim; ++j) acc += row[j] * features[j];
        h1[i] = std::tanh(acc);
    }
    std::array<double, kHiddenDim> h2{};
    for (size_t i = 0; i < kHiddenDim; ++i) {
        double acc = params.b2[i];
        const double* row = &params.w2[i * kHiddenDim];
        for (size_t j = 0; j < kHiddenDim; ++j) acc += row[j] * h1[j];
        h2[i] = std::tanh(acc);
    }
    PolicyForward out;
    double max_logit = -1e300;
    for (size_t a = 0; a < kActionCount; ++a) {
        double acc = params.ba[a];
        const double* row = &params.wa[a * kHiddenDim];
        for (size_t j = 0; j < kHiddenDim; ++j) acc += row[j] * h2[j];
        out.logits[a] = acc;
        max_logit = std::max(max_logit, acc);
    }
    double z = 0.0;
    for (size_t a = 0; a < kActionCount; ++a) z += std::exp(out.logits[a] - max_logit);
    for (size_t a = 0; a < kActionCount; ++a) {
        out.probs[a] = std::exp(out.logits[a] - max_logit) / z;
    }
    double v = params.bv[0];
    for (size_t j = 0; j < kHiddenDim; ++j) v += params.wv[j] * h2[j];
    out.value = v;
    return out;
}

ActionKind policy_act(const PolicyParams& params, const CompressionState& state,
                      const HierarchyNode& tree, bool deterministic, uint64_t rng_seed) {
    PolicyForward fwd = policy_forward(params, featurize(state, tree));
    if (deterministic) {
        size_t best = 0;
        for (size_t a = 1; a < kActionCount; ++a) {
            if (fwd.probs[a] > fwd.probs[best]) best = a;
        }
        return static_cast<ActionKind>(best);
    }
    std::mt19937_64 gen(rng_seed);
    double r = unit_double(gen());
    double acc = 0.0;
    for (size_t a = 0; a < kActionCount; ++a) {
        acc += fwd.probs[a];
        if (r < acc) return static_cast<ActionKind>(a);
    }
    return ActionKind::Stop;
}

namespace {

struct ForwardTrace {
    std::array<double, kHiddenDim> h1{};
    std::array<double, kHiddenDim> h2{};
    std::array<double, kActionCount> probs{};
    std::array<double, kActionCount> logits{};
    double value = 0.0;
};

ForwardTrace forward_trace(const PolicyParams& params,
                           const std::array<double, kFeatureDim>& features) {
    ForwardTrace t;
    for (size_t i = 0; i < kHiddenDim; ++i) {
        double acc = params.b1[i];
        const double* row = &params.w1[i * kFeatureDim];
        for (size_t j = 0; j < kFeatureDim; ++j) acc += row[j] * features[j];
        t.h1[i] = std::tanh(acc);
    }
    for (size_t i = 0; i < kHiddenDim; ++i) {
        double acc = params.b2[i];
        const double* row = &params.w2[i * kHiddenDim];
        for (size_t j = 0; j < kHiddenDim; ++j) acc += row[j] * t.h1[j];
        t.h2[i] = std::tanh(acc);
    }
    double max_logit = -1e300;
    for (size_t a = 0; a < kActionCount; ++a) {
        double acc = params.ba[a];
        const double* row = &params.wa[a * kHiddenDim];
        for (size_t j = 0; j < kHiddenDim; ++j) acc += row[j] * t.h2[j];
        t.logits[a] = acc;
        max_logit = std::max(max_logit, acc);
    }
    double z = 0.0;
    for (size_t a = 0; a < kActionCount; ++a) z += std::exp(t.logits[a] - max_logit);
    for (size_t a = 0; a < kActionCount; ++a) {
        t.probs[a] = std::exp(t.logits[a] - max_logit) / z;
    }
    t.value = params.bv[0];
    for (size_t j = 0; j < kHiddenDim; ++j) t.value += params.wv[j] * t.h2[j];
    return t;
}

void zero_like(const PolicyParams& params, PolicyParams& grad) {
    grad.w1.assign(params.w1.size(), 0.0);
    grad.b1.assign(params.b1.size(), 0.0);
    grad.w2.assign(params.w2.size(), 0.0);
    grad.b2.assign(params.b2.size(), 0.0);
    grad.wa.assign(params.wa.size(), 0.0);
    grad.ba.assign(params.ba.size(), 0.0);
    grad.wv.assign(params.wv.size(), 0.0);
    grad.bv.assign(params.bv.size(), 0.0);
}

}  // namespace

double loss_and_grad(const PolicyParams& params, const std::vector<LossSample>& samples,
                     double clip_epsilon, double value_coef, double entropy_coef,
                     PolicyParams& grad) {
    zero_like(params, grad);
    if (samples.empty()) return 0.0;
    double inv_n = 1.0 / static_cast<double>(samples.size());
    double total_loss = 0.0;

    for (const LossSample& s : samples) {
        ForwardTrace t = forward_trace(params, s.features);

        double logpi = std::log(std::max(t.probs[s.action], 1e-300));
        double ratio = std::exp(logpi - s.old_logpi);
        double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
        double u = ratio * s.advantage;
        double c = clipped * s.advantage;
        bool unclipped_active = u <= c;
        double entropy = 0.0;
        for (size_t a = 0; a < kActionCount; ++a) {
            if (t.probs[a] > 0.0) entropy -= t.probs[a] * std::log(t.probs[a]);
        }
        double vdiff = t.value - s.value_target;
        total_loss += (-std::min(u, c) + value_coef * vdiff * vdiff -
                       entropy_coef * entropy) *
                      inv_n;

        // dL/dlogits
        std::array<double, kActionCount> dlogits{};
        if (unclipped_active) {
            double w = s.advantage * ratio * inv_n;
            for (size_t a = 0; a < kActionCount; ++a) {
                double onehot = a == s.action ? 1.0 : 0.0;
                dlogits[a] += w * (t.probs[a] - onehot);
            }
        }
        for (size_t a = 0; a < kActionCount; ++a) {
            double logp = t.probs[a] > 0.0 ? std::log(t.probs[a]) : 0.0;
            dlogits[a] += entropy_coef * t.probs[a] * (logp + entropy) * inv_n;
        }
        double dvalue = 2.0 * value_coef * vdiff * inv_n;

        // heads
        std::array<double, kHiddenDim> dh2{};
        for (size_t a = 0; a < kActionCount; ++a) {
            const double* row = &params.wa[a * kHiddenDim];
            for (size_t j = 0; j < kHiddenDim; ++j) {
                grad.wa[a * kHiddenDim + j] += dlogits[a] * t.h2[j];
                dh2[j] += dlogits[a] * row[j];
            }
            grad.ba[a] += dlogits[a];
        }
        for (size_t j = 0; j < kHiddenDim; ++j) {
            grad.wv[j] += dvalue * t.h2[j];
            dh2[j] += dvalue * params.wv[j];
        }
        grad.bv[0] += dvalue;

        // layer 2
        std::array<double, kHiddenDim> dh1{};
        for (size_t i = 0; i < kHiddenDim; ++i) {
            double dpre = dh2[i] * (1.0 - t.h2[i] * t.h2[i]);
            const double* row = &params.w2[i * kHiddenDim];
            for (size_t j = 0; j < kHiddenDim; ++j) {
                grad.w2[i * kHiddenDim + j] += dpre * t.h1[j];
                dh1[j] += dpre * row[j];
            }
            grad.b2[i] += dpre;
        }

        // layer 1
        for (size_t i = 0; i < kHiddenDim; ++i) {
            double dpre = dh1[i] * (1.0 - t.h1[i] * t.h1[i]);
            for (size_t j = 0; j < kFeatureDim; ++j) {
                grad.w1[i * kFeatureDim + j] += dpre * s.features[j];
            }
            grad.b1[i] += dpre;
        }
    }
    return total_loss;
}

PpoConfig parse_ppo_config(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(ErrorKind::Parse, "ppo config must be a JSON object");
    }
    static const std::set<std::string> known = {
        "clip_epsilon", "learning_rate", "episodes",        "batch_size",
        "discount",     "entropy_coef",  "epochs_per_batch", "seed"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) fail(ErrorKind::Parse, "unknown ppo config field: " + key);
    }
    PpoConfig cfg;
    auto num = [&](const char* key, double fallback) {
        if (!j.contains(key)) return fallback;
        if (!j[key].is_number()) {
            fail(ErrorKind::Parse, std::string("ppo config field ") + key +
                                       " must be a number");
        }
        return j[key].get<double>();
    };
    cfg.clip_epsilon = num("clip_epsilon", cfg.clip_epsilon);
    cfg.learning_rate = num("learning_rate", cfg.learning_rate);
    cfg.episodes = static_cast<uint64_t>(num("episodes", static_cast<double>(cfg.episodes)));
    cfg.batch_size =
        static_cast<uint64_t>(num("batch_size", static_cast<double>(cfg.batch_size)));
    cfg.discount = num("discount", cfg.discount);
    cfg.entropy_coef = num("entropy_coef", cfg.entropy_coef);
    cfg.epochs_per_batch = static_cast<uint64_t>(
        num("epochs_per_batch", static_cast<double>(cfg.epochs_per_batch)));
    cfg.seed = static_cast<uint64_t>(num("seed", static_cast<double>(cfg.seed)));
    if (cfg.clip_epsilon <= 0.0) fail(ErrorKind::Validation, "clip_epsilon must be > 0");
    if (cfg.batch_size < 1) fail(ErrorKind::Validation, "batch_size must be >= 1");
    if (cfg.discount < 0.0 || cfg.discount > 1.0) {
        fail(ErrorKind::Validation, "discount must be in [0,1]");
    }
    return cfg;
}

PpoConfig load_ppo_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open ppo config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_ppo_config(buf.str());
}

MdpEnv::MdpEnv(HierarchyNode tree, RewardConfig reward_cfg, int64_t total_budget,
               EmbeddingVector query_vec, SummaryBudgets budgets)
    : tree_(std::move(tree)),
      reward_cfg_(std::move(reward_cfg)),
      total_budget_(total_budget),
      query_vec_(std::move(query_vec)),
      budgets_(budgets) {
    reset(0);
}

void MdpEnv::reset(uint64_t episode_seed) {
    (void)episode_seed;
    state_ = initial_state(tree_, total_budget_, query_vec_, budgets_);
}

StepResult MdpEnv::step(ActionKind action) {
    StepResult res = mdp_step(state_, action, tree_, reward_cfg_);
    state_ = res.state;
    return res;
}

double MdpEnv::forced_stop_reward() const {
    return terminal_reward(state_, tree_, reward_cfg_);
}

size_t MdpEnv::step_cap() const { return tree_node_count(tree_) * 3 + 1; }

namespace {

struct EpisodeStep {
    std::array<double, kFeatureDim> features{};
    size_t action = 0;
    double logpi = 0.0;
    double value = 0.0;
};

struct Episode {
    std::vector<EpisodeStep> steps;
    double final_reward = 0.0;
};

Episode run_episode(CompressionEnv& env, const PolicyParams& params, uint64_t episode_seed,
                    bool sample) {
    env.reset(episode_seed);
    std::mt19937_64 gen(fnv1a64("episode", episode_seed));
    Episode ep;
    size_t cap = env.step_cap();
    for (size_t step = 0; step < cap; ++step) {
        std::array<double, kFeatureDim> features = featurize(env.state(), env.tree());
        PolicyForward fwd = policy_forward(params, features);
        size_t action = 0;
        if (sample) {
            double r = unit_double(gen());
            double acc = 0.0;
            action = kActionCount - 1;
            for (size_t a = 0; a < kActionCount; ++a) {
                acc += fwd.probs[a];
                if (r < acc) {
                    action = a;
                    break;
                }
            }
        } else {
            for (size_t a = 1; a < kActionCount; ++a) {
                if (fwd.probs[a] > fwd.probs[action]) action = a;
            }
        }
        EpisodeStep es;
        es.features = features;
        es.action = action;
        es.logpi = std::log(std::max(fwd.probs[action], 1e-300));
        es.value = fwd.value;
        ep.steps.push_back(es);
        StepResult res = env.step(static_cast<ActionKind>(action));
        if (res.terminal) {
            ep.final_reward = res.reward;
            return ep;
        }
    }
    ep.final_reward = env.forced_stop_reward();
    return ep;
}

struct AdamState {
    PolicyParams m;
    PolicyParams v;
    uint64_t t = 0;
};

void adam_update(PolicyParams& params, const PolicyParams& grad, AdamState& adam,
                 double lr) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    ++adam.t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.t));
    auto upd = [&](std::vector<double>& w, const std::vector<double>& g,
                   std::vector<double>& m, std::vector<double>& v) {
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            double mh = m[i] / bc1;
            double vh = v[i] / bc2;
            w[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    };
    upd(params.w1, grad.w1, adam.m.w1, adam.v.w1);
    upd(params.b1, grad.b1, adam.m.b1, adam.v.b1);
    upd(params.w2, grad.w2, adam.m.w2, adam.v.w2);
    upd(params.b2, grad.b2, adam.m.b2, adam.v.b2);
    upd(params.wa, grad.wa, adam.m.wa, adam.v.wa);
    upd(params.ba, grad.ba, adam.m.ba, adam.v.ba);
    upd(params.wv, grad.wv, adam.m.wv, adam.v.wv);
    upd(params.bv, grad.bv, adam.m.bv, adam.v.bv);
}

}  // namespace

PolicyParams ppo_train_env(CompressionEnv& env, const PpoConfig& cfg, TrainLog* log) {
    PolicyParams params = init_params(cfg.seed);
    if (cfg.episodes == 0) return params;

    AdamState adam;
    zero_like(params, adam.m);
    zero_like(params, adam.v);

    constexpr double kValueCoef = 0.5;
    uint64_t done = 0;
    uint64_t batch_index = 0;
    while (done < cfg.episodes) {
        uint64_t batch_n = std::min<uint64_t>(cfg.batch_size, cfg.episodes - done);
        std::vector<LossSample> samples;
        double return_sum = 0.0;
        for (uint64_t e = 0; e < batch_n; ++e) {
            uint64_t episode_seed = cfg.seed * 1000003ULL + done + e;
            Episode ep = run_episode(env, params, episode_seed, true);
            return_sum += ep.final_reward;
            size_t T = ep.steps.size();
            for (size_t t = 0; t < T; ++t) {
                double ret = ep.final_reward *
                             std::pow(cfg.discount, static_cast<double>(T - 1 - t));
                LossSample s;
                s.features = ep.steps[t].features;
                s.action = ep.steps[t].action;
                s.advantage = ret - ep.steps[t].value;
                s.old_logpi = ep.steps[t].logpi;
                s.value_target = ret;
                samples.push_back(s);
            }
        }
        done += batch_n;
        if (log) log->batch_mean_return.push_back(return_sum / static_cast<double>(batch_n));

        PolicyParams grad;
        for (uint64_t epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
            double loss = loss_and_grad(params, samples, cfg.clip_epsilon, kValueCoef,
                                        cfg.entropy_coef, grad);
            if (!std::isfinite(loss)) {
                fail(ErrorKind::State,
                     "ppo training diverged: non-finite loss at batch " +
                         std::to_string(batch_index) + " epoch " + std::to_string(epoch));
            }
            adam_update(params, grad, adam, cfg.learning_rate);
        }
        ++batch_index;
    }
    return params;
}

double rollout_return(CompressionEnv& env, const PolicyParams* params,
                      uint64_t episode_seed) {
    env.reset(episode_seed);
    size_t cap = env.step_cap();
    for (size_t step = 0; step < cap; ++step) {
        ActionKind action;
        if (params) {
            action = policy_act(*params, env.state(), env.tree(), true, 0);
        } else {
            action = heuristic_policy(env.state(), env.tree());
        }
        size_t before = env.state().node_status.size();
        CompressionState prev = env.state();
        StepResult res = env.step(action);
        if (res.terminal) return res.reward;
        (void)before;
        // Deterministic actors repeat a no-op forever; cut to the forced stop.
        if (res.state.node_status == prev.node_status) {
            return env.forced_stop_reward();
        }
    }
    return env.forced_stop_reward();
}

namespace {

constexpr char kPolicyMagic[8] = {'C', 'T', 'X', 'P', 'O', 'L', '0', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32_array(std::ostream& out, const std::vector<double>& values) {
    for (double x : values) {
        float f = static_cast<float>(x);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

void read_f32_array(std::istream& in, std::vector<double>& values, size_t n) {
    values.resize(n);
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits = read_u32(in);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = static_cast<double>(f);
    }
}

}  // namespace

void save_policy(const PolicyParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write policy file: " + path);
    out.write(kPolicyMagic, sizeof(kPolicyMagic));
    write_u32(out, kFeatureDim);
    write_u32(out, kHiddenDim);
    write_u32(out, kActionCount);
    write_f32_array(out, params.w1);
    write_f32_array(out, params.b1);
    write_f32_array(out, params.w2);
    write_f32_array(out, params.b2);
    write_f32_array(out, params.wa);
    write_f32_array(out, params.ba);
    write_f32_array(out, params.wv);
    write_f32_array(out, params.bv);
    if (!out) fail(ErrorKind::Io, "failed writing policy file: " + path);
}

PolicyParams load_policy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open policy file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kPolicyMagic, 8) != 0) {
        fail(ErrorKind::Parse, "not a policy file: " + path);
    }
    uint32_t input = read_u32(in);
    uint32_t hidden = read_u32(in);
    uint32_t actions = read_u32(in);
    if (input != kFeatureDim || hidden != kHiddenDim || actions != kActionCount) {
        fail(ErrorKind::Parse, "policy dimension mismatch in " + path);
    }
    PolicyParams p;
    read_f32_array(in, p.w1, kHiddenDim * kFeatureDim);
    read_f32_array(in, p.b1, kHiddenDim);
    read_f32_array(in, p.w2, kHiddenDim * kHiddenDim);
    read_f32_array(in, p.b2, kHiddenDim);
    read_f32_array(in, p.wa, kActionCount * kHiddenDim);
    read_f32_array(in, p.ba, kActionCount);
    read_f32_array(in, p.wv, kHiddenDim);
    read_f32_array(in, p.bv, 1);
    if (!in) fail(ErrorKind::Parse, "truncated policy file: " + path);
    return p;
}

}  // namespace ctxforge
