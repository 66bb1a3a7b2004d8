#pragma once

#include <cstdint>
#include <string>

#include "ctxforge/rank.hpp"
#include "ctxforge/summarize.hpp"

namespace ctxforge {

enum class PolicyMode { Heuristic, Learned, Off };

const char* policy_mode_name(PolicyMode mode);
const char* prior_mode_name(PriorMode mode);

// Every knob the engine exposes. k_segments == 0 means "auto"
// (round(sqrt(document count))). Serializes to canonical JSON (sorted keys)
// whose FNV-1a-64 hex feeds CacheSnapshot.config_digest.
struct EngineConfig {
    uint64_t token_budget = 4096;
    double alpha = 0.7;
    uint64_t buffer_n = 8;
    double top_fraction = 0.4;
    PriorMode prior_mode = PriorMode::CentroidSimilarity;
    double relevance_threshold = 0.55;
    uint64_t doc_summary_tokens = 64;
    uint64_t para_summary_tokens = 24;
    double keep_fraction = 0.85;
    uint64_t k_segments = 0;
    uint64_t max_segments = 2;
    double tau = 0.6;
    uint64_t retrieval_m = 3;
    uint64_t miss_summary_tokens = 24;
    PolicyMode policy_mode = PolicyMode::Heuristic;
    std::string policy_path;
    double lambda_cost = 1.0;
    uint64_t seed = 42;

    SummaryBudgets summary_budgets() const {
        return SummaryBudgets{doc_summary_tokens, para_summary_tokens};
    }
    DescentConfig descent_config() const { return DescentConfig{relevance_threshold}; }

    // Ablation switches (cli --ablate values).
    void apply_ablation(const std::string& name);

    void validate() const;
    std::string canonical_json() const;
    std::string digest() const;
};

EngineConfig parse_engine_config(const std::string& json_text);
EngineConfig load_engine_config(const std::string& path);

}  // namespace ctxforge
