#include "ctxforge/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ctxforge/common.hpp"

namespace ctxforge {

const char* policy_mode_name(PolicyMode mode) {
    switch (mode) {
        case PolicyMode::Heuristic: return "heuristic";
        case PolicyMode::Learned: return "learned";
        case PolicyMode::Off: return "off";
    }
    return "unknown";
}

const char* prior_mode_name(PriorMode mode) {
    return mode == PriorMode::Uniform ? "uniform" : "centroid";
}

void EngineConfig::apply_ablation(const std::string& name) {
    if (name == "no-rank") {
        alpha = 0.0;
        prior_mode = PriorMode::Uniform;
    } else if (name == "no-hier") {
        relevance_threshold = 1.0;
    } else if (name == "no-policy") {
        policy_mode = PolicyMode::Off;
    } else {
        fail(ErrorKind::Validation, "unknown ablation: " + name +
                                        " (expected no-rank, no-hier or no-policy)");
    }
}

void EngineConfig::validate() const {
    auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (token_budget < 1) fail(ErrorKind::Validation, "token_budget must be >= 1");
    if (!in01(alpha)) fail(ErrorKind::Validation, "alpha must be in [0,1]");
    if (buffer_n < 1) fail(ErrorKind::Validation, "buffer_n must be >= 1");
    if (top_fraction <= 0.0 || top_fraction > 1.0) {
        fail(ErrorKind::Validation, "top_fraction must be in (0,1]");
    }
    if (!in01(relevance_threshold)) {
        fail(ErrorKind::Validation, "relevance_threshold must be in [0,1]");
    }
    if (doc_summary_tokens < 1) fail(ErrorKind::Validation, "doc_summary_tokens must be >= 1");
    if (para_summary_tokens < 1) fail(ErrorKind::Validation, "para_summary_tokens must be >= 1");
    if (keep_fraction <= 0.0 || keep_fraction > 1.0) {
        fail(ErrorKind::Validation, "keep_fraction must be in (0,1]");
    }
    if (max_segments < 1) fail(ErrorKind::Validation, "max_segments must be >= 1");
    if (!in01(tau)) fail(ErrorKind::Validation, "tau must be in [0,1]");
    if (retrieval_m < 1) fail(ErrorKind::Validation, "retrieval_m must be >= 1");
    if (miss_summary_tokens < 1) fail(ErrorKind::Validation, "miss_summary_tokens must be >= 1");
    if (lambda_cost < 0.0) fail(ErrorKind::Validation, "lambda_cost must be >= 0");
    if (policy_mode == PolicyMode::Learned && policy_path.empty()) {
        fail(ErrorKind::Validation, "policy_mode=learned requires policy_path");
    }
}

std::string EngineConfig::canonical_json() const {
    // nlohmann object keys are sorted, so dump() is already canonical.
    nlohmann::json j;
    j["token_budget"] = token_budget;
    j["alpha"] = alpha;
    j["buffer_n"] = buffer_n;
    j["top_fraction"] = top_fraction;
    j["prior_mode"] = prior_mode_name(prior_mode);
    j["relevance_threshold"] = relevance_threshold;
    j["doc_summary_tokens"] = doc_summary_tokens;
    j["para_summary_tokens"] = para_summary_tokens;
    j["keep_fraction"] = keep_fraction;
    j["k_segments"] = k_segments == 0 ? nlohmann::json("auto") : nlohmann::json(k_segments);
    j["max_segments"] = max_segments;
    j["tau"] = tau;
    j["retrieval_m"] = retrieval_m;
    j["miss_summary_tokens"] = miss_summary_tokens;
    j["policy_mode"] = policy_mode_name(policy_mode);
    j["policy_path"] = policy_path;
    j["lambda_cost"] = lambda_cost;
    j["seed"] = seed;
    return j.dump();
}

std::string EngineConfig::digest() const {
    return to_hex(fnv1a64(canonical_json()));
}

namespace {

uint64_t get_uint(const nlohmann::json& j, const char* key, uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer() && !j[key].is_number_unsigned()) {
        fail(ErrorKind::Parse, std::string("config field ") + key + " must be an integer");
    }
    int64_t v = j[key].get<int64_t>();
    if (v < 0) fail(ErrorKind::Parse, std::string("config field ") + key + " must be >= 0");
    return static_cast<uint64_t>(v);
}

double get_real(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) {
        fail(ErrorKind::Parse, std::string("config field ") + key + " must be a number");
    }
    return j[key].get<double>();
}

std::string get_string(const nlohmann::json& j, const char* key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_string()) {
        fail(ErrorKind::Parse, std::string("config field ") + key + " must be a string");
    }
    return j[key].get<std::string>();
}

}  // namespace

EngineConfig parse_engine_config(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(ErrorKind::Parse, "engine config must be a JSON object");
    }
    static const std::set<std::string> known = {
        "token_budget", "alpha", "buffer_n", "top_fraction", "prior_mode",
        "relevance_threshold", "doc_summary_tokens", "para_summary_tokens",
        "keep_fraction", "k_segments", "max_segments", "tau", "retrieval_m",
        "miss_summary_tokens", "policy_mode", "policy_path", "lambda_cost", "seed"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) fail(ErrorKind::Parse, "unknown config field: " + key);
    }

    EngineConfig cfg;
    cfg.token_budget = get_uint(j, "token_budget", cfg.token_budget);
    cfg.alpha = get_real(j, "alpha", cfg.alpha);
    cfg.buffer_n = get_uint(j, "buffer_n", cfg.buffer_n);
    cfg.top_fraction = get_real(j, "top_fraction", cfg.top_fraction);
    std::string prior = get_string(j, "prior_mode", prior_mode_name(cfg.prior_mode));
    if (prior == "uniform") {
        cfg.prior_mode = PriorMode::Uniform;
    } else if (prior == "centroid") {
        cfg.prior_mode = PriorMode::CentroidSimilarity;
    } else {
        fail(ErrorKind::Parse, "prior_mode must be \"uniform\" or \"centroid\"");
    }
    cfg.relevance_threshold = get_real(j, "relevance_threshold", cfg.relevance_threshold);
    cfg.doc_summary_tokens = get_uint(j, "doc_summary_tokens", cfg.doc_summary_tokens);
    cfg.para_summary_tokens = get_uint(j, "para_summary_tokens", cfg.para_summary_tokens);
    cfg.keep_fraction = get_real(j, "keep_fraction", cfg.keep_fraction);
    if (j.contains("k_segments") && j["k_segments"].is_string()) {
        if (j["k_segments"].get<std::string>() != "auto") {
            fail(ErrorKind::Parse, "k_segments must be an integer or \"auto\"");
        }
        cfg.k_segments = 0;
    } else {
        cfg.k_segments = get_uint(j, "k_segments", cfg.k_segments);
    }
    cfg.max_segments = get_uint(j, "max_segments", cfg.max_segments);
    cfg.tau = get_real(j, "tau", cfg.tau);
    cfg.retrieval_m = get_uint(j, "retrieval_m", cfg.retrieval_m);
    cfg.miss_summary_tokens = get_uint(j, "miss_summary_tokens", cfg.miss_summary_tokens);
    std::string mode = get_string(j, "policy_mode", policy_mode_name(cfg.policy_mode));
    if (mode == "heuristic") {
        cfg.policy_mode = PolicyMode::Heuristic;
    } else if (mode == "learned") {
        cfg.policy_mode = PolicyMode::Learned;
    } else if (mode == "off") {
        cfg.policy_mode = PolicyMode::Off;
    } else {
        fail(ErrorKind::Parse, "policy_mode must be \"heuristic\", \"learned\" or \"off\"");
    }
    cfg.policy_path = get_string(j, "policy_path", cfg.policy_path);
    cfg.lambda_cost = get_real(j, "lambda_cost", cfg.lambda_cost);
    cfg.seed = get_uint(j, "seed", cfg.seed);
    cfg.validate();
    return cfg;
}

EngineConfig load_engine_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_engine_config(buf.str());
}

}  // namespace ctxforge
