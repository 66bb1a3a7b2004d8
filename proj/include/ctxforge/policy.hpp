#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctxforge/corpus.hpp"
#include "ctxforge/embed.hpp"
#include "ctxforge/summarize.hpp"

namespace ctxforge {

enum class NodeStatus : uint8_t { Full = 0, Summarized = 1, Pruned = 2 };

enum class ActionKind : uint8_t {
    PruneLowestScore = 0,
    SummarizeLargest = 1,
    DescendLowestScore = 2,
    Stop = 3,
};
constexpr size_t kActionCount = 4;

const char* action_name(ActionKind kind);

// Partially compressed hierarchy. The current representation is read off the
// status map: Pruned emits nothing, Summarized emits the node's level summary,
// a Full sentence emits itself, a Full internal node defers to its children.
// Invariant: whenever a node is non-Full, every descendant is Full (status
// applies at exactly one granularity along any root-to-leaf path).
struct CompressionState {
    std::map<std::string, NodeStatus> node_status;
    int64_t total_budget = 0;
    int64_t remaining_budget = 0;
    EmbeddingVector query_vec;
    SummaryBudgets summary_budgets;
};

struct RewardConfig {
    double lambda_cost = 1.0;
    // Planted critical sentence ids; quality = relevance-weighted fraction of
    // them still represented (verbatim on the frontier or selected into an
    // emitted summary). Empty set => quality 1.
    std::vector<std::string> critical_sentence_ids;
};

// One representation unit of the frontier.
struct FrontierUnit {
    std::string node_id;
    std::string text;   // sentence text or level summary
    size_t tokens = 0;
    double relevance = 0.0;  // clamp01(cos(unit text, query_vec))
    NodeStatus status = NodeStatus::Full;
};

CompressionState initial_state(const HierarchyNode& tree, int64_t total_budget,
                               EmbeddingVector query_vec, SummaryBudgets budgets);

std::vector<FrontierUnit> frontier_units(const CompressionState& state,
                                         const HierarchyNode& tree);

size_t tokens_used(const CompressionState& state, const HierarchyNode& tree);

// Relevance-weighted critical retention of the current representation.
double representation_quality(const CompressionState& state, const HierarchyNode& tree,
                              const RewardConfig& reward_cfg);

double terminal_reward(const CompressionState& state, const HierarchyNode& tree,
                       const RewardConfig& reward_cfg);

struct StepResult {
    CompressionState state;
    double reward = 0.0;
    bool terminal = false;
};

// PruneLowestScore: lowest-relevance frontier unit (tie: ascending node_id)
// becomes Pruned. SummarizeLargest: the largest-token Full internal node with
// an all-Full subtree (tie: ascending node_id) becomes Summarized.
// DescendLowestScore: the lowest-relevance Summarized node reverts to Full.
// Stop terminates with reward = quality - lambda * min(1, used/budget); the
// same formula fires when an action leaves remaining_budget < 0. Actions with
// no eligible node are no-ops (reward 0, non-terminal). A status entry whose
// node_id is missing from the tree is a Validation error.
StepResult mdp_step(const CompressionState& state, ActionKind action,
                    const HierarchyNode& tree, const RewardConfig& reward_cfg);

// Over budget -> PruneLowestScore; above 90% of budget -> SummarizeLargest;
// otherwise Stop.
ActionKind heuristic_policy(const CompressionState& state, const HierarchyNode& tree);

constexpr size_t kFeatureDim = 16;
constexpr size_t kHiddenDim = 128;

// 0..8   level x status counts / total nodes (level-major)
// 9      remaining_budget / total_budget, clamped to [-1, 1]
// 10..12 mean / max / min frontier relevance (0 when the frontier is empty)
// 13     constant 1 bias
// 14     min(tokens_used / total_budget, 2)
// 15     frontier unit count / total nodes
std::array<double, kFeatureDim> featurize(const CompressionState& state,
                                          const HierarchyNode& tree);

// x -> tanh(W1 x + b1) -> tanh(W2 h1 + b2) -> {action logits, value}.
struct PolicyParams {
    std::vector<double> w1;  // kHiddenDim x kFeatureDim, row-major
    std::vector<double> b1;  // kHiddenDim
    std::vector<double> w2;  // kHiddenDim x kHiddenDim
    std::vector<double> b2;  // kHiddenDim
    std::vector<double> wa;  // kActionCount x kHiddenDim
    std::vector<double> ba;  // kActionCount
    std::vector<double> wv;  // 1 x kHiddenDim
    std::vector<double> bv;  // 1

    size_t parameter_count() const;
};

PolicyParams init_params(uint64_t seed);

struct PolicyForward {
    std::array<double, kActionCount> probs{};
    std::array<double, kActionCount> logits{};
    double value = 0.0;
};

PolicyForward policy_forward(const PolicyParams& params,
                             const std::array<double, kFeatureDim>& features);

ActionKind policy_act(const PolicyParams& params, const CompressionState& state,
                      const HierarchyNode& tree, bool deterministic, uint64_t rng_seed);

// One PPO transition. The loss averaged over a batch is
//   -min(r * A, clip(r, 1-eps, 1+eps) * A)
//   + value_coef * (value - value_target)^2
//   - entropy_coef * H(pi)
// with r = exp(log pi(a) - old_logpi). Exposed (with its analytic gradient)
// for the finite-difference check.
struct LossSample {
    std::array<double, kFeatureDim> features{};
    size_t action = 0;
    double advantage = 0.0;
    double old_logpi = 0.0;
    double value_target = 0.0;
};

double loss_and_grad(const PolicyParams& params, const std::vector<LossSample>& samples,
                     double clip_epsilon, double value_coef, double entropy_coef,
                     PolicyParams& grad);

struct PpoConfig {
    double clip_epsilon = 0.2;
    double learning_rate = 3e-4;
    uint64_t episodes = 10000;
    uint64_t batch_size = 32;
    double discount = 1.0;
    double entropy_coef = 0.01;
    uint64_t epochs_per_batch = 4;
    uint64_t seed = 1;
};

PpoConfig parse_ppo_config(const std::string& json_text);
PpoConfig load_ppo_config(const std::string& path);

// Episode environment. reset(seed) fixes the episode; step() owns the
// transition so tests can plug in non-MDP dynamics (e.g. a bandit). Rollouts
// force-stop after step_cap() steps, collecting the terminal reward of the
// state reached so far.
class CompressionEnv {
public:
    virtual ~CompressionEnv() = default;
    virtual void reset(uint64_t episode_seed) = 0;
    virtual const HierarchyNode& tree() const = 0;
    virtual const CompressionState& state() const = 0;
    virtual StepResult step(ActionKind action) = 0;
    virtual double forced_stop_reward() const = 0;
    virtual size_t step_cap() const = 0;
};

// The standard environment: mdp_step over a fixed tree and reward config,
// cap 3 * nodes + 1.
class MdpEnv : public CompressionEnv {
public:
    MdpEnv(HierarchyNode tree, RewardConfig reward_cfg, int64_t total_budget,
           EmbeddingVector query_vec, SummaryBudgets budgets);

    void reset(uint64_t episode_seed) override;
    const HierarchyNode& tree() const override { return tree_; }
    const CompressionState& state() const override { return state_; }
    StepResult step(ActionKind action) override;
    double forced_stop_reward() const override;
    size_t step_cap() const override;

private:
    HierarchyNode tree_;
    RewardConfig reward_cfg_;
    int64_t total_budget_;
    EmbeddingVector query_vec_;
    SummaryBudgets budgets_;
    CompressionState state_;
};

struct TrainLog {
    std::vector<double> batch_mean_return;
};

PolicyParams ppo_train_env(CompressionEnv& env, const PpoConfig& cfg, TrainLog* log);

// Rolls out the deterministic policy (or the heuristic when params is null)
// and returns the terminal reward.
double rollout_return(CompressionEnv& env, const PolicyParams* params,
                      uint64_t episode_seed);

// Policy blob: magic "CTXPOL01", u32 dims (input, hidden, actions), then
// float32 LE arrays in declaration order (w1 b1 w2 b2 wa ba wv bv).
void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace ctxforge
