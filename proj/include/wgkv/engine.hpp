#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wgkv/attention.hpp"
#include "wgkv/gating.hpp"
#include "wgkv/kvstore.hpp"
#include "wgkv/model.hpp"
#include "wgkv/records.hpp"

namespace wgkv {

enum class PolicyKind { full, wgkv, local_sink, static_heads, wgkv_plus_topk };

const char* policy_name(PolicyKind kind);
PolicyKind policy_from_name(const std::string& name);

// Synthetic admission pattern for accounting experiments; overrides the
// learned gate score with 1/0.
struct ForcedAdmission {
    enum class Mode { none, stride, recent_fraction };
    Mode mode = Mode::none;
    long keep_every = 4;     // stride: admit positions with pos % keep_every == phase
    long phase = 0;
    double fraction = 0.25;  // recent_fraction: admit the newest fraction of pre-window prompt positions
};

struct PolicyConfig {
    PolicyKind kind = PolicyKind::wgkv;
    long window = 256;
    long sink = 128;
    Threshold threshold{0.1};
    std::vector<uint8_t> retrieval_bitmap;  // static_heads: layers * kv_heads entries
    long topk_budget = 0;                   // wgkv_plus_topk: global pages kept per query; 0 = all
    ForcedAdmission forced;
};

struct StepReport {
    long step = 0;  // 0 = prefill
    uint64_t score_evals = 0;
};

struct RunReport {
    std::vector<StepReport> per_step;
    CacheStats cache;
    std::vector<double> per_head_admitted;  // [layer * kv_heads]
    std::vector<int> outputs;               // generated ids (prompt excluded)
    std::optional<double> l_distill;        // filled by callers that evaluate it
    uint64_t total_score_evals() const;
};

// Global pages selected for one query, in logical (position) order.
struct SelectedPages {
    std::vector<long> logical_pages;
    Matrix k, v;
    long entries = 0;
};

// Scores each global page by the max dot product of the query against its
// keys, keeps the top `budget` pages (ties toward older pages), and returns
// them in logical order. The local region always rides along separately.
SelectedPages select_topk_pages(std::span<const double> q, const HeadCache& cache, const KvPool& pool,
                                long budget);

// One generation run: paged dual-cache state plus its admission trace.
// prefill must be called exactly once before decode_step.
class Session {
public:
    Session(const ToyModel& model, const GateBank& gates, const PolicyConfig& policy, long max_total_tokens,
            long capacity_pages_override = -1);

    // Vertical-slash masked forward over the prompt; populates every head
    // cache and returns final hidden states [T x model_dim].
    Matrix prefill(std::span<const int> tokens);

    // Lazy-promotion decode of one token; returns next-token logits.
    std::vector<double> decode_step(int token);

    const GateTrace& trace() const { return trace_; }
    std::span<const HeadCache> caches() const { return {caches_.data(), caches_.size()}; }
    const HeadCache& cache_at(int layer, int head) const;
    const KvPool& pool() const { return pool_; }
    const PolicyConfig& policy() const { return policy_; }
    long position() const { return next_pos_; }
    uint64_t prefill_score_evals() const { return prefill_score_evals_; }
    uint64_t last_step_score_evals() const { return last_step_score_evals_; }

    CacheStats stats() const;
    std::vector<double> per_head_admitted() const;
    void release();  // return every page to the pool

private:
    double effective_gate(int layer, int head, long position, double mlp_gate) const;
    bool uses_mlp_gates() const {
        return policy_.kind == PolicyKind::wgkv || policy_.kind == PolicyKind::wgkv_plus_topk;
    }

    const ToyModel& model_;
    const GateBank& gates_;
    PolicyConfig policy_;
    long prompt_len_ = 0;  // fixes the recent_fraction cutoff
    KvPool pool_;
    std::vector<HeadCache> caches_;  // [layer * kv_heads]
    GateTrace trace_;
    long next_pos_ = 0;
    bool prefilled_ = false;
    uint64_t prefill_score_evals_ = 0;
    uint64_t last_step_score_evals_ = 0;
};

// Greedy decoding: prefill the prompt, then `steps` argmax decode steps.
// Returns prompt + generated ids and the aggregated report.
std::pair<std::vector<int>, RunReport> generate(const ToyModel& model, const GateBank& gates,
                                                std::span<const int> prompt, long steps,
                                                const PolicyConfig& policy);

}  // namespace wgkv
