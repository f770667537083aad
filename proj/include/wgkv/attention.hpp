#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "wgkv/gating.hpp"
#include "wgkv/numerics.hpp"

namespace wgkv {

// Counts (q,k) dot products actually evaluated. Value mixing is
// proportional and not counted separately.
struct OpCounter {
    uint64_t score_evals = 0;
    void merge(const OpCounter& other) { score_evals += other.score_evals; }
};

// Causal attention inputs. Q row i sits at absolute position
// causal_offset + i and may attend K rows j <= causal_offset + i.
struct AttnInput {
    const Matrix& q;
    const Matrix& k;
    const Matrix& v;
    double scale;             // typically 1/sqrt(head_dim)
    long causal_offset = 0;
};

// Vertical-slash prefill mask: pair (i,j) permitted when j is within the
// local window of i or token j was admitted (g_j >= tau).
struct VsMask {
    long window = 1;
    std::vector<uint8_t> admitted;

    bool allowed(long i, long j) const { return (i - j) < window || admitted[static_cast<size_t>(j)] != 0; }
};

Matrix attn_dense(const AttnInput& input, OpCounter* counter = nullptr);

// Generic per-pair weighted causal softmax: weight(i,j) multiplies
// exp(scale * q_i.k_j) before row normalization. i and j are absolute
// positions. Both write-gated forms and their equivalence tests are built
// on this; a weight of exactly 0 removes the pair exactly.
Matrix attn_pair_weighted(const AttnInput& input, const std::function<double(long, long)>& weight,
                          OpCounter* counter = nullptr);

// Multiplicative write-gated attention: weight = 1 inside the window,
// g_j outside.
Matrix attn_write_gated_mul(const AttnInput& input, std::span<const double> gates, long window,
                            OpCounter* counter = nullptr);

// Log-space form: adds log(g_tilde + epsilon) to the scaled scores. Equals
// the multiplicative form evaluated on weights (g_tilde + epsilon).
Matrix attn_write_gated_logbias(const AttnInput& input, std::span<const double> gates, long window,
                                double epsilon, OpCounter* counter = nullptr);

VsMask build_vs_mask(std::span<const double> gates, Threshold threshold, long window);

// Softmax restricted to permitted pairs; score_evals counts exactly the
// permitted pairs.
Matrix attn_vertical_slash(const AttnInput& input, const VsMask& mask, OpCounter* counter = nullptr);

// Single-query decode attention over the concatenation global || local.
// Visibility is binary by construction; no gate weighting at inference.
std::vector<double> attn_ragged(std::span<const double> q, const Matrix& global_k, const Matrix& global_v,
                                const Matrix& local_k, const Matrix& local_v, double scale,
                                OpCounter* counter = nullptr);

// Permitted-pair count of a vertical-slash mask over queries
// [0, query_count) against keys [0, key_count); the analytic value
// score_evals must match.
uint64_t vs_mask_pair_count(const VsMask& mask, long query_count, long key_count, long causal_offset = 0);

}  // namespace wgkv
