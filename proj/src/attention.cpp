#include "wgkv/attention.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wgkv {

namespace {

void check_shapes(const AttnInput& input) {
    if (input.k.rows != input.v.rows) throw std::invalid_argument("attn: K and V row counts differ");
    if (input.q.cols != input.k.cols) throw std::invalid_argument("attn: Q and K dims differ");
}

}  // namespace

Matrix attn_dense(const AttnInput& input, OpCounter* counter) {
    check_shapes(input);
    Matrix out(input.q.rows, input.v.cols);
    for (long i = 0; i < input.q.rows; ++i) {
        const long limit = std::min(input.k.rows - 1, input.causal_offset + i);
        if (limit < 0) throw std::runtime_error("attn_dense: fully masked row");
        std::vector<double> logits(static_cast<size_t>(limit + 1));
        for (long j = 0; j <= limit; ++j) logits[j] = input.scale * dot(input.q.row(i), input.k.row(j));
        if (counter) counter->score_evals += static_cast<uint64_t>(limit + 1);
        const auto weights = softmax_stable(logits);
        auto out_row = out.row(i);
        for (long j = 0; j <= limit; ++j) {
            auto v_row = input.v.row(j);
            for (long c = 0; c < input.v.cols; ++c) out_row[c] += weights[j] * v_row[c];
        }
    }
    return out;
}

Matrix attn_pair_weighted(const AttnInput& input, const std::function<double(long, long)>& weight,
                          OpCounter* counter) {
    check_shapes(input);
    Matrix out(input.q.rows, input.v.cols);
    for (long r = 0; r < input.q.rows; ++r) {
        const long i = input.causal_offset + r;
        const long limit = std::min(input.k.rows - 1, i);
        if (limit < 0) throw std::runtime_error("attn_pair_weighted: fully masked row");

        // max over raw scores keeps exp in range; weights scale afterwards
        std::vector<double> scores(static_cast<size_t>(limit + 1));
        double max_score = -std::numeric_limits<double>::infinity();
        for (long j = 0; j <= limit; ++j) {
            scores[j] = input.scale * dot(input.q.row(r), input.k.row(j));
            max_score = std::max(max_score, scores[j]);
        }
        if (counter) counter->score_evals += static_cast<uint64_t>(limit + 1);

        std::vector<double> w(static_cast<size_t>(limit + 1));
        double sum = 0.0;
        for (long j = 0; j <= limit; ++j) {
            w[j] = std::exp(scores[j] - max_score) * weight(i, j);
            sum += w[j];
        }
        if (sum <= 0.0) throw std::runtime_error("attn_pair_weighted: fully suppressed row");

        auto out_row = out.row(r);
        for (long j = 0; j <= limit; ++j) {
            if (w[j] == 0.0) continue;
            const double p = w[j] / sum;
            auto v_row = input.v.row(j);
            for (long c = 0; c < input.v.cols; ++c) out_row[c] += p * v_row[c];
        }
    }
    return out;
}

Matrix attn_write_gated_mul(const AttnInput& input, std::span<const double> gates, long window,
                            OpCounter* counter) {
    if (window < 1) throw std::invalid_argument("attn_write_gated_mul: window must be >= 1");
    if (static_cast<long>(gates.size()) != input.k.rows)
        throw std::invalid_argument("attn_write_gated_mul: gates length != K rows");
    return attn_pair_weighted(
        input, [&gates, window](long i, long j) { return (i - j) < window ? 1.0 : gates[static_cast<size_t>(j)]; },
        counter);
}

Matrix attn_write_gated_logbias(const AttnInput& input, std::span<const double> gates, long window,
                                double epsilon, OpCounter* counter) {
    if (window < 1) throw std::invalid_argument("attn_write_gated_logbias: window must be >= 1");
    if (epsilon <= 0.0) throw std::invalid_argument("attn_write_gated_logbias: epsilon must be > 0");
    if (static_cast<long>(gates.size()) != input.k.rows)
        throw std::invalid_argument("attn_write_gated_logbias: gates length != K rows");
    check_shapes(input);

    Matrix out(input.q.rows, input.v.cols);
    for (long r = 0; r < input.q.rows; ++r) {
        const long i = input.causal_offset + r;
        const long limit = std::min(input.k.rows - 1, i);
        if (limit < 0) throw std::runtime_error("attn_write_gated_logbias: fully masked row");

        std::vector<double> logits(static_cast<size_t>(limit + 1));
        for (long j = 0; j <= limit; ++j) {
            const double g_eff = (i - j) < window ? 1.0 : gates[static_cast<size_t>(j)];
            logits[j] = input.scale * dot(input.q.row(r), input.k.row(j)) + std::log(g_eff + epsilon);
        }
        if (counter) counter->score_evals += static_cast<uint64_t>(limit + 1);

        const auto weights = softmax_stable(logits);
        auto out_row = out.row(r);
        for (long j = 0; j <= limit; ++j) {
            auto v_row = input.v.row(j);
            for (long c = 0; c < input.v.cols; ++c) out_row[c] += weights[j] * v_row[c];
        }
    }
    return out;
}

VsMask build_vs_mask(std::span<const double> gates, Threshold threshold, long window) {
    VsMask mask;
    mask.window = window;
    mask.admitted = binarize(gates, threshold);
    return mask;
}

Matrix attn_vertical_slash(const AttnInput& input, const VsMask& mask, OpCounter* counter) {
    check_shapes(input);
    if (mask.window < 1) throw std::invalid_argument("attn_vertical_slash: window must be >= 1");
    if (static_cast<long>(mask.admitted.size()) != input.k.rows)
        throw std::invalid_argument("attn_vertical_slash: mask length != K rows");

    Matrix out(input.q.rows, input.v.cols);
    std::vector<long> permitted;
    std::vector<double> logits;
    for (long r = 0; r < input.q.rows; ++r) {
        const long i = input.causal_offset + r;
        const long limit = std::min(input.k.rows - 1, i);
        permitted.clear();
        logits.clear();
        for (long j = 0; j <= limit; ++j) {
            if (!mask.allowed(i, j)) continue;
            permitted.push_back(j);
            logits.push_back(input.scale * dot(input.q.row(r), input.k.row(j)));
        }
        if (permitted.empty()) throw std::runtime_error("attn_vertical_slash: fully masked row");
        if (counter) counter->score_evals += permitted.size();

        const auto weights = softmax_stable(logits);
        auto out_row = out.row(r);
        for (size_t n = 0; n < permitted.size(); ++n) {
            auto v_row = input.v.row(permitted[n]);
            for (long c = 0; c < input.v.cols; ++c) out_row[c] += weights[n] * v_row[c];
        }
    }
    return out;
}

std::vector<double> attn_ragged(std::span<const double> q, const Matrix& global_k, const Matrix& global_v,
                                const Matrix& local_k, const Matrix& local_v, double scale,
                                OpCounter* counter) {
    const long total = global_k.rows + local_k.rows;
    if (total == 0) throw std::runtime_error("attn_ragged: empty KV");
    if (local_k.rows == 0) throw std::invalid_argument("attn_ragged: local slice must contain the current token");

    std::vector<double> logits;
    logits.reserve(static_cast<size_t>(total));
    for (long j = 0; j < global_k.rows; ++j) logits.push_back(scale * dot(q, global_k.row(j)));
    for (long j = 0; j < local_k.rows; ++j) logits.push_back(scale * dot(q, local_k.row(j)));
    if (counter) counter->score_evals += static_cast<uint64_t>(total);

    const auto weights = softmax_stable(logits);
    const long dim = local_v.cols;
    std::vector<double> out(static_cast<size_t>(dim), 0.0);
    for (long j = 0; j < global_k.rows; ++j) {
        auto v_row = global_v.row(j);
        for (long c = 0; c < dim; ++c) out[c] += weights[j] * v_row[c];
    }
    for (long j = 0; j < local_k.rows; ++j) {
        auto v_row = local_v.row(j);
        for (long c = 0; c < dim; ++c) out[c] += weights[global_k.rows + j] * v_row[c];
    }
    return out;
}

uint64_t vs_mask_pair_count(const VsMask& mask, long query_count, long key_count, long causal_offset) {
    uint64_t count = 0;
    for (long r = 0; r < query_count; ++r) {
        const long i = causal_offset + r;
        const long limit = std::min(key_count - 1, i);
        for (long j = 0; j <= limit; ++j)
            if (mask.allowed(i, j)) ++count;
    }
    return count;
}

}  // namespace wgkv
