#include "wgkv/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace wgkv {

MaskedOracle::MaskedOracle(const ToyModel& model, long window) : model_(model), window_(window) {
    if (window < 1) throw std::invalid_argument("MaskedOracle: window must be >= 1");
    const auto& cfg = model.cfg;
    k_hist_.assign(static_cast<size_t>(cfg.layers), {});
    v_hist_.assign(static_cast<size_t>(cfg.layers), {});
    for (int l = 0; l < cfg.layers; ++l) {
        k_hist_[l].assign(static_cast<size_t>(cfg.kv_heads), Matrix(0, cfg.head_dim));
        v_hist_[l].assign(static_cast<size_t>(cfg.kv_heads), Matrix(0, cfg.head_dim));
    }
}

std::vector<double> MaskedOracle::forward_token(int token, const GateTrace& trace) {
    const auto& cfg = model_.cfg;
    if (token < 0 || token >= cfg.vocab) throw std::invalid_argument("MaskedOracle: unknown token id");
    const long pos = next_pos_++;
    const int d = cfg.head_dim;
    const int dim = cfg.model_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double neg_inf = -std::numeric_limits<double>::infinity();

    const auto e = model_.embed.row(token);
    std::vector<double> x(e.begin(), e.end());

    for (int l = 0; l < cfg.layers; ++l) {
        const auto& w = model_.layers[static_cast<size_t>(l)];
        const auto a = rmsnorm(x, cfg.rms_eps);

        // extend the full history with this token's KV
        for (int h = 0; h < cfg.kv_heads; ++h) {
            std::vector<double> k_pre(static_cast<size_t>(d));
            std::vector<double> v_new(static_cast<size_t>(d));
            for (int r = 0; r < d; ++r) {
                k_pre[r] = dot(w.wk.row(h * d + r), a);
                v_new[r] = dot(w.wv.row(h * d + r), a);
            }
            apply_rope_inplace(k_pre, pos, cfg.rope());
            auto& kh = k_hist_[l][h];
            auto& vh = v_hist_[l][h];
            kh.data.insert(kh.data.end(), k_pre.begin(), k_pre.end());
            kh.rows += 1;
            vh.data.insert(vh.data.end(), v_new.begin(), v_new.end());
            vh.rows += 1;
        }

        std::vector<double> concat(static_cast<size_t>(cfg.q_heads) * d, 0.0);
        for (int p = 0; p < cfg.q_heads; ++p) {
            const int h = p / cfg.group_size();
            std::vector<double> q(static_cast<size_t>(d));
            for (int r = 0; r < d; ++r) q[r] = dot(w.wq.row(p * d + r), a);
            apply_rope_inplace(q, pos, cfg.rope());

            const auto& kh = k_hist_[l][h];
            const auto& vh = v_hist_[l][h];
            std::vector<double> logits(static_cast<size_t>(pos + 1));
            for (long j = 0; j <= pos; ++j) {
                const bool in_window = pos - j < window_;
                const bool admitted =
                    in_window ? true : trace.bits[static_cast<size_t>(l)][static_cast<size_t>(h)][static_cast<size_t>(j)] != 0;
                logits[static_cast<size_t>(j)] = admitted ? scale * dot(q, kh.row(j)) : neg_inf;
            }
            const auto weights = softmax_stable(logits);
            for (long j = 0; j <= pos; ++j) {
                if (weights[static_cast<size_t>(j)] == 0.0) continue;
                auto v_row = vh.row(j);
                for (int r = 0; r < d; ++r) concat[static_cast<size_t>(p) * d + r] += weights[static_cast<size_t>(j)] * v_row[r];
            }
        }

        for (int r = 0; r < dim; ++r) x[static_cast<size_t>(r)] += dot(w.wo.row(r), concat);

        const auto b = rmsnorm(x, cfg.rms_eps);
        std::vector<double> hm(static_cast<size_t>(cfg.mlp_hidden));
        for (int r = 0; r < cfg.mlp_hidden; ++r) hm[r] = gelu(dot(w.w_mlp1.row(r), b));
        for (int r = 0; r < dim; ++r) x[static_cast<size_t>(r)] += dot(w.w_mlp2.row(r), hm);
    }

    return rmsnorm(x, cfg.rms_eps);
}

Matrix MaskedOracle::prefill(std::span<const int> tokens, const GateTrace& trace) {
    Matrix hidden(static_cast<long>(tokens.size()), model_.cfg.model_dim());
    for (size_t t = 0; t < tokens.size(); ++t) {
        const auto row = forward_token(tokens[t], trace);
        std::copy(row.begin(), row.end(), hidden.row(static_cast<long>(t)).begin());
    }
    return hidden;
}

std::vector<double> MaskedOracle::decode_step(int token, const GateTrace& trace) {
    const auto hidden = forward_token(token, trace);
    return logits_from_hidden_row(model_, hidden);
}

Matrix teacher_forward(const ToyModel& model, std::span<const int> tokens) {
    MaskedOracle oracle(model, 1L << 60);
    return oracle.prefill(tokens, GateTrace{});
}

}  // namespace wgkv
