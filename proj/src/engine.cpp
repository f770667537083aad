#include "wgkv/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wgkv {

const char* policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::full: return "full";
        case PolicyKind::wgkv: return "wgkv";
        case PolicyKind::local_sink: return "local_sink";
        case PolicyKind::static_heads: return "static_heads";
        case PolicyKind::wgkv_plus_topk: return "wgkv_plus_topk";
    }
    return "unknown";
}

PolicyKind policy_from_name(const std::string& name) {
    if (name == "full") return PolicyKind::full;
    if (name == "wgkv") return PolicyKind::wgkv;
    if (name == "local_sink") return PolicyKind::local_sink;
    if (name == "static_heads") return PolicyKind::static_heads;
    if (name == "wgkv_plus_topk") return PolicyKind::wgkv_plus_topk;
    throw std::invalid_argument("unknown policy: " + name);
}

uint64_t RunReport::total_score_evals() const {
    uint64_t total = 0;
    for (const auto& s : per_step) total += s.score_evals;
    return total;
}

SelectedPages select_topk_pages(std::span<const double> q, const HeadCache& cache, const KvPool& pool,
                                long budget) {
    if (budget < 1) throw std::invalid_argument("select_topk_pages: budget must be >= 1");
    const auto& pages = cache.table().global_pages;
    const long n_pages = static_cast<long>(pages.size());
    const int ps = pool.page_size();

    std::vector<std::pair<double, long>> scored;  // (score, logical page)
    scored.reserve(static_cast<size_t>(n_pages));
    for (long lp = 0; lp < n_pages; ++lp) {
        const long first = lp * ps;
        const long last = std::min(cache.global_len(), first + ps);
        double best = -std::numeric_limits<double>::infinity();
        for (long g = first; g < last; ++g)
            best = std::max(best, dot(q, pool.k_slot(pages[static_cast<size_t>(lp)], static_cast<int>(g - first))));
        scored.emplace_back(best, lp);
    }
    // higher score first; ties toward older (smaller logical index)
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    SelectedPages sel;
    const long keep = std::min(budget, n_pages);
    sel.logical_pages.reserve(static_cast<size_t>(keep));
    for (long i = 0; i < keep; ++i) sel.logical_pages.push_back(scored[static_cast<size_t>(i)].second);
    std::sort(sel.logical_pages.begin(), sel.logical_pages.end());

    long entries = 0;
    for (long lp : sel.logical_pages)
        entries += std::min(cache.global_len(), (lp + 1) * ps) - lp * ps;
    sel.entries = entries;
    sel.k = Matrix(entries, pool.head_dim());
    sel.v = Matrix(entries, pool.head_dim());
    long row = 0;
    for (long lp : sel.logical_pages) {
        const long first = lp * ps;
        const long last = std::min(cache.global_len(), first + ps);
        for (long g = first; g < last; ++g) {
            const auto k = pool.k_slot(pages[static_cast<size_t>(lp)], static_cast<int>(g - first));
            const auto v = pool.v_slot(pages[static_cast<size_t>(lp)], static_cast<int>(g - first));
            std::copy(k.begin(), k.end(), sel.k.row(row).begin());
            std::copy(v.begin(), v.end(), sel.v.row(row).begin());
            ++row;
        }
    }
    return sel;
}

namespace {

long default_capacity(const ModelConfig& cfg, long window, long max_total_tokens, int page_size) {
    // worst case: every token admitted for every head, plus the local ring
    const long local_pages = (window + page_size - 1) / page_size;
    const long global_pages = (max_total_tokens + page_size - 1) / page_size + 1;
    return static_cast<long>(cfg.layers) * cfg.kv_heads * (local_pages + global_pages);
}

}  // namespace

Session::Session(const ToyModel& model, const GateBank& gates, const PolicyConfig& policy,
                 long max_total_tokens, long capacity_pages_override)
    : model_(model),
      gates_(gates),
      policy_(policy),
      pool_(16, model.cfg.head_dim,
            capacity_pages_override >= 0
                ? capacity_pages_override
                : default_capacity(model.cfg, policy.window, max_total_tokens, 16)),
      trace_(model.cfg.layers, model.cfg.kv_heads) {
    if (policy.window < 1) throw std::invalid_argument("Session: window must be >= 1");
    if (uses_mlp_gates()) {
        if (gates.layers() != model.cfg.layers || gates.heads() != model.cfg.kv_heads ||
            gates.head_dim() != model.cfg.head_dim)
            throw std::invalid_argument("Session: gate bank shape does not match model");
    }
    if (policy.kind == PolicyKind::static_heads &&
        static_cast<long>(policy.retrieval_bitmap.size()) !=
            static_cast<long>(model.cfg.layers) * model.cfg.kv_heads)
        throw std::invalid_argument("Session: retrieval bitmap length != layers * kv_heads");
    caches_.reserve(static_cast<size_t>(model.cfg.layers) * model.cfg.kv_heads);
    for (int l = 0; l < model.cfg.layers; ++l)
        for (int h = 0; h < model.cfg.kv_heads; ++h) caches_.emplace_back(l, h, policy.window);
}

const HeadCache& Session::cache_at(int layer, int head) const {
    return caches_[static_cast<size_t>(layer) * model_.cfg.kv_heads + head];
}

double Session::effective_gate(int layer, int head, long position, double mlp_gate) const {
    switch (policy_.kind) {
        case PolicyKind::full:
            return 1.0;
        case PolicyKind::local_sink:
            return position < policy_.sink ? 1.0 : 0.0;
        case PolicyKind::static_heads:
            return policy_.retrieval_bitmap[static_cast<size_t>(layer) * model_.cfg.kv_heads + head] ? 1.0
                                                                                                     : 0.0;
        case PolicyKind::wgkv:
        case PolicyKind::wgkv_plus_topk:
            switch (policy_.forced.mode) {
                case ForcedAdmission::Mode::none:
                    return mlp_gate;
                case ForcedAdmission::Mode::stride:
                    return position % policy_.forced.keep_every == policy_.forced.phase ? 1.0 : 0.0;
                case ForcedAdmission::Mode::recent_fraction: {
                    const long pre_window = std::max<long>(0, prompt_len_ - policy_.window);
                    const long cutoff =
                        pre_window - static_cast<long>(std::llround(policy_.forced.fraction * pre_window));
                    return position >= cutoff ? 1.0 : 0.0;
                }
            }
    }
    return mlp_gate;
}

Matrix Session::prefill(std::span<const int> tokens) {
    if (prefilled_) throw std::logic_error("Session::prefill: already prefilled");
    prefilled_ = true;
    const auto& cfg = model_.cfg;
    const long t_total = static_cast<long>(tokens.size());
    if (t_total == 0) throw std::invalid_argument("Session::prefill: empty prompt");
    prompt_len_ = t_total;
    const int d = cfg.head_dim;
    const int dim = cfg.model_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const int gsz = cfg.group_size();

    Matrix x(t_total, dim);
    for (long t = 0; t < t_total; ++t) {
        const int id = tokens[static_cast<size_t>(t)];
        if (id < 0 || id >= cfg.vocab) throw std::invalid_argument("Session::prefill: unknown token id");
        const auto e = model_.embed.row(id);
        std::copy(e.begin(), e.end(), x.row(t).begin());
    }

    OpCounter counter;
    for (int l = 0; l < cfg.layers; ++l) {
        const auto& w = model_.layers[static_cast<size_t>(l)];

        Matrix a(t_total, dim);
        for (long t = 0; t < t_total; ++t) {
            const auto n = rmsnorm(x.row(t), cfg.rms_eps);
            std::copy(n.begin(), n.end(), a.row(t).begin());
        }

        // per-kv-head K/V, gate scores, masks
        std::vector<Matrix> k_post(static_cast<size_t>(cfg.kv_heads), Matrix(t_total, d));
        std::vector<Matrix> v(static_cast<size_t>(cfg.kv_heads), Matrix(t_total, d));
        std::vector<std::vector<double>> eff_gates(static_cast<size_t>(cfg.kv_heads));
        std::vector<VsMask> masks(static_cast<size_t>(cfg.kv_heads));
        parallel_for(cfg.kv_heads, [&](long h_lo, long h_hi) {
            for (long h = h_lo; h < h_hi; ++h) {
                Matrix k_pre(t_total, d);
                for (long t = 0; t < t_total; ++t) {
                    auto pre = k_pre.row(t);
                    auto post = k_post[static_cast<size_t>(h)].row(t);
                    auto vv = v[static_cast<size_t>(h)].row(t);
                    for (int r = 0; r < d; ++r) {
                        pre[r] = dot(w.wk.row(h * d + r), a.row(t));
                        vv[r] = dot(w.wv.row(h * d + r), a.row(t));
                    }
                    std::copy(pre.begin(), pre.end(), post.begin());
                    apply_rope_inplace(post, t, cfg.rope());
                }
                std::vector<double> mlp_scores;
                if (uses_mlp_gates() && policy_.forced.mode == ForcedAdmission::Mode::none)
                    mlp_scores = gate_forward_batch(gates_.at(l, static_cast<int>(h)), k_pre,
                                                    k_post[static_cast<size_t>(h)]);
                auto& eff = eff_gates[static_cast<size_t>(h)];
                eff.resize(static_cast<size_t>(t_total));
                for (long t = 0; t < t_total; ++t)
                    eff[static_cast<size_t>(t)] = effective_gate(
                        l, static_cast<int>(h), t, mlp_scores.empty() ? 0.0 : mlp_scores[static_cast<size_t>(t)]);
                masks[static_cast<size_t>(h)] = build_vs_mask(eff, policy_.threshold, policy_.window);
            }
        });
        for (int h = 0; h < cfg.kv_heads; ++h)
            for (long t = 0; t < t_total; ++t)
                trace_.record(l, h, eff_gates[static_cast<size_t>(h)][static_cast<size_t>(t)],
                              masks[static_cast<size_t>(h)].admitted[static_cast<size_t>(t)] != 0);

        // masked attention per query head
        Matrix concat(t_total, cfg.q_heads * d);
        std::vector<OpCounter> head_counters(static_cast<size_t>(cfg.q_heads));
        parallel_for(cfg.q_heads, [&](long p_lo, long p_hi) {
            for (long p = p_lo; p < p_hi; ++p) {
                const int h = static_cast<int>(p) / gsz;
                Matrix q(t_total, d);
                for (long t = 0; t < t_total; ++t) {
                    auto qr = q.row(t);
                    for (int r = 0; r < d; ++r) qr[r] = dot(w.wq.row(static_cast<int>(p) * d + r), a.row(t));
                    apply_rope_inplace(qr, t, cfg.rope());
                }
                const AttnInput input{q, k_post[static_cast<size_t>(h)], v[static_cast<size_t>(h)], scale, 0};
                const Matrix o = attn_vertical_slash(input, masks[static_cast<size_t>(h)],
                                                     &head_counters[static_cast<size_t>(p)]);
                for (long t = 0; t < t_total; ++t) {
                    auto src = o.row(t);
                    std::copy(src.begin(), src.end(),
                              concat.row(t).subspan(static_cast<size_t>(p) * d, static_cast<size_t>(d)).begin());
                }
            }
        });
        for (const auto& hc : head_counters) counter.merge(hc);

        for (long t = 0; t < t_total; ++t) {
            auto xr = x.row(t);
            for (int r = 0; r < dim; ++r) xr[r] += dot(w.wo.row(r), concat.row(t));
            const auto b = rmsnorm(xr, cfg.rms_eps);
            std::vector<double> hm(static_cast<size_t>(cfg.mlp_hidden));
            for (int r = 0; r < cfg.mlp_hidden; ++r) hm[static_cast<size_t>(r)] = gelu(dot(w.w_mlp1.row(r), b));
            for (int r = 0; r < dim; ++r) xr[r] += dot(w.w_mlp2.row(r), hm);
        }

        // initial cache population from this layer's states
        for (int h = 0; h < cfg.kv_heads; ++h) {
            auto& cache = caches_[static_cast<size_t>(l) * cfg.kv_heads + h];
            cache.prefill_populate(pool_, k_post[static_cast<size_t>(h)], v[static_cast<size_t>(h)],
                                   eff_gates[static_cast<size_t>(h)], policy_.threshold, 0);
        }
    }

    Matrix hidden(t_total, dim);
    for (long t = 0; t < t_total; ++t) {
        const auto n = rmsnorm(x.row(t), cfg.rms_eps);
        std::copy(n.begin(), n.end(), hidden.row(t).begin());
    }
    next_pos_ = t_total;
    prefill_score_evals_ = counter.score_evals;
    last_step_score_evals_ = counter.score_evals;
    return hidden;
}

std::vector<double> Session::decode_step(int token) {
    if (!prefilled_) throw std::logic_error("Session::decode_step: prefill required first");
    const auto& cfg = model_.cfg;
    if (token < 0 || token >= cfg.vocab) throw std::invalid_argument("Session::decode_step: unknown token id");
    const long pos = next_pos_++;
    const int d = cfg.head_dim;
    const int dim = cfg.model_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const int gsz = cfg.group_size();

    const auto e = model_.embed.row(token);
    std::vector<double> x(e.begin(), e.end());
    OpCounter counter;

    for (int l = 0; l < cfg.layers; ++l) {
        const auto& w = model_.layers[static_cast<size_t>(l)];
        const auto a = rmsnorm(x, cfg.rms_eps);

        // new KV + gate per kv head, then the ring write (may promote)
        std::vector<GatheredKv> gathered(static_cast<size_t>(cfg.kv_heads));
        for (int h = 0; h < cfg.kv_heads; ++h) {
            std::vector<double> k_pre(static_cast<size_t>(d));
            std::vector<double> v_new(static_cast<size_t>(d));
            for (int r = 0; r < d; ++r) {
                k_pre[static_cast<size_t>(r)] = dot(w.wk.row(h * d + r), a);
                v_new[static_cast<size_t>(r)] = dot(w.wv.row(h * d + r), a);
            }
            const auto k_rope = apply_rope(k_pre, pos, cfg.rope());
            double mlp_gate = 0.0;
            if (uses_mlp_gates() && policy_.forced.mode == ForcedAdmission::Mode::none) {
                const auto feature = build_gate_feature(k_pre, k_rope);
                mlp_gate = gate_forward(gates_.at(l, h), feature);
            }
            const double g = effective_gate(l, h, pos, mlp_gate);
            trace_.record(l, h, g, g >= policy_.threshold.tau);

            auto& cache = caches_[static_cast<size_t>(l) * cfg.kv_heads + h];
            cache.local_write(pool_, k_rope, v_new, g, policy_.threshold, pos);
            gathered[static_cast<size_t>(h)] = cache.gather(pool_);
        }

        std::vector<double> concat(static_cast<size_t>(cfg.q_heads) * d, 0.0);
        for (int p = 0; p < cfg.q_heads; ++p) {
            const int h = p / gsz;
            std::vector<double> q(static_cast<size_t>(d));
            for (int r = 0; r < d; ++r) q[static_cast<size_t>(r)] = dot(w.wq.row(p * d + r), a);
            apply_rope_inplace(q, pos, cfg.rope());

            const auto& kv = gathered[static_cast<size_t>(h)];
            std::vector<double> out;
            if (policy_.kind == PolicyKind::wgkv_plus_topk && policy_.topk_budget > 0) {
                const auto& cache = caches_[static_cast<size_t>(l) * cfg.kv_heads + h];
                const auto sel = select_topk_pages(q, cache, pool_, policy_.topk_budget);
                out = attn_ragged(q, sel.k, sel.v, kv.local_k, kv.local_v, scale, &counter);
            } else {
                out = attn_ragged(q, kv.global_k, kv.global_v, kv.local_k, kv.local_v, scale, &counter);
            }
            std::copy(out.begin(), out.end(), concat.begin() + static_cast<long>(p) * d);
        }

        for (int r = 0; r < dim; ++r) x[static_cast<size_t>(r)] += dot(w.wo.row(r), concat);
        const auto b = rmsnorm(x, cfg.rms_eps);
        std::vector<double> hm(static_cast<size_t>(cfg.mlp_hidden));
        for (int r = 0; r < cfg.mlp_hidden; ++r) hm[static_cast<size_t>(r)] = gelu(dot(w.w_mlp1.row(r), b));
        for (int r = 0; r < dim; ++r) x[static_cast<size_t>(r)] += dot(w.w_mlp2.row(r), hm);
    }

    last_step_score_evals_ = counter.score_evals;
    const auto hidden = rmsnorm(x, cfg.rms_eps);
    return logits_from_hidden_row(model_, hidden);
}

CacheStats Session::stats() const { return cache_stats({caches_.data(), caches_.size()}, pool_); }

std::vector<double> Session::per_head_admitted() const {
    std::vector<double> out;
    out.reserve(caches_.size());
    for (const auto& cache : caches_)
        out.push_back(cache.tokens_seen() > 0
                          ? static_cast<double>(cache.global_len()) / static_cast<double>(cache.tokens_seen())
                          : 0.0);
    return out;
}

void Session::release() {
    for (auto& cache : caches_) cache.release(pool_);
}

std::pair<std::vector<int>, RunReport> generate(const ToyModel& model, const GateBank& gates,
                                                std::span<const int> prompt, long steps,
                                                const PolicyConfig& policy) {
    if (steps < 0) throw std::invalid_argument("generate: steps must be >= 0");
    Session session(model, gates, policy, static_cast<long>(prompt.size()) + steps);
    RunReport report;

    const Matrix hidden = session.prefill(prompt);
    report.per_step.push_back({0, session.prefill_score_evals()});

    std::vector<int> ids(prompt.begin(), prompt.end());
    std::vector<double> logits = logits_from_hidden_row(model, hidden.row(hidden.rows - 1));
    for (long s = 1; s <= steps; ++s) {
        const int next = argmax_token(logits);
        ids.push_back(next);
        report.outputs.push_back(next);
        logits = session.decode_step(next);
        report.per_step.push_back({s, session.last_step_score_evals()});
    }

    report.cache = session.stats();
    report.per_head_admitted = session.per_head_admitted();
    return {std::move(ids), std::move(report)};
}

}  // namespace wgkv
