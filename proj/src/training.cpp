#include "wgkv/training.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "wgkv/engine.hpp"
#include "wgkv/oracle.hpp"

namespace wgkv {

GateBankGrads GateBankGrads::zeros(const GateBank& bank) {
    GateBankGrads g;
    g.layers = bank.layers();
    g.heads = bank.heads();
    g.grads.reserve(static_cast<size_t>(g.layers) * g.heads);
    for (int i = 0; i < g.layers * g.heads; ++i)
        g.grads.push_back(GateGrads::zeros(bank.hidden(), 2 * bank.head_dim()));
    return g;
}

double GateBankGrads::norm_inf() const {
    double m = 0.0;
    for (const auto& g : grads) {
        for (double v : g.w1.data) m = std::max(m, std::abs(v));
        for (double v : g.b1) m = std::max(m, std::abs(v));
        for (double v : g.w2) m = std::max(m, std::abs(v));
        m = std::max(m, std::abs(g.b2));
    }
    return m;
}

double loss_distill(const Matrix& student_hidden, const Matrix& teacher_hidden) {
    if (student_hidden.rows != teacher_hidden.rows || student_hidden.cols != teacher_hidden.cols)
        throw std::invalid_argument("loss_distill: shape mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < student_hidden.data.size(); ++i) {
        const double d = student_hidden.data[i] - teacher_hidden.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(student_hidden.data.size());
}

double loss_sparsity(std::span<const double> gates) {
    if (gates.empty()) throw std::invalid_argument("loss_sparsity: empty input");
    double sum = 0.0;
    for (double g : gates) sum += 2.0 * g - g * g;
    return sum / static_cast<double>(gates.size());
}

double loss_sparsity(const std::vector<std::vector<std::vector<double>>>& gates) {
    double sum = 0.0;
    long n = 0;
    for (const auto& per_layer : gates)
        for (const auto& per_head : per_layer) {
            for (double g : per_head) sum += 2.0 * g - g * g;
            n += static_cast<long>(per_head.size());
        }
    if (n == 0) throw std::invalid_argument("loss_sparsity: empty input");
    return sum / static_cast<double>(n);
}

namespace {

// Per-layer activations kept for the backward pass.
struct LayerTrace {
    Matrix x_in;   // residual entering the layer [T x D]
    Matrix a;      // rmsnorm(x_in)
    std::vector<Matrix> q_post;                // per q head [T x d]
    std::vector<Matrix> k_pre, k_post, v;      // per kv head [T x d]
    std::vector<std::vector<double>> g;        // per kv head [T]
    std::vector<Matrix> probs;                 // per q head [T x T], zero above diagonal
    Matrix x_mid;   // x_in + attention output
    Matrix z_mlp;   // pre-GELU MLP activations [T x mlp_hidden]
};

struct SoftTrace {
    std::vector<LayerTrace> layers;
    Matrix x_final;  // residual after the last layer
    Matrix hidden;   // rmsnorm(x_final)
};

SoftTrace forward_soft_traced(const ToyModel& model, const GateBank& bank, std::span<const int> tokens,
                              long window, double epsilon) {
    if (window < 1) throw std::invalid_argument("forward_soft: window must be >= 1");
    if (epsilon <= 0.0) throw std::invalid_argument("forward_soft: epsilon must be > 0");
    const auto& cfg = model.cfg;
    const long t_total = static_cast<long>(tokens.size());
    if (t_total == 0) throw std::invalid_argument("forward_soft: empty sequence");
    const int d = cfg.head_dim;
    const int dim = cfg.model_dim();
    const int gsz = cfg.group_size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    SoftTrace trace;
    trace.layers.resize(static_cast<size_t>(cfg.layers));

    Matrix x(t_total, dim);
    for (long t = 0; t < t_total; ++t) {
        const int id = tokens[static_cast<size_t>(t)];
        if (id < 0 || id >= cfg.vocab) throw std::invalid_argument("forward_soft: unknown token id");
        const auto e = model.embed.row(id);
        std::copy(e.begin(), e.end(), x.row(t).begin());
    }

    for (int l = 0; l < cfg.layers; ++l) {
        auto& tr = trace.layers[static_cast<size_t>(l)];
        const auto& w = model.layers[static_cast<size_t>(l)];
        tr.x_in = x;

        tr.a = Matrix(t_total, dim);
        for (long t = 0; t < t_total; ++t) {
            const auto n = rmsnorm(x.row(t), cfg.rms_eps);
            std::copy(n.begin(), n.end(), tr.a.row(t).begin());
        }

        tr.k_pre.assign(static_cast<size_t>(cfg.kv_heads), Matrix(t_total, d));
        tr.k_post.assign(static_cast<size_t>(cfg.kv_heads), Matrix(t_total, d));
        tr.v.assign(static_cast<size_t>(cfg.kv_heads), Matrix(t_total, d));
        tr.g.assign(static_cast<size_t>(cfg.kv_heads), std::vector<double>(static_cast<size_t>(t_total)));
        for (int h = 0; h < cfg.kv_heads; ++h) {
            for (long t = 0; t < t_total; ++t) {
                auto pre = tr.k_pre[static_cast<size_t>(h)].row(t);
                auto post = tr.k_post[static_cast<size_t>(h)].row(t);
                auto vv = tr.v[static_cast<size_t>(h)].row(t);
                for (int r = 0; r < d; ++r) {
                    pre[r] = dot(w.wk.row(h * d + r), tr.a.row(t));
                    vv[r] = dot(w.wv.row(h * d + r), tr.a.row(t));
                }
                std::copy(pre.begin(), pre.end(), post.begin());
                apply_rope_inplace(post, t, cfg.rope());
                const auto feature = build_gate_feature(pre, post);
                tr.g[static_cast<size_t>(h)][static_cast<size_t>(t)] = gate_forward(bank.at(l, h), feature);
            }
        }

        tr.q_post.assign(static_cast<size_t>(cfg.q_heads), Matrix(t_total, d));
        tr.probs.assign(static_cast<size_t>(cfg.q_heads), Matrix(t_total, t_total));
        Matrix concat(t_total, cfg.q_heads * d);
        for (int p = 0; p < cfg.q_heads; ++p) {
            const int h = p / gsz;
            auto& q = tr.q_post[static_cast<size_t>(p)];
            for (long t = 0; t < t_total; ++t) {
                auto qr = q.row(t);
                for (int r = 0; r < d; ++r) qr[r] = dot(w.wq.row(p * d + r), tr.a.row(t));
                apply_rope_inplace(qr, t, cfg.rope());
            }
            const auto& kh = tr.k_post[static_cast<size_t>(h)];
            const auto& vh = tr.v[static_cast<size_t>(h)];
            auto& probs = tr.probs[static_cast<size_t>(p)];
            std::vector<double> logits;
            for (long i = 0; i < t_total; ++i) {
                logits.assign(static_cast<size_t>(i + 1), 0.0);
                for (long j = 0; j <= i; ++j) {
                    const double g_eff =
                        (i - j) < window ? 1.0 : tr.g[static_cast<size_t>(h)][static_cast<size_t>(j)];
                    logits[static_cast<size_t>(j)] =
                        scale * dot(q.row(i), kh.row(j)) + std::log(g_eff + epsilon);
                }
                const auto weights = softmax_stable(logits);
                auto prow = probs.row(i);
                auto crow = concat.row(i).subspan(static_cast<size_t>(p) * d, static_cast<size_t>(d));
                for (long j = 0; j <= i; ++j) {
                    prow[j] = weights[static_cast<size_t>(j)];
                    auto v_row = vh.row(j);
                    for (int r = 0; r < d; ++r) crow[r] += prow[j] * v_row[r];
                }
            }
        }

        tr.x_mid = Matrix(t_total, dim);
        for (long t = 0; t < t_total; ++t) {
            auto mid = tr.x_mid.row(t);
            auto xr = x.row(t);
            for (int r = 0; r < dim; ++r) mid[r] = xr[r] + dot(w.wo.row(r), concat.row(t));
        }

        tr.z_mlp = Matrix(t_total, cfg.mlp_hidden);
        for (long t = 0; t < t_total; ++t) {
            const auto b = rmsnorm(tr.x_mid.row(t), cfg.rms_eps);
            auto z = tr.z_mlp.row(t);
            auto xr = x.row(t);
            for (int r = 0; r < cfg.mlp_hidden; ++r) z[r] = dot(w.w_mlp1.row(r), b);
            for (int r = 0; r < dim; ++r) {
                double acc = tr.x_mid.at(t, r);
                xr[r] = acc;
            }
            for (int r = 0; r < dim; ++r) {
                double acc = 0.0;
                auto w2_row = w.w_mlp2.row(r);
                for (int c = 0; c < cfg.mlp_hidden; ++c) acc += w2_row[c] * gelu(z[c]);
                xr[r] += acc;
            }
        }
    }

    trace.x_final = x;
    trace.hidden = Matrix(t_total, dim);
    for (long t = 0; t < t_total; ++t) {
        const auto n = rmsnorm(x.row(t), cfg.rms_eps);
        std::copy(n.begin(), n.end(), trace.hidden.row(t).begin());
    }
    return trace;
}

}  // namespace

SoftForwardResult forward_soft(const ToyModel& model, const GateBank& gates, std::span<const int> tokens,
                               long window, double epsilon) {
    auto trace = forward_soft_traced(model, gates, tokens, window, epsilon);
    SoftForwardResult out;
    out.hidden = std::move(trace.hidden);
    out.gates.resize(trace.layers.size());
    for (size_t l = 0; l < trace.layers.size(); ++l) out.gates[l] = std::move(trace.layers[l].g);
    return out;
}

std::pair<LossBreakdown, GateBankGrads> backward_gates(const ToyModel& model, const GateBank& bank,
                                                       std::span<const int> tokens, long window, double lambda,
                                                       GradTerms terms, double epsilon,
                                                       const Matrix* teacher_hidden) {
    const auto& cfg = model.cfg;
    const long t_total = static_cast<long>(tokens.size());
    const int d = cfg.head_dim;
    const int dim = cfg.model_dim();
    const int gsz = cfg.group_size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    const SoftTrace trace = forward_soft_traced(model, bank, tokens, window, epsilon);

    Matrix teacher_local;
    if (terms != GradTerms::sparsity_only && teacher_hidden == nullptr) {
        teacher_local = teacher_forward(model, tokens);
        teacher_hidden = &teacher_local;
    }

    LossBreakdown bd;
    bd.lambda = lambda;
    bd.l_distill = terms == GradTerms::sparsity_only ? 0.0 : loss_distill(trace.hidden, *teacher_hidden);
    double m_soft_sum = 0.0;
    long gate_count = 0;
    for (const auto& tr : trace.layers)
        for (const auto& per_head : tr.g) {
            for (double g : per_head) m_soft_sum += 2.0 * g - g * g;
            gate_count += static_cast<long>(per_head.size());
        }
    bd.m_soft = m_soft_sum / static_cast<double>(gate_count);
    switch (terms) {
        case GradTerms::both: bd.l_total = bd.l_distill + lambda * bd.m_soft; break;
        case GradTerms::distill_only: bd.l_total = bd.l_distill; break;
        case GradTerms::sparsity_only: bd.l_total = bd.m_soft; break;
    }

    GateBankGrads grads = GateBankGrads::zeros(bank);

    // d(loss)/d(g) weight of the sparsity proxy
    double sparsity_coeff = 0.0;
    if (terms == GradTerms::both) sparsity_coeff = lambda / static_cast<double>(gate_count);
    if (terms == GradTerms::sparsity_only) sparsity_coeff = 1.0 / static_cast<double>(gate_count);

    // distillation seed: d(mean squared diff)/d(hidden)
    Matrix dx(t_total, dim);
    if (terms != GradTerms::sparsity_only) {
        const double inv_n = 2.0 / static_cast<double>(trace.hidden.data.size());
        Matrix d_hidden(t_total, dim);
        for (size_t i = 0; i < trace.hidden.data.size(); ++i)
            d_hidden.data[i] = inv_n * (trace.hidden.data[i] - teacher_hidden->data[i]);
        for (long t = 0; t < t_total; ++t) {
            const auto g = rmsnorm_backward(trace.x_final.row(t), d_hidden.row(t), cfg.rms_eps);
            std::copy(g.begin(), g.end(), dx.row(t).begin());
        }
    }

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const auto& tr = trace.layers[static_cast<size_t>(l)];
        const auto& w = model.layers[static_cast<size_t>(l)];

        // MLP block: x_out = x_mid + W2 gelu(W1 rmsnorm(x_mid))
        Matrix dx_mid = dx;
        for (long t = 0; t < t_total; ++t) {
            std::vector<double> dhm(static_cast<size_t>(cfg.mlp_hidden), 0.0);
            matvec_t_accum(w.w_mlp2, dx.row(t), dhm);
            const auto z = tr.z_mlp.row(t);
            for (int r = 0; r < cfg.mlp_hidden; ++r) dhm[static_cast<size_t>(r)] *= gelu_grad(z[r]);
            std::vector<double> db(static_cast<size_t>(dim), 0.0);
            matvec_t_accum(w.w_mlp1, dhm, db);
            const auto dmid = rmsnorm_backward(tr.x_mid.row(t), db, cfg.rms_eps);
            auto row = dx_mid.row(t);
            for (int r = 0; r < dim; ++r) row[r] += dmid[static_cast<size_t>(r)];
        }

        // attention block: x_mid = x_in + Wo concat
        Matrix dconcat(t_total, cfg.q_heads * d);
        for (long t = 0; t < t_total; ++t) matvec_t_accum(w.wo, dx_mid.row(t), dconcat.row(t));

        Matrix dx_in = dx_mid;  // residual branch
        Matrix da(t_total, dim);

        std::vector<Matrix> dk_post(static_cast<size_t>(cfg.kv_heads), Matrix(t_total, d));
        std::vector<Matrix> dv(static_cast<size_t>(cfg.kv_heads), Matrix(t_total, d));
        std::vector<std::vector<double>> dg(static_cast<size_t>(cfg.kv_heads),
                                            std::vector<double>(static_cast<size_t>(t_total), 0.0));

        for (int p = 0; p < cfg.q_heads; ++p) {
            const int h = p / gsz;
            const auto& probs = tr.probs[static_cast<size_t>(p)];
            const auto& q = tr.q_post[static_cast<size_t>(p)];
            const auto& kh = tr.k_post[static_cast<size_t>(h)];
            const auto& vh = tr.v[static_cast<size_t>(h)];
            auto& dkh = dk_post[static_cast<size_t>(h)];
            auto& dvh = dv[static_cast<size_t>(h)];
            auto& dgh = dg[static_cast<size_t>(h)];
            Matrix dq(t_total, d);

            std::vector<double> dp(static_cast<size_t>(t_total));
            for (long i = 0; i < t_total; ++i) {
                const auto do_row =
                    dconcat.row(i).subspan(static_cast<size_t>(p) * d, static_cast<size_t>(d));
                const auto prow = probs.row(i);
                double weighted = 0.0;
                for (long j = 0; j <= i; ++j) {
                    dp[static_cast<size_t>(j)] = dot(do_row, vh.row(j));
                    weighted += prow[j] * dp[static_cast<size_t>(j)];
                }
                auto dq_row = dq.row(i);
                for (long j = 0; j <= i; ++j) {
                    const double ds = prow[j] * (dp[static_cast<size_t>(j)] - weighted);
                    if (ds != 0.0) {
                        auto k_row = kh.row(j);
                        auto q_row = q.row(i);
                        auto dk_row = dkh.row(j);
                        for (int r = 0; r < d; ++r) {
                            dq_row[r] += ds * scale * k_row[r];
                            dk_row[r] += ds * scale * q_row[r];
                        }
                        if (i - j >= window)
                            dgh[static_cast<size_t>(j)] +=
                                ds / (tr.g[static_cast<size_t>(h)][static_cast<size_t>(j)] + epsilon);
                    }
                    if (prow[j] != 0.0) {
                        auto dv_row = dvh.row(j);
                        for (int r = 0; r < d; ++r) dv_row[r] += prow[j] * do_row[r];
                    }
                }
            }

            // q path: un-rotate, then through Wq into the normalized input
            for (long i = 0; i < t_total; ++i) {
                auto dq_row = dq.row(i);
                apply_rope_inverse_inplace(dq_row, i, cfg.rope());
                for (int r = 0; r < d; ++r) {
                    const double gval = dq_row[r];
                    if (gval == 0.0) continue;
                    auto wq_row = w.wq.row(p * d + r);
                    auto da_row = da.row(i);
                    for (int c = 0; c < dim; ++c) da_row[c] += gval * wq_row[c];
                }
            }
        }

        for (int h = 0; h < cfg.kv_heads; ++h) {
            auto& dgh = dg[static_cast<size_t>(h)];
            auto& dkh = dk_post[static_cast<size_t>(h)];
            Matrix dk_pre_gate(t_total, d);

            for (long t = 0; t < t_total; ++t) {
                double upstream = dgh[static_cast<size_t>(t)];
                if (sparsity_coeff != 0.0)
                    upstream +=
                        sparsity_coeff * (2.0 - 2.0 * tr.g[static_cast<size_t>(h)][static_cast<size_t>(t)]);
                if (upstream == 0.0) continue;
                const auto feature = build_gate_feature(tr.k_pre[static_cast<size_t>(h)].row(t),
                                                        tr.k_post[static_cast<size_t>(h)].row(t));
                const GateGrads gg = gate_backward(bank.at(l, h), feature, upstream);
                grads.at(l, h).accumulate(gg);
                auto pre_row = dk_pre_gate.row(t);
                auto post_row = dkh.row(t);
                for (int r = 0; r < d; ++r) {
                    pre_row[r] += gg.feature[static_cast<size_t>(r)];
                    post_row[r] += gg.feature[static_cast<size_t>(d + r)];
                }
            }

            for (long t = 0; t < t_total; ++t) {
                auto post_row = dkh.row(t);
                apply_rope_inverse_inplace(post_row, t, cfg.rope());
                auto da_row = da.row(t);
                for (int r = 0; r < d; ++r) {
                    const double total = post_row[r] + dk_pre_gate.at(t, r);
                    if (total != 0.0) {
                        auto wk_row = w.wk.row(h * d + r);
                        for (int c = 0; c < dim; ++c) da_row[c] += total * wk_row[c];
                    }
                    const double dv_val = dv[static_cast<size_t>(h)].at(t, r);
                    if (dv_val != 0.0) {
                        auto wv_row = w.wv.row(h * d + r);
                        for (int c = 0; c < dim; ++c) da_row[c] += dv_val * wv_row[c];
                    }
                }
            }
        }

        for (long t = 0; t < t_total; ++t) {
            const auto back = rmsnorm_backward(tr.x_in.row(t), da.row(t), cfg.rms_eps);
            auto row = dx_in.row(t);
            for (int r = 0; r < dim; ++r) row[r] += back[static_cast<size_t>(r)];
        }
        dx = std::move(dx_in);
    }

    return {bd, std::move(grads)};
}

TrainResult train(const ToyModel& model, GateBank init, const TrainConfig& config,
                  const SyntheticCorpus& corpus) {
    if (corpus.seqs.empty()) throw std::invalid_argument("train: empty corpus");
    if (config.steps < 1 || config.learning_rate <= 0.0)
        throw std::invalid_argument("train: steps and learning rate must be positive");

    TrainResult result{std::move(init), {}};
    result.curve.reserve(static_cast<size_t>(config.steps));
    GateBankGrads velocity = GateBankGrads::zeros(result.gates);
    std::vector<Matrix> teacher_cache(corpus.seqs.size());
    std::vector<bool> teacher_ready(corpus.seqs.size(), false);

    for (long step = 0; step < config.steps; ++step) {
        const size_t idx = static_cast<size_t>(step) % corpus.seqs.size();
        const auto& seq = corpus.seqs[idx];
        if (!teacher_ready[idx]) {
            teacher_cache[idx] = teacher_forward(model, seq.tokens);
            teacher_ready[idx] = true;
        }

        auto [bd, grads] = backward_gates(model, result.gates, seq.tokens, config.window, config.lambda,
                                          GradTerms::both, config.epsilon, &teacher_cache[idx]);
        if (!std::isfinite(bd.l_total))
            throw std::runtime_error("train: diverged at step " + std::to_string(step));
        result.curve.push_back(bd);

        for (int l = 0; l < result.gates.layers(); ++l) {
            for (int h = 0; h < result.gates.heads(); ++h) {
                auto& p = result.gates.at(l, h);
                auto& g = grads.at(l, h);
                if (config.optimizer == TrainConfig::Optimizer::momentum) {
                    auto& vel = velocity.at(l, h);
                    for (size_t i = 0; i < p.w1.data.size(); ++i) {
                        vel.w1.data[i] = config.momentum * vel.w1.data[i] - config.learning_rate * g.w1.data[i];
                        p.w1.data[i] += vel.w1.data[i];
                    }
                    for (size_t i = 0; i < p.b1.size(); ++i) {
                        vel.b1[i] = config.momentum * vel.b1[i] - config.learning_rate * g.b1[i];
                        p.b1[i] += vel.b1[i];
                    }
                    for (size_t i = 0; i < p.w2.size(); ++i) {
                        vel.w2[i] = config.momentum * vel.w2[i] - config.learning_rate * g.w2[i];
                        p.w2[i] += vel.w2[i];
                    }
                    vel.b2 = config.momentum * vel.b2 - config.learning_rate * g.b2;
                    p.b2 += vel.b2;
                } else {
                    for (size_t i = 0; i < p.w1.data.size(); ++i)
                        p.w1.data[i] -= config.learning_rate * g.w1.data[i];
                    for (size_t i = 0; i < p.b1.size(); ++i) p.b1[i] -= config.learning_rate * g.b1[i];
                    for (size_t i = 0; i < p.w2.size(); ++i) p.w2[i] -= config.learning_rate * g.w2[i];
                    p.b2 -= config.learning_rate * g.b2;
                }
            }
        }
    }
    return result;
}

HardEval eval_hard(const ToyModel& model, const GateBank& gates, const SyntheticCorpus& corpus, long window,
                   double tau) {
    if (corpus.seqs.empty()) throw std::invalid_argument("eval_hard: empty corpus");
    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = window;
    policy.threshold = Threshold{tau};

    HardEval out;
    double frac_sum = 0.0, admitted_sum = 0.0, loss_sum = 0.0;
    const long heads = static_cast<long>(model.cfg.layers) * model.cfg.kv_heads;
    for (const auto& seq : corpus.seqs) {
        Session session(model, gates, policy, static_cast<long>(seq.tokens.size()));
        const Matrix hidden = session.prefill(seq.tokens);
        const Matrix teacher = teacher_forward(model, seq.tokens);
        loss_sum += loss_distill(hidden, teacher);
        const auto stats = session.stats();
        frac_sum += static_cast<double>(stats.resident_entries) / static_cast<double>(heads) /
                    static_cast<double>(seq.tokens.size());
        admitted_sum += stats.admitted_fraction;
    }
    const double n = static_cast<double>(corpus.seqs.size());
    out.val_distill = loss_sum / n;
    out.cache_frac = frac_sum / n;
    out.admitted_fraction = admitted_sum / n;
    return out;
}

std::vector<ParetoPoint> sweep(const ToyModel& model, std::span<const double> lambdas,
                               std::span<const double> taus, const SyntheticCorpus& train_corpus,
                               const SyntheticCorpus& val_corpus, const TrainConfig& base,
                               const GateBank& init) {
    if (lambdas.empty() || taus.empty()) throw std::invalid_argument("sweep: empty grid");
    std::vector<ParetoPoint> points;
    points.reserve(lambdas.size() * taus.size());
    for (double lambda : lambdas) {
        TrainConfig cfg = base;
        cfg.lambda = lambda;
        const TrainResult trained = train(model, init, cfg, train_corpus);
        for (double tau : taus) {
            const HardEval ev = eval_hard(model, trained.gates, val_corpus, base.window, tau);
            points.push_back({lambda, tau, ev.val_distill, ev.cache_frac});
        }
    }
    std::sort(points.begin(), points.end(),
              [](const ParetoPoint& a, const ParetoPoint& b) { return a.cache_frac < b.cache_frac; });
    return points;
}

OracleVerdict constrained_oracle(std::span<const std::pair<double, double>> candidates, double lambda) {
    if (candidates.empty()) throw std::invalid_argument("constrained_oracle: empty candidate set");
    if (lambda <= 0.0) throw std::invalid_argument("constrained_oracle: lambda must be > 0");

    OracleVerdict verdict;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < candidates.size(); ++i) {
        const double obj = candidates[i].first + lambda * candidates[i].second;
        if (obj < best) {
            best = obj;
            verdict.argmin_index = i;
        }
    }
    verdict.objective = best;

    const double budget = candidates[verdict.argmin_index].second;
    const double argmin_loss = candidates[verdict.argmin_index].first;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].second <= budget && candidates[i].first < argmin_loss) {
            verdict.holds = false;
            verdict.counterexample = static_cast<long>(i);
            break;
        }
    }
    return verdict;
}

}  // namespace wgkv
