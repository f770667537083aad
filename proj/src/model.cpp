#include "wgkv/model.hpp"

#include <cmath>
#include <stdexcept>

namespace wgkv {

namespace {

void fill_gaussian(Matrix& m, Rng& rng, double std_dev) {
    for (double& v : m.data) v = std_dev * rng.gaussian();
}

ToyModel base_model(const ModelConfig& cfg, Rng& rng) {
    if (cfg.q_heads % cfg.kv_heads != 0) throw std::invalid_argument("ModelConfig: q_heads % kv_heads != 0");
    if (cfg.head_dim % 2 != 0) throw std::invalid_argument("ModelConfig: head_dim must be even");
    ToyModel m;
    m.cfg = cfg;
    const int dim = cfg.model_dim();
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(dim));

    m.embed = Matrix(cfg.vocab, dim);
    fill_gaussian(m.embed, rng, 1.0);
    m.unembed = Matrix(cfg.vocab, dim);
    fill_gaussian(m.unembed, rng, proj_std);

    m.layers.resize(static_cast<size_t>(cfg.layers));
    for (auto& layer : m.layers) {
        layer.wq = Matrix(cfg.q_heads * cfg.head_dim, dim);
        layer.wk = Matrix(cfg.kv_heads * cfg.head_dim, dim);
        layer.wv = Matrix(cfg.kv_heads * cfg.head_dim, dim);
        layer.wo = Matrix(dim, cfg.q_heads * cfg.head_dim);
        layer.w_mlp1 = Matrix(cfg.mlp_hidden, dim);
        layer.w_mlp2 = Matrix(dim, cfg.mlp_hidden);
        fill_gaussian(layer.wq, rng, proj_std);
        fill_gaussian(layer.wk, rng, proj_std);
        fill_gaussian(layer.wv, rng, proj_std);
        fill_gaussian(layer.wo, rng, proj_std);
        fill_gaussian(layer.w_mlp1, rng, proj_std);
        fill_gaussian(layer.w_mlp2, rng, 1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden)));
    }
    return m;
}

}  // namespace

ToyModel ToyModel::random(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    return base_model(cfg, rng);
}

ToyModel ToyModel::planted(const ModelConfig& cfg, uint64_t seed, const PlantConfig& plant) {
    Rng rng(seed);
    ToyModel m = base_model(cfg, rng);
    const int d = cfg.head_dim;
    const int gsz = cfg.group_size();

    // shared positive component so every query picks up the planted term
    for (int tok = 0; tok < cfg.vocab; ++tok) m.embed.at(tok, plant.bias_dim) = plant.bias_embed;
    for (int tok = plant.anchor_token_lo; tok < plant.anchor_token_lo + plant.anchor_token_count; ++tok)
        m.embed.at(tok, plant.sig_dim) = plant.sig_embed;

    for (auto& layer : m.layers) {
        for (int h = 0; h < cfg.kv_heads; ++h) {
            // u_h lives on the lowest-frequency rotary pair, where RoPE is
            // near-identity over desk-scale positions
            const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double u0 = std::cos(phi), u1 = std::sin(phi);
            const int last_pair = d - 2;

            layer.wk.at(h * d + last_pair, plant.sig_dim) += plant.key_gain * u0;
            layer.wk.at(h * d + last_pair + 1, plant.sig_dim) += plant.key_gain * u1;
            for (int g = 0; g < gsz; ++g) {
                const int p = h * gsz + g;
                layer.wq.at(p * d + last_pair, plant.bias_dim) += plant.query_gain * u0;
                layer.wq.at(p * d + last_pair + 1, plant.bias_dim) += plant.query_gain * u1;
            }

            // value signature: a random unit direction per head
            std::vector<double> w(static_cast<size_t>(d));
            double norm = 0.0;
            for (double& x : w) {
                x = rng.gaussian();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (int r = 0; r < d; ++r) layer.wv.at(h * d + r, plant.sig_dim) += plant.value_gain * w[r] / norm;
        }
    }
    return m;
}

std::vector<double> rmsnorm(std::span<const double> x, double eps) {
    double mean_sq = 0.0;
    for (double v : x) mean_sq += v * v;
    mean_sq /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(mean_sq + eps);
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
    return out;
}

std::vector<double> rmsnorm_backward(std::span<const double> x, std::span<const double> grad_y, double eps) {
    const size_t n = x.size();
    double mean_sq = 0.0;
    for (double v : x) mean_sq += v * v;
    mean_sq /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(mean_sq + eps);
    double dot_xy = 0.0;
    for (size_t i = 0; i < n; ++i) dot_xy += x[i] * grad_y[i];
    const double scale = inv * inv * inv / static_cast<double>(n);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = inv * grad_y[i] - scale * x[i] * dot_xy;
    return out;
}

Matrix logits_from_hidden(const ToyModel& model, const Matrix& hidden) {
    Matrix logits(hidden.rows, model.cfg.vocab);
    for (long t = 0; t < hidden.rows; ++t) {
        auto row = logits.row(t);
        for (int tok = 0; tok < model.cfg.vocab; ++tok) row[tok] = dot(model.unembed.row(tok), hidden.row(t));
    }
    return logits;
}

std::vector<double> logits_from_hidden_row(const ToyModel& model, std::span<const double> hidden_row) {
    std::vector<double> logits(static_cast<size_t>(model.cfg.vocab));
    for (int tok = 0; tok < model.cfg.vocab; ++tok) logits[tok] = dot(model.unembed.row(tok), hidden_row);
    return logits;
}

int argmax_token(std::span<const double> logits) {
    int best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace wgkv
