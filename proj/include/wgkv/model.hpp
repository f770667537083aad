#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wgkv/numerics.hpp"

namespace wgkv {

struct ModelConfig {
    int layers = 2;
    int q_heads = 4;
    int kv_heads = 4;
    int head_dim = 16;
    int mlp_hidden = 128;
    int vocab = 64;
    double rope_base = 10000.0;
    double rms_eps = 1e-6;

    int model_dim() const { return q_heads * head_dim; }
    int group_size() const { return q_heads / kv_heads; }
    RopeConfig rope() const { return {head_dim, rope_base}; }
};

struct LayerWeights {
    Matrix wq;      // [q_heads*head_dim x model_dim]
    Matrix wk;      // [kv_heads*head_dim x model_dim]
    Matrix wv;      // [kv_heads*head_dim x model_dim]
    Matrix wo;      // [model_dim x q_heads*head_dim]
    Matrix w_mlp1;  // [mlp_hidden x model_dim]
    Matrix w_mlp2;  // [model_dim x mlp_hidden]
};

// Structural plant that makes a token range behave like genuine
// high-utility anchors: anchor embeddings carry a signature component that
// the key projection routes onto the lowest-frequency rotary pair, where a
// matching rank-1 term in the query projection makes every query attend to
// it. A value-side term makes anchor contributions visible in the output.
struct PlantConfig {
    int anchor_token_lo = 48;
    int anchor_token_count = 8;
    int cue_token_lo = 56;
    int cue_token_count = 8;
    int sig_dim = 0;    // embedding dim carrying the anchor signature
    int bias_dim = 1;   // embedding dim shared by every token
    double sig_embed = 6.0;
    double bias_embed = 2.0;
    double cue_gain = 2.5;  // extra bias weight on cue tokens: their queries seek anchors hardest
    double key_gain = 1.5;
    double query_gain = 1.2;
    double value_gain = 1.5;
};

// Small frozen pre-norm transformer (RMSNorm, RoPE, GELU MLP). Serves as
// both the full-attention teacher and the write-gated student; the two
// differ only in attention policy.
struct ToyModel {
    ModelConfig cfg;
    Matrix embed;    // [vocab x model_dim]
    Matrix unembed;  // [vocab x model_dim]
    std::vector<LayerWeights> layers;

    static ToyModel random(const ModelConfig& cfg, uint64_t seed);
    static ToyModel planted(const ModelConfig& cfg, uint64_t seed, const PlantConfig& plant);
};

std::vector<double> rmsnorm(std::span<const double> x, double eps);

// dL/dx given dL/dy for y = rmsnorm(x).
std::vector<double> rmsnorm_backward(std::span<const double> x, std::span<const double> grad_y, double eps);

// logits = hidden . unembed rows; one row per hidden row
Matrix logits_from_hidden(const ToyModel& model, const Matrix& hidden);
std::vector<double> logits_from_hidden_row(const ToyModel& model, std::span<const double> hidden_row);

int argmax_token(std::span<const double> logits);  // smallest id wins ties

}  // namespace wgkv
