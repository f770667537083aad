#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wgkv/numerics.hpp"

namespace wgkv {

// Binarization threshold; g >= tau admits (boundary included).
struct Threshold {
    double tau = 0.1;
};

// Two-layer admission-score MLP for one (layer, kv-head):
//   g = sigmoid(w2 . gelu(W1 x + b1) + b2),  x = [k_pre ; k_post]
struct GateParams {
    Matrix w1;               // [hidden x 2*head_dim]
    std::vector<double> b1;  // [hidden]
    std::vector<double> w2;  // [hidden]
    double b2 = 0.0;

    int hidden() const { return static_cast<int>(b1.size()); }
    int feature_dim() const { return static_cast<int>(w1.cols); }
};

struct GateGrads {
    Matrix w1;
    std::vector<double> b1;
    std::vector<double> w2;
    double b2 = 0.0;
    std::vector<double> feature;  // d(loss)/d(gate input), length 2*head_dim

    static GateGrads zeros(int hidden, int feature_dim);
    void accumulate(const GateGrads& other);  // feature grad not merged
    void scale(double s);
};

// One independent GateParams per (layer, kv-head).
class GateBank {
public:
    GateBank() = default;
    GateBank(int layers, int heads, int head_dim, int hidden);

    // W1/w2 ~ N(0, w_std^2); b1 = 0; b2 = b2_init. The +2 default starts the
    // gate near "admit everything" (g ~ 0.88).
    static GateBank random_init(int layers, int heads, int head_dim, int hidden, uint64_t seed,
                                double w_std = 0.02, double b2_init = 2.0);

    GateParams& at(int layer, int head);
    const GateParams& at(int layer, int head) const;

    int layers() const { return layers_; }
    int heads() const { return heads_; }
    int head_dim() const { return head_dim_; }
    int hidden() const { return hidden_; }

    // Flat little-endian binary format: "WGKV" magic, u32 version/L/H/
    // head_dim/hidden, then per (layer-major, head-minor) W1, b1, w2, b2
    // as f64.
    void save(const std::string& path) const;
    static GateBank load(const std::string& path);

private:
    int layers_ = 0, heads_ = 0, head_dim_ = 0, hidden_ = 0;
    std::vector<GateParams> params_;
};

// x = [k_pre ; k_post], unmodified concatenation.
std::vector<double> build_gate_feature(std::span<const double> k_pre, std::span<const double> k_post);

double gate_forward(const GateParams& params, std::span<const double> feature);

// Row i of keys_pre/keys_post -> score i.
std::vector<double> gate_forward_batch(const GateParams& params, const Matrix& keys_pre, const Matrix& keys_post);

std::vector<uint8_t> binarize(std::span<const double> scores, Threshold threshold);

// Exact chain-rule gradients of (upstream * g) through the MLP.
GateGrads gate_backward(const GateParams& params, std::span<const double> feature, double upstream_grad_wrt_g);

}  // namespace wgkv
