#include "wgkv/gating.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wgkv {

GateGrads GateGrads::zeros(int hidden, int feature_dim) {
    GateGrads g;
    g.w1 = Matrix(hidden, feature_dim);
    g.b1.assign(static_cast<size_t>(hidden), 0.0);
    g.w2.assign(static_cast<size_t>(hidden), 0.0);
    g.b2 = 0.0;
    g.feature.assign(static_cast<size_t>(feature_dim), 0.0);
    return g;
}

void GateGrads::accumulate(const GateGrads& other) {
    for (size_t i = 0; i < w1.data.size(); ++i) w1.data[i] += other.w1.data[i];
    for (size_t i = 0; i < b1.size(); ++i) b1[i] += other.b1[i];
    for (size_t i = 0; i < w2.size(); ++i) w2[i] += other.w2[i];
    b2 += other.b2;
}

void GateGrads::scale(double s) {
    for (double& v : w1.data) v *= s;
    for (double& v : b1) v *= s;
    for (double& v : w2) v *= s;
    b2 *= s;
    for (double& v : feature) v *= s;
}

GateBank::GateBank(int layers, int heads, int head_dim, int hidden)
    : layers_(layers), heads_(heads), head_dim_(head_dim), hidden_(hidden) {
    if (layers < 1 || heads < 1 || head_dim < 1 || hidden < 1)
        throw std::invalid_argument("GateBank: all dimensions must be >= 1");
    params_.resize(static_cast<size_t>(layers) * heads);
    for (auto& p : params_) {
        p.w1 = Matrix(hidden, 2 * head_dim);
        p.b1.assign(static_cast<size_t>(hidden), 0.0);
        p.w2.assign(static_cast<size_t>(hidden), 0.0);
        p.b2 = 0.0;
    }
}

GateBank GateBank::random_init(int layers, int heads, int head_dim, int hidden, uint64_t seed,
                               double w_std, double b2_init) {
    GateBank bank(layers, heads, head_dim, hidden);
    Rng rng(seed);
    for (auto& p : bank.params_) {
        for (double& v : p.w1.data) v = w_std * rng.gaussian();
        for (double& v : p.w2) v = w_std * rng.gaussian();
        p.b2 = b2_init;
    }
    return bank;
}

GateParams& GateBank::at(int layer, int head) {
    return params_[static_cast<size_t>(layer) * heads_ + head];
}

const GateParams& GateBank::at(int layer, int head) const {
    return params_[static_cast<size_t>(layer) * heads_ + head];
}

namespace {

constexpr char kMagic[4] = {'W', 'G', 'K', 'V'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void GateBank::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("GateBank::save: cannot open " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(layers_));
    put_u32(os, static_cast<uint32_t>(heads_));
    put_u32(os, static_cast<uint32_t>(head_dim_));
    put_u32(os, static_cast<uint32_t>(hidden_));
    for (const auto& p : params_) {
        for (double v : p.w1.data) put_f64(os, v);
        for (double v : p.b1) put_f64(os, v);
        for (double v : p.w2) put_f64(os, v);
        put_f64(os, p.b2);
    }
    if (!os) throw std::runtime_error("GateBank::save: write failed for " + path);
}

GateBank GateBank::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("GateBank::load: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("GateBank::load: bad magic in " + path);
    const uint32_t version = get_u32(is);
    if (version != kVersion) throw std::runtime_error("GateBank::load: unsupported version");
    const int layers = static_cast<int>(get_u32(is));
    const int heads = static_cast<int>(get_u32(is));
    const int head_dim = static_cast<int>(get_u32(is));
    const int hidden = static_cast<int>(get_u32(is));
    GateBank bank(layers, heads, head_dim, hidden);
    for (auto& p : bank.params_) {
        for (double& v : p.w1.data) v = get_f64(is);
        for (double& v : p.b1) v = get_f64(is);
        for (double& v : p.w2) v = get_f64(is);
        p.b2 = get_f64(is);
    }
    if (!is) throw std::runtime_error("GateBank::load: truncated file " + path);
    return bank;
}

std::vector<double> build_gate_feature(std::span<const double> k_pre, std::span<const double> k_post) {
    if (k_pre.size() != k_post.size()) throw std::invalid_argument("build_gate_feature: length mismatch");
    std::vector<double> feature;
    feature.reserve(k_pre.size() * 2);
    feature.insert(feature.end(), k_pre.begin(), k_pre.end());
    feature.insert(feature.end(), k_post.begin(), k_post.end());
    return feature;
}

double gate_forward(const GateParams& params, std::span<const double> feature) {
    if (static_cast<long>(feature.size()) != params.w1.cols)
        throw std::invalid_argument("gate_forward: feature length != W1 columns");
    const int hidden = params.hidden();
    double z2 = params.b2;
    for (int h = 0; h < hidden; ++h) {
        const double z1 = dot(params.w1.row(h), feature) + params.b1[h];
        z2 += params.w2[h] * gelu(z1);
    }
    // keep the score strictly inside (0,1) even where the sigmoid saturates
    // at double precision (|z2| > ~37); at most a 1-ulp perturbation
    const double g = sigmoid(z2);
    return std::clamp(g, 5e-324, std::nextafter(1.0, 0.0));
}

std::vector<double> gate_forward_batch(const GateParams& params, const Matrix& keys_pre, const Matrix& keys_post) {
    if (keys_pre.rows != keys_post.rows || keys_pre.cols != keys_post.cols)
        throw std::invalid_argument("gate_forward_batch: key matrix shape mismatch");
    std::vector<double> scores(static_cast<size_t>(keys_pre.rows));
    for (long t = 0; t < keys_pre.rows; ++t) {
        const auto feature = build_gate_feature(keys_pre.row(t), keys_post.row(t));
        scores[t] = gate_forward(params, feature);
    }
    return scores;
}

std::vector<uint8_t> binarize(std::span<const double> scores, Threshold threshold) {
    if (!(threshold.tau > 0.0 && threshold.tau < 1.0))
        throw std::invalid_argument("binarize: tau must lie in (0,1)");
    std::vector<uint8_t> bits(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) bits[i] = scores[i] >= threshold.tau ? 1 : 0;
    return bits;
}

GateGrads gate_backward(const GateParams& params, std::span<const double> feature, double upstream_grad_wrt_g) {
    if (static_cast<long>(feature.size()) != params.w1.cols)
        throw std::invalid_argument("gate_backward: feature length != W1 columns");
    const int hidden = params.hidden();
    const int fdim = params.feature_dim();
    GateGrads grads = GateGrads::zeros(hidden, fdim);

    std::vector<double> z1(static_cast<size_t>(hidden));
    std::vector<double> h(static_cast<size_t>(hidden));
    double z2 = params.b2;
    for (int i = 0; i < hidden; ++i) {
        z1[i] = dot(params.w1.row(i), feature) + params.b1[i];
        h[i] = gelu(z1[i]);
        z2 += params.w2[i] * h[i];
    }
    const double g = sigmoid(z2);
    const double dz2 = upstream_grad_wrt_g * g * (1.0 - g);

    grads.b2 = dz2;
    for (int i = 0; i < hidden; ++i) {
        grads.w2[i] = dz2 * h[i];
        const double dz1 = dz2 * params.w2[i] * gelu_grad(z1[i]);
        grads.b1[i] = dz1;
        auto w1_row = grads.w1.row(i);
        auto p_row = params.w1.row(i);
        for (int c = 0; c < fdim; ++c) {
            w1_row[c] = dz1 * feature[c];
            grads.feature[c] += dz1 * p_row[c];
        }
    }
    return grads;
}

}  // namespace wgkv
