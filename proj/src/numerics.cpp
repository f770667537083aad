#include "wgkv/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace wgkv {

std::vector<double> softmax_stable(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double x : logits) {
        if (std::isnan(x)) throw std::invalid_argument("softmax: NaN logit");
        max_logit = std::max(max_logit, x);
    }
    if (std::isinf(max_logit) && max_logit < 0) throw std::runtime_error("softmax: fully masked row");

    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        // exp(-inf - max) = 0 exactly, so masked entries contribute nothing
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    for (double& w : out) w /= sum;
    return out;
}

double gelu(double x) {
    // Phi(x) = 0.5 * (1 + erf(x / sqrt(2)))
    return x * 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
}

double gelu_grad(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
    const double phi_pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    return phi_cdf + x * phi_pdf;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

static void rope_rotate(std::span<double> k, long position, const RopeConfig& cfg, double sign) {
    if (cfg.head_dim % 2 != 0 || cfg.head_dim <= 0) throw std::invalid_argument("rope: head_dim must be even");
    if (static_cast<long>(k.size()) != cfg.head_dim) throw std::invalid_argument("rope: vector length != head_dim");
    for (int i = 0; i * 2 < cfg.head_dim; ++i) {
        const double freq = std::pow(cfg.base, -2.0 * i / cfg.head_dim);
        const double angle = sign * static_cast<double>(position) * freq;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double a = k[2 * i];
        const double b = k[2 * i + 1];
        k[2 * i] = a * c - b * s;
        k[2 * i + 1] = a * s + b * c;
    }
}

std::vector<double> apply_rope(std::span<const double> k, long position, const RopeConfig& cfg) {
    std::vector<double> out(k.begin(), k.end());
    rope_rotate(out, position, cfg, 1.0);
    return out;
}

void apply_rope_inplace(std::span<double> k, long position, const RopeConfig& cfg) {
    rope_rotate(k, position, cfg, 1.0);
}

void apply_rope_inverse_inplace(std::span<double> k, long position, const RopeConfig& cfg) {
    rope_rotate(k, position, cfg, -1.0);
}

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] keeps the log finite
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (static_cast<long>(x.size()) != m.cols) throw std::invalid_argument("matvec: dimension mismatch");
    std::vector<double> y(static_cast<size_t>(m.rows), 0.0);
    for (long r = 0; r < m.rows; ++r) y[r] = dot(m.row(r), x);
    return y;
}

void matvec_t_accum(const Matrix& m, std::span<const double> x, std::span<double> y) {
    if (static_cast<long>(x.size()) != m.rows || static_cast<long>(y.size()) != m.cols)
        throw std::invalid_argument("matvec_t_accum: dimension mismatch");
    for (long r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        auto row = m.row(r);
        for (long c = 0; c < m.cols; ++c) y[c] += xr * row[c];
    }
}

int thread_budget() {
    static const int budget = [] {
        const char* env = std::getenv("WGKV_THREADS");
        if (!env) return 1;
        const long v = std::strtol(env, nullptr, 10);
        const long hw = std::max(1u, std::thread::hardware_concurrency());
        return static_cast<int>(std::clamp(v, 1L, hw));
    }();
    return budget;
}

void parallel_for(long n, const std::function<void(long, long)>& body) {
    const int threads = thread_budget();
    if (threads <= 1 || n <= 1) {
        body(0, n);
        return;
    }
    const long chunks = std::min<long>(threads, n);
    const long per = (n + chunks - 1) / chunks;
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(chunks));
    for (long c = 0; c < chunks; ++c) {
        const long lo = c * per;
        const long hi = std::min(n, lo + per);
        if (lo >= hi) break;
        workers.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace wgkv
