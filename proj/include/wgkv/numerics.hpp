#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace wgkv {

// Row-major dense matrix of doubles. The only tensor type in the project;
// attention and model code treat rows as per-token head vectors.
struct Matrix {
    long rows = 0;
    long cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(long r, long c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    double& at(long r, long c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(long r, long c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<double> row(long r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(long r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }
};

struct RopeConfig {
    int head_dim = 0;         // must be even
    double base = 10000.0;    // must be > 1
};

// Max-subtracted softmax. -inf logits encode masked entries and map to
// exact zeros; an all-(-inf) row throws ("fully masked row").
std::vector<double> softmax_stable(std::span<const double> logits);

// Exact Gaussian-CDF GELU, x * Phi(x), and its derivative Phi(x) + x * phi(x).
double gelu(double x);
double gelu_grad(double x);

// Overflow-safe logistic sigmoid.
double sigmoid(double x);

// Rotary embedding on consecutive dimension pairs: pair i rotated by
// position * base^(-2i/head_dim). apply_rope_inverse undoes the rotation
// (the transpose); it is what gradients flow through.
std::vector<double> apply_rope(std::span<const double> k, long position, const RopeConfig& cfg);
void apply_rope_inplace(std::span<double> k, long position, const RopeConfig& cfg);
void apply_rope_inverse_inplace(std::span<double> k, long position, const RopeConfig& cfg);

// Deterministic seeded stream. mt19937_64 is fully specified by the
// standard; uniform/gaussian transforms are hand-rolled so the stream is
// bit-identical across platforms (std distributions are not portable).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [lo, hi)
    long uniform_int(long lo, long hi) {
        return lo + static_cast<long>(gen_() % static_cast<uint64_t>(hi - lo));
    }

    // N(0,1) via Box-Muller, spare cached.
    double gaussian();

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

double dot(std::span<const double> a, std::span<const double> b);

// y = M x, length M.rows
std::vector<double> matvec(const Matrix& m, std::span<const double> x);

// y += M^T x  (x length M.rows, y length M.cols); used by backprop.
void matvec_t_accum(const Matrix& m, std::span<const double> x, std::span<double> y);

// Thread budget from WGKV_THREADS (default 1). parallel_for partitions
// [0, n) into contiguous chunks; bodies must write disjoint state.
int thread_budget();
void parallel_for(long n, const std::function<void(long, long)>& body);

}  // namespace wgkv
