#pragma once

#include <span>
#include <utility>
#include <vector>

#include "wgkv/corpus.hpp"
#include "wgkv/gating.hpp"
#include "wgkv/model.hpp"

namespace wgkv {

// epsilon in log(g_tilde + eps); shared with the attention module default
constexpr double kGateEpsilon = 1e-6;

struct LossBreakdown {
    double l_distill = 0.0;
    double m_soft = 0.0;
    double l_total = 0.0;
    double lambda = 0.0;
};

// Which objective the gradients cover. sparsity_only drops lambda and the
// teacher term entirely (gradients of m_soft alone); distill_only drops the
// sparsity proxy.
enum class GradTerms { both, distill_only, sparsity_only };

struct TrainConfig {
    double lambda = 0.08;
    double learning_rate = 0.05;
    long steps = 400;
    long window = 16;
    uint64_t seed = 1;
    enum class Optimizer { gd, momentum } optimizer = Optimizer::momentum;
    double momentum = 0.9;
    double epsilon = kGateEpsilon;
};

struct ParetoPoint {
    double lambda = 0.0;
    double tau = 0.0;
    double val_loss = 0.0;
    double cache_frac = 0.0;  // mean resident entries per head / sequence length
};

struct SoftForwardResult {
    Matrix hidden;                                        // final-layer hidden states [T x model_dim]
    std::vector<std::vector<std::vector<double>>> gates;  // [layer][kv_head][t]
};

struct GateBankGrads {
    int layers = 0, heads = 0;
    std::vector<GateGrads> grads;  // [layer * heads]

    static GateBankGrads zeros(const GateBank& bank);
    GateGrads& at(int layer, int head) { return grads[static_cast<size_t>(layer) * heads + head]; }
    const GateGrads& at(int layer, int head) const { return grads[static_cast<size_t>(layer) * heads + head]; }
    double norm_inf() const;
};

// Mean squared difference over all T * model_dim entries.
double loss_distill(const Matrix& student_hidden, const Matrix& teacher_hidden);

// Mean of g + g(1-g) = 2g - g^2 over every (layer, head, token).
double loss_sparsity(const std::vector<std::vector<std::vector<double>>>& gates);
double loss_sparsity(std::span<const double> gates);

// Full-sequence training forward: log-bias write-gated attention per head
// with continuous gates.
SoftForwardResult forward_soft(const ToyModel& model, const GateBank& gates, std::span<const int> tokens,
                               long window, double epsilon = kGateEpsilon);

// Analytic gradients of the selected objective with respect to gate
// parameters only. Backbone weights receive no gradients; activation
// gradients flow through every downstream layer, the attention softmax, and
// the log-bias term. Pass the teacher hidden states to skip recomputing
// them.
std::pair<LossBreakdown, GateBankGrads> backward_gates(const ToyModel& model, const GateBank& gates,
                                                       std::span<const int> tokens, long window, double lambda,
                                                       GradTerms terms = GradTerms::both,
                                                       double epsilon = kGateEpsilon,
                                                       const Matrix* teacher_hidden = nullptr);

struct TrainResult {
    GateBank gates;
    std::vector<LossBreakdown> curve;
};

// Iterative descent over the corpus (one sequence per step, round-robin).
// Deterministic given config.seed. Throws on divergence with the step index.
TrainResult train(const ToyModel& model, GateBank init, const TrainConfig& config,
                  const SyntheticCorpus& corpus);

// Hard-gate validation of a trained bank: mean distillation loss of the
// paged inference path against the teacher, plus cache-size accounting.
struct HardEval {
    double val_distill = 0.0;
    double cache_frac = 0.0;
    double admitted_fraction = 0.0;
};
HardEval eval_hard(const ToyModel& model, const GateBank& gates, const SyntheticCorpus& corpus, long window,
                   double tau);

// Trains one bank per lambda, evaluates every (lambda, tau) pair on the
// validation corpus, returns points sorted by cache size.
std::vector<ParetoPoint> sweep(const ToyModel& model, std::span<const double> lambdas,
                               std::span<const double> taus, const SyntheticCorpus& train_corpus,
                               const SyntheticCorpus& val_corpus, const TrainConfig& base,
                               const GateBank& init);

// Brute-force check of the Lagrangian argument: the unconstrained argmin of
// loss + lambda * memory must be loss-optimal among all candidates within
// its own memory budget.
struct OracleVerdict {
    bool holds = true;
    size_t argmin_index = 0;
    double objective = 0.0;
    long counterexample = -1;  // index of a violating candidate, -1 if none
};
OracleVerdict constrained_oracle(std::span<const std::pair<double, double>> candidates, double lambda);

}  // namespace wgkv
