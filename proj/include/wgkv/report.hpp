#pragma once

#include <string>

#include "wgkv/engine.hpp"
#include "wgkv/training.hpp"

namespace wgkv {

// Single-object JSON document: config echo, per-step counters, cache
// accounting, generated ids.
std::string report_to_json(const RunReport& report, const std::string& config_echo_json);

// One row per step for plotting: step,score_evals
std::string report_to_csv(const RunReport& report);

// step,l_distill,m_soft,l_total
std::string curve_to_csv(const std::vector<LossBreakdown>& curve);

// lambda,tau,val_loss,cache_frac
std::string pareto_to_csv(const std::vector<ParetoPoint>& points);

// Writes via temp file + rename so readers never observe partial output.
void atomic_write(const std::string& path, const std::string& content);

}  // namespace wgkv
