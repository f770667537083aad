#pragma once

#include <string>
#include <vector>

#include "wgkv/corpus.hpp"
#include "wgkv/engine.hpp"
#include "wgkv/model.hpp"
#include "wgkv/training.hpp"

namespace wgkv {

// Run configuration: JSON file with flag overrides (flags win). Defaults
// match the reference operating point (window 256, sink 128, tau 0.1,
// page size 16).
struct CliConfig {
    ModelConfig model;
    bool planted = true;
    PlantConfig plant;
    uint64_t model_seed = 7;

    PolicyConfig policy;

    TrainConfig train;
    std::vector<double> lambda_grid{0.0, 0.01, 0.04, 0.08, 0.16};
    std::vector<double> tau_grid{0.1};

    uint64_t corpus_seed = 11;
    long corpus_count = 200;
    long corpus_len_min = 128;
    long corpus_len_max = 128;
    double anchor_density = 0.08;
    VocabLayout vocab_layout;

    long infer_steps = 32;
    long oracle_sets = 10000;
    long oracle_runs = 5;
    uint64_t seed = 42;

    std::string gates_init = "default";  // default | saturated | spread
    std::string gates_path;
    std::string corpus_path;
    std::string out_dir = ".";
};

CliConfig default_config();
CliConfig parse_config(const std::string& json_text);
CliConfig load_config_file(const std::string& path);

// Canonical serialization; parse(dump(x)) then dump again is byte-identical.
std::string dump_config(const CliConfig& config);

// Builds the gate bank named by gates_init (used when no gates file is
// given): default = near-admit-everything init, saturated = b2 +20,
// spread = wide weights centered below tau so scores straddle the
// threshold.
GateBank make_gates(const CliConfig& config);
ToyModel make_model(const CliConfig& config);

}  // namespace wgkv
