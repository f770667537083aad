#include "wgkv/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace wgkv {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string forced_mode_name(ForcedAdmission::Mode mode) {
    switch (mode) {
        case ForcedAdmission::Mode::none: return "none";
        case ForcedAdmission::Mode::stride: return "stride";
        case ForcedAdmission::Mode::recent_fraction: return "recent_fraction";
    }
    return "none";
}

ForcedAdmission::Mode forced_mode_from_name(const std::string& name) {
    if (name == "none") return ForcedAdmission::Mode::none;
    if (name == "stride") return ForcedAdmission::Mode::stride;
    if (name == "recent_fraction") return ForcedAdmission::Mode::recent_fraction;
    throw std::invalid_argument("unknown forced admission mode: " + name);
}

std::string bitmap_to_string(const std::vector<uint8_t>& bits) {
    std::string s;
    s.reserve(bits.size());
    for (uint8_t b : bits) s += b ? '1' : '0';
    return s;
}

std::vector<uint8_t> bitmap_from_string(const std::string& s) {
    std::vector<uint8_t> bits;
    bits.reserve(s.size());
    for (char c : s) {
        if (c != '0' && c != '1') throw std::invalid_argument("retrieval bitmap must be 0/1 characters");
        bits.push_back(c == '1' ? 1 : 0);
    }
    return bits;
}

}  // namespace

CliConfig default_config() { return CliConfig{}; }

static ordered_json config_to_json(const CliConfig& c) {
    ordered_json j;
    j["model"] = {{"layers", c.model.layers},
                  {"q_heads", c.model.q_heads},
                  {"kv_heads", c.model.kv_heads},
                  {"head_dim", c.model.head_dim},
                  {"mlp_hidden", c.model.mlp_hidden},
                  {"vocab", c.model.vocab},
                  {"rope_base", c.model.rope_base},
                  {"planted", c.planted},
                  {"seed", c.model_seed}};
    j["policy"] = {{"kind", policy_name(c.policy.kind)},
                   {"window", c.policy.window},
                   {"sink", c.policy.sink},
                   {"tau", c.policy.threshold.tau},
                   {"topk_budget", c.policy.topk_budget},
                   {"retrieval_bitmap", bitmap_to_string(c.policy.retrieval_bitmap)},
                   {"forced_mode", forced_mode_name(c.policy.forced.mode)},
                   {"forced_keep_every", c.policy.forced.keep_every},
                   {"forced_phase", c.policy.forced.phase},
                   {"forced_fraction", c.policy.forced.fraction}};
    j["train"] = {{"lambda", c.train.lambda},
                  {"learning_rate", c.train.learning_rate},
                  {"steps", c.train.steps},
                  {"window", c.train.window},
                  {"seed", c.train.seed},
                  {"optimizer", c.train.optimizer == TrainConfig::Optimizer::momentum ? "momentum" : "gd"},
                  {"momentum", c.train.momentum},
                  {"lambda_grid", c.lambda_grid},
                  {"tau_grid", c.tau_grid}};
    j["corpus"] = {{"seed", c.corpus_seed},
                   {"count", c.corpus_count},
                   {"len_min", c.corpus_len_min},
                   {"len_max", c.corpus_len_max},
                   {"anchor_density", c.anchor_density}};
    j["page_size"] = 16;
    j["infer_steps"] = c.infer_steps;
    j["oracle_sets"] = c.oracle_sets;
    j["oracle_runs"] = c.oracle_runs;
    j["seed"] = c.seed;
    j["gates_init"] = c.gates_init;
    j["paths"] = {{"gates", c.gates_path}, {"corpus", c.corpus_path}, {"out", c.out_dir}};
    return j;
}

static CliConfig config_from_json(const ordered_json& j) {
    CliConfig c;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        c.model.layers = m.value("layers", c.model.layers);
        c.model.q_heads = m.value("q_heads", c.model.q_heads);
        c.model.kv_heads = m.value("kv_heads", c.model.kv_heads);
        c.model.head_dim = m.value("head_dim", c.model.head_dim);
        c.model.mlp_hidden = m.value("mlp_hidden", c.model.mlp_hidden);
        c.model.vocab = m.value("vocab", c.model.vocab);
        c.model.rope_base = m.value("rope_base", c.model.rope_base);
        c.planted = m.value("planted", c.planted);
        c.model_seed = m.value("seed", c.model_seed);
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        c.policy.kind = policy_from_name(p.value("kind", std::string("wgkv")));
        c.policy.window = p.value("window", c.policy.window);
        c.policy.sink = p.value("sink", c.policy.sink);
        c.policy.threshold.tau = p.value("tau", c.policy.threshold.tau);
        c.policy.topk_budget = p.value("topk_budget", c.policy.topk_budget);
        c.policy.retrieval_bitmap = bitmap_from_string(p.value("retrieval_bitmap", std::string()));
        c.policy.forced.mode = forced_mode_from_name(p.value("forced_mode", std::string("none")));
        c.policy.forced.keep_every = p.value("forced_keep_every", c.policy.forced.keep_every);
        c.policy.forced.phase = p.value("forced_phase", c.policy.forced.phase);
        c.policy.forced.fraction = p.value("forced_fraction", c.policy.forced.fraction);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.lambda = t.value("lambda", c.train.lambda);
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.steps = t.value("steps", c.train.steps);
        c.train.window = t.value("window", c.train.window);
        c.train.seed = t.value("seed", c.train.seed);
        c.train.optimizer = t.value("optimizer", std::string("momentum")) == "gd"
                                ? TrainConfig::Optimizer::gd
                                : TrainConfig::Optimizer::momentum;
        c.train.momentum = t.value("momentum", c.train.momentum);
        if (t.contains("lambda_grid")) c.lambda_grid = t.at("lambda_grid").get<std::vector<double>>();
        if (t.contains("tau_grid")) c.tau_grid = t.at("tau_grid").get<std::vector<double>>();
    }
    if (j.contains("corpus")) {
        const auto& k = j.at("corpus");
        c.corpus_seed = k.value("seed", c.corpus_seed);
        c.corpus_count = k.value("count", c.corpus_count);
        c.corpus_len_min = k.value("len_min", c.corpus_len_min);
        c.corpus_len_max = k.value("len_max", c.corpus_len_max);
        c.anchor_density = k.value("anchor_density", c.anchor_density);
    }
    c.infer_steps = j.value("infer_steps", c.infer_steps);
    c.oracle_sets = j.value("oracle_sets", c.oracle_sets);
    c.oracle_runs = j.value("oracle_runs", c.oracle_runs);
    c.seed = j.value("seed", c.seed);
    c.gates_init = j.value("gates_init", c.gates_init);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        c.gates_path = p.value("gates", c.gates_path);
        c.corpus_path = p.value("corpus", c.corpus_path);
        c.out_dir = p.value("out", c.out_dir);
    }
    return c;
}

CliConfig parse_config(const std::string& json_text) {
    return config_from_json(ordered_json::parse(json_text));
}

CliConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string dump_config(const CliConfig& config) { return config_to_json(config).dump(2) + "\n"; }

GateBank make_gates(const CliConfig& c) {
    const int hidden = c.model.head_dim;  // lightweight default: hidden = head_dim
    if (c.gates_init == "saturated")
        return GateBank::random_init(c.model.layers, c.model.kv_heads, c.model.head_dim, hidden, c.seed, 0.02,
                                     20.0);
    if (c.gates_init == "spread")
        return GateBank::random_init(c.model.layers, c.model.kv_heads, c.model.head_dim, hidden, c.seed, 0.5,
                                     -2.5);
    if (c.gates_init == "default")
        return GateBank::random_init(c.model.layers, c.model.kv_heads, c.model.head_dim, hidden, c.seed);
    throw std::invalid_argument("unknown gates_init: " + c.gates_init);
}

ToyModel make_model(const CliConfig& c) {
    if (c.planted) return ToyModel::planted(c.model, c.model_seed, c.plant);
    return ToyModel::random(c.model, c.model_seed);
}

}  // namespace wgkv
