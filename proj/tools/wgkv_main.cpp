#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "wgkv/config.hpp"
#include "wgkv/corpus.hpp"
#include "wgkv/engine.hpp"
#include "wgkv/oracle.hpp"
#include "wgkv/report.hpp"
#include "wgkv/training.hpp"

namespace {

using namespace wgkv;

struct Overrides {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<double> lambda;
    std::optional<double> tau;
    std::optional<long> window;
    std::optional<std::string> policy;
    std::optional<std::string> out;
};

CliConfig resolve_config(const Overrides& ov) {
    CliConfig cfg = ov.config_path.empty() ? default_config() : load_config_file(ov.config_path);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.lambda) cfg.train.lambda = *ov.lambda;
    if (ov.tau) cfg.policy.threshold.tau = *ov.tau;
    if (ov.window) {
        cfg.policy.window = *ov.window;
        cfg.train.window = *ov.window;
    }
    if (ov.policy) cfg.policy.kind = policy_from_name(*ov.policy);
    if (ov.out) cfg.out_dir = *ov.out;
    std::filesystem::create_directories(cfg.out_dir);
    return cfg;
}

SyntheticCorpus corpus_for(const CliConfig& cfg) {
    return gen_corpus(cfg.corpus_seed, cfg.corpus_count, cfg.corpus_len_min, cfg.corpus_len_max,
                      cfg.anchor_density, cfg.vocab_layout);
}

GateBank gates_for(const CliConfig& cfg) {
    if (!cfg.gates_path.empty() && std::filesystem::exists(cfg.gates_path))
        return GateBank::load(cfg.gates_path);
    return make_gates(cfg);
}

std::string out_path(const CliConfig& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.out_dir) / name).string();
}

int cmd_train(const CliConfig& cfg) {
    const ToyModel model = make_model(cfg);
    const SyntheticCorpus corpus = corpus_for(cfg);
    const GateBank init = gates_for(cfg);
    const TrainResult result = train(model, init, cfg.train, corpus);

    const std::string gates_out = cfg.gates_path.empty() ? out_path(cfg, "gates.wgkv") : cfg.gates_path;
    result.gates.save(gates_out);
    atomic_write(out_path(cfg, "loss_curve.csv"), curve_to_csv(result.curve));
    std::printf("train: %zu steps, final l_total=%.6g, gates -> %s\n", result.curve.size(),
                result.curve.back().l_total, gates_out.c_str());
    return 0;
}

int cmd_infer(const CliConfig& cfg) {
    const ToyModel model = make_model(cfg);
    const GateBank gates = gates_for(cfg);

    std::vector<int> prompt;
    if (cfg.anchor_density >= 0.0 && cfg.corpus_count > 0) {
        const SyntheticCorpus corpus = corpus_for(cfg);
        prompt = corpus.seqs.front().tokens;
    }
    auto [ids, report] = generate(model, gates, prompt, cfg.infer_steps, cfg.policy);

    atomic_write(out_path(cfg, "run_report.json"), report_to_json(report, dump_config(cfg)));
    atomic_write(out_path(cfg, "run_report.csv"), report_to_csv(report));
    std::printf("infer: policy=%s resident=%ld admitted_fraction=%.4f score_evals=%llu\n",
                policy_name(cfg.policy.kind), report.cache.resident_entries, report.cache.admitted_fraction,
                static_cast<unsigned long long>(report.total_score_evals()));
    return 0;
}

int cmd_sweep(const CliConfig& cfg) {
    const ToyModel model = make_model(cfg);
    SyntheticCorpus corpus = corpus_for(cfg);
    // hold out one quarter for validation
    const size_t split = corpus.seqs.size() - corpus.seqs.size() / 4;
    SyntheticCorpus val;
    val.layout = corpus.layout;
    val.seqs.assign(corpus.seqs.begin() + static_cast<long>(split), corpus.seqs.end());
    corpus.seqs.resize(split);

    const GateBank init = gates_for(cfg);
    const auto points = sweep(model, cfg.lambda_grid, cfg.tau_grid, corpus, val, cfg.train, init);
    atomic_write(out_path(cfg, "pareto.csv"), pareto_to_csv(points));
    std::printf("sweep: %zu points -> pareto.csv\n", points.size());
    return 0;
}

int cmd_bench(const CliConfig& cfg) {
    const ToyModel model = make_model(cfg);
    const GateBank gates = gates_for(cfg);
    const SyntheticCorpus corpus = corpus_for(cfg);
    const auto& prompt = corpus.seqs.front().tokens;

    PolicyConfig full_policy = cfg.policy;
    full_policy.kind = PolicyKind::full;
    auto [full_ids, full_report] = generate(model, gates, prompt, cfg.infer_steps, full_policy);

    std::string csv = "policy,score_evals,resident_entries,agreement\n";
    for (PolicyKind kind : {PolicyKind::full, PolicyKind::wgkv, PolicyKind::local_sink,
                            PolicyKind::static_heads, PolicyKind::wgkv_plus_topk}) {
        PolicyConfig policy = cfg.policy;
        policy.kind = kind;
        if (kind == PolicyKind::static_heads && policy.retrieval_bitmap.empty())
            policy.retrieval_bitmap.assign(
                static_cast<size_t>(model.cfg.layers) * model.cfg.kv_heads, 1);
        auto [ids, report] = generate(model, gates, prompt, cfg.infer_steps, policy);
        long agree = 0;
        for (size_t i = 0; i < report.outputs.size(); ++i)
            if (report.outputs[i] == full_report.outputs[i]) ++agree;
        const double agreement =
            report.outputs.empty() ? 1.0 : static_cast<double>(agree) / report.outputs.size();
        char row[160];
        std::snprintf(row, sizeof(row), "%s,%llu,%ld,%.17g\n", policy_name(kind),
                      static_cast<unsigned long long>(report.total_score_evals()),
                      report.cache.resident_entries, agreement);
        csv += row;
    }
    atomic_write(out_path(cfg, "bench.csv"), csv);
    std::printf("bench: -> bench.csv\n");
    return 0;
}

int cmd_oracle(const CliConfig& cfg) {
    long failures = 0;

    // Lagrangian argmin property over random candidate sets
    Rng rng(cfg.seed);
    long lagrangian_pass = 0;
    for (long s = 0; s < cfg.oracle_sets; ++s) {
        const long n = 1 + rng.uniform_int(0, 64);
        std::vector<std::pair<double, double>> candidates(static_cast<size_t>(n));
        for (auto& c : candidates) c = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
        const double lambda = rng.uniform(1e-6, 4.0);
        if (constrained_oracle(candidates, lambda).holds)
            ++lagrangian_pass;
        else
            ++failures;
    }
    std::printf("oracle: lagrangian argmin property %ld/%ld pass\n", lagrangian_pass, cfg.oracle_sets);

    // paged path vs dense-masked oracle
    long equivalence_pass = 0;
    for (long run = 0; run < cfg.oracle_runs; ++run) {
        const uint64_t seed = cfg.seed + 1000 + static_cast<uint64_t>(run);
        const ToyModel model = ToyModel::random(cfg.model, seed);
        const GateBank gates = GateBank::random_init(cfg.model.layers, cfg.model.kv_heads, cfg.model.head_dim,
                                                     cfg.model.head_dim, seed + 1, 0.5, -2.5);
        Rng prompt_rng(seed + 2);
        std::vector<int> prompt(64);
        for (auto& t : prompt) t = static_cast<int>(prompt_rng.uniform_int(0, cfg.model.vocab));

        PolicyConfig policy;
        policy.kind = PolicyKind::wgkv;
        policy.window = 8;
        policy.threshold = cfg.policy.threshold;

        Session session(model, gates, policy, static_cast<long>(prompt.size()) + 16);
        const Matrix hidden = session.prefill(prompt);

        MaskedOracle oracle(model, policy.window);
        const Matrix ref_hidden = oracle.prefill(prompt, session.trace());

        double max_err = 0.0;
        for (size_t i = 0; i < hidden.data.size(); ++i)
            max_err = std::max(max_err, std::abs(hidden.data[i] - ref_hidden.data[i]));

        std::vector<double> logits = logits_from_hidden_row(model, hidden.row(hidden.rows - 1));
        for (int step = 0; step < 16; ++step) {
            const int next = argmax_token(logits);
            logits = session.decode_step(next);
            const auto ref_logits = oracle.decode_step(next, session.trace());
            for (size_t i = 0; i < logits.size(); ++i)
                max_err = std::max(max_err, std::abs(logits[i] - ref_logits[i]));
        }
        if (max_err < 1e-8)
            ++equivalence_pass;
        else
            ++failures;
    }
    std::printf("oracle: dense-masked equivalence %ld/%ld pass\n", equivalence_pass, cfg.oracle_runs);
    std::printf("oracle: %ld failures\n", failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"write-gated KV admission reference engine"};
    app.require_subcommand(1);

    Overrides ov;
    app.add_option("--config", ov.config_path, "JSON config path");
    uint64_t seed_opt = 0;
    double lambda_opt = 0, tau_opt = 0;
    long window_opt = 0;
    std::string policy_opt, out_opt;
    auto* seed_flag = app.add_option("--seed", seed_opt, "override seed");
    auto* lambda_flag = app.add_option("--lambda", lambda_opt, "override lambda");
    auto* tau_flag = app.add_option("--tau", tau_opt, "override tau");
    auto* window_flag = app.add_option("--window", window_opt, "override window");
    auto* policy_flag = app.add_option("--policy", policy_opt, "override policy kind");
    auto* out_flag = app.add_option("--out", out_opt, "output directory");

    auto* train_cmd = app.add_subcommand("train", "train the write gate by distillation");
    auto* infer_cmd = app.add_subcommand("infer", "run prefill + decode with a policy");
    auto* sweep_cmd = app.add_subcommand("sweep", "lambda/tau Pareto sweep");
    auto* bench_cmd = app.add_subcommand("bench", "compare policies on one prompt");
    auto* oracle_cmd = app.add_subcommand("oracle", "run the property suites");
    for (auto* sub : {train_cmd, infer_cmd, sweep_cmd, bench_cmd, oracle_cmd}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (seed_flag->count()) ov.seed = seed_opt;
        if (lambda_flag->count()) ov.lambda = lambda_opt;
        if (tau_flag->count()) ov.tau = tau_opt;
        if (window_flag->count()) ov.window = window_opt;
        if (policy_flag->count()) ov.policy = policy_opt;
        if (out_flag->count()) ov.out = out_opt;
        const CliConfig cfg = resolve_config(ov);

        if (train_cmd->parsed()) return cmd_train(cfg);
        if (infer_cmd->parsed()) return cmd_infer(cfg);
        if (sweep_cmd->parsed()) return cmd_sweep(cfg);
        if (bench_cmd->parsed()) return cmd_bench(cfg);
        if (oracle_cmd->parsed()) return cmd_oracle(cfg);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
