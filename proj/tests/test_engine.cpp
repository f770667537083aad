#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "wgkv/engine.hpp"
#include "wgkv/oracle.hpp"
#include "wgkv/report.hpp"

using namespace wgkv;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.q_heads = 4;
    cfg.kv_heads = 4;
    cfg.head_dim = 16;
    cfg.mlp_hidden = 64;
    cfg.vocab = 64;
    return cfg;
}

std::vector<int> random_prompt(long n, int vocab, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> prompt(static_cast<size_t>(n));
    for (auto& t : prompt) t = static_cast<int>(rng.uniform_int(0, vocab));
    return prompt;
}

GateBank spread_gates(const ModelConfig& cfg, uint64_t seed) {
    return GateBank::random_init(cfg.layers, cfg.kv_heads, cfg.head_dim, cfg.head_dim, seed, 0.5, -2.5);
}

GateBank saturated_gates(const ModelConfig& cfg, uint64_t seed, double b2) {
    return GateBank::random_init(cfg.layers, cfg.kv_heads, cfg.head_dim, cfg.head_dim, seed, 0.02, b2);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("policy=full equals the dense teacher and caches every token") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 1);
    const GateBank gates = spread_gates(cfg, 2);
    const auto prompt = random_prompt(40, cfg.vocab, 3);

    PolicyConfig policy;
    policy.kind = PolicyKind::full;
    policy.window = 8;

    Session session(model, gates, policy, 40);
    const Matrix hidden = session.prefill(prompt);
    const Matrix teacher = teacher_forward(model, prompt);
    CHECK(max_abs_diff(hidden, teacher) < 1e-10);

    for (const auto& cache : session.caches())
        CHECK(cache.local_len() + cache.global_len() == 40);
}

TEST_CASE("saturated gates reproduce full attention; zeroed gates reproduce the sliding window") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 11);
    const auto prompt = random_prompt(48, cfg.vocab, 12);
    const long window = 8;

    PolicyConfig wgkv_policy;
    wgkv_policy.kind = PolicyKind::wgkv;
    wgkv_policy.window = window;
    PolicyConfig full_policy = wgkv_policy;
    full_policy.kind = PolicyKind::full;

    {
        const GateBank sat = saturated_gates(cfg, 13, 20.0);
        auto [ids_a, rep_a] = generate(model, sat, prompt, 16, wgkv_policy);
        auto [ids_b, rep_b] = generate(model, sat, prompt, 16, full_policy);
        CHECK(ids_a == ids_b);

        Session sa(model, sat, wgkv_policy, 48);
        Session sb(model, sat, full_policy, 48);
        CHECK(max_abs_diff(sa.prefill(prompt), sb.prefill(prompt)) < 1e-10);
    }

    {
        // g ~ 2e-9 < tau everywhere: pure local window, matching local_sink with sink=0
        const GateBank zeroed = saturated_gates(cfg, 13, -20.0);
        PolicyConfig sliding = wgkv_policy;
        sliding.kind = PolicyKind::local_sink;
        sliding.sink = 0;
        auto [ids_a, rep_a] = generate(model, zeroed, prompt, 16, wgkv_policy);
        auto [ids_b, rep_b] = generate(model, zeroed, prompt, 16, sliding);
        CHECK(ids_a == ids_b);
        CHECK(rep_a.cache.resident_entries == rep_b.cache.resident_entries);
    }
}

TEST_CASE("wgkv prefill and decode match the dense-masked oracle with per-step promotion audit") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 21);
    const GateBank gates = spread_gates(cfg, 22);
    const auto prompt = random_prompt(48, cfg.vocab, 23);
    const long window = 8;
    const double tau = 0.1;

    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = window;
    policy.threshold = Threshold{tau};

    Session session(model, gates, policy, 48 + 24);
    const Matrix hidden = session.prefill(prompt);

    MaskedOracle oracle(model, window);
    const Matrix ref_hidden = oracle.prefill(prompt, session.trace());
    CHECK(max_abs_diff(hidden, ref_hidden) < 1e-8);

    std::vector<double> logits = logits_from_hidden_row(model, hidden.row(hidden.rows - 1));
    for (long step = 0; step < 24; ++step) {
        const int next = argmax_token(logits);
        logits = session.decode_step(next);
        const auto ref_logits = oracle.decode_step(next, session.trace());
        for (size_t i = 0; i < logits.size(); ++i)
            CHECK(std::abs(logits[i] - ref_logits[i]) < 1e-8);

        // exhaustive promotion audit after every step
        const long t_now = session.position() - 1;
        for (int l = 0; l < cfg.layers; ++l)
            for (int h = 0; h < cfg.kv_heads; ++h) {
                const auto kv = session.cache_at(l, h).gather(session.pool());
                const auto& g_hist = session.trace().gates[static_cast<size_t>(l)][static_cast<size_t>(h)];
                std::set<long> global_set(kv.global_pos.begin(), kv.global_pos.end());
                for (long j = 0; j <= t_now; ++j) {
                    const bool expected = j <= t_now - window && g_hist[static_cast<size_t>(j)] >= tau;
                    CHECK(global_set.count(j) == (expected ? 1u : 0u));
                }
                std::vector<long> expect_local;
                for (long j = std::max<long>(0, t_now - window + 1); j <= t_now; ++j)
                    expect_local.push_back(j);
                CHECK(kv.local_pos == expect_local);
            }
    }
}

TEST_CASE("grouped-query attention matches the oracle too") {
    ModelConfig cfg = small_config();
    cfg.kv_heads = 2;  // group size 2
    const ToyModel model = ToyModel::random(cfg, 31);
    const GateBank gates = GateBank::random_init(cfg.layers, cfg.kv_heads, cfg.head_dim, cfg.head_dim, 32,
                                                 0.5, -2.5);
    const auto prompt = random_prompt(32, cfg.vocab, 33);

    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = 4;

    Session session(model, gates, policy, 32 + 8);
    const Matrix hidden = session.prefill(prompt);
    MaskedOracle oracle(model, policy.window);
    CHECK(max_abs_diff(hidden, oracle.prefill(prompt, session.trace())) < 1e-8);

    std::vector<double> logits = logits_from_hidden_row(model, hidden.row(hidden.rows - 1));
    for (long step = 0; step < 8; ++step) {
        const int next = argmax_token(logits);
        logits = session.decode_step(next);
        const auto ref = oracle.decode_step(next, session.trace());
        for (size_t i = 0; i < logits.size(); ++i) CHECK(std::abs(logits[i] - ref[i]) < 1e-8);
    }
}

TEST_CASE("generate with zero steps returns the prompt and a prefill-only report") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 41);
    const GateBank gates = spread_gates(cfg, 42);
    const auto prompt = random_prompt(16, cfg.vocab, 43);

    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = 4;
    auto [ids, report] = generate(model, gates, prompt, 0, policy);
    CHECK(ids == prompt);
    CHECK(report.outputs.empty());
    CHECK(report.per_step.size() == 1);
    CHECK(report.per_step[0].score_evals > 0);
}

TEST_CASE("local_sink accounting at the reference operating point") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 51);
    const GateBank gates = spread_gates(cfg, 52);
    const auto prompt = random_prompt(1000, cfg.vocab, 53);

    PolicyConfig policy;
    policy.kind = PolicyKind::local_sink;
    policy.window = 256;
    policy.sink = 128;

    Session session(model, gates, policy, 1000);
    session.prefill(prompt);
    for (const auto& cache : session.caches()) {
        CHECK(cache.local_len() == 256);
        CHECK(cache.global_len() == 128);
    }
}

TEST_CASE("local_sink on a short sequence equals full attention") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 61);
    const GateBank gates = spread_gates(cfg, 62);
    const auto prompt = random_prompt(20, cfg.vocab, 63);

    PolicyConfig sink_policy;
    sink_policy.kind = PolicyKind::local_sink;
    sink_policy.window = 256;
    sink_policy.sink = 128;
    PolicyConfig full_policy = sink_policy;
    full_policy.kind = PolicyKind::full;

    auto [ids_a, rep_a] = generate(model, gates, prompt, 8, sink_policy);
    auto [ids_b, rep_b] = generate(model, gates, prompt, 8, full_policy);
    CHECK(ids_a == ids_b);
}

TEST_CASE("static_heads policy behaviors") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 71);
    const GateBank gates = spread_gates(cfg, 72);
    const auto prompt = random_prompt(40, cfg.vocab, 73);
    const long window = 8;
    const size_t n_heads = static_cast<size_t>(cfg.layers) * cfg.kv_heads;

    PolicyConfig retrieval;
    retrieval.kind = PolicyKind::static_heads;
    retrieval.window = window;
    retrieval.retrieval_bitmap.assign(n_heads, 1);

    PolicyConfig full_policy;
    full_policy.kind = PolicyKind::full;
    full_policy.window = window;

    auto [ids_a, rep_a] = generate(model, gates, prompt, 12, retrieval);
    auto [ids_b, rep_b] = generate(model, gates, prompt, 12, full_policy);
    CHECK(ids_a == ids_b);

    PolicyConfig streaming = retrieval;
    streaming.retrieval_bitmap.assign(n_heads, 0);
    PolicyConfig sliding;
    sliding.kind = PolicyKind::local_sink;
    sliding.window = window;
    sliding.sink = 0;
    auto [ids_c, rep_c] = generate(model, gates, prompt, 12, streaming);
    auto [ids_d, rep_d] = generate(model, gates, prompt, 12, sliding);
    CHECK(ids_c == ids_d);

    // mixed bitmap: per-head residency follows the pattern exactly
    PolicyConfig mixed = retrieval;
    for (size_t i = 0; i < n_heads; ++i) mixed.retrieval_bitmap[i] = i % 2 == 0 ? 1 : 0;
    Session session(model, gates, mixed, 40);
    session.prefill(prompt);
    size_t idx = 0;
    for (const auto& cache : session.caches()) {
        const long expected_global = mixed.retrieval_bitmap[idx] ? 40 - window : 0;
        CHECK(cache.global_len() == expected_global);
        CHECK(cache.local_len() == window);
        ++idx;
    }

    // bitmap length mismatch rejected
    PolicyConfig bad = mixed;
    bad.retrieval_bitmap.pop_back();
    CHECK_THROWS_AS(Session(model, gates, bad, 40), std::invalid_argument);
}

TEST_CASE("select_topk_pages: full budget is the identity, planted key always wins") {
    const auto cfg = small_config();
    KvPool pool(4, cfg.head_dim, 64);
    HeadCache cache(0, 0, 4);
    Rng rng(81);
    const Threshold tau{0.1};

    // 20 writes -> 16 aged-out victims, all admitted (gate 1.0)
    std::vector<std::vector<double>> keys;
    for (long t = 0; t < 20; ++t) {
        std::vector<double> k(static_cast<size_t>(cfg.head_dim));
        for (auto& x : k) x = rng.gaussian();
        keys.push_back(k);
        std::vector<double> v(static_cast<size_t>(cfg.head_dim), 0.5);
        cache.local_write(pool, k, v, 1.0, tau, t);
    }
    REQUIRE(cache.global_len() == 16);
    REQUIRE(cache.table().global_pages.size() == 4);

    std::vector<double> q(static_cast<size_t>(cfg.head_dim));
    for (auto& x : q) x = rng.gaussian();

    const auto all = select_topk_pages(q, cache, pool, 100);
    const auto kv = cache.gather(pool);
    CHECK(all.entries == 16);
    CHECK(all.k.data == kv.global_k.data);
    CHECK(all.v.data == kv.global_v.data);

    // plant an extreme key in global page 2 (positions 8..11)
    const long planted_pos = 9;
    std::vector<double> loud(q);
    for (auto& x : loud) x *= 50.0;
    {
        const int page = cache.table().global_pages[static_cast<size_t>(planted_pos / 4)];
        auto slot = pool.k_slot(page, static_cast<int>(planted_pos % 4));
        std::copy(loud.begin(), loud.end(), slot.begin());
    }
    const auto top1 = select_topk_pages(q, cache, pool, 1);
    REQUIRE(top1.logical_pages.size() == 1);
    CHECK(top1.logical_pages[0] == 2);
    CHECK(top1.entries <= 4);
}

TEST_CASE("wgkv_plus_topk attends at most local + budget*page_size entries per head") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 91);
    const GateBank gates = saturated_gates(cfg, 92, 20.0);  // admit everything -> many global pages
    const auto prompt = random_prompt(96, cfg.vocab, 93);

    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv_plus_topk;
    policy.window = 8;
    policy.topk_budget = 2;

    Session session(model, gates, policy, 96 + 4);
    const Matrix hidden = session.prefill(prompt);
    std::vector<double> logits = logits_from_hidden_row(model, hidden.row(hidden.rows - 1));
    for (int step = 0; step < 4; ++step) {
        const int next = argmax_token(logits);
        logits = session.decode_step(next);
        // per query head: <= local_len + budget * page_size entries
        const uint64_t bound = static_cast<uint64_t>(cfg.layers) * cfg.q_heads *
                               (8 + policy.topk_budget * session.pool().page_size());
        CHECK(session.last_step_score_evals() <= bound);
    }
}

TEST_CASE("wgkv_plus_topk with unlimited budget equals wgkv bit-exactly") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 101);
    const GateBank gates = spread_gates(cfg, 102);
    const auto prompt = random_prompt(64, cfg.vocab, 103);

    PolicyConfig base;
    base.kind = PolicyKind::wgkv;
    base.window = 8;

    PolicyConfig with_topk = base;
    with_topk.kind = PolicyKind::wgkv_plus_topk;
    with_topk.topk_budget = 1000000;  // more pages than can exist

    auto [ids_a, rep_a] = generate(model, gates, prompt, 16, base);
    auto [ids_b, rep_b] = generate(model, gates, prompt, 16, with_topk);
    CHECK(ids_a == ids_b);
    CHECK(rep_a.total_score_evals() == rep_b.total_score_evals());
}

TEST_CASE("score-evaluation accounting matches the analytic permitted-pair count") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 111);
    const GateBank gates = spread_gates(cfg, 112);
    const long n = 64;
    const auto prompt = random_prompt(n, cfg.vocab, 113);
    const long window = 8;

    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = window;

    Session session(model, gates, policy, n);
    session.prefill(prompt);

    uint64_t expected = 0;
    uint64_t admitted_bound = 0;
    for (int l = 0; l < cfg.layers; ++l)
        for (int h = 0; h < cfg.kv_heads; ++h) {
            const auto& bits = session.trace().bits[static_cast<size_t>(l)][static_cast<size_t>(h)];
            VsMask mask{window, bits};
            const uint64_t pairs = vs_mask_pair_count(mask, n, n, 0);
            // group size 1 here: one query head per kv head
            expected += pairs * static_cast<uint64_t>(cfg.q_heads / cfg.kv_heads);
            uint64_t g_count = 0;
            for (uint8_t b : bits) g_count += b;
            admitted_bound += static_cast<uint64_t>(n) * (window + g_count);
        }
    CHECK(session.prefill_score_evals() == expected);
    CHECK(expected <= admitted_bound);
}

TEST_CASE("identical seeds produce bit-identical run reports") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 121);
    const GateBank gates = spread_gates(cfg, 122);
    const auto prompt = random_prompt(32, cfg.vocab, 123);

    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = 8;

    auto [ids_a, rep_a] = generate(model, gates, prompt, 12, policy);
    auto [ids_b, rep_b] = generate(model, gates, prompt, 12, policy);
    CHECK(ids_a == ids_b);
    CHECK(report_to_json(rep_a, "") == report_to_json(rep_b, ""));
    CHECK(report_to_csv(rep_a) == report_to_csv(rep_b));
}

TEST_CASE("session lifecycle errors") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 131);
    const GateBank gates = spread_gates(cfg, 132);
    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = 4;

    Session session(model, gates, policy, 16);
    CHECK_THROWS_AS(session.decode_step(0), std::logic_error);

    const auto prompt = random_prompt(8, cfg.vocab, 133);
    session.prefill(prompt);
    CHECK_THROWS_AS(session.prefill(prompt), std::logic_error);
    CHECK_THROWS_AS(session.decode_step(cfg.vocab + 5), std::invalid_argument);

    // unknown token in the prompt
    Session fresh(model, gates, policy, 16);
    std::vector<int> bad{0, 1, cfg.vocab};
    CHECK_THROWS_AS(fresh.prefill(bad), std::invalid_argument);
}

TEST_CASE("pool exhaustion surfaces as a configuration error") {
    const auto cfg = small_config();
    const ToyModel model = ToyModel::random(cfg, 141);
    const GateBank gates = saturated_gates(cfg, 142, 20.0);
    const auto prompt = random_prompt(64, cfg.vocab, 143);

    PolicyConfig policy;
    policy.kind = PolicyKind::wgkv;
    policy.window = 8;

    // deliberately undersized pool
    CHECK_THROWS_WITH_AS(
        [&] {
            Session session(model, gates, policy, 64, 4);
            session.prefill(prompt);
        }(),
        doctest::Contains("out of pages"), std::runtime_error);
}
