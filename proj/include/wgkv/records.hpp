#pragma once

#include <cstdint>
#include <vector>

namespace wgkv {

// Per-(layer, kv-head, position) admission history of a run. The engine
// appends an entry the moment a token's gate is evaluated; the dense-masked
// oracle and the promotion audits replay from it.
struct GateTrace {
    int layers = 0;
    int heads = 0;
    // [layer][head][position]
    std::vector<std::vector<std::vector<double>>> gates;
    std::vector<std::vector<std::vector<uint8_t>>> bits;

    GateTrace() = default;
    GateTrace(int n_layers, int n_heads)
        : layers(n_layers),
          heads(n_heads),
          gates(static_cast<size_t>(n_layers), std::vector<std::vector<double>>(static_cast<size_t>(n_heads))),
          bits(static_cast<size_t>(n_layers), std::vector<std::vector<uint8_t>>(static_cast<size_t>(n_heads))) {}

    void record(int layer, int head, double gate, bool admitted) {
        gates[static_cast<size_t>(layer)][static_cast<size_t>(head)].push_back(gate);
        bits[static_cast<size_t>(layer)][static_cast<size_t>(head)].push_back(admitted ? 1 : 0);
    }
};

}  // namespace wgkv
