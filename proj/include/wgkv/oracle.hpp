#pragma once

#include <span>
#include <vector>

#include "wgkv/model.hpp"
#include "wgkv/records.hpp"

namespace wgkv {

// Full-history reference model: retains every KV pair and masks attention
// by setting forbidden logits to -inf, with pair (i,j) permitted when
// i - j < window or the trace admitted token j. Defines correctness for the
// paged dual-cache path without sharing any of its cache or routing code.
class MaskedOracle {
public:
    MaskedOracle(const ToyModel& model, long window);

    // Consumes tokens at the next positions; returns their final hidden rows.
    Matrix prefill(std::span<const int> tokens, const GateTrace& trace);

    // One token; returns next-token logits.
    std::vector<double> decode_step(int token, const GateTrace& trace);

    long position() const { return next_pos_; }

private:
    std::vector<double> forward_token(int token, const GateTrace& trace);

    const ToyModel& model_;
    long window_;
    long next_pos_ = 0;
    std::vector<std::vector<Matrix>> k_hist_;  // [layer][kv_head], rows = positions so far
    std::vector<std::vector<Matrix>> v_hist_;
};

// The original full-attention model: a masked oracle whose window covers
// everything. Returns final hidden states [T x model_dim].
Matrix teacher_forward(const ToyModel& model, std::span<const int> tokens);

}  // namespace wgkv
