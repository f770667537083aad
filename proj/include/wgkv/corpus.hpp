#pragma once

#include <cstdint>
#include <vector>

namespace wgkv {

// Token-id ranges of the synthetic vocabulary. Anchor ids are the tokens
// the planted model treats as high-utility; cue ids pair with anchors
// one-to-one (cue_lo + m recalls anchor_lo + m).
struct VocabLayout {
    int filler_lo = 0;
    int filler_count = 48;
    int anchor_lo = 48;
    int anchor_count = 8;
    int cue_lo = 56;
    int cue_count = 8;

    int vocab() const;
};

struct PlantedSequence {
    std::vector<int> tokens;
    std::vector<long> anchor_positions;  // every planted anchor, ascending
    long cue_position = -1;              // -1 when no anchors were planted
    int primary_anchor_index = -1;       // m such that cue id = cue_lo + m, anchor id = anchor_lo + m
};

struct SyntheticCorpus {
    VocabLayout layout;
    std::vector<PlantedSequence> seqs;
};

// Random filler with planted anchor/recall pairs: anchor tokens early, a
// cue token near the end whose id maps back to the primary anchor.
// Deterministic per seed; density 0 produces pure filler with no
// annotations.
SyntheticCorpus gen_corpus(uint64_t seed, long count, long len_min, long len_max, double anchor_density,
                           const VocabLayout& layout = {});

}  // namespace wgkv
