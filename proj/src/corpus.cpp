#include "wgkv/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "wgkv/numerics.hpp"

namespace wgkv {

int VocabLayout::vocab() const {
    return std::max({filler_lo + filler_count, anchor_lo + anchor_count, cue_lo + cue_count});
}

SyntheticCorpus gen_corpus(uint64_t seed, long count, long len_min, long len_max, double anchor_density,
                           const VocabLayout& layout) {
    if (count < 1 || len_min < 8 || len_max < len_min)
        throw std::invalid_argument("gen_corpus: bad count or length range");
    if (anchor_density < 0.0 || anchor_density >= 1.0)
        throw std::invalid_argument("gen_corpus: density must lie in [0,1)");

    SyntheticCorpus corpus;
    corpus.layout = layout;
    corpus.seqs.reserve(static_cast<size_t>(count));
    Rng rng(seed);

    for (long s = 0; s < count; ++s) {
        PlantedSequence seq;
        const long len = len_min == len_max ? len_min : rng.uniform_int(len_min, len_max + 1);
        seq.tokens.resize(static_cast<size_t>(len));
        for (long t = 0; t < len; ++t)
            seq.tokens[static_cast<size_t>(t)] =
                layout.filler_lo + static_cast<int>(rng.uniform_int(0, layout.filler_count));

        if (anchor_density > 0.0) {
            const int pair_count = std::min(layout.anchor_count, layout.cue_count);
            seq.primary_anchor_index = static_cast<int>(rng.uniform_int(0, pair_count));

            // anchors live in the early region, well before the cue
            const long early_lo = 2;
            const long early_hi = std::max(early_lo + 1, (len * 5) / 8);
            const long n_anchors = std::max<long>(1, static_cast<long>(std::floor(anchor_density * len)));
            std::vector<long> positions;
            while (static_cast<long>(positions.size()) < n_anchors) {
                const long p = rng.uniform_int(early_lo, early_hi);
                if (std::find(positions.begin(), positions.end(), p) == positions.end()) positions.push_back(p);
            }
            std::sort(positions.begin(), positions.end());

            // the primary anchor id appears first; extras draw random anchor ids
            for (size_t i = 0; i < positions.size(); ++i) {
                const int id = i == 0 ? layout.anchor_lo + seq.primary_anchor_index
                                      : layout.anchor_lo + static_cast<int>(rng.uniform_int(0, layout.anchor_count));
                seq.tokens[static_cast<size_t>(positions[i])] = id;
            }
            seq.anchor_positions = positions;

            seq.cue_position = len - 2;
            seq.tokens[static_cast<size_t>(seq.cue_position)] = layout.cue_lo + seq.primary_anchor_index;
        }
        corpus.seqs.push_back(std::move(seq));
    }
    return corpus;
}

}  // namespace wgkv
