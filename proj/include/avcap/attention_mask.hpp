#pragma once

#include <cstdint>
#include <vector>

namespace avcap {

// Binary attention mask over a concatenated sequence. allowed[i*cols+j] == 1
// means output position i may attend to input position j.
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> allowed;

    AttentionMask() = default;
    AttentionMask(int r, int c) : rows(r), cols(c), allowed(static_cast<size_t>(r) * c, 0) {}

    bool at(int i, int j) const { return allowed[static_cast<size_t>(i) * cols + j] != 0; }
    void set(int i, int j, bool v) { allowed[static_cast<size_t>(i) * cols + j] = v ? 1 : 0; }

    static AttentionMask all_allowed(int n);
};

// Prefix-LM mask over n_av audio-visual tokens followed by the text segment.
// AV rows attend to every AV column and no text column. Text row k attends to
// every AV column and to real text columns at positions <= k. Padded text
// columns (pad_mask false) are blocked everywhere.
AttentionMask build_attention_mask(int n_av, const std::vector<bool>& pad_mask);

}  // namespace avcap
