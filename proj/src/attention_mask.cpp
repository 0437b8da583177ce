#include "avcap/attention_mask.hpp"

#include <stdexcept>

namespace avcap {

AttentionMask AttentionMask::all_allowed(int n) {
    AttentionMask m(n, n);
    std::fill(m.allowed.begin(), m.allowed.end(), uint8_t{1});
    return m;
}

AttentionMask build_attention_mask(int n_av, const std::vector<bool>& pad_mask) {
    if (n_av < 0) throw std::invalid_argument("build_attention_mask: n_av must be >= 0");
    const int t = static_cast<int>(pad_mask.size());
    if (t < 1) throw std::invalid_argument("build_attention_mask: text length must be >= 1");

    const int n = n_av + t;
    AttentionMask m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n_av; ++j) m.set(i, j, true);
        if (i < n_av) continue;  // AV rows never see text columns
        const int k = i - n_av;
        for (int j = 0; j <= k; ++j) {
            if (pad_mask[j]) m.set(i, n_av + j, true);
        }
    }
    return m;
}

}  // namespace avcap
