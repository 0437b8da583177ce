#pragma once

#include "avcap/params.hpp"
#include "avcap/tensor.hpp"

#include <string>
#include <vector>

namespace avcap {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr int kMlpRatio = 4;
inline constexpr double kInitStd = 0.02;

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma, beta;
};

template <typename T>
struct AttentionParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct MlpParams {
    Tensor<T> w1, b1, w2, b2;
};

// Pre-norm transformer block: x + MSA(LN(x)), then x + MLP(LN(x)).
template <typename T>
struct BlockParams {
    LayerNormParams<T> ln1;
    AttentionParams<T> attn;
    LayerNormParams<T> ln2;
    MlpParams<T> mlp;
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_row_bias(matmul(x, w), b);
}

// Scaled dot-product attention over H heads with an optional mask shared by
// every head. Scale is 1/sqrt(D/H).
template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionParams<T>& p, int heads,
                                    const AttentionMask* mask = nullptr) {
    const int d = x.cols();
    if (heads < 1 || d % heads != 0)
        throw TensorError("multi_head_self_attention: embedding dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    const int dh = d / heads;
    const Tensor<T> q = linear(x, p.wq, p.bq);
    const Tensor<T> k = linear(x, p.wk, p.bk);
    const Tensor<T> v = linear(x, p.wv, p.bv);
    const T scl = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh, c1 = (h + 1) * dh;
        const Tensor<T> qh = slice_cols(q, c0, c1);
        const Tensor<T> kh = slice_cols(k, c0, c1);
        const Tensor<T> vh = slice_cols(v, c0, c1);
        const Tensor<T> scores = scale(matmul(qh, transpose(kh)), scl);
        const Tensor<T> probs = masked_softmax(scores, mask);
        head_outs.push_back(matmul(probs, vh));
    }
    return linear(concat_cols(head_outs), p.wo, p.bo);
}

// Linear -> GELU -> linear, hidden width fixed by the params' shapes.
template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const MlpParams<T>& p) {
    return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
    return layer_norm(x, p.gamma, p.beta, static_cast<T>(kLayerNormEps));
}

// Registration helpers: create parameters, register them under hierarchical
// names, and hand back struct views sharing the same tensors.

template <typename T>
LayerNormParams<T> make_layer_norm(ParamStore<T>& store, const std::string& prefix, int dim) {
    LayerNormParams<T> p;
    p.gamma = Tensor<T>::filled(1, dim, T(1));
    p.beta = Tensor<T>::zeros(1, dim);
    store.add(prefix + ".gamma", p.gamma);
    store.add(prefix + ".beta", p.beta);
    return p;
}

template <typename T>
AttentionParams<T> make_attention(ParamStore<T>& store, const std::string& prefix, int dim,
                                  std::mt19937_64& rng) {
    AttentionParams<T> p;
    p.wq = trunc_normal<T>(dim, dim, static_cast<T>(kInitStd), rng);
    p.wk = trunc_normal<T>(dim, dim, static_cast<T>(kInitStd), rng);
    p.wv = trunc_normal<T>(dim, dim, static_cast<T>(kInitStd), rng);
    p.wo = trunc_normal<T>(dim, dim, static_cast<T>(kInitStd), rng);
    p.bq = Tensor<T>::zeros(1, dim);
    p.bk = Tensor<T>::zeros(1, dim);
    p.bv = Tensor<T>::zeros(1, dim);
    p.bo = Tensor<T>::zeros(1, dim);
    store.add(prefix + ".wq", p.wq);
    store.add(prefix + ".bq", p.bq);
    store.add(prefix + ".wk", p.wk);
    store.add(prefix + ".bk", p.bk);
    store.add(prefix + ".wv", p.wv);
    store.add(prefix + ".bv", p.bv);
    store.add(prefix + ".wo", p.wo);
    store.add(prefix + ".bo", p.bo);
    return p;
}

template <typename T>
MlpParams<T> make_mlp(ParamStore<T>& store, const std::string& prefix, int dim,
                      std::mt19937_64& rng) {
    const int hidden = kMlpRatio * dim;
    MlpParams<T> p;
    p.w1 = trunc_normal<T>(dim, hidden, static_cast<T>(kInitStd), rng);
    p.b1 = Tensor<T>::zeros(1, hidden);
    p.w2 = trunc_normal<T>(hidden, dim, static_cast<T>(kInitStd), rng);
    p.b2 = Tensor<T>::zeros(1, dim);
    store.add(prefix + ".w1", p.w1);
    store.add(prefix + ".b1", p.b1);
    store.add(prefix + ".w2", p.w2);
    store.add(prefix + ".b2", p.b2);
    return p;
}

template <typename T>
BlockParams<T> make_block(ParamStore<T>& store, const std::string& prefix, int dim,
                          std::mt19937_64& rng) {
    BlockParams<T> p;
    p.ln1 = make_layer_norm(store, prefix + ".ln1", dim);
    p.attn = make_attention(store, prefix + ".attn", dim, rng);
    p.ln2 = make_layer_norm(store, prefix + ".ln2", dim);
    p.mlp = make_mlp(store, prefix + ".mlp", dim, rng);
    return p;
}

}  // namespace avcap
