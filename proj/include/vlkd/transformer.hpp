#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "vlkd/ops.hpp"
#include "vlkd/rng.hpp"

namespace vlkd {

// Parameter registry entry shared by the optimizer, checkpointing and the
// frozen-teacher bookkeeping.
template <typename T>
struct NamedParam {
    std::string name;
    TensorPtr<T> tensor;
    bool decay = true;  // decoupled weight decay applies
    bool frozen = false;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// FNV-1a over the raw bytes of every parameter value, in registry order
template <typename T>
uint64_t params_hash(const ParamList<T>& params) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : params)
        for (T x : p.tensor->v) {
            unsigned char bytes[sizeof(T)];
            std::memcpy(bytes, &x, sizeof(T));
            for (size_t b = 0; b < sizeof(T); ++b) {
                h ^= bytes[b];
                h *= 1099511628211ull;
            }
        }
    return h;
}

// additive mask value for blocked attention edges
inline constexpr double kMaskedLogit = -1e9;

template <typename T>
TensorPtr<T> causal_mask(int len) {
    auto m = make_tensor<T>({len, len});
    for (int i = 0; i < len; ++i)
        for (int j = i + 1; j < len; ++j) m->at(i, j) = static_cast<T>(kMaskedLogit);
    return m;
}

// blocks attention *to* padded key positions
template <typename T>
TensorPtr<T> key_pad_mask(int q_len, const std::vector<char>& key_pad) {
    auto m = make_tensor<T>({q_len, static_cast<int>(key_pad.size())});
    for (int i = 0; i < q_len; ++i)
        for (size_t j = 0; j < key_pad.size(); ++j)
            if (key_pad[j]) m->at(i, static_cast<int>(j)) = static_cast<T>(kMaskedLogit);
    return m;
}

template <typename T>
struct Linear {
    TensorPtr<T> w; // [out, in]
    TensorPtr<T> b; // [out]

    void init(int in, int out, Rng& rng) {
        w = param_tensor<T>({out, in}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
        b = make_tensor<T>({out}, true);
    }

    TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x) const {
        return add_rowvec(t, matmul_nt(t, x, w), b);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".w", w, true, false});
        out.push_back({prefix + ".b", b, false, false});
    }
};

template <typename T>
struct LayerNormParams {
    TensorPtr<T> gain, bias;

    void init(int dim) {
        gain = make_tensor<T>({dim}, true);
        for (auto& x : gain->v) x = T(1);
        bias = make_tensor<T>({dim}, true);
    }

    TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x) const { return layer_norm(t, x, gain, bias); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gain", gain, false, false});
        out.push_back({prefix + ".bias", bias, false, false});
    }
};

template <typename T>
struct MultiHeadAttention {
    int heads = 1;
    int dim = 0;
    Linear<T> wq, wk, wv, wo;

    void init(int d, int h, Rng& rng) {
        if (d % h != 0)
            throw ContractError("attention: dim " + std::to_string(d) + " not divisible by heads " +
                                std::to_string(h));
        heads = h;
        dim = d;
        wq.init(d, d, rng);
        wk.init(d, d, rng);
        wv.init(d, d, rng);
        wo.init(d, d, rng);
    }

    // x_q [Lq,d], x_kv [Lkv,d], mask nullable additive [Lq,Lkv]
    TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x_q, const TensorPtr<T>& x_kv,
                         const TensorPtr<T>& mask) const {
        auto q = wq.forward(t, x_q);
        auto k = wk.forward(t, x_kv);
        auto v = wv.forward(t, x_kv);
        const int dh = dim / heads;
        std::vector<TensorPtr<T>> heads_out;
        heads_out.reserve(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            auto qh = slice_cols(t, q, h * dh, (h + 1) * dh);
            auto kh = slice_cols(t, k, h * dh, (h + 1) * dh);
            auto vh = slice_cols(t, v, h * dh, (h + 1) * dh);
            auto scores = scale(t, matmul_nt(t, qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
            if (mask) scores = add(t, scores, mask);
            auto attn = softmax(t, scores, 1);
            heads_out.push_back(matmul(t, attn, vh));
        }
        return wo.forward(t, concat_cols(t, heads_out));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
    }
};

template <typename T>
struct FeedForward {
    Linear<T> hidden, out;

    void init(int d, int ffn, Rng& rng) {
        hidden.init(d, ffn, rng);
        out.init(ffn, d, rng);
    }

    TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x) const {
        return out.forward(t, gelu(t, hidden.forward(t, x)));
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) const {
        hidden.collect(prefix + ".hidden", out_list);
        out.collect(prefix + ".out", out_list);
    }
};

// pre-norm encoder block
template <typename T>
struct EncoderLayer {
    LayerNormParams<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    FeedForward<T> ff;

    void init(int d, int heads, int ffn, Rng& rng) {
        ln1.init(d);
        ln2.init(d);
        attn.init(d, heads, rng);
        ff.init(d, ffn, rng);
    }

    TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x, const TensorPtr<T>& mask) const {
        auto n1 = ln1.forward(t, x);
        auto h = add(t, x, attn.forward(t, n1, n1, mask));
        return add(t, h, ff.forward(t, ln2.forward(t, h)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
        attn.collect(prefix + ".attn", out);
        ff.collect(prefix + ".ff", out);
    }
};

// pre-norm decoder block: causal self-attention, cross-attention, feed-forward
template <typename T>
struct DecoderLayer {
    LayerNormParams<T> ln1, ln2, ln3;
    MultiHeadAttention<T> self_attn, cross_attn;
    FeedForward<T> ff;

    void init(int d, int heads, int ffn, Rng& rng) {
        ln1.init(d);
        ln2.init(d);
        ln3.init(d);
        self_attn.init(d, heads, rng);
        cross_attn.init(d, heads, rng);
        ff.init(d, ffn, rng);
    }

    TensorPtr<T> forward(Tape<T>* t, const TensorPtr<T>& x, const TensorPtr<T>& causal,
                         const TensorPtr<T>& context) const {
        auto n1 = ln1.forward(t, x);
        auto h = add(t, x, self_attn.forward(t, n1, n1, causal));
        h = add(t, h, cross_attn.forward(t, ln2.forward(t, h), context, nullptr));
        return add(t, h, ff.forward(t, ln3.forward(t, h)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
        ln3.collect(prefix + ".ln3", out);
        self_attn.collect(prefix + ".self_attn", out);
        cross_attn.collect(prefix + ".cross_attn", out);
        ff.collect(prefix + ".ff", out);
    }
};

} // namespace vlkd
