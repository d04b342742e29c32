#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "grf/tape.hpp"

namespace grf {

// Per-call forward context. Dropout fires only when training with an RNG.
struct Mode {
    bool training = false;
    Rng* rng = nullptr;
};

template <typename S>
Tensor<S> glorot_uniform(int d_in, int d_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (d_in + d_out));
    Tensor<S> w({d_in, d_out});
    for (int64_t i = 0; i < w.numel(); ++i)
        w[i] = static_cast<S>(rng.uniform(-limit, limit));
    return w;
}

// Inverted dropout: keep with probability 1-p and rescale so eval needs no
// correction. Identity when not training or p == 0.
template <typename S>
Var dropout(Tape<S>& t, Var x, double p, const Mode& mode) {
    if (!mode.training || p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout rate must be below 1");
    Tensor<S> mask(t.value(x).shape());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
    for (int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = mode.rng->uniform(0.0, 1.0) < p ? S(0) : keep_scale;
    return t.mul_const(x, std::move(mask));
}

template <typename S>
struct Linear {
    std::shared_ptr<Parameter<S>> weight;  // d_in x d_out
    std::shared_ptr<Parameter<S>> bias;    // d_out

    static Linear create(ParamStore<S>& ps, const std::string& prefix, int d_in, int d_out,
                         Rng& rng) {
        Linear l;
        l.weight = ps.add(prefix + ".weight", glorot_uniform<S>(d_in, d_out, rng));
        l.bias = ps.add(prefix + ".bias", Tensor<S>::zeros({d_out}));
        return l;
    }

    int in_dim() const { return weight->value.dim(0); }
    int out_dim() const { return weight->value.dim(1); }

    Var forward(Tape<S>& t, Var x) const {
        return t.add_suffix(t.matmul(x, t.watch(weight)), t.watch(bias));
    }
};

// Sinusoidal table: PE[t, 2j] = sin(t / 10000^(2j/d)), PE[t, 2j+1] = cos(same).
template <typename S>
Tensor<S> positional_encoding(int T, int d_model) {
    if (T < 1) throw ConfigError("positional_encoding: sequence length must be >= 1");
    if (d_model < 2 || d_model % 2 != 0)
        throw ConfigError("positional_encoding: d_model must be even, got " +
                          std::to_string(d_model));
    Tensor<S> pe({T, d_model});
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < d_model / 2; ++j) {
            const double angle = t / std::pow(10000.0, (2.0 * j) / d_model);
            pe.at({t, 2 * j}) = static_cast<S>(std::sin(angle));
            pe.at({t, 2 * j + 1}) = static_cast<S>(std::cos(angle));
        }
    return pe;
}

template <typename S>
struct LayerNorm {
    std::shared_ptr<Parameter<S>> gain;   // init 1
    std::shared_ptr<Parameter<S>> shift;  // init 0
    S eps = static_cast<S>(1e-5);

    static LayerNorm create(ParamStore<S>& ps, const std::string& prefix, int d) {
        LayerNorm ln;
        ln.gain = ps.add(prefix + ".gain", Tensor<S>::full({d}, S(1)));
        ln.shift = ps.add(prefix + ".shift", Tensor<S>::zeros({d}));
        return ln;
    }

    Var forward(Tape<S>& t, Var x) const {
        return t.add_suffix(t.mul_suffix(t.layer_norm(x, eps), t.watch(gain)), t.watch(shift));
    }
};

// Scaled dot-product attention over H heads. Sequences are [B, T, d_model];
// heads are split off into a fourth axis and merged back after mixing.
template <typename S>
struct MultiHeadAttention {
    Linear<S> wq, wk, wv, wo;
    int heads = 1;

    static MultiHeadAttention create(ParamStore<S>& ps, const std::string& prefix, int d_model,
                                     int heads, Rng& rng) {
        if (heads < 1 || d_model % heads != 0)
            throw ConfigError("attention: d_model " + std::to_string(d_model) +
                              " not divisible by heads " + std::to_string(heads));
        MultiHeadAttention a;
        a.wq = Linear<S>::create(ps, prefix + ".wq", d_model, d_model, rng);
        a.wk = Linear<S>::create(ps, prefix + ".wk", d_model, d_model, rng);
        a.wv = Linear<S>::create(ps, prefix + ".wv", d_model, d_model, rng);
        a.wo = Linear<S>::create(ps, prefix + ".wo", d_model, d_model, rng);
        a.heads = heads;
        return a;
    }

    // q [B, Tq, d], k/v [B, Tk, d] -> [B, Tq, d]. If attn_out is non-null the
    // post-softmax weights [B, H, Tq, Tk] are copied out for inspection.
    Var forward(Tape<S>& t, Var q, Var k, Var v, Tensor<S>* attn_out = nullptr) const {
        const Tensor<S>&vq = t.value(q), &vk = t.value(k), &vv = t.value(v);
        if (vq.rank() != 3 || vk.rank() != 3 || vv.rank() != 3)
            throw DimError("attention: expected [batch, time, width] inputs");
        const int d_model = wq.in_dim();
        if (vq.dim(2) != d_model || vk.dim(2) != d_model || vv.dim(2) != d_model)
            throw DimError("attention: input width must be " + std::to_string(d_model));
        if (vk.dim(1) != vv.dim(1) || vk.dim(0) != vv.dim(0))
            throw DimError("attention: key/value shapes disagree, " + format_shape(vk.shape()) +
                           " vs " + format_shape(vv.shape()));
        const int B = vq.dim(0), Tq = vq.dim(1), Tk = vk.dim(1);
        const int dh = d_model / heads;

        auto split = [&](Var x, int T) {
            // [B, T, d] -> [B, H, T, dh]
            return t.swap_axes(t.reshape(x, {B, T, heads, dh}), 1, 2);
        };
        Var qh = split(wq.forward(t, q), Tq);
        Var kh = split(wk.forward(t, k), Tk);
        Var vh = split(wv.forward(t, v), Tk);

        Var scores = t.affine(t.matmul_nt(qh, kh), static_cast<S>(1.0 / std::sqrt(double(dh))),
                              S(0));
        Var weights = t.softmax_last(scores);
        if (attn_out) *attn_out = t.value(weights);
        Var mixed = t.matmul(weights, vh);  // [B, H, Tq, dh]
        Var merged = t.reshape(t.swap_axes(mixed, 1, 2), {B, Tq, d_model});
        return wo.forward(t, merged);
    }
};

// One decoder-style block: cross-attention into a context sequence, then a
// position-wise feed-forward, post-norm residuals around both.
template <typename S>
struct CrossAttnLayer {
    MultiHeadAttention<S> attn;
    Linear<S> ff1, ff2;
    LayerNorm<S> ln1, ln2;
    double dropout_rate = 0.1;

    static CrossAttnLayer create(ParamStore<S>& ps, const std::string& prefix, int d_model,
                                 int heads, int d_ff, double dropout_rate, Rng& rng) {
        CrossAttnLayer l;
        l.attn = MultiHeadAttention<S>::create(ps, prefix + ".attn", d_model, heads, rng);
        l.ff1 = Linear<S>::create(ps, prefix + ".ff1", d_model, d_ff, rng);
        l.ff2 = Linear<S>::create(ps, prefix + ".ff2", d_ff, d_model, rng);
        l.ln1 = LayerNorm<S>::create(ps, prefix + ".ln1", d_model);
        l.ln2 = LayerNorm<S>::create(ps, prefix + ".ln2", d_model);
        l.dropout_rate = dropout_rate;
        return l;
    }

    // query [B, Tq, d] attends into ctx [B, Tc, d]; output [B, Tq, d].
    Var forward(Tape<S>& t, Var query, Var ctx, const Mode& mode,
                Tensor<S>* attn_out = nullptr) const {
        Var a = attn.forward(t, query, ctx, ctx, attn_out);
        a = dropout(t, a, dropout_rate, mode);
        Var x = ln1.forward(t, t.add(query, a));
        Var f = ff2.forward(t, t.relu(ff1.forward(t, x)));
        f = dropout(t, f, dropout_rate, mode);
        return ln2.forward(t, t.add(x, f));
    }
};

// Mean over the time axis: [B, T, d] -> [B, d].
template <typename S>
Var pool(Tape<S>& t, Var seq) {
    if (t.value(seq).rank() != 3) throw DimError("pool: expected [batch, time, width]");
    return t.mean_axis(seq, 1);
}

// Regression head: in -> hidden (tanh) -> 1, squeezed to [B].
template <typename S>
struct PredictionHead {
    Linear<S> fc1, fc2;

    static PredictionHead create(ParamStore<S>& ps, const std::string& prefix, int d_in,
                                 int d_hidden, Rng& rng) {
        PredictionHead h;
        h.fc1 = Linear<S>::create(ps, prefix + ".fc1", d_in, d_hidden, rng);
        h.fc2 = Linear<S>::create(ps, prefix + ".fc2", d_hidden, 1, rng);
        return h;
    }

    Var forward(Tape<S>& t, Var h) const {
        const int B = t.value(h).dim(0);
        return t.reshape(fc2.forward(t, t.tanh(fc1.forward(t, h))), {B});
    }
};

}  // namespace grf
