#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "efd/params.hpp"
#include "efd/tape.hpp"

namespace efd {

// Per-head projections. d_q is the query-side model dim (also the output
// dim), d_in the key/value-side input dim; cross attention has d_in != d_q.
template <class S>
struct AttentionWeights {
    int heads = 1;
    int d_q = 0, d_in = 0, d_k = 0, d_v = 0;
    std::vector<Tensor<S>*> wq, wk, wv;  // [d_q x d_k], [d_in x d_k], [d_in x d_v]
    Tensor<S>* wo = nullptr;             // [heads*d_v x d_q]
    Tensor<S>* wo_b = nullptr;           // [d_q]

    static AttentionWeights create(ParamStore<S>& ps, const std::string& prefix, int d_q,
                                   int d_in, int heads, Rng& rng) {
        AttentionWeights w;
        w.heads = heads;
        w.d_q = d_q;
        w.d_in = d_in;
        w.d_k = d_q / heads;
        w.d_v = d_q / heads;
        for (int h = 0; h < heads; ++h) {
            const std::string hp = prefix + ".h" + std::to_string(h);
            w.wq.push_back(&ps.create(hp + ".wq", {d_q, w.d_k}, ParamStore<S>::Init::FanIn, rng));
            w.wk.push_back(&ps.create(hp + ".wk", {d_in, w.d_k}, ParamStore<S>::Init::FanIn, rng));
            w.wv.push_back(&ps.create(hp + ".wv", {d_in, w.d_v}, ParamStore<S>::Init::FanIn, rng));
        }
        w.wo = &ps.create(prefix + ".wo", {heads * w.d_v, d_q}, ParamStore<S>::Init::FanIn, rng);
        w.wo_b = &ps.create(prefix + ".wo_b", {d_q}, ParamStore<S>::Init::Zeros, rng);
        return w;
    }
};

// softmax(logit_scale * Q K^T / sqrt(d_k)) V. The post-softmax matrix is
// returned through attn_out for introspection; its rows sum to 1.
template <class S>
Val scaled_dot_attention(Tape<S>& tp, Val q, Val k, Val v, S logit_scale = S(1),
                         Val* attn_out = nullptr) {
    const Shape& qs = tp.shape(q);
    const Shape& ks = tp.shape(k);
    if (qs.rank() != 2 || ks.rank() != 2 || qs[1] != ks[1])
        throw ShapeError("scaled_dot_attention: d_k mismatch " + qs.str() + " vs " + ks.str());
    const S inv_sqrt = logit_scale / S(std::sqrt(static_cast<double>(qs[1])));
    Val logits = tp.scale(tp.matmul(q, tp.transpose(k)), inv_sqrt);
    Val attn = tp.softmax(logits);
    if (attn_out) *attn_out = attn;
    return tp.matmul(attn, v);
}

// Self-attention when x_q and x_kv are the same value; cross-attention
// otherwise. Output is (Tq x d_q) regardless of the key/value token count.
template <class S>
Val multi_head_attention(Tape<S>& tp, Val x_q, Val x_kv, const AttentionWeights<S>& w,
                         std::vector<Val>* attn_out = nullptr) {
    std::vector<Val> heads;
    heads.reserve(static_cast<size_t>(w.heads));
    for (int h = 0; h < w.heads; ++h) {
        Val q = tp.matmul(x_q, tp.param(w.wq[static_cast<size_t>(h)]));
        Val k = tp.matmul(x_kv, tp.param(w.wk[static_cast<size_t>(h)]));
        Val v = tp.matmul(x_kv, tp.param(w.wv[static_cast<size_t>(h)]));
        Val attn;
        heads.push_back(scaled_dot_attention(tp, q, k, v, S(1), &attn));
        if (attn_out) attn_out->push_back(attn);
    }
    Val cat = w.heads == 1 ? heads[0] : tp.concat(heads, 1);
    return tp.add(tp.matmul(cat, tp.param(w.wo)), tp.param(w.wo_b));
}

// Channel-split group attention with an additive cascade: group g attends
// over its channel slice plus a projection of group g-1's output, and the
// concatenated group outputs go through a final projection.
template <class S>
struct GroupAttnWeights {
    int groups = 1;
    int dim = 0;  // full channel dim; each group works on dim/groups
    std::vector<Tensor<S>*> wq, wk, wv;  // per group, [d_g x d_g]
    std::vector<Tensor<S>*> casc_w;      // per group g>=1, [d_g x d_g]
    std::vector<Tensor<S>*> casc_b;      // per group g>=1, [d_g]
    Tensor<S>* wo = nullptr;             // [dim x dim]
    Tensor<S>* wo_b = nullptr;           // [dim]

    static GroupAttnWeights create(ParamStore<S>& ps, const std::string& prefix, int dim,
                                   int groups, Rng& rng) {
        if (dim % groups != 0)
            throw ConfigError("cascaded group attention: dim " + std::to_string(dim) +
                              " not divisible by groups " + std::to_string(groups));
        GroupAttnWeights w;
        w.groups = groups;
        w.dim = dim;
        const int dg = dim / groups;
        for (int g = 0; g < groups; ++g) {
            const std::string gp = prefix + ".g" + std::to_string(g);
            w.wq.push_back(&ps.create(gp + ".wq", {dg, dg}, ParamStore<S>::Init::FanIn, rng));
            w.wk.push_back(&ps.create(gp + ".wk", {dg, dg}, ParamStore<S>::Init::FanIn, rng));
            w.wv.push_back(&ps.create(gp + ".wv", {dg, dg}, ParamStore<S>::Init::FanIn, rng));
            if (g >= 1) {
                w.casc_w.push_back(
                    &ps.create(gp + ".casc_w", {dg, dg}, ParamStore<S>::Init::FanIn, rng));
                w.casc_b.push_back(&ps.create(gp + ".casc_b", {dg}, ParamStore<S>::Init::Zeros, rng));
            }
        }
        w.wo = &ps.create(prefix + ".wo", {dim, dim}, ParamStore<S>::Init::FanIn, rng);
        w.wo_b = &ps.create(prefix + ".wo_b", {dim}, ParamStore<S>::Init::Zeros, rng);
        return w;
    }
};

template <class S>
Val cascaded_group_attention(Tape<S>& tp, Val x, const GroupAttnWeights<S>& w,
                             std::vector<Val>* attn_out = nullptr) {
    const Shape& xs = tp.shape(x);
    if (xs.rank() != 2 || xs[1] != w.dim)
        throw ShapeError("cascaded_group_attention: input " + xs.str() + " vs dim " +
                         std::to_string(w.dim));
    const int dg = w.dim / w.groups;
    std::vector<Val> outs;
    Val prev;  // previous group's output
    for (int g = 0; g < w.groups; ++g) {
        Val xg = tp.slice(x, 1, g * dg, (g + 1) * dg);
        if (g >= 1) {
            Val carried = tp.add(tp.matmul(prev, tp.param(w.casc_w[static_cast<size_t>(g - 1)])),
                                 tp.param(w.casc_b[static_cast<size_t>(g - 1)]));
            xg = tp.add(xg, carried);
        }
        Val q = tp.matmul(xg, tp.param(w.wq[static_cast<size_t>(g)]));
        Val k = tp.matmul(xg, tp.param(w.wk[static_cast<size_t>(g)]));
        Val v = tp.matmul(xg, tp.param(w.wv[static_cast<size_t>(g)]));
        Val attn;
        Val og = scaled_dot_attention(tp, q, k, v, S(1), &attn);
        if (attn_out) attn_out->push_back(attn);
        outs.push_back(og);
        prev = og;
    }
    Val cat = w.groups == 1 ? outs[0] : tp.concat(outs, 1);
    return tp.add(tp.matmul(cat, tp.param(w.wo)), tp.param(w.wo_b));
}

template <class S>
struct LayerNormAffine {
    Tensor<S>* gamma = nullptr;
    Tensor<S>* beta = nullptr;

    static LayerNormAffine create(ParamStore<S>& ps, const std::string& prefix, int dim, Rng& rng) {
        LayerNormAffine ln;
        ln.gamma = &ps.create(prefix + ".g", {dim}, ParamStore<S>::Init::Ones, rng);
        ln.beta = &ps.create(prefix + ".b", {dim}, ParamStore<S>::Init::Zeros, rng);
        return ln;
    }
    Val apply(Tape<S>& tp, Val x) const {
        return tp.add(tp.mul(tp.layer_norm(x), tp.param(gamma)), tp.param(beta));
    }
};

template <class S>
struct MlpWeights {
    Tensor<S>*w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;

    static MlpWeights create(ParamStore<S>& ps, const std::string& prefix, int dim, int ratio,
                             Rng& rng) {
        MlpWeights m;
        m.w1 = &ps.create(prefix + ".w1", {dim, dim * ratio}, ParamStore<S>::Init::FanIn, rng);
        m.b1 = &ps.create(prefix + ".b1", {dim * ratio}, ParamStore<S>::Init::Zeros, rng);
        m.w2 = &ps.create(prefix + ".w2", {dim * ratio, dim}, ParamStore<S>::Init::FanIn, rng);
        m.b2 = &ps.create(prefix + ".b2", {dim}, ParamStore<S>::Init::Zeros, rng);
        return m;
    }
    Val apply(Tape<S>& tp, Val x) const {
        Val h = tp.gelu(tp.add(tp.matmul(x, tp.param(w1)), tp.param(b1)));
        return tp.add(tp.matmul(h, tp.param(w2)), tp.param(b2));
    }
};

// Pre-norm residual block: x + Attn(LN(x)), then + MLP(LN(.)). With
// residuals=false it degrades to the bare MLP(Attention(x)) composition
// (no norms, no skips) for the ablation that shows why the residual form
// is the trainable one.
template <class S, class AttnFn>
Val pre_norm_block(Tape<S>& tp, Val x, const LayerNormAffine<S>& ln1, const LayerNormAffine<S>& ln2,
                   const MlpWeights<S>& mlp, bool residuals, AttnFn&& attn) {
    if (!residuals) return mlp.apply(tp, attn(tp, x));
    Val h = tp.add(x, attn(tp, ln1.apply(tp, x)));
    return tp.add(h, mlp.apply(tp, ln2.apply(tp, h)));
}

// Standard self-attention transformer block (the decoder's unit).
template <class S>
struct BlockWeights {
    AttentionWeights<S> attn;
    LayerNormAffine<S> ln1, ln2;
    MlpWeights<S> mlp;
    bool residuals = true;

    static BlockWeights create(ParamStore<S>& ps, const std::string& prefix, int dim, int heads,
                               int mlp_ratio, bool residuals, Rng& rng) {
        BlockWeights b;
        b.attn = AttentionWeights<S>::create(ps, prefix + ".attn", dim, dim, heads, rng);
        b.ln1 = LayerNormAffine<S>::create(ps, prefix + ".ln1", dim, rng);
        b.ln2 = LayerNormAffine<S>::create(ps, prefix + ".ln2", dim, rng);
        b.mlp = MlpWeights<S>::create(ps, prefix + ".mlp", dim, mlp_ratio, rng);
        b.residuals = residuals;
        return b;
    }
};

template <class S>
Val transformer_block(Tape<S>& tp, Val x, const BlockWeights<S>& w,
                      std::vector<Val>* attn_out = nullptr) {
    return pre_norm_block(tp, x, w.ln1, w.ln2, w.mlp, w.residuals,
                          [&](Tape<S>& t, Val in) {
                              return multi_head_attention(t, in, in, w.attn, attn_out);
                          });
}

// Backbone block: cascaded group attention in the same pre-norm skeleton.
template <class S>
struct CgaBlockWeights {
    GroupAttnWeights<S> attn;
    LayerNormAffine<S> ln1, ln2;
    MlpWeights<S> mlp;
    bool residuals = true;

    static CgaBlockWeights create(ParamStore<S>& ps, const std::string& prefix, int dim,
                                  int groups, int mlp_ratio, bool residuals, Rng& rng) {
        CgaBlockWeights b;
        b.attn = GroupAttnWeights<S>::create(ps, prefix + ".attn", dim, groups, rng);
        b.ln1 = LayerNormAffine<S>::create(ps, prefix + ".ln1", dim, rng);
        b.ln2 = LayerNormAffine<S>::create(ps, prefix + ".ln2", dim, rng);
        b.mlp = MlpWeights<S>::create(ps, prefix + ".mlp", dim, mlp_ratio, rng);
        b.residuals = residuals;
        return b;
    }
};

template <class S>
Val cga_block(Tape<S>& tp, Val x, const CgaBlockWeights<S>& w,
              std::vector<Val>* attn_out = nullptr) {
    return pre_norm_block(tp, x, w.ln1, w.ln2, w.mlp, w.residuals,
                          [&](Tape<S>& t, Val in) {
                              return cascaded_group_attention(t, in, w.attn, attn_out);
                          });
}

}  // namespace efd
