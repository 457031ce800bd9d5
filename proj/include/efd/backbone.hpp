#pragma once

#include <string>
#include <vector>

#include "efd/attention.hpp"
#include "efd/config.hpp"

namespace efd {

// Turn a C x H x W image into a (T x p*p*C) patch matrix, row-major over the
// patch grid; within a patch the layout is channel, then row, then column.
// Pure preprocessing — images never need gradients, so this runs off-tape.
template <class S>
Tensor<S> im2patches(const std::vector<S>& image, int channels, int hw, int patch) {
    if (hw % patch != 0)
        throw ShapeError("im2patches: image size " + std::to_string(hw) +
                         " not divisible by patch " + std::to_string(patch));
    const int grid = hw / patch;
    const int pdim = patch * patch * channels;
    Tensor<S> out({grid * grid, pdim});
    for (int pr = 0; pr < grid; ++pr)
        for (int pc = 0; pc < grid; ++pc) {
            S* dst = out.data.data() + static_cast<size_t>((pr * grid + pc) * pdim);
            size_t k = 0;
            for (int ch = 0; ch < channels; ++ch)
                for (int y = 0; y < patch; ++y)
                    for (int x = 0; x < patch; ++x)
                        dst[k++] = image[static_cast<size_t>(
                            (ch * hw + pr * patch + y) * hw + pc * patch + x)];
        }
    return out;
}

// One view's stack of stages.
template <class S>
struct StreamWeights {
    Tensor<S>*embed_w = nullptr, *embed_b = nullptr;        // patch embed
    std::vector<Tensor<S>*> pos;                            // per-stage positional table
    std::vector<std::vector<CgaBlockWeights<S>>> blocks;    // per-stage
    std::vector<Tensor<S>*> merge_w, merge_b;               // between stages

    static StreamWeights create(ParamStore<S>& ps, const std::string& prefix,
                                const ModelConfig& cfg, const std::vector<int>& dims, Rng& rng) {
        StreamWeights w;
        const int pdim = cfg.patch * cfg.patch * cfg.in_channels;
        w.embed_w = &ps.create(prefix + ".embed.w", {pdim, dims[0]}, ParamStore<S>::Init::FanIn, rng);
        w.embed_b = &ps.create(prefix + ".embed.b", {dims[0]}, ParamStore<S>::Init::Zeros, rng);
        for (int s = 0; s < cfg.stages(); ++s) {
            const std::string sp = prefix + ".stage" + std::to_string(s);
            w.pos.push_back(&ps.create(sp + ".pos", {cfg.tokens_at(s), dims[s]},
                                       ParamStore<S>::Init::Gaussian, rng, 0.02));
            std::vector<CgaBlockWeights<S>> bl;
            for (int b = 0; b < cfg.stage_blocks[static_cast<size_t>(s)]; ++b)
                bl.push_back(CgaBlockWeights<S>::create(
                    ps, sp + ".block" + std::to_string(b), dims[static_cast<size_t>(s)],
                    cfg.stage_groups[static_cast<size_t>(s)], cfg.backbone_mlp_ratio,
                    cfg.residuals, rng));
            w.blocks.push_back(std::move(bl));
            if (s + 1 < cfg.stages()) {
                w.merge_w.push_back(&ps.create(sp + ".merge.w",
                                               {4 * dims[static_cast<size_t>(s)],
                                                dims[static_cast<size_t>(s + 1)]},
                                               ParamStore<S>::Init::FanIn, rng));
                w.merge_b.push_back(&ps.create(sp + ".merge.b", {dims[static_cast<size_t>(s + 1)]},
                                               ParamStore<S>::Init::Zeros, rng));
            }
        }
        return w;
    }
};

// Bidirectional cross-attention between the two streams at one stage.
template <class S>
struct FusionWeights {
    AttentionWeights<S> main_q;  // Q from main, K/V from side
    AttentionWeights<S> side_q;  // Q from side, K/V from main

    static FusionWeights create(ParamStore<S>& ps, const std::string& prefix, int d_main,
                                int d_side, int heads, Rng& rng) {
        FusionWeights f;
        f.main_q = AttentionWeights<S>::create(ps, prefix + ".main_q", d_main, d_side, heads, rng);
        f.side_q = AttentionWeights<S>::create(ps, prefix + ".side_q", d_side, d_main, heads, rng);
        return f;
    }
};

template <class S>
struct ViewTokens {
    Val main, side;
    int stage = 0;
};

// main' = main + CrossAttn(Q=main, KV=side); side' = side + CrossAttn(Q=side, KV=main).
template <class S>
ViewTokens<S> fuse_stage(Tape<S>& tp, const ViewTokens<S>& vt, const FusionWeights<S>& fw) {
    Val m2 = tp.add(vt.main, multi_head_attention(tp, vt.main, vt.side, fw.main_q));
    Val s2 = tp.add(vt.side, multi_head_attention(tp, vt.side, vt.main, fw.side_q));
    return {m2, s2, vt.stage};
}

struct StageRecord {
    int stage;
    int main_tokens, side_tokens;
    int main_dim, side_dim;
};

template <class S>
class Backbone {
public:
    Backbone() = default;
    Backbone(const ModelConfig& cfg, ParamStore<S>& ps, Rng& rng) : cfg_(cfg) {
        main_ = StreamWeights<S>::create(ps, "backbone.main", cfg, cfg.main_dims, rng);
        side_ = StreamWeights<S>::create(ps, "backbone.side", cfg, cfg.side_dims, rng);
        for (int s = 0; s < cfg.stages(); ++s) {
            if (cfg.fusion_at(s))
                fusion_.push_back(FusionWeights<S>::create(
                    ps, "backbone.fuse" + std::to_string(s), cfg.main_dims[static_cast<size_t>(s)],
                    cfg.side_dims[static_cast<size_t>(s)], cfg.fusion_heads, rng));
            else
                fusion_.push_back({});
        }
    }

    struct Result {
        Val main, side;
        std::vector<StageRecord> record;
    };

    // patches: (T0 x p*p*C) leaves for each view.
    Result forward(Tape<S>& tp, Val main_patches, Val side_patches) const {
        Result r;
        Val m = embed(tp, main_patches, main_);
        Val s = embed(tp, side_patches, side_);
        int grid = cfg_.image_size / cfg_.patch;
        for (int st = 0; st < cfg_.stages(); ++st) {
            if (st > 0) {
                grid /= 2;
                m = merge_tokens(tp, m, grid, main_, st);
                s = merge_tokens(tp, s, grid, side_, st);
            }
            m = tp.add(m, tp.param(main_.pos[static_cast<size_t>(st)]));
            s = tp.add(s, tp.param(side_.pos[static_cast<size_t>(st)]));
            for (const auto& b : main_.blocks[static_cast<size_t>(st)]) m = cga_block(tp, m, b);
            for (const auto& b : side_.blocks[static_cast<size_t>(st)]) s = cga_block(tp, s, b);
            if (cfg_.fusion_at(st)) {
                ViewTokens<S> vt{m, s, st};
                vt = fuse_stage(tp, vt, fusion_[static_cast<size_t>(st)]);
                m = vt.main;
                s = vt.side;
            }
            r.record.push_back({st, static_cast<int>(tp.shape(m)[0]),
                                static_cast<int>(tp.shape(s)[0]),
                                static_cast<int>(tp.shape(m)[1]),
                                static_cast<int>(tp.shape(s)[1])});
        }
        r.main = m;
        r.side = s;
        return r;
    }

    const ModelConfig& config() const { return cfg_; }

private:
    static Val embed(Tape<S>& tp, Val patches, const StreamWeights<S>& w) {
        return tp.add(tp.matmul(patches, tp.param(w.embed_w)), tp.param(w.embed_b));
    }

    // 2x2 spatial concat + affine. `grid` is the post-merge grid edge.
    static Val merge_tokens(Tape<S>& tp, Val x, int grid, const StreamWeights<S>& w, int stage) {
        const int pre = grid * 2;
        std::vector<Index> idx;
        idx.reserve(static_cast<size_t>(grid * grid * 4));
        for (int r = 0; r < grid; ++r)
            for (int c = 0; c < grid; ++c) {
                idx.push_back((2 * r) * pre + 2 * c);
                idx.push_back((2 * r) * pre + 2 * c + 1);
                idx.push_back((2 * r + 1) * pre + 2 * c);
                idx.push_back((2 * r + 1) * pre + 2 * c + 1);
            }
        const Index d = tp.shape(x)[1];
        Val g = tp.gather_rows(x, std::move(idx));
        Val grouped = tp.reshape(g, {static_cast<Index>(grid * grid), 4 * d});
        return tp.add(tp.matmul(grouped, tp.param(w.merge_w[static_cast<size_t>(stage - 1)])),
                      tp.param(w.merge_b[static_cast<size_t>(stage - 1)]));
    }

    ModelConfig cfg_;
    StreamWeights<S> main_, side_;
    std::vector<FusionWeights<S>> fusion_;
};

}  // namespace efd
