#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "generaser/effect_world.hpp"
#include "generaser/model.hpp"
#include "generaser/nn.hpp"
#include "generaser/tensor.hpp"
#include "generaser/text.hpp"

namespace generaser {

// One conditioning tuple: noisy latent, noise level, reference latent, mask
// latent, masked-video latent, text embedding. The three branch variants
// differ only in which of m/x_m/c_txt are live.
template <typename S>
struct ConditionBundle {
    Tensor<S> x_t;    // [T,H,W,C]
    double t = 0.0;
    Tensor<S> x_ref;  // [T,H,W,C]
    Tensor<S> m;      // [T,H,W]
    Tensor<S> x_m;    // [T,H,W,C]
    Tensor<S> c_txt;  // [l_max, d_txt]
};

enum class BranchKind { kTextOnly = 0, kMaskOnly = 1, kFull = 2 };

template <typename S>
struct VelocityTriple {
    Tensor<S> v_txt;
    Tensor<S> v_m;
    Tensor<S> v_f;
};

// Builds the full-conditioning bundle for a sample; x_t starts zeroed and t
// at 0, to be filled by the trainer or sampler.
template <typename S>
ConditionBundle<S> make_full_bundle(const SampleRecord& rec, const TextEmbedder<S>& emb) {
    ConditionBundle<S> b;
    b.x_ref = rec.ref_video.template cast<S>();
    b.m = rec.mask.template cast<S>();
    b.x_m = make_masked_video(rec.ref_video, rec.mask).template cast<S>();
    b.c_txt = emb.embed(rec.text);
    b.x_t = Tensor<S>(b.x_ref.shape());
    return b;
}

// Text-only variant: mask pair zeroed, text kept (the reference stays live
// in every branch).
template <typename S>
ConditionBundle<S> with_mask_dropped(ConditionBundle<S> b) {
    b.m.fill(S(0));
    b.x_m.fill(S(0));
    return b;
}

// Mask-only variant: text replaced by the empty-prompt embedding.
template <typename S>
ConditionBundle<S> with_text_dropped(ConditionBundle<S> b, const TextEmbedder<S>& emb) {
    b.c_txt = emb.embed_empty();
    return b;
}

namespace denoiser_detail {

constexpr double kTimeScale = 1000.0;
constexpr double kPeBase = 10000.0;

// Per-block activation caches kept for the backward pass. q is stored
// pre-scaled by 1/sqrt(d_head); q/k/v and their cross-attention analogues
// are head-major [H, rows, d_head].
template <typename S>
struct BlockCache {
    std::vector<S> h_in;                   // [N,D]
    std::vector<S> x1;                     // [N,D]
    std::vector<S> ln1_rstd, ln1_mean;     // [N]
    std::vector<S> q, k, v;                // [H,N,dh]
    std::vector<S> att;                    // [H,N,N]
    std::vector<S> ctx;                    // [N,D]
    std::vector<S> h_attn;                 // [N,D]
    std::vector<S> x2;                     // [N,D]
    std::vector<S> ln2_rstd, ln2_mean;     // [N]
    std::vector<S> qc;                     // [H,N,dh]
    std::vector<S> kc, vc;                 // [H,L,dh]
    std::vector<S> attc;                   // [H,N,L]
    std::vector<S> ctxc;                   // [N,D]
    std::vector<S> h_cross;                // [N,D]
    std::vector<S> x3;                     // [N,D]
    std::vector<S> ln3_rstd, ln3_mean;     // [N]
    std::vector<S> mlp_u, mlp_tanh;        // [N,M]
    std::vector<S> h_out;                  // [N,D] block output before fusion
    std::vector<S> fuse_diff_m;            // [N,D] h̃ - h_mask (three-branch only)
    std::vector<S> fuse_hhat;              // [N,D]
    std::vector<S> fuse_diff_t;            // [N,D]

    void resize(const ModelConfig& c) {
        const std::size_t nd = static_cast<std::size_t>(c.tokens()) * c.d_model;
        const std::size_t n = static_cast<std::size_t>(c.tokens());
        const std::size_t nn = n * n * c.n_heads;
        const std::size_t nl = n * c.l_max * c.n_heads;
        const std::size_t ld = static_cast<std::size_t>(c.l_max) * c.d_model;
        const std::size_t nm = n * c.d_mlp();
        h_in.resize(nd); x1.resize(nd); ln1_rstd.resize(n); ln1_mean.resize(n);
        q.resize(nd); k.resize(nd); v.resize(nd); att.resize(nn); ctx.resize(nd);
        h_attn.resize(nd); x2.resize(nd); ln2_rstd.resize(n); ln2_mean.resize(n);
        qc.resize(nd); kc.resize(ld); vc.resize(ld); attc.resize(nl); ctxc.resize(nd);
        h_cross.resize(nd); x3.resize(nd); ln3_rstd.resize(n); ln3_mean.resize(n);
        mlp_u.resize(nm); mlp_tanh.resize(nm); h_out.resize(nd);
        fuse_diff_m.resize(nd); fuse_hhat.resize(nd); fuse_diff_t.resize(nd);
    }
};

template <typename S>
struct BranchCache {
    std::vector<S> x_patches;              // [N,pd]
    std::vector<S> txt;                    // [L,d_txt]
    std::vector<S> tfeat;                  // [d_time]
    std::vector<S> t_u1, t_sig, t_s;       // [D]
    std::vector<BlockCache<S>> blocks;
    std::vector<S> stream;                 // [N,D] working residual stream
    std::vector<S> d_stream;               // [N,D] backward stream gradient
    std::vector<S> h_final;                // [N,D]
    std::vector<S> xf;                     // [N,D]
    std::vector<S> lnf_rstd, lnf_mean;     // [N]
    std::vector<S> out_patches;            // [N,od]

    void resize(const ModelConfig& c) {
        const std::size_t n = static_cast<std::size_t>(c.tokens());
        const std::size_t nd = n * c.d_model;
        x_patches.resize(n * c.patch_dim());
        txt.resize(static_cast<std::size_t>(c.l_max) * c.d_txt);
        tfeat.resize(c.d_time);
        t_u1.resize(c.d_model); t_sig.resize(c.d_model); t_s.resize(c.d_model);
        blocks.resize(c.n_blocks);
        for (auto& b : blocks) b.resize(c);
        stream.resize(nd); d_stream.resize(nd); h_final.resize(nd); xf.resize(nd);
        lnf_rstd.resize(n); lnf_mean.resize(n);
        out_patches.resize(n * c.out_patch_dim());
    }
};

// Fixed 3D sinusoidal position code over (frame, row, col) token coordinates.
template <typename S>
void build_position_code(const ModelConfig& c, std::vector<S>& pos) {
    const int D = c.d_model;
    int d_f = (D / 4) & ~1;
    int rem = D - d_f;
    int d_h = (rem / 2) & ~1;
    int d_w = rem - d_h;
    pos.assign(static_cast<std::size_t>(c.tokens()) * D, S(0));
    auto encode = [](S* out, int dims, double x) {
        for (int j = 0; j < dims / 2; ++j) {
            const double arg = x / std::pow(kPeBase, (2.0 * j) / dims);
            out[2 * j] = static_cast<S>(std::sin(arg));
            out[2 * j + 1] = static_cast<S>(std::cos(arg));
        }
    };
    int n = 0;
    for (int f = 0; f < c.frames; ++f) {
        for (int th = 0; th < c.tokens_h(); ++th) {
            for (int tw = 0; tw < c.tokens_w(); ++tw, ++n) {
                S* row = pos.data() + static_cast<std::size_t>(n) * D;
                encode(row, d_f, f);
                encode(row + d_f, d_h, th);
                encode(row + d_f + d_h, d_w, tw);
            }
        }
    }
}

}  // namespace denoiser_detail

// All buffers a forward/backward pass needs, allocated once per model
// geometry and reused across calls.
template <typename S>
struct Workspace {
    ModelConfig cfg;
    std::vector<S> pos;  // [N,D] fixed position code
    denoiser_detail::BranchCache<S> branch[3];
    // scratch
    std::vector<S> tmp_a, tmp_b;     // [N,D]
    std::vector<S> tmp_nm, tmp_nm2;  // [N,M]
    std::vector<S> hm_a, hm_b, hm_c, hm_d;  // head-major [N,D]
    std::vector<S> tmp_ld;           // [L,D]
    std::vector<S> kt;               // [dh, max(N,L)]
    std::vector<S> att_s;            // [N, max(N,L)]
    std::vector<S> wt;               // transposed-weight scratch
    std::vector<S> dvec_a, dvec_b;   // [max(D,M)] small grads / dumps
    std::vector<S> dump_g, dump_b;   // LN grad dumps when base is frozen

    explicit Workspace(const ModelConfig& c) : cfg(c) {
        cfg.validate();
        denoiser_detail::build_position_code(cfg, pos);
        for (auto& br : branch) br.resize(cfg);
        const std::size_t n = static_cast<std::size_t>(cfg.tokens());
        const std::size_t nd = n * cfg.d_model;
        const std::size_t nm = n * cfg.d_mlp();
        tmp_a.resize(std::max(nd, n * cfg.patch_dim()));
        tmp_b.resize(std::max(nd, n * cfg.patch_dim()));
        tmp_nm.resize(nm);
        tmp_nm2.resize(nm);
        hm_a.resize(nd); hm_b.resize(nd); hm_c.resize(nd); hm_d.resize(nd);
        tmp_ld.resize(static_cast<std::size_t>(cfg.l_max) * cfg.d_model);
        kt.resize(static_cast<std::size_t>(cfg.d_head()) * std::max(cfg.tokens(), cfg.l_max));
        att_s.resize(n * static_cast<std::size_t>(std::max(cfg.tokens(), cfg.l_max)));
        wt.resize(static_cast<std::size_t>(std::max({cfg.d_model * cfg.d_mlp(), cfg.patch_dim() * cfg.d_model,
                                                     cfg.d_model * cfg.d_model})));
        dvec_a.resize(std::max(cfg.d_mlp(), cfg.d_model));
        dvec_b.resize(std::max(cfg.d_mlp(), cfg.d_model));
        dump_g.resize(std::max(cfg.d_mlp(), cfg.d_model));
        dump_b.resize(std::max(cfg.d_mlp(), cfg.d_model));
    }

    denoiser_detail::BranchCache<S>& cache(BranchKind k) { return branch[static_cast<int>(k)]; }
};

namespace denoiser_detail {

template <typename S>
struct BlockParamRefs {
    const S *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    const S *ln2_g, *ln2_b, *cwq, *cbq, *cwk, *cbk, *cwv, *cbv, *cwo, *cbo;
    const S *ln3_g, *ln3_b, *w1, *b1, *w2, *b2;
    const S *fm_w, *fm_b, *ft_w, *ft_b;
};

template <typename S>
BlockParamRefs<S> block_refs(const DenoiserParams<S>& p, int b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    BlockParamRefs<S> r;
    r.ln1_g = p.param(pre + "ln1.gamma"); r.ln1_b = p.param(pre + "ln1.beta");
    r.wq = p.param(pre + "attn.wq"); r.bq = p.param(pre + "attn.bq");
    r.wk = p.param(pre + "attn.wk"); r.bk = p.param(pre + "attn.bk");
    r.wv = p.param(pre + "attn.wv"); r.bv = p.param(pre + "attn.bv");
    r.wo = p.param(pre + "attn.wo"); r.bo = p.param(pre + "attn.bo");
    r.ln2_g = p.param(pre + "ln2.gamma"); r.ln2_b = p.param(pre + "ln2.beta");
    r.cwq = p.param(pre + "cross.wq"); r.cbq = p.param(pre + "cross.bq");
    r.cwk = p.param(pre + "cross.wk"); r.cbk = p.param(pre + "cross.bk");
    r.cwv = p.param(pre + "cross.wv"); r.cbv = p.param(pre + "cross.bv");
    r.cwo = p.param(pre + "cross.wo"); r.cbo = p.param(pre + "cross.bo");
    r.ln3_g = p.param(pre + "ln3.gamma"); r.ln3_b = p.param(pre + "ln3.beta");
    r.w1 = p.param(pre + "mlp.w1"); r.b1 = p.param(pre + "mlp.b1");
    r.w2 = p.param(pre + "mlp.w2"); r.b2 = p.param(pre + "mlp.b2");
    r.fm_w = p.param(pre + "fuse_mask.weight"); r.fm_b = p.param(pre + "fuse_mask.bias");
    r.ft_w = p.param(pre + "fuse_text.weight"); r.ft_b = p.param(pre + "fuse_text.bias");
    return r;
}

// Mutable view over the gradient vector, laid out like the parameters.
template <typename S>
struct BlockGradRefs {
    S *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    S *ln2_g, *ln2_b, *cwq, *cbq, *cwk, *cbk, *cwv, *cbv, *cwo, *cbo;
    S *ln3_g, *ln3_b, *w1, *b1, *w2, *b2;
    S *fm_w, *fm_b, *ft_w, *ft_b;
};

template <typename S>
BlockGradRefs<S> block_grad_refs(const DenoiserParams<S>& p, std::vector<S>& g, int b) {
    auto at = [&](const std::string& name) { return g.data() + p.info(name).offset; };
    const std::string pre = "blocks." + std::to_string(b) + ".";
    BlockGradRefs<S> r;
    r.ln1_g = at(pre + "ln1.gamma"); r.ln1_b = at(pre + "ln1.beta");
    r.wq = at(pre + "attn.wq"); r.bq = at(pre + "attn.bq");
    r.wk = at(pre + "attn.wk"); r.bk = at(pre + "attn.bk");
    r.wv = at(pre + "attn.wv"); r.bv = at(pre + "attn.bv");
    r.wo = at(pre + "attn.wo"); r.bo = at(pre + "attn.bo");
    r.ln2_g = at(pre + "ln2.gamma"); r.ln2_b = at(pre + "ln2.beta");
    r.cwq = at(pre + "cross.wq"); r.cbq = at(pre + "cross.bq");
    r.cwk = at(pre + "cross.wk"); r.cbk = at(pre + "cross.bk");
    r.cwv = at(pre + "cross.wv"); r.cbv = at(pre + "cross.bv");
    r.cwo = at(pre + "cross.wo"); r.cbo = at(pre + "cross.bo");
    r.ln3_g = at(pre + "ln3.gamma"); r.ln3_b = at(pre + "ln3.beta");
    r.w1 = at(pre + "mlp.w1"); r.b1 = at(pre + "mlp.b1");
    r.w2 = at(pre + "mlp.w2"); r.b2 = at(pre + "mlp.b2");
    r.fm_w = at(pre + "fuse_mask.weight"); r.fm_b = at(pre + "fuse_mask.bias");
    r.ft_w = at(pre + "fuse_text.weight"); r.ft_b = at(pre + "fuse_text.bias");
    return r;
}

// token-major [rows, H*dh] -> head-major [H, rows, dh], scaling on the way.
template <typename S>
void pack_heads(S* __restrict__ dst, const S* __restrict__ src, int rows, int heads, int dh, S s) {
    for (int h = 0; h < heads; ++h) {
        for (int r = 0; r < rows; ++r) {
            const S* in = src + (static_cast<std::size_t>(r) * heads + h) * dh;
            S* out = dst + (static_cast<std::size_t>(h) * rows + r) * dh;
            for (int j = 0; j < dh; ++j) out[j] = in[j] * s;
        }
    }
}

// head-major [H, rows, dh] -> token-major [rows, H*dh].
template <typename S>
void unpack_heads(S* __restrict__ dst, const S* __restrict__ src, int rows, int heads, int dh, S s) {
    for (int h = 0; h < heads; ++h) {
        for (int r = 0; r < rows; ++r) {
            const S* in = src + (static_cast<std::size_t>(h) * rows + r) * dh;
            S* out = dst + (static_cast<std::size_t>(r) * heads + h) * dh;
            for (int j = 0; j < dh; ++j) out[j] = in[j] * s;
        }
    }
}

template <typename S>
void add_into(S* __restrict__ dst, const S* __restrict__ src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename S>
void validate_bundle(const ModelConfig& c, const ConditionBundle<S>& b) {
    const std::vector<int> vshape{c.frames, c.height, c.width, c.video_channels};
    const std::vector<int> mshape{c.frames, c.height, c.width};
    if (b.x_t.shape() != vshape || b.x_ref.shape() != vshape || b.x_m.shape() != vshape ||
        b.m.shape() != mshape || b.c_txt.shape() != std::vector<int>{c.l_max, c.d_txt}) {
        throw ShapeError("condition bundle shapes do not match the model geometry");
    }
    if (!std::isfinite(b.t) || !all_finite(b.x_t) || !all_finite(b.x_ref) || !all_finite(b.m) ||
        !all_finite(b.x_m) || !all_finite(b.c_txt)) {
        throw Error("condition bundle contains non-finite values");
    }
}

// Channel-concatenate [x_t | x_ref | m | x_m] and cut into patches.
template <typename S>
void build_patches(const ModelConfig& c, const ConditionBundle<S>& b, S* __restrict__ out) {
    const int C = c.video_channels;
    const int ic = c.in_channels();
    int n = 0;
    for (int f = 0; f < c.frames; ++f) {
        for (int th = 0; th < c.tokens_h(); ++th) {
            for (int tw = 0; tw < c.tokens_w(); ++tw, ++n) {
                S* row = out + static_cast<std::size_t>(n) * c.patch_dim();
                for (int ph = 0; ph < c.patch_h; ++ph) {
                    for (int pw = 0; pw < c.patch_w; ++pw) {
                        const int hh = th * c.patch_h + ph;
                        const int ww = tw * c.patch_w + pw;
                        S* px = row + (static_cast<std::size_t>(ph) * c.patch_w + pw) * ic;
                        for (int ch = 0; ch < C; ++ch) px[ch] = b.x_t.at(f, hh, ww, ch);
                        for (int ch = 0; ch < C; ++ch) px[C + ch] = b.x_ref.at(f, hh, ww, ch);
                        px[2 * C] = b.m.at(f, hh, ww);
                        for (int ch = 0; ch < C; ++ch) px[2 * C + 1 + ch] = b.x_m.at(f, hh, ww, ch);
                    }
                }
            }
        }
    }
}

template <typename S>
void time_features(const ModelConfig& c, double t, S* out) {
    const int half = c.d_time / 2;
    for (int j = 0; j < half; ++j) {
        const double arg = t * kTimeScale * std::pow(kPeBase, -static_cast<double>(j) / half);
        out[2 * j] = static_cast<S>(std::sin(arg));
        out[2 * j + 1] = static_cast<S>(std::cos(arg));
    }
}

// Patch embedding + position code + time embedding; leaves the token
// sequence in cache.stream.
template <typename S>
void embed_forward(const DenoiserParams<S>& p, const ConditionBundle<S>& b, Workspace<S>& ws,
                   BranchCache<S>& cache) {
    const ModelConfig& c = ws.cfg;
    const int N = c.tokens(), D = c.d_model;
    validate_bundle(c, b);
    build_patches(c, b, cache.x_patches.data());
    std::copy(b.c_txt.data(), b.c_txt.data() + b.c_txt.size(), cache.txt.begin());

    nn::matmul(cache.stream.data(), cache.x_patches.data(), p.param("patch_embed.weight"), N, c.patch_dim(), D);
    nn::add_bias(cache.stream.data(), p.param("patch_embed.bias"), N, D);
    add_into(cache.stream.data(), ws.pos.data(), cache.stream.size());

    time_features(c, b.t, cache.tfeat.data());
    nn::matmul(cache.t_u1.data(), cache.tfeat.data(), p.param("time_mlp.w1"), 1, c.d_time, D);
    nn::add_bias(cache.t_u1.data(), p.param("time_mlp.b1"), 1, D);
    nn::silu_fwd(cache.t_s.data(), cache.t_sig.data(), cache.t_u1.data(), static_cast<std::size_t>(D));
    std::vector<S>& temb = ws.dvec_a;
    nn::matmul(temb.data(), cache.t_s.data(), p.param("time_mlp.w2"), 1, D, D);
    nn::add_bias(temb.data(), p.param("time_mlp.b2"), 1, D);
    nn::add_bias(cache.stream.data(), temb.data(), N, D);
}

// One transformer block (pre-LN self-attention, cross-attention to text,
// MLP), updating cache.stream in place and filling the block cache.
template <typename S>
void block_forward(const DenoiserParams<S>& p, int bi, Workspace<S>& ws, BranchCache<S>& cache) {
    const ModelConfig& c = ws.cfg;
    const int N = c.tokens(), D = c.d_model, H = c.n_heads, dh = c.d_head();
    const int L = c.l_max, dt = c.d_txt, M = c.d_mlp();
    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
    BlockParamRefs<S> r = block_refs(p, bi);
    BlockCache<S>& bc = cache.blocks[static_cast<std::size_t>(bi)];
    const std::size_t nd = static_cast<std::size_t>(N) * D;

    std::copy(cache.stream.begin(), cache.stream.end(), bc.h_in.begin());

    // self-attention
    nn::layernorm_fwd(bc.x1.data(), bc.ln1_rstd.data(), bc.ln1_mean.data(), bc.h_in.data(), r.ln1_g, r.ln1_b, N, D,
                      S(1e-5));
    nn::matmul(ws.tmp_a.data(), bc.x1.data(), r.wq, N, D, D);
    nn::add_bias(ws.tmp_a.data(), r.bq, N, D);
    pack_heads(bc.q.data(), ws.tmp_a.data(), N, H, dh, scale);
    nn::matmul(ws.tmp_a.data(), bc.x1.data(), r.wk, N, D, D);
    nn::add_bias(ws.tmp_a.data(), r.bk, N, D);
    pack_heads(bc.k.data(), ws.tmp_a.data(), N, H, dh, S(1));
    nn::matmul(ws.tmp_a.data(), bc.x1.data(), r.wv, N, D, D);
    nn::add_bias(ws.tmp_a.data(), r.bv, N, D);
    pack_heads(bc.v.data(), ws.tmp_a.data(), N, H, dh, S(1));
    for (int h = 0; h < H; ++h) {
        const S* qh = bc.q.data() + static_cast<std::size_t>(h) * N * dh;
        const S* kh = bc.k.data() + static_cast<std::size_t>(h) * N * dh;
        const S* vh = bc.v.data() + static_cast<std::size_t>(h) * N * dh;
        S* ah = bc.att.data() + static_cast<std::size_t>(h) * N * N;
        nn::transpose(ws.kt.data(), kh, N, dh);
        nn::matmul(ws.att_s.data(), qh, ws.kt.data(), N, dh, N);
        nn::softmax_rows(ah, ws.att_s.data(), N, N);
        nn::matmul(ws.hm_a.data() + static_cast<std::size_t>(h) * N * dh, ah, vh, N, N, dh);
    }
    unpack_heads(bc.ctx.data(), ws.hm_a.data(), N, H, dh, S(1));
    nn::matmul(ws.tmp_a.data(), bc.ctx.data(), r.wo, N, D, D);
    nn::add_bias(ws.tmp_a.data(), r.bo, N, D);
    add_into(cache.stream.data(), ws.tmp_a.data(), nd);
    std::copy(cache.stream.begin(), cache.stream.end(), bc.h_attn.begin());

    // cross-attention to the text tokens
    nn::layernorm_fwd(bc.x2.data(), bc.ln2_rstd.data(), bc.ln2_mean.data(), bc.h_attn.data(), r.ln2_g, r.ln2_b, N,
                      D, S(1e-5));
    nn::matmul(ws.tmp_a.data(), bc.x2.data(), r.cwq, N, D, D);
    nn::add_bias(ws.tmp_a.data(), r.cbq, N, D);
    pack_heads(bc.qc.data(), ws.tmp_a.data(), N, H, dh, scale);
    nn::matmul(ws.tmp_ld.data(), cache.txt.data(), r.cwk, L, dt, D);
    nn::add_bias(ws.tmp_ld.data(), r.cbk, L, D);
    pack_heads(bc.kc.data(), ws.tmp_ld.data(), L, H, dh, S(1));
    nn::matmul(ws.tmp_ld.data(), cache.txt.data(), r.cwv, L, dt, D);
    nn::add_bias(ws.tmp_ld.data(), r.cbv, L, D);
    pack_heads(bc.vc.data(), ws.tmp_ld.data(), L, H, dh, S(1));
    for (int h = 0; h < H; ++h) {
        const S* qh = bc.qc.data() + static_cast<std::size_t>(h) * N * dh;
        const S* kh = bc.kc.data() + static_cast<std::size_t>(h) * L * dh;
        const S* vh = bc.vc.data() + static_cast<std::size_t>(h) * L * dh;
        S* ah = bc.attc.data() + static_cast<std::size_t>(h) * N * L;
        nn::transpose(ws.kt.data(), kh, L, dh);
        nn::matmul(ws.att_s.data(), qh, ws.kt.data(), N, dh, L);
        nn::softmax_rows(ah, ws.att_s.data(), N, L);
        nn::matmul(ws.hm_a.data() + static_cast<std::size_t>(h) * N * dh, ah, vh, N, L, dh);
    }
    unpack_heads(bc.ctxc.data(), ws.hm_a.data(), N, H, dh, S(1));
    nn::matmul(ws.tmp_a.data(), bc.ctxc.data(), r.cwo, N, D, D);
    nn::add_bias(ws.tmp_a.data(), r.cbo, N, D);
    add_into(cache.stream.data(), ws.tmp_a.data(), nd);
    std::copy(cache.stream.begin(), cache.stream.end(), bc.h_cross.begin());

    // MLP
    nn::layernorm_fwd(bc.x3.data(), bc.ln3_rstd.data(), bc.ln3_mean.data(), bc.h_cross.data(), r.ln3_g, r.ln3_b, N,
                      D, S(1e-5));
    nn::matmul(bc.mlp_u.data(), bc.x3.data(), r.w1, N, D, M);
    nn::add_bias(bc.mlp_u.data(), r.b1, N, M);
    nn::gelu_fwd(ws.tmp_nm.data(), bc.mlp_tanh.data(), bc.mlp_u.data(), static_cast<std::size_t>(N) * M);
    nn::matmul(ws.tmp_a.data(), ws.tmp_nm.data(), r.w2, N, M, D);
    nn::add_bias(ws.tmp_a.data(), r.b2, N, D);
    add_into(cache.stream.data(), ws.tmp_a.data(), nd);
    std::copy(cache.stream.begin(), cache.stream.end(), bc.h_out.begin());
}

// Final norm + linear head, then patches back to a velocity grid.
template <typename S>
Tensor<S> head_forward(const DenoiserParams<S>& p, Workspace<S>& ws, BranchCache<S>& cache) {
    const ModelConfig& c = ws.cfg;
    const int N = c.tokens(), D = c.d_model, od = c.out_patch_dim(), C = c.video_channels;
    std::copy(cache.stream.begin(), cache.stream.end(), cache.h_final.begin());
    nn::layernorm_fwd(cache.xf.data(), cache.lnf_rstd.data(), cache.lnf_mean.data(), cache.h_final.data(),
                      p.param("final_ln.gamma"), p.param("final_ln.beta"), N, D, S(1e-5));
    nn::matmul(cache.out_patches.data(), cache.xf.data(), p.param("head.weight"), N, D, od);
    nn::add_bias(cache.out_patches.data(), p.param("head.bias"), N, od);

    Tensor<S> vel({c.frames, c.height, c.width, C});
    int n = 0;
    for (int f = 0; f < c.frames; ++f) {
        for (int th = 0; th < c.tokens_h(); ++th) {
            for (int tw = 0; tw < c.tokens_w(); ++tw, ++n) {
                const S* row = cache.out_patches.data() + static_cast<std::size_t>(n) * od;
                for (int ph = 0; ph < c.patch_h; ++ph) {
                    for (int pw = 0; pw < c.patch_w; ++pw) {
                        const S* px = row + (static_cast<std::size_t>(ph) * c.patch_w + pw) * C;
                        for (int ch = 0; ch < C; ++ch) {
                            vel.at(f, th * c.patch_h + ph, tw * c.patch_w + pw, ch) = px[ch];
                        }
                    }
                }
            }
        }
    }
    return vel;
}

// Head backward: gradient on the velocity grid -> gradient on the residual
// stream (written to cache.d_stream), head/final-norm parameter gradients
// accumulated when param_grads is set.
template <typename S>
void head_backward(const DenoiserParams<S>& p, const Tensor<S>& dvel, Workspace<S>& ws, BranchCache<S>& cache,
                   std::vector<S>& grads, bool param_grads) {
    const ModelConfig& c = ws.cfg;
    const int N = c.tokens(), D = c.d_model, od = c.out_patch_dim(), C = c.video_channels;
    if (dvel.shape() != std::vector<int>{c.frames, c.height, c.width, C}) {
        throw ShapeError("velocity gradient shape " + dvel.shape_str() + " does not match the model geometry");
    }

    S* dout = ws.tmp_b.data();  // [N,od]
    int n = 0;
    for (int f = 0; f < c.frames; ++f) {
        for (int th = 0; th < c.tokens_h(); ++th) {
            for (int tw = 0; tw < c.tokens_w(); ++tw, ++n) {
                S* row = dout + static_cast<std::size_t>(n) * od;
                for (int ph = 0; ph < c.patch_h; ++ph) {
                    for (int pw = 0; pw < c.patch_w; ++pw) {
                        S* px = row + (static_cast<std::size_t>(ph) * c.patch_w + pw) * C;
                        for (int ch = 0; ch < C; ++ch) {
                            px[ch] = dvel.at(f, th * c.patch_h + ph, tw * c.patch_w + pw, ch);
                        }
                    }
                }
            }
        }
    }

    if (param_grads) {
        nn::matmul_at(grads.data() + p.info("head.weight").offset, cache.xf.data(), dout, N, D, od, true);
        nn::bias_grad(grads.data() + p.info("head.bias").offset, dout, N, od, true);
    }
    nn::transpose(ws.wt.data(), p.param("head.weight"), D, od);
    nn::matmul(ws.tmp_a.data(), dout, ws.wt.data(), N, od, D);  // dxf

    S* dg = param_grads ? grads.data() + p.info("final_ln.gamma").offset : ws.dump_g.data();
    S* db = param_grads ? grads.data() + p.info("final_ln.beta").offset : ws.dump_b.data();
    nn::layernorm_bwd(cache.d_stream.data(), dg, db, ws.tmp_a.data(), cache.h_final.data(),
                      p.param("final_ln.gamma"), cache.lnf_rstd.data(), cache.lnf_mean.data(), N, D, param_grads);
}

// Block backward: consumes the gradient on the block output in
// cache.d_stream and leaves the gradient on the block input there.
template <typename S>
void block_backward(const DenoiserParams<S>& p, int bi, Workspace<S>& ws, BranchCache<S>& cache,
                    std::vector<S>& grads, bool param_grads) {
    const ModelConfig& c = ws.cfg;
    const int N = c.tokens(), D = c.d_model, H = c.n_heads, dh = c.d_head();
    const int L = c.l_max, dt = c.d_txt, M = c.d_mlp();
    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
    BlockParamRefs<S> r = block_refs(p, bi);
    BlockGradRefs<S> g = block_grad_refs(p, grads, bi);
    BlockCache<S>& bc = cache.blocks[static_cast<std::size_t>(bi)];
    S* d = cache.d_stream.data();  // running gradient on the residual stream

    // MLP
    nn::gelu_fwd(ws.tmp_nm.data(), ws.tmp_nm2.data(), bc.mlp_u.data(), static_cast<std::size_t>(N) * M);
    if (param_grads) {
        nn::matmul_at(g.w2, ws.tmp_nm.data(), d, N, M, D, true);
        nn::bias_grad(g.b2, d, N, D, true);
    }
    nn::transpose(ws.wt.data(), r.w2, M, D);
    nn::matmul(ws.tmp_nm2.data(), d, ws.wt.data(), N, D, M);  // dg(elu input)
    nn::gelu_bwd(ws.tmp_nm.data(), ws.tmp_nm2.data(), bc.mlp_u.data(), bc.mlp_tanh.data(),
                 static_cast<std::size_t>(N) * M);  // du
    if (param_grads) {
        nn::matmul_at(g.w1, bc.x3.data(), ws.tmp_nm.data(), N, D, M, true);
        nn::bias_grad(g.b1, ws.tmp_nm.data(), N, M, true);
    }
    nn::transpose(ws.wt.data(), r.w1, D, M);
    nn::matmul(ws.tmp_a.data(), ws.tmp_nm.data(), ws.wt.data(), N, M, D);  // dx3
    {
        S* dgm = param_grads ? g.ln3_g : ws.dump_g.data();
        S* dbt = param_grads ? g.ln3_b : ws.dump_b.data();
        nn::layernorm_bwd(ws.tmp_b.data(), dgm, dbt, ws.tmp_a.data(), bc.h_cross.data(), r.ln3_g,
                          bc.ln3_rstd.data(), bc.ln3_mean.data(), N, D, param_grads);
    }
    add_into(d, ws.tmp_b.data(), static_cast<std::size_t>(N) * D);  // d = grad on h_cross

    // cross-attention
    if (param_grads) {
        nn::matmul_at(g.cwo, bc.ctxc.data(), d, N, D, D, true);
        nn::bias_grad(g.cbo, d, N, D, true);
    }
    nn::transpose(ws.wt.data(), r.cwo, D, D);
    nn::matmul(ws.tmp_a.data(), d, ws.wt.data(), N, D, D);  // dctxc token-major
    pack_heads(ws.hm_a.data(), ws.tmp_a.data(), N, H, dh, S(1));
    std::fill(ws.hm_b.begin(), ws.hm_b.begin() + static_cast<std::size_t>(H) * L * dh, S(0));  // dvc
    for (int h = 0; h < H; ++h) {
        const S* dctx_h = ws.hm_a.data() + static_cast<std::size_t>(h) * N * dh;
        const S* ah = bc.attc.data() + static_cast<std::size_t>(h) * N * L;
        const S* qh = bc.qc.data() + static_cast<std::size_t>(h) * N * dh;
        const S* kh = bc.kc.data() + static_cast<std::size_t>(h) * L * dh;
        const S* vh = bc.vc.data() + static_cast<std::size_t>(h) * L * dh;
        nn::transpose(ws.kt.data(), vh, L, dh);
        nn::matmul(ws.att_s.data(), dctx_h, ws.kt.data(), N, dh, L);  // dAtt
        nn::matmul_at(ws.hm_b.data() + static_cast<std::size_t>(h) * L * dh, ah, dctx_h, N, L, dh, true);
        nn::softmax_rows_bwd(ws.att_s.data(), ws.att_s.data(), ah, N, L);  // dS
        nn::matmul(ws.hm_c.data() + static_cast<std::size_t>(h) * N * dh, ws.att_s.data(), kh, N, L, dh);  // dq
        nn::matmul_at(ws.hm_d.data() + static_cast<std::size_t>(h) * L * dh, ws.att_s.data(), qh, N, L, dh);  // dk
    }
    unpack_heads(ws.tmp_a.data(), ws.hm_c.data(), N, H, dh, scale);  // dq token-major
    if (param_grads) {
        nn::matmul_at(g.cwq, bc.x2.data(), ws.tmp_a.data(), N, D, D, true);
        nn::bias_grad(g.cbq, ws.tmp_a.data(), N, D, true);
    }
    nn::transpose(ws.wt.data(), r.cwq, D, D);
    nn::matmul(ws.tmp_b.data(), ws.tmp_a.data(), ws.wt.data(), N, D, D);  // dx2
    if (param_grads) {
        unpack_heads(ws.tmp_ld.data(), ws.hm_d.data(), L, H, dh, S(1));  // dkc token-major
        nn::matmul_at(g.cwk, cache.txt.data(), ws.tmp_ld.data(), L, dt, D, true);
        nn::bias_grad(g.cbk, ws.tmp_ld.data(), L, D, true);
        unpack_heads(ws.tmp_ld.data(), ws.hm_b.data(), L, H, dh, S(1));  // dvc token-major
        nn::matmul_at(g.cwv, cache.txt.data(), ws.tmp_ld.data(), L, dt, D, true);
        nn::bias_grad(g.cbv, ws.tmp_ld.data(), L, D, true);
    }
    {
        S* dgm = param_grads ? g.ln2_g : ws.dump_g.data();
        S* dbt = param_grads ? g.ln2_b : ws.dump_b.data();
        nn::layernorm_bwd(ws.tmp_a.data(), dgm, dbt, ws.tmp_b.data(), bc.h_attn.data(), r.ln2_g,
                          bc.ln2_rstd.data(), bc.ln2_mean.data(), N, D, param_grads);
    }
    add_into(d, ws.tmp_a.data(), static_cast<std::size_t>(N) * D);  // d = grad on h_attn

    // self-attention
    if (param_grads) {
        nn::matmul_at(g.wo, bc.ctx.data(), d, N, D, D, true);
        nn::bias_grad(g.bo, d, N, D, true);
    }
    nn::transpose(ws.wt.data(), r.wo, D, D);
    nn::matmul(ws.tmp_a.data(), d, ws.wt.data(), N, D, D);  // dctx token-major
    pack_heads(ws.hm_a.data(), ws.tmp_a.data(), N, H, dh, S(1));
    for (int h = 0; h < H; ++h) {
        const S* dctx_h = ws.hm_a.data() + static_cast<std::size_t>(h) * N * dh;
        const S* ah = bc.att.data() + static_cast<std::size_t>(h) * N * N;
        const S* qh = bc.q.data() + static_cast<std::size_t>(h) * N * dh;
        const S* kh = bc.k.data() + static_cast<std::size_t>(h) * N * dh;
        const S* vh = bc.v.data() + static_cast<std::size_t>(h) * N * dh;
        nn::transpose(ws.kt.data(), vh, N, dh);
        nn::matmul(ws.att_s.data(), dctx_h, ws.kt.data(), N, dh, N);  // dAtt
        nn::matmul_at(ws.hm_b.data() + static_cast<std::size_t>(h) * N * dh, ah, dctx_h, N, N, dh);  // dv
        nn::softmax_rows_bwd(ws.att_s.data(), ws.att_s.data(), ah, N, N);  // dS
        nn::matmul(ws.hm_c.data() + static_cast<std::size_t>(h) * N * dh, ws.att_s.data(), kh, N, N, dh);  // dq
        nn::matmul_at(ws.hm_d.data() + static_cast<std::size_t>(h) * N * dh, ws.att_s.data(), qh, N, N, dh);  // dk
    }
    unpack_heads(ws.tmp_a.data(), ws.hm_c.data(), N, H, dh, scale);  // dq token-major
    if (param_grads) {
        nn::matmul_at(g.wq, bc.x1.data(), ws.tmp_a.data(), N, D, D, true);
        nn::bias_grad(g.bq, ws.tmp_a.data(), N, D, true);
    }
    nn::transpose(ws.wt.data(), r.wq, D, D);
    nn::matmul(ws.tmp_b.data(), ws.tmp_a.data(), ws.wt.data(), N, D, D);  // dx1
    unpack_heads(ws.tmp_a.data(), ws.hm_d.data(), N, H, dh, S(1));  // dk token-major
    if (param_grads) {
        nn::matmul_at(g.wk, bc.x1.data(), ws.tmp_a.data(), N, D, D, true);
        nn::bias_grad(g.bk, ws.tmp_a.data(), N, D, true);
    }
    nn::transpose(ws.wt.data(), r.wk, D, D);
    nn::matmul(ws.tmp_b.data(), ws.tmp_a.data(), ws.wt.data(), N, D, D, true);
    unpack_heads(ws.tmp_a.data(), ws.hm_b.data(), N, H, dh, S(1));  // dv token-major
    if (param_grads) {
        nn::matmul_at(g.wv, bc.x1.data(), ws.tmp_a.data(), N, D, D, true);
        nn::bias_grad(g.bv, ws.tmp_a.data(), N, D, true);
    }
    nn::transpose(ws.wt.data(), r.wv, D, D);
    nn::matmul(ws.tmp_b.data(), ws.tmp_a.data(), ws.wt.data(), N, D, D, true);
    {
        S* dgm = param_grads ? g.ln1_g : ws.dump_g.data();
        S* dbt = param_grads ? g.ln1_b : ws.dump_b.data();
        nn::layernorm_bwd(ws.tmp_a.data(), dgm, dbt, ws.tmp_b.data(), bc.h_in.data(), r.ln1_g, bc.ln1_rstd.data(),
                          bc.ln1_mean.data(), N, D, param_grads);
    }
    add_into(d, ws.tmp_a.data(), static_cast<std::size_t>(N) * D);  // d = grad on h_in
}

template <typename S>
void embed_backward(const DenoiserParams<S>& p, Workspace<S>& ws, BranchCache<S>& cache, std::vector<S>& grads) {
    const ModelConfig& c = ws.cfg;
    const int N = c.tokens(), D = c.d_model;
    const S* d = cache.d_stream.data();

    // time embedding: its output is broadcast over tokens
    S* dtemb = ws.dvec_a.data();
    nn::bias_grad(dtemb, d, N, D);
    nn::matmul_at(grads.data() + p.info("time_mlp.w2").offset, cache.t_s.data(), dtemb, 1, D, D, true);
    nn::add_bias(grads.data() + p.info("time_mlp.b2").offset, dtemb, 1, D);
    nn::transpose(ws.wt.data(), p.param("time_mlp.w2"), D, D);
    S* ds = ws.dvec_b.data();
    nn::matmul(ds, dtemb, ws.wt.data(), 1, D, D);
    nn::silu_bwd(ds, ds, cache.t_u1.data(), cache.t_sig.data(), static_cast<std::size_t>(D));
    nn::matmul_at(grads.data() + p.info("time_mlp.w1").offset, cache.tfeat.data(), ds, 1, c.d_time, D, true);
    nn::add_bias(grads.data() + p.info("time_mlp.b1").offset, ds, 1, D);

    nn::matmul_at(grads.data() + p.info("patch_embed.weight").offset, cache.x_patches.data(), d, N, c.patch_dim(),
                  D, true);
    nn::bias_grad(grads.data() + p.info("patch_embed.bias").offset, d, N, D, true);
}

}  // namespace denoiser_detail

// Plain single-branch pass; fusion layers are not touched. The workspace
// cache named by `branch` keeps everything the matching backward needs.
template <typename S>
Tensor<S> forward_single(const DenoiserParams<S>& params, const ConditionBundle<S>& bundle, Workspace<S>& ws,
                         BranchKind branch = BranchKind::kFull) {
    if (params.config() != ws.cfg) throw ConfigError("workspace and parameters disagree on model geometry");
    auto& cache = ws.cache(branch);
    denoiser_detail::embed_forward(params, bundle, ws, cache);
    for (int b = 0; b < ws.cfg.n_blocks; ++b) denoiser_detail::block_forward(params, b, ws, cache);
    return denoiser_detail::head_forward(params, ws, cache);
}

// Gradient of a scalar loss with dL/dvelocity = dvel, for the forward_single
// call that last used `branch`. Parameter gradients accumulate into grads.
template <typename S>
void backward_single(const DenoiserParams<S>& params, const Tensor<S>& dvel, Workspace<S>& ws,
                     std::vector<S>& grads, BranchKind branch = BranchKind::kFull) {
    if (grads.size() != params.size()) throw ShapeError("gradient vector size mismatch");
    auto& cache = ws.cache(branch);
    denoiser_detail::head_backward(params, dvel, ws, cache, grads, true);
    for (int b = ws.cfg.n_blocks - 1; b >= 0; --b) {
        denoiser_detail::block_backward(params, b, ws, cache, grads, true);
    }
    denoiser_detail::embed_backward(params, ws, cache, grads);
}

// Three-branch pass with per-block fusion: text and mask branches evolve
// independently; after every block the full branch output h̃ is corrected by
// ĥ = h̃ + f_m(h̃ − h_mask) and h = ĥ + f_txt(ĥ − h_text) before the next
// block.
template <typename S>
VelocityTriple<S> forward_three_branch(const DenoiserParams<S>& params, const ConditionBundle<S>& b_txt,
                                       const ConditionBundle<S>& b_m, const ConditionBundle<S>& b_f,
                                       Workspace<S>& ws) {
    using namespace denoiser_detail;
    if (params.config() != ws.cfg) throw ConfigError("workspace and parameters disagree on model geometry");
    if (!b_txt.x_t.same_shape(b_m.x_t) || !b_txt.x_t.same_shape(b_f.x_t)) {
        throw ShapeError("three-branch forward: x_t shapes differ across branches");
    }
    if (!bit_identical(b_txt.x_t, b_m.x_t) || !bit_identical(b_txt.x_t, b_f.x_t) || b_txt.t != b_m.t ||
        b_txt.t != b_f.t) {
        throw Error("three-branch forward: branches must share the same x_t and t");
    }
    auto& ct = ws.cache(BranchKind::kTextOnly);
    auto& cm = ws.cache(BranchKind::kMaskOnly);
    auto& cf = ws.cache(BranchKind::kFull);
    embed_forward(params, b_txt, ws, ct);
    embed_forward(params, b_m, ws, cm);
    embed_forward(params, b_f, ws, cf);

    const int N = ws.cfg.tokens(), D = ws.cfg.d_model;
    const std::size_t nd = static_cast<std::size_t>(N) * D;
    for (int b = 0; b < ws.cfg.n_blocks; ++b) {
        block_forward(params, b, ws, ct);
        block_forward(params, b, ws, cm);
        block_forward(params, b, ws, cf);
        BlockParamRefs<S> r = block_refs(params, b);
        BlockCache<S>& bf = cf.blocks[static_cast<std::size_t>(b)];
        const S* h_txt = ct.blocks[static_cast<std::size_t>(b)].h_out.data();
        const S* h_m = cm.blocks[static_cast<std::size_t>(b)].h_out.data();
        for (std::size_t i = 0; i < nd; ++i) bf.fuse_diff_m[i] = bf.h_out[i] - h_m[i];
        nn::matmul(ws.tmp_a.data(), bf.fuse_diff_m.data(), r.fm_w, N, D, D);
        nn::add_bias(ws.tmp_a.data(), r.fm_b, N, D);
        for (std::size_t i = 0; i < nd; ++i) bf.fuse_hhat[i] = bf.h_out[i] + ws.tmp_a[i];
        for (std::size_t i = 0; i < nd; ++i) bf.fuse_diff_t[i] = bf.fuse_hhat[i] - h_txt[i];
        nn::matmul(ws.tmp_a.data(), bf.fuse_diff_t.data(), r.ft_w, N, D, D);
        nn::add_bias(ws.tmp_a.data(), r.ft_b, N, D);
        for (std::size_t i = 0; i < nd; ++i) cf.stream[i] = bf.fuse_hhat[i] + ws.tmp_a[i];
    }

    VelocityTriple<S> out;
    out.v_txt = head_forward(params, ws, ct);
    out.v_m = head_forward(params, ws, cm);
    out.v_f = head_forward(params, ws, cf);
    return out;
}

// Backward of a scalar loss on the full-branch output of
// forward_three_branch. By default only fusion-layer gradients are produced
// (the stage-2 freeze contract); with unfreeze_base the gradient flows into
// all three branches and every parameter.
template <typename S>
void backward_three(const DenoiserParams<S>& params, const Tensor<S>& dvel_f, Workspace<S>& ws,
                    std::vector<S>& grads, bool unfreeze_base = false) {
    using namespace denoiser_detail;
    if (grads.size() != params.size()) throw ShapeError("gradient vector size mismatch");
    auto& ct = ws.cache(BranchKind::kTextOnly);
    auto& cm = ws.cache(BranchKind::kMaskOnly);
    auto& cf = ws.cache(BranchKind::kFull);
    const int N = ws.cfg.tokens(), D = ws.cfg.d_model;
    const std::size_t nd = static_cast<std::size_t>(N) * D;

    head_backward(params, dvel_f, ws, cf, grads, unfreeze_base);
    if (unfreeze_base) {
        std::fill(ct.d_stream.begin(), ct.d_stream.end(), S(0));
        std::fill(cm.d_stream.begin(), cm.d_stream.end(), S(0));
    }

    for (int b = ws.cfg.n_blocks - 1; b >= 0; --b) {
        BlockParamRefs<S> r = block_refs(params, b);
        BlockGradRefs<S> g = block_grad_refs(params, grads, b);
        BlockCache<S>& bf = cf.blocks[static_cast<std::size_t>(b)];
        S* d = cf.d_stream.data();  // grad on the fused block output

        // text fusion: h = ĥ + f_txt(ĥ − h_txt)
        nn::matmul_at(g.ft_w, bf.fuse_diff_t.data(), d, N, D, D, true);
        nn::bias_grad(g.ft_b, d, N, D, true);
        nn::transpose(ws.wt.data(), r.ft_w, D, D);
        nn::matmul(ws.tmp_a.data(), d, ws.wt.data(), N, D, D);  // ddiff_t
        if (unfreeze_base) {
            for (std::size_t i = 0; i < nd; ++i) ct.d_stream[i] -= ws.tmp_a[i];
        }
        for (std::size_t i = 0; i < nd; ++i) d[i] += ws.tmp_a[i];  // dĥ

        // mask fusion: ĥ = h̃ + f_m(h̃ − h_m)
        nn::matmul_at(g.fm_w, bf.fuse_diff_m.data(), d, N, D, D, true);
        nn::bias_grad(g.fm_b, d, N, D, true);
        nn::transpose(ws.wt.data(), r.fm_w, D, D);
        nn::matmul(ws.tmp_a.data(), d, ws.wt.data(), N, D, D);  // ddiff_m
        if (unfreeze_base) {
            for (std::size_t i = 0; i < nd; ++i) cm.d_stream[i] -= ws.tmp_a[i];
        }
        for (std::size_t i = 0; i < nd; ++i) d[i] += ws.tmp_a[i];  // dh̃

        block_backward(params, b, ws, cf, grads, unfreeze_base);
        if (unfreeze_base) {
            block_backward(params, b, ws, cm, grads, true);
            block_backward(params, b, ws, ct, grads, true);
        }
    }
    if (unfreeze_base) {
        embed_backward(params, ws, cf, grads);
        embed_backward(params, ws, cm, grads);
        embed_backward(params, ws, ct, grads);
    }
}

}  // namespace generaser
