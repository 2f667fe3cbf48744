#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "trfs/rng.hpp"
#include "trfs/tensor.hpp"

namespace trfs {

// Visitor over named parameter tensors. `decay` marks tensors that receive
// weight decay (weights yes; biases and LayerNorm affines no).
using ParamVisitor =
    std::function<void(const std::string& name, Tensor& value, bool decay)>;

struct LinearParams {
    Tensor weight; // [out, in]
    Tensor bias;   // [out]

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".weight", weight, true);
        fn(prefix + ".bias", bias, false);
    }
};

struct Conv2DParams {
    Tensor kernel; // [out_ch, in_ch, kh, kw]
    Tensor bias;   // [out_ch]

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".kernel", kernel, true);
        fn(prefix + ".bias", bias, false);
    }
};

struct LayerNormParams {
    Tensor gamma; // [C]
    Tensor beta;  // [C]
    double eps = 1e-5;

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".gamma", gamma, false);
        fn(prefix + ".beta", beta, false);
    }
};

struct MHSAParams {
    LinearParams wq, wk, wv, wo;
    std::size_t heads = 8;

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        wq.visit(prefix + ".wq", fn);
        wk.visit(prefix + ".wk", fn);
        wv.visit(prefix + ".wv", fn);
        wo.visit(prefix + ".wo", fn);
    }
};

struct TransformerBlockParams {
    LayerNormParams ln1, ln2;
    MHSAParams attn;
    LinearParams mlp_in, mlp_out; // hidden width = ratio * C, GELU between

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        ln1.visit(prefix + ".ln1", fn);
        ln2.visit(prefix + ".ln2", fn);
        attn.visit(prefix + ".attn", fn);
        mlp_in.visit(prefix + ".mlp_in", fn);
        mlp_out.visit(prefix + ".mlp_out", fn);
    }
};

Tensor layer_norm(const Tensor& x, const LayerNormParams& p);
Tensor gelu(const Tensor& x);
// Same-padding stride-1 cross-correlation on an HxWxC map.
Tensor conv2d(const Tensor& x, const Conv2DParams& p);
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);
// Half-pixel-center bilinear resize with edge clamping.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
// Multi-head self-attention over tokens x [N, C]; residual added by caller.
Tensor mhsa(const Tensor& x, const MHSAParams& p);
// Pre-norm residual block: x + MHSA(LN(x)), then + MLP(LN(.)).
// post_norm switches to the post-norm arrangement.
Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p,
                         bool post_norm = false);

// Glorot-uniform weights, zero biases, deterministic per RNG stream.
LinearParams init_linear(std::size_t out, std::size_t in, Rng& rng,
                         Precision prec);
Conv2DParams init_conv2d(std::size_t out_ch, std::size_t in_ch, std::size_t kh,
                         std::size_t kw, Rng& rng, Precision prec);
LayerNormParams init_layer_norm(std::size_t c, Precision prec);
// Affine-free LayerNorm constants (gamma=1, beta=0); not learnable state.
LayerNormParams unit_layer_norm(std::size_t c);
MHSAParams init_mhsa(std::size_t c, std::size_t heads, Rng& rng, Precision prec);
TransformerBlockParams init_transformer_block(std::size_t c, std::size_t heads,
                                              std::size_t mlp_ratio, Rng& rng,
                                              Precision prec);

} // namespace trfs
