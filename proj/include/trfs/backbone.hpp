#pragma once

#include <cstdint>

#include "trfs/nn.hpp"
#include "trfs/tensor.hpp"

namespace trfs {

// Frozen random-init feature extractor: three stages of
// (3x3 conv, GELU, 2x average downsample), channel plan 3 -> 16 -> 32 -> C.
// Output stride is 8. Parameters never join a gradient tape.
struct BackboneParams {
    Conv2DParams stage1, stage2, stage3;
    std::size_t out_channels;
    std::uint64_t init_seed;

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        stage1.visit(prefix + ".stage1", fn);
        stage2.visit(prefix + ".stage2", fn);
        stage3.visit(prefix + ".stage3", fn);
    }
};

BackboneParams init_backbone(std::size_t out_channels, std::uint64_t seed,
                             Precision prec);

// img [Himg, Wimg, 3] -> [Himg/8, Wimg/8, C]; Himg, Wimg divisible by 8.
Tensor extract(const Tensor& img, const BackboneParams& p);

} // namespace trfs
