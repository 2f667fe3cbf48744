#include "trfs/backbone.hpp"

namespace trfs {

BackboneParams init_backbone(std::size_t out_channels, std::uint64_t seed,
                             Precision prec) {
    Rng rng(hash_combine(seed, 0xbacbULL));
    // Glorot variance assumes a linear, variance-preserving stage; each
    // GELU + 2x average-downsample pair attenuates the activation scale by
    // roughly 3x, so a compensating per-stage gain keeps the extractor's
    // output near unit scale instead of starving downstream gradients.
    constexpr double kStageGain = 3.0;
    const auto scaled = [&](Conv2DParams c) {
        std::vector<double> k(c.kernel.data());
        for (double& v : k) v *= kStageGain;
        c.kernel = Tensor(c.kernel.shape(), k, prec);
        return c;
    };
    BackboneParams p;
    p.stage1 = scaled(init_conv2d(16, 3, 3, 3, rng, prec));
    p.stage2 = scaled(init_conv2d(32, 16, 3, 3, rng, prec));
    p.stage3 = scaled(init_conv2d(out_channels, 32, 3, 3, rng, prec));
    p.out_channels = out_channels;
    p.init_seed = seed;
    return p;
}

namespace {
Tensor avg_downsample2(const Tensor& x) {
    return adaptive_avg_pool(x, x.extent(0) / 2, x.extent(1) / 2);
}
} // namespace

Tensor extract(const Tensor& img, const BackboneParams& p) {
    if (img.rank() != 3 || img.extent(2) != 3)
        throw BadImageSize("extract: expect [H, W, 3] image");
    if (img.extent(0) % 8 != 0 || img.extent(1) % 8 != 0)
        throw BadImageSize("extract: image extents must be divisible by 8");

    // frozen: never let gradients flow into or through the backbone
    Tensor x = img.detached();
    x = avg_downsample2(gelu(conv2d(x, p.stage1)));
    x = avg_downsample2(gelu(conv2d(x, p.stage2)));
    x = avg_downsample2(gelu(conv2d(x, p.stage3)));
    // Per-channel spatial centering (an orthogonal projection, so the
    // stage-wise operator-norm bound is unaffected). GELU features are
    // one-sided; removing the per-image channel mean makes foreground and
    // background point in opposing directions, which sharpens the cosine
    // prior substantially.
    const std::size_t hw = x.extent(0) * x.extent(1), c = x.extent(2);
    std::vector<double> d(x.data());
    for (std::size_t j = 0; j < c; ++j) {
        double m = 0;
        for (std::size_t p = 0; p < hw; ++p) m += d[p * c + j];
        m /= static_cast<double>(hw);
        for (std::size_t p = 0; p < hw; ++p) d[p * c + j] -= m;
    }
    return Tensor(x.shape(), std::move(d), x.precision());
}

} // namespace trfs
