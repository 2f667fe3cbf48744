#pragma once

#include <vector>

#include "trfs/tensor.hpp"

namespace trfs {

// Mean of feature vectors at mask-foreground positions.
// f [H, W, C], m [H, W] binary at feature resolution. Differentiable in f.
Tensor masked_gap(const Tensor& f, const Tensor& m);

// K-shot support prototype: mean over shots of per-shot masked means.
Tensor prototype(const std::vector<Tensor>& support_features,
                 const std::vector<Tensor>& support_masks);

// Prior mask from max cosine similarity between query positions and support
// foreground positions, min-max normalized with eps 1e-7. No gradient flow.
// K-shot prior: mean of per-shot normalized priors.
Tensor prior_mask(const Tensor& fq, const Tensor& fs, const Tensor& m);
Tensor prior_mask_multi(const Tensor& fq,
                        const std::vector<Tensor>& support_features,
                        const std::vector<Tensor>& support_masks);

// X = [fq | broadcast prototype | prior], shape [H, W, 2C+1].
Tensor fuse(const Tensor& fq, const Tensor& proto, const Tensor& prior);

} // namespace trfs
