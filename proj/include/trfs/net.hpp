#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trfs/backbone.hpp"
#include "trfs/data.hpp"
#include "trfs/fusion.hpp"
#include "trfs/nn.hpp"
#include "trfs/tensor.hpp"

namespace trfs {

enum class BranchMode { GemOnly, LemOnly, Both };

struct TrfsConfig {
    std::size_t channels = 32; // C
    std::size_t heads = 8;
    std::size_t mlp_ratio = 4;
    std::size_t depth = 3; // L transformer / conv blocks per scale
    std::vector<std::size_t> scales = {8, 4, 2}; // strictly decreasing
    BranchMode mode = BranchMode::Both;
    bool post_norm = false;      // transformer norm placement
    bool average_logits = false; // test-time head averaging variant
    Precision precision = Precision::Fast;

    void validate() const;
};

// One scale of the GEM branch: channel reducer, FMU (absent at the first
// scale), and L transformer blocks.
struct GemScaleParams {
    LinearParams reducer;              // 2C+1 -> C
    std::optional<Conv2DParams> fmu;   // 1x1, 2C -> C
    std::vector<TransformerBlockParams> blocks;

    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LemScaleParams {
    LinearParams reducer;
    std::optional<Conv2DParams> fmu;
    std::vector<Conv2DParams> blocks;  // residual (3x3 conv -> GELU) each

    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct HeadParams {
    Conv2DParams conv3; // 3x3, n*C -> C
    Conv2DParams conv1; // 1x1, C -> 2

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        conv3.visit(prefix + ".conv3", fn);
        conv1.visit(prefix + ".conv1", fn);
    }
};

// All learnable parameters. Both branches are always allocated; the mode only
// controls which branch runs, so disabled-branch gradients stay exactly zero.
struct TrfsParams {
    std::vector<GemScaleParams> gem;
    std::vector<LemScaleParams> lem;
    HeadParams gem_head, lem_head;

    void visit(const ParamVisitor& fn);
    std::vector<Tensor*> tensors(); // visit order
    std::vector<std::string> names();
};

TrfsParams init_trfs_params(const TrfsConfig& cfg, std::uint64_t seed);

struct LossReport {
    double l_gem = 0.0;
    double l_lem = 0.0;
    double total = 0.0;
};

// Adaptive-average-pool pyramid of the fused feature X.
std::vector<Tensor> build_pyramid(const Tensor& x,
                                  const std::vector<std::size_t>& scales);

// Eq.-style feature merge: prev (coarser-to-finer chain input) is resized to
// xi_prime's resolution, concatenated, 1x1-convolved and added residually.
// Without prev the input passes through unchanged.
Tensor fmu_merge(const Tensor& xi_prime, const std::optional<Tensor>& prev,
                 const std::optional<Conv2DParams>& p);

Tensor gem_branch(const std::vector<Tensor>& pyramid,
                  const std::vector<GemScaleParams>& params,
                  const TrfsConfig& cfg);
Tensor lem_branch(const std::vector<Tensor>& pyramid,
                  const std::vector<LemScaleParams>& params);

// Per-pixel 2-class cross-entropy (mean over pixels) of HxWx2 logits against
// a binary HxW mask.
Tensor cross_entropy_logits(const Tensor& logits, const Tensor& mask);

struct ForwardResult {
    Tensor loss_total;          // scalar, on tape when params are watched
    std::optional<Tensor> gem_logits; // at query-mask resolution
    std::optional<Tensor> lem_logits;
    LossReport report;
};

// Backbone features + prototype + prior, fused to [H/8, W/8, 2C+1]. Pure in
// the episode and the frozen backbone; never taped.
Tensor fuse_episode(const Episode& episode, const BackboneParams& backbone);

// Loss from a precomputed fused input (lets callers amortize the frozen
// backbone/fusion work when only the parameters change).
ForwardResult forward_from_fused(const Tensor& fused, const Tensor& query_mask,
                                 const TrfsParams& params,
                                 const TrfsConfig& cfg);

ForwardResult forward_loss(const Episode& episode, const TrfsParams& params,
                           const BackboneParams& backbone,
                           const TrfsConfig& cfg);

// Test-time head averaging: mean probability (or mean logit) per pixel over
// the enabled heads, returned as [H, W, 2] class probabilities/scores.
Tensor head_average(const std::vector<Tensor>& logits_list, bool average_logits);

// Predicted binary mask [Himg, Wimg]; ties at argmax go to background.
Tensor infer(const Episode& episode, const TrfsParams& params,
             const BackboneParams& backbone, const TrfsConfig& cfg);

struct TrainHyper {
    double base_lr = 0.025;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double poly_power = 0.9;
    std::size_t total_steps = 0;
};

struct OptimizerState {
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> velocity;
};

double poly_lr(const TrainHyper& h, std::size_t step);

// v <- momentum v + (g + wd w); w <- w - lr v. wd applies only when the
// caller passes it (weights yes, biases and LayerNorm affines no).
void sgd_momentum_update(std::vector<double>& w, const std::vector<double>& g,
                         std::vector<double>& v, double lr, double momentum,
                         double weight_decay);

// One SGD-with-momentum step over the batch (gradients averaged across
// episodes). Throws NonFiniteLoss and leaves params untouched on a bad loss.
LossReport train_step(const std::vector<Episode>& batch, TrfsParams& params,
                      const BackboneParams& backbone, const TrfsConfig& cfg,
                      OptimizerState& state, const TrainHyper& hyper);

// --- checkpoints ---------------------------------------------------------------
// A text manifest plus one TensorFile per named tensor (model + backbone).
void save_checkpoint(const std::string& dir, TrfsParams& params,
                     BackboneParams& backbone, const std::string& fingerprint);
void load_checkpoint(const std::string& dir, TrfsParams& params,
                     BackboneParams& backbone,
                     const std::string& expected_fingerprint);

} // namespace trfs
