#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trfs/rng.hpp"
#include "trfs/tensor.hpp"

namespace trfs {

// 12 shape classes, split into 4 folds of 3.
constexpr int kNumClasses = 12;
const char* shape_class_name(int class_id);

struct SceneShape {
    int class_id;
    double cx, cy;   // center, pixel coordinates
    double size;     // half-extent in pixels
    std::array<double, 3> color;
};

// Seeded geometry for one scene; rendering is a pure function of this.
struct SceneSpec {
    int class_id;
    std::size_t height, width;
    SceneShape target;
    std::vector<SceneShape> distractors;
    std::array<double, 3> bg_color;
    double noise_amp;
    std::uint64_t noise_seed;
};

bool shape_contains(const SceneShape& s, double y, double x);

SceneSpec make_scene_spec(int class_id, std::uint64_t seed, std::size_t height,
                          std::size_t width);

struct Scene {
    Tensor image; // [H, W, 3] in [0, 1]
    Tensor mask;  // [H, W] binary, exactly the target shape
};

Scene render_scene(const SceneSpec& spec);
Scene render_scene(int class_id, std::uint64_t seed, std::size_t height,
                   std::size_t width);

struct FoldSplit {
    int fold_index;
    std::vector<int> train_classes; // 9
    std::vector<int> test_classes;  // 3
};

std::array<FoldSplit, 4> make_folds();

struct Episode {
    Tensor query_image;
    Tensor query_mask;
    std::vector<Tensor> support_images;
    std::vector<Tensor> support_masks;
    int class_id;
    std::uint64_t seed;
};

enum class EpisodeMode { Train, Test };

// Deterministic episodic sampler. Train mode applies horizontal-flip
// augmentation (p=0.5 per item); every support mask is guaranteed non-empty
// after nearest-neighbor downsampling by `feature_stride`.
Episode sample_episode(const FoldSplit& split, EpisodeMode mode, std::size_t k,
                       std::uint64_t seed, std::size_t image_size = 64,
                       std::size_t feature_stride = 8);

// Nearest-neighbor mask downsample with 0.5 threshold.
Tensor downsample_mask_nearest(const Tensor& mask, std::size_t out_h,
                               std::size_t out_w);

// --- TensorFile binary format ------------------------------------------------
// magic "TRFS" | version u16 | dtype u8 (0=f32, 1=f64) | rank u8
// | dims u32 each | payload little-endian
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

} // namespace trfs
