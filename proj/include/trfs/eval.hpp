#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "trfs/data.hpp"
#include "trfs/net.hpp"

namespace trfs {

// Foreground IoU; both-empty masks count as a perfect match.
double iou(const Tensor& pred, const Tensor& gt);

struct ClassCounts {
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;
};

struct FoldResult {
    int fold_index = 0;
    std::map<int, ClassCounts> per_class; // keyed by class id
    std::map<int, double> per_class_iou;  // sum(intersection)/sum(union)
    double miou = 0.0;                    // mean over the fold's test classes
    std::size_t n_episodes = 0;
    std::uint64_t seed = 0;
};

// A model is anything that maps an episode to a predicted binary mask.
using Model = std::function<Tensor(const Episode&)>;

FoldResult evaluate_fold(const FoldSplit& split, const Model& model,
                         std::size_t n_episodes, std::size_t k,
                         std::uint64_t seed, std::size_t image_size = 64,
                         std::size_t n_threads = 1);

struct EvalReport {
    std::vector<FoldResult> folds;
    double mean_miou = 0.0;
    std::size_t n_episodes_per_fold = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
};

// One model per fold, trained/loaded by the factory, evaluated on that
// fold's test classes.
EvalReport cross_validate(
    const std::function<Model(const FoldSplit&)>& model_factory,
    std::size_t n_episodes, std::size_t k, std::uint64_t seed,
    std::size_t image_size, const std::string& config_hash,
    std::size_t n_threads = 1);

std::string format_report(const EvalReport& report);
void save_report(const std::string& path, const EvalReport& report);
EvalReport parse_report(const std::string& text);

} // namespace trfs
