#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trfs/net.hpp"

namespace trfs {

// Run configuration shared by all CLI commands. Serialized as plain-text
// key=value lines; keys match the field names below.
struct RunConfig {
    std::uint64_t seed = 1;
    std::size_t image_size = 64;
    std::size_t channels = 32;
    std::size_t heads = 8;
    std::size_t mlp_ratio = 4;
    std::size_t depth = 3;
    std::vector<std::size_t> scales = {8, 4, 2};
    std::string mode = "both"; // gem | lem | both
    std::size_t k_shot = 1;
    double base_lr = 0.025;
    std::size_t total_steps = 400;
    std::size_t batch_size = 2;
    std::string precision = "fast"; // fast | reference
    int fold = 0;
    std::size_t n_eval_episodes = 500;
    std::string out_dir = "out";

    void validate() const;

    BranchMode branch_mode() const;
    Precision precision_enum() const;
    TrfsConfig trfs_config() const;
    TrainHyper train_hyper() const;

    // Canonical serialized form (sorted keys) and its stable FNV-1a hash.
    std::string canonical_text() const;
    std::string fingerprint() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
// apply a single "key=value" override
void apply_override(RunConfig& cfg, const std::string& assignment);

} // namespace trfs
