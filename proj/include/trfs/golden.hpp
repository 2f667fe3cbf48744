#pragma once

#include <cstdint>
#include <string>

#include "trfs/tensor.hpp"

namespace trfs {

// Writes a cross-implementation conformance kit: seeded inputs (including all
// parameter tensors) and reference-precision outputs for masked_gap,
// prior_mask, mhsa, adaptive_avg_pool, fmu_merge, gem_branch, lem_branch and
// forward_loss, plus a manifest listing every file. Deterministic in `seed`.
void write_golden_kit(const std::string& dir, std::uint64_t seed,
                      const std::string& fingerprint = "");

} // namespace trfs
