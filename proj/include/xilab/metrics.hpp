#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xilab/datasets.hpp"
#include "xilab/explainers.hpp"
#include "xilab/model.hpp"

namespace xilab::metrics {

struct WrConfig {
    double alpha = 0.5; // binarization threshold, strictly inside (0,1)
    void validate() const;
};

/// Clamp negatives to zero, then divide by the maximum positive value.
/// A map with no positive value comes back all zeros.
std::vector<double> norm_plus(std::span<const double> map);

/// 100 * sum(b_alpha(norm_plus(map)) * mask) / sum(mask), with
/// b_alpha(v) = 1 iff v > alpha. Requires sum(mask) > 0.
double wr_score(std::span<const double> map, std::span<const std::uint8_t> mask,
                const WrConfig& cfg);
double wr_score(const explainers::Explanation& e, std::span<const std::uint8_t> mask,
                const WrConfig& cfg);

struct WrTableOptions {
    int samples = 256;       // evaluation subset size (seeded permutation prefix)
    int lime_samples = 64;   // LIME runs on a prefix of the same subset
    std::uint64_t subset_seed = 0;
    explainers::LimeOptions lime;
};

struct WrTable {
    std::vector<explainers::ExplainerKind> explainers;
    std::vector<double> mean_wr;     // one entry per explainer, percent
    std::vector<int> sample_counts;  // samples actually evaluated per explainer
};

/// Mean wr_score over a seeded test subset, per explainer. Deterministic
/// given (model, dataset, options).
WrTable wr_table(const model::CnnModel& m, const datasets::Dataset& test,
                 std::span<const explainers::ExplainerKind> kinds, const WrConfig& cfg,
                 const WrTableOptions& opts = {});

} // namespace xilab::metrics
