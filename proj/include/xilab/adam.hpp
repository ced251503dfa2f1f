#pragma once

#include <vector>

#include "xilab/tensor.hpp"

namespace xilab::autodiff {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers plus step counter, one entry per parameter.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;

    static AdamState init(const std::vector<Tensor>& params);
};

/// Standard Adam update with bias correction, applied in place to the
/// parameter storage. Deterministic; shape mismatches raise ShapeError.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& config = {});

} // namespace xilab::autodiff
