#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xilab/model.hpp"
#include "xilab/tensor.hpp"

namespace xilab::explainers {

using autodiff::Tensor;

enum class ExplainerKind { InputGrad, IntGrad, GradCam, Lime };

const char* explainer_name(ExplainerKind k);
ExplainerKind explainer_from_name(std::string_view name);

/// Per-pixel attribution map for one 28x28 input.
struct Explanation {
    std::vector<double> map; // 784 values, row-major
    ExplainerKind source = ExplainerKind::InputGrad;
    int target = -1;              // class index; -1 tags the summed-log-prob target
    bool solver_fallback = false; // LIME fell back to the least-norm solution
};

int predicted_class(const model::CnnModel& m, std::span<const float> image);

enum class InputGradMode {
    SummedLogProb, // d/dx sum_k log softmax(f(x))_k, the penalty-loss pairing
    RawOutputSum   // d/dx sum_k f(x)_k, handy for linear surrogates
};

Explanation input_gradients(const model::CnnModel& m, std::span<const float> image,
                            InputGradMode mode = InputGradMode::SummedLogProb);

/// (x - baseline) * mean over midpoint Riemann samples of the target-logit
/// gradient along the straight path from a black baseline.
Explanation integrated_gradients(const model::CnnModel& m, std::span<const float> image,
                                 int steps = 50, int target = -1 /* -1 = predicted */);

/// relu(sum_k w_k A_k) on the conv2 post-ReLU maps (w_k = spatial mean of
/// the target-logit gradient), bilinearly upsampled to 28x28; >= 0 everywhere.
Explanation grad_cam(const model::CnnModel& m, std::span<const float> image,
                     int target = -1 /* -1 = predicted */);

struct LimeOptions {
    int n_samples = 1000;
    double ridge = 1.0;
    double kernel_width = 0.25 * 7.0; // 0.25 * sqrt(49 segments)
    std::uint64_t seed = 0;
};

/// Weighted ridge regression of the predicted-class probability on binary
/// indicators over the 49 non-overlapping 4x4 patches; each patch coefficient
/// is broadcast to its pixels.
Explanation lime(const model::CnnModel& m, std::span<const float> image,
                 const LimeOptions& opts = {});

namespace detail {
/// LIME's perturbation/regression core with an arbitrary predictor:
/// prob_fn maps a flattened batch of n perturbed images to one probability
/// per row.
using ProbFn = std::function<std::vector<double>(const std::vector<double>& batch, int n)>;
Explanation lime_core(const ProbFn& prob_fn, std::span<const float> image,
                      const LimeOptions& opts);
} // namespace detail

// graph-retaining builders shared with the explanation losses; an empty
// target list means the predicted class per row
Tensor input_gradients_graph(const model::CnnModel& m, const Tensor& x_leaf);
Tensor grad_cam_graph(const model::CnnModel& m, const Tensor& images,
                      const std::vector<int>& targets = {});

void write_csv(const Explanation& e, const std::string& path);
void write_pgm(const Explanation& e, const std::string& path);

} // namespace xilab::explainers
