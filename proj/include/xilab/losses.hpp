#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xilab/tensor.hpp"

namespace xilab::model {
struct CnnModel;
}

namespace xilab::losses {

using autodiff::Tensor;

/// Right-reason revision methods. RRR penalizes input gradients, RRR_G
/// penalizes Grad-CAM maps, RBR penalizes the input gradient of the squared
/// parameter-gradient norm, HINT rewards Grad-CAM alignment with the
/// relevant region. Counterexample augmentation lives in datasets.
enum class Method { RRR, RRR_G, RBR, HINT };

const char* method_name(Method m);
Method method_from_name(std::string_view name);

/// Per-method weights; defaults keep each term within an order of magnitude
/// of the prediction loss at initialization on the decoy benchmarks.
double default_lambda(Method m);

/// Penalty methods consume the confounder mask, HINT the reward mask.
bool uses_reward_mask(Method m);

struct XilLossSpec {
    Method method = Method::RRR;
    double lambda = -1.0; // negative means default_lambda(method)

    double effective_lambda() const { return lambda < 0 ? default_lambda(method) : lambda; }
    void validate() const;
};

// All loss builders return graph-retaining scalars: a backward pass through
// them reaches the model parameters (second order where the term itself
// contains a gradient).

/// sum((M * d/dx sum_k log softmax f(x))^2) over the batch.
Tensor rrr_loss(const model::CnnModel& m, const Tensor& images, const Tensor& confounder_mask);

/// sum((M * GradCAM(x))^2), Grad-CAM taken at the predicted class.
Tensor rrr_g_loss(const model::CnnModel& m, const Tensor& images, const Tensor& confounder_mask);

/// First-order influence surrogate: s = ||d/dtheta L_pred||^2,
/// loss = sum((M * d/dx s)^2).
Tensor rbr_loss(const model::CnnModel& m, const Tensor& images, const std::vector<int>& labels,
                const Tensor& confounder_mask);

/// sum((norm_plus(GradCAM(x)) - M_reward)^2): pulls the explanation toward
/// the relevant region instead of away from the confounder.
Tensor hint_loss(const model::CnnModel& m, const Tensor& images, const Tensor& reward_mask);

/// pred + sum_i lambda_i * term_i, accumulated left to right in spec order.
Tensor combined_loss(const Tensor& pred, std::span<const XilLossSpec> specs,
                     std::span<const Tensor> terms);

/// Dispatcher used by the training loop.
Tensor xil_term(const XilLossSpec& spec, const model::CnnModel& m, const Tensor& images,
                const std::vector<int>& labels, const Tensor& confounder_mask,
                const Tensor& reward_mask);

} // namespace xilab::losses
