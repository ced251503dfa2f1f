#include "xilab/losses.hpp"

#include "xilab/explainers.hpp"
#include "xilab/model.hpp"
#include "xilab/ops.hpp"

namespace xilab::losses {

using namespace autodiff;

namespace {

Tensor as_leaf(const Tensor& t) {
    return Tensor::leaf(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

void check_mask(const char* op, const Tensor& images, const Tensor& mask) {
    if (!mask.defined())
        throw ConfigError(std::string(op) + ": missing feedback mask");
    if (mask.shape() != images.shape())
        throw ShapeError(std::string(op) + ": mask shape " + shape_str(mask.shape()) +
                         " does not match images " + shape_str(images.shape()));
}

Tensor sum_squares(const Tensor& t) { return sum_all(mul(t, t)); }

} // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::RRR: return "RRR";
        case Method::RRR_G: return "RRR_G";
        case Method::RBR: return "RBR";
        case Method::HINT: return "HINT";
    }
    return "?";
}

Method method_from_name(std::string_view name) {
    if (name == "RRR") return Method::RRR;
    if (name == "RRR_G" || name == "RRR-G") return Method::RRR_G;
    if (name == "RBR") return Method::RBR;
    if (name == "HINT") return Method::HINT;
    throw ConfigError("unknown revision method '" + std::string(name) +
                      "' (expected RRR, RRR_G, RBR or HINT)");
}

double default_lambda(Method m) {
    switch (m) {
        case Method::RRR: return 10.0;
        case Method::RRR_G: return 1.0;
        case Method::RBR: return 1e5;
        case Method::HINT: return 100.0;
    }
    return 1.0;
}

bool uses_reward_mask(Method m) { return m == Method::HINT; }

void XilLossSpec::validate() const {
    if (lambda < 0 && lambda != -1.0)
        throw ConfigError("XilLossSpec: lambda must be >= 0 (or -1 for the default)");
}

Tensor rrr_loss(const model::CnnModel& m, const Tensor& images, const Tensor& confounder_mask) {
    check_mask("rrr_loss", images, confounder_mask);
    Tensor x = as_leaf(images);
    Tensor gx = explainers::input_gradients_graph(m, x);
    return sum_squares(mul(gx, confounder_mask.detach()));
}

Tensor rrr_g_loss(const model::CnnModel& m, const Tensor& images, const Tensor& confounder_mask) {
    check_mask("rrr_g_loss", images, confounder_mask);
    Tensor cam = explainers::grad_cam_graph(m, images);
    return sum_squares(mul(cam, confounder_mask.detach()));
}

Tensor rbr_loss(const model::CnnModel& m, const Tensor& images, const std::vector<int>& labels,
                const Tensor& confounder_mask) {
    check_mask("rbr_loss", images, confounder_mask);
    Tensor x = as_leaf(images);
    Tensor pred = cross_entropy(m.forward(x), labels);
    std::vector<Tensor> params = m.parameters();
    std::vector<Tensor> gtheta = backward(pred, params, /*retain_higher_order=*/true);
    Tensor s = sum_squares(gtheta[0]);
    for (std::size_t p = 1; p < gtheta.size(); ++p) s = add(s, sum_squares(gtheta[p]));
    Tensor gx = backward(s, {x}, /*retain_higher_order=*/true)[0];
    return sum_squares(mul(gx, confounder_mask.detach()));
}

Tensor hint_loss(const model::CnnModel& m, const Tensor& images, const Tensor& reward_mask) {
    check_mask("hint_loss", images, reward_mask);
    const int n = images.dim(0);
    Tensor cam = explainers::grad_cam_graph(m, images);
    Tensor flat = reshape(cam, {n, datasets::kPixels});
    // positive-part max normalization, rows without positive mass stay zero
    Tensor normed = div(flat, expand_cols(rowwise_max_positive(flat), datasets::kPixels));
    Tensor diff = sub(normed, reshape(reward_mask.detach(), {n, datasets::kPixels}));
    return sum_squares(diff);
}

Tensor combined_loss(const Tensor& pred, std::span<const XilLossSpec> specs,
                     std::span<const Tensor> terms) {
    if (specs.size() != terms.size())
        throw ShapeError("combined_loss: " + std::to_string(specs.size()) + " specs but " +
                         std::to_string(terms.size()) + " terms");
    Tensor total = pred;
    for (std::size_t i = 0; i < specs.size(); ++i)
        total = add(total, scale(terms[i], specs[i].effective_lambda()));
    return total;
}

Tensor xil_term(const XilLossSpec& spec, const model::CnnModel& m, const Tensor& images,
                const std::vector<int>& labels, const Tensor& confounder_mask,
                const Tensor& reward_mask) {
    switch (spec.method) {
        case Method::RRR: return rrr_loss(m, images, confounder_mask);
        case Method::RRR_G: return rrr_g_loss(m, images, confounder_mask);
        case Method::RBR: return rbr_loss(m, images, labels, confounder_mask);
        case Method::HINT: return hint_loss(m, images, reward_mask);
    }
    throw ConfigError("xil_term: unhandled method");
}

} // namespace xilab::losses
