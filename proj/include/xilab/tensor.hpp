#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xilab/errors.hpp"

namespace xilab::autodiff {

using Shape = std::vector<int>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

/// Dense row-major float64 tensor. Copies share storage; ops never mutate
/// their inputs. A tensor participates in the active computation graph
/// when it carries a node (leaves and op outputs under grad mode).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);

    /// Differentiable leaf: a graph node with no parents. Gradients are
    /// collected for leaves (and any interior tensor) passed to backward().
    static Tensor leaf(Shape shape, std::vector<double> data);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    std::span<double> values() { return {data_->data(), data_->size()}; }
    std::span<const double> values() const { return {data_->data(), data_->size()}; }
    double item() const;

    bool tracked() const { return node_ != nullptr; }
    const std::shared_ptr<Node>& node() const { return node_; }

    /// Same storage, detached from the graph.
    Tensor detach() const;
    /// Deep copy of the storage, detached from the graph.
    Tensor clone() const;

    bool all_finite() const;

private:
    friend Tensor make_op_output(Shape shape, std::vector<double> data, const char* op,
                                 std::vector<Tensor> parents,
                                 std::vector<std::function<Tensor(const Tensor&)>> vjps);

    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<Node> node_;
};

/// One recorded operation. `id` is the creation order: parents always have
/// smaller ids than their children, so sorting by id yields a topological
/// order even after backward passes extend the graph (higher-order mode).
struct Node {
    std::uint64_t id = 0;
    const char* op = "";
    std::vector<Tensor> parents;
    // One VJP per parent so backward can skip parents outside the requested
    // differentiation paths. Empty for leaves.
    std::vector<std::function<Tensor(const Tensor&)>> vjps;
};

/// Internal op-output factory: records a node when grad mode is on and any
/// parent is tracked. `vjps[i]` maps the output gradient to parent i's.
Tensor make_op_output(Shape shape, std::vector<double> data, const char* op,
                      std::vector<Tensor> parents,
                      std::vector<std::function<Tensor(const Tensor&)>> vjps);

/// While alive, newly created op outputs do not record graph nodes.
/// Nestable; thread-local.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

/// Reverse-mode pass from a scalar `output` to each tensor in `wrt`.
/// Returns one gradient per requested tensor, in order. Tensors not
/// reachable from the output (or untracked) get zeros. With
/// `retain_higher_order` the returned gradients are themselves graph
/// tensors, so a second backward through them is valid.
std::vector<Tensor> backward(const Tensor& output, const std::vector<Tensor>& wrt,
                             bool retain_higher_order = false);

} // namespace xilab::autodiff
