#include "xilab/tensor.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "xilab/ops.hpp"

namespace xilab::autodiff {

namespace {

// Training allocates and frees large im2col/activation buffers every step.
// Keep them on the heap instead of round-tripping through mmap; this cuts
// minutes of page-fault time per run.
[[maybe_unused]] const bool g_malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();

thread_local std::uint64_t g_next_node_id = 1;
thread_local int g_no_grad_depth = 0;

std::shared_ptr<Node> new_node(const char* op, std::vector<Tensor> parents,
                               std::vector<std::function<Tensor(const Tensor&)>> vjps) {
    auto n = std::make_shared<Node>();
    n->id = g_next_node_id++;
    n->op = op;
    n->parents = std::move(parents);
    n->vjps = std::move(vjps);
    return n;
}

} // namespace

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    Tensor t;
    std::int64_t n = numel_of(shape);
    if (n < 0) throw ShapeError("negative tensor extent in " + shape_str(shape));
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    std::int64_t n = numel_of(shape);
    if (n != static_cast<std::int64_t>(data.size()))
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> data) {
    Tensor t = from_data(std::move(shape), std::move(data));
    t.node_ = new_node("leaf", {}, {});
    return t;
}

double Tensor::item() const {
    if (numel() != 1)
        throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor make_op_output(Shape shape, std::vector<double> data, const char* op,
                      std::vector<Tensor> parents,
                      std::vector<std::function<Tensor(const Tensor&)>> vjps) {
    Tensor t = Tensor::from_data(std::move(shape), std::move(data));
    bool track = grad_enabled();
    if (track) {
        track = false;
        for (const Tensor& p : parents)
            if (p.tracked()) { track = true; break; }
    }
    if (track) t.node_ = new_node(op, std::move(parents), std::move(vjps));
    return t;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

std::vector<Tensor> backward(const Tensor& output, const std::vector<Tensor>& wrt,
                             bool retain_higher_order) {
    if (!output.defined() || output.numel() != 1)
        throw ShapeError("backward requires a scalar output, got " +
                         (output.defined() ? shape_str(output.shape()) : std::string("<empty>")));
    if (!output.tracked())
        throw ShapeError("backward requires a graph-tracked output");

    // Collect the subgraph reachable from the output (its ancestors).
    std::vector<Node*> order;
    {
        std::unordered_set<Node*> seen;
        std::vector<Node*> stack{output.node().get()};
        seen.insert(output.node().get());
        while (!stack.empty()) {
            Node* n = stack.back();
            stack.pop_back();
            order.push_back(n);
            for (const Tensor& p : n->parents) {
                Node* pn = p.node().get();
                if (pn && seen.insert(pn).second) stack.push_back(pn);
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id < b->id; });

    // Mark nodes that lie on a path from some wrt tensor to the output, so
    // VJPs of unrelated parents are never evaluated.
    std::unordered_set<Node*> targets;
    for (const Tensor& w : wrt)
        if (w.tracked()) targets.insert(w.node().get());
    std::unordered_map<Node*, bool> on_path;
    on_path.reserve(order.size());
    for (Node* n : order) {
        bool need = targets.count(n) != 0;
        if (!need) {
            for (const Tensor& p : n->parents) {
                auto it = on_path.find(p.node().get());
                if (it != on_path.end() && it->second) { need = true; break; }
            }
        }
        on_path[n] = need;
    }

    std::unordered_map<Node*, Tensor> grads;
    grads.reserve(order.size());
    grads[output.node().get()] = Tensor::ones(output.shape());

    std::unique_ptr<NoGradGuard> guard;
    if (!retain_higher_order) guard = std::make_unique<NoGradGuard>();

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        auto git = grads.find(n);
        if (git == grads.end()) continue;
        const Tensor g = git->second;
        for (std::size_t i = 0; i < n->parents.size(); ++i) {
            Node* pn = n->parents[i].node().get();
            if (!pn) continue;
            auto pp = on_path.find(pn);
            if (pp == on_path.end() || !pp->second) continue;
            Tensor pg = n->vjps[i](g);
            auto acc = grads.find(pn);
            if (acc == grads.end())
                grads.emplace(pn, std::move(pg));
            else
                acc->second = add(acc->second, pg);
        }
        if (!targets.count(n)) grads.erase(git); // free consumed gradients
    }

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (const Tensor& w : wrt) {
        if (w.tracked()) {
            auto it = grads.find(w.node().get());
            if (it != grads.end()) {
                result.push_back(it->second);
                continue;
            }
        }
        // Unreachable (or untracked) request: zero gradient by contract.
        result.push_back(Tensor::zeros(w.shape()));
    }
    return result;
}

} // namespace xilab::autodiff
