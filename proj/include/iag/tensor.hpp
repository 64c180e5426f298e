#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor<T> is a shared handle to a graph node. Ops (see ops.hpp) produce
// new nodes and, while gradients are enabled and any input requires them,
// record a backward closure. backward() walks the recorded graph once in
// reverse topological order and then consumes it.
//
// T is float for training and double for finite-difference checks.

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "iag/common.hpp"

namespace iag {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {
// Gradient recording is process-global; training runs are single-threaded.
inline bool& grad_mode() {
    static bool enabled = true;
    return enabled;
}
// Finite checks on every op output. On by default; the trainer keeps them on
// and aborts the step on the first non-finite value.
inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}
}  // namespace detail

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
};

inline bool grad_enabled() { return detail::grad_mode(); }
inline void set_finite_checks(bool on) { detail::finite_checks() = on; }
inline bool finite_checks_enabled() { return detail::finite_checks(); }

template <class T>
struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // same size as val once touched by backward
    bool req_grad = false;
    bool consumed = false;
    const char* op = "leaf";
    std::string name;  // parameters only
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backfn;

    int64_t numel() const { return (int64_t)val.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(val.size(), T(0));
    }
};

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }
    static Tensor filled(Shape shape, T value, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->val.assign((size_t)shape_numel(shape), value);
        n->shape = std::move(shape);
        n->req_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check((int64_t)data.size() == shape_numel(shape),
              "tensor data length " + std::to_string(data.size()) + " != numel of " + shape_str(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->val = std::move(data);
        n->req_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[(size_t)i]; }
    int rank() const { return (int)node_->shape.size(); }
    int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->req_grad; }
    Tensor& set_requires_grad(bool rg) {
        node_->req_grad = rg;
        return *this;
    }
    const std::string& name() const { return node_->name; }
    Tensor& set_name(std::string n) {
        node_->name = std::move(n);
        return *this;
    }

    std::vector<T>& values() { return node_->val; }
    const std::vector<T>& values() const { return node_->val; }
    T* data() { return node_->val.data(); }
    const T* data() const { return node_->val.data(); }
    T item() const {
        check(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
        return node_->val[0];
    }

    // Zero-length vector means "never touched by backward" (treated as zeros).
    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad_mut() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    std::shared_ptr<Node<T>> node() const { return node_; }
    Node<T>& raw() { return *node_; }
    const Node<T>& raw() const { return *node_; }

    bool same_node(const Tensor& o) const { return node_ == o.node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

template <class T>
void check_finite(const Node<T>& n) {
    if (!finite_checks_enabled()) return;
    for (T v : n.val) {
        if (!std::isfinite(v))
            throw runtime_fault(std::string("non-finite value produced by op '") + n.op + "'");
    }
}

// Builds an op node. The backward closure receives the node itself and is
// responsible for accumulating into parents[i]->grad (already allocated for
// parents that require grad).
template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> val, std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backfn) {
    auto n = std::make_shared<Node<T>>();
    n->op = op;
    n->shape = std::move(shape);
    n->val = std::move(val);
    check((int64_t)n->val.size() == shape_numel(n->shape), std::string("op '") + op + "' output size mismatch");
    check_finite(*n);
    bool track = grad_enabled();
    bool any_rg = false;
    if (track) {
        for (const auto& in : inputs) any_rg = any_rg || in.requires_grad();
    }
    if (track && any_rg) {
        n->req_grad = true;
        n->parents.reserve(inputs.size());
        for (auto& in : inputs) n->parents.push_back(in.node());
        n->backfn = std::move(backfn);
    }
    return Tensor<T>(n);
}

// Reverse-mode sweep from a scalar loss. Visits each recorded node exactly
// once in reverse topological order, then releases the graph edges so the
// same graph cannot be re-walked.
template <class T>
void backward(Tensor<T> loss) {
    check(loss.defined() && loss.numel() == 1, "backward() requires a scalar loss");
    Node<T>* root = loss.node().get();
    if (root->consumed) throw runtime_fault("backward(): graph already consumed");
    if (!root->req_grad) {
        root->consumed = true;
        return;  // nothing reachable requires grad; all gradients stay zero
    }

    // Iterative post-order DFS. The order list holds owning pointers so
    // interior nodes survive while edges are released during the sweep.
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> visited;
    struct Frame {
        std::shared_ptr<Node<T>> n;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node(), 0});
    visited.insert(root);
    // Children are descended last-to-first so the reverse sweep visits
    // parents[0]'s subtree first; gradient accumulation then matches
    // left-to-right evaluation and backward stays exactly linear over
    // sums of independent losses.
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.n->parents.size()) {
            size_t idx = f.n->parents.size() - 1 - f.next_child;
            ++f.next_child;
            const auto& c = f.n->parents[idx];
            if (c->req_grad && !visited.count(c.get())) {
                visited.insert(c.get());
                stack.push_back({c, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = it->get();
        if (!n->backfn) continue;
        for (auto& p : n->parents) {
            if (p->req_grad) p->ensure_grad();
        }
        n->backfn(*n);
        n->backfn = nullptr;
        n->parents.clear();
    }
    root->consumed = true;
}

// Cuts the graph: output shares values but records no parents.
template <class T>
Tensor<T> detach(const Tensor<T>& x) {
    auto n = std::make_shared<Node<T>>();
    n->shape = x.shape();
    n->val = x.values();
    n->op = "detach";
    return Tensor<T>(n);
}

}  // namespace iag
