#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "tkil/tensor.hpp"

namespace tkil::ad {

// Reverse-mode autodiff over Tensor values. Backward functions are themselves
// composed of these ops, so backward(create_graph=true) yields gradients that
// are differentiable again. That second-order path is what lets the gradient
// tangent-kernel term backpropagate through an inner gradient.
class Node;
using NodePtr = std::shared_ptr<Node>;
// Maps the upstream gradient to one gradient per parent; entries where
// `needed` is false may be left null to skip dead work.
using VjpFn =
    std::function<std::vector<NodePtr>(const NodePtr& upstream, const std::vector<bool>& needed)>;

class Node {
public:
    Tensor value;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    VjpFn vjp;            // produces one grad per parent (nullptr where not needed)
    const char* op = "leaf";

    int64_t numel() const { return value.numel(); }
    const std::vector<int>& shape() const { return value.shape; }
};

// While a guard is alive, new ops record no parents and no vjp.
// Used for plain evaluation and for first-order backward passes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

NodePtr constant(Tensor v);
NodePtr constant_scalar(double v);
NodePtr leaf(Tensor v); // trainable input, requires_grad = true

// elementwise, shapes must match
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr div(const NodePtr& a, const NodePtr& b); // single-rounding quotient
NodePtr neg(const NodePtr& a);

// scalar-constant variants
NodePtr smul(const NodePtr& a, double c);
NodePtr sadd(const NodePtr& a, double c);

// unary
NodePtr relu(const NodePtr& a);
NodePtr tanh_op(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
NodePtr log_op(const NodePtr& a);
NodePtr exp_op(const NodePtr& a);
NodePtr sqrt_op(const NodePtr& a);
NodePtr softplus(const NodePtr& a); // log(1 + e^x), numerically stable
NodePtr reciprocal(const NodePtr& a);
NodePtr clamp(const NodePtr& a, double lo, double hi);

// linear algebra / structure
NodePtr matmul(const NodePtr& a, const NodePtr& b); // [m,k]x[k,n]
NodePtr transpose(const NodePtr& a);                // 2-d
NodePtr reshape(const NodePtr& a, std::vector<int> shape);
NodePtr sum(const NodePtr& a);                      // -> scalar
NodePtr mean(const NodePtr& a);
NodePtr expand(const NodePtr& scalar, std::vector<int> shape);
NodePtr colsum(const NodePtr& a);                   // [m,n] -> [n]
NodePtr repeat_rows(const NodePtr& a, int m);       // [n] -> [m,n]
NodePtr add_rows(const NodePtr& a, const NodePtr& bias); // a[m,n] + bias[n]

// out[i] = idx[i] >= 0 ? a.flat[idx[i]] : 0. The map is held by shared_ptr so
// gather and its scatter adjoint can reuse it without copying.
using IndexMap = std::shared_ptr<const std::vector<int64_t>>;
NodePtr gather(const NodePtr& a, IndexMap idx, std::vector<int> out_shape);
NodePtr scatter(const NodePtr& a, IndexMap idx, std::vector<int> out_shape);

NodePtr slice_cols(const NodePtr& a, int c0, int c1); // [m,n] -> [m,c1-c0]
NodePtr dot(const NodePtr& a, const NodePtr& b);      // sum(a*b), same numel

using GradMap = std::unordered_map<const Node*, NodePtr>;

// Gradient of scalar `root` with respect to every requires-grad node that can
// reach one of `wanted` (all leaves when `wanted` is empty). With
// create_graph=true the returned gradients are graph nodes differentiable in
// the original leaves.
GradMap backward(const NodePtr& root, const std::vector<NodePtr>& wanted, bool create_graph);
inline GradMap backward(const NodePtr& root, bool create_graph = false) {
    return backward(root, {}, create_graph);
}

// grad from map, or zeros shaped like `node` when nothing flowed to it
NodePtr grad_of(const GradMap& g, const NodePtr& node);

} // namespace tkil::ad
