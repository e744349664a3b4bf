#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "textloc/rng.hpp"
#include "textloc/tensor.hpp"

namespace textloc {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
    Leaf,
    MatMul,         // [r x s] * [s x t] -> [r x t], or [r x s] * [s] -> [r]
    MatMulBT,       // [r x s] * [t x s] -> [r x t]  (second operand transposed)
    Add,
    Sub,
    Mul,
    AddRows,        // [r x c] + [c], broadcast over rows
    AddScalarNode,  // [n] + scalar node, broadcast
    AddConst,
    MulConst,
    Relu,
    Abs,
    Square,
    Log,
    Exp,
    Softplus,
    Softsign,
    Clamp,
    MaxCols,        // column-wise max: [r x c] -> [c]
    Concat,
    Gather,         // element gather from flattened input
    Reshape,
    Softmax,        // 1-D
    LogSumExp,      // 1-D -> scalar
    Sum,            // all elements -> scalar
    Dropout,        // multiply by stored mask
};

const char* op_name(OpKind kind);

struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;  // allocated during backward
    bool trainable = false;
    bool requires_grad = false;
    std::string name;                     // leaves only
    double a = 0.0;                       // scalar payload / clamp lo / dropout rate
    double b = 0.0;                       // clamp hi
    std::vector<std::size_t> indices;     // gather targets, max-col argmax rows
    std::vector<double> mask;             // dropout
};

// Reverse-mode autodiff over a topologically ordered node list. Nodes are
// appended and evaluated eagerly; backward walks the list in reverse. One
// graph instance is single-threaded; independent graphs share nothing.
class Graph {
public:
    NodeId leaf(Tensor value, bool trainable, std::string name = "");
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_bt(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId add_rows(NodeId matrix, NodeId row);
    NodeId add_scalar_node(NodeId v, NodeId scalar);
    NodeId add_const(NodeId v, double c);
    NodeId mul_const(NodeId v, double c);
    NodeId relu(NodeId v);
    NodeId abs(NodeId v);
    NodeId square(NodeId v);
    NodeId log(NodeId v);
    NodeId exp(NodeId v);
    NodeId softplus(NodeId v);
    NodeId softsign(NodeId v);
    NodeId clamp(NodeId v, double lo, double hi);
    NodeId max_cols(NodeId matrix);
    NodeId concat(std::span<const NodeId> parts);
    NodeId gather(NodeId src, std::vector<std::size_t> idx,
                  std::vector<std::size_t> out_shape);
    NodeId reshape(NodeId v, std::vector<std::size_t> shape);
    NodeId softmax(NodeId v);
    NodeId log_sum_exp(NodeId v);
    NodeId sum(NodeId v);
    // Identity when !training or rate == 0; otherwise multiplies by a mask of
    // 0 and 1/(1-rate) entries sampled once at construction. The same mask is
    // reused by recompute() and backward().
    NodeId dropout(NodeId v, double rate, Rng& rng, bool training);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
    const Node& node(NodeId id) const { return nodes_[id]; }
    std::size_t node_count() const { return nodes_.size(); }

    // Direct access for optimizers and the finite-difference harness. The
    // caller must recompute() after mutating a leaf value.
    Tensor& leaf_value(NodeId id);

    std::vector<NodeId> trainable_leaves() const;

    // Re-run every forward computation in topological order.
    void recompute();

    // Hash of all branch decisions (ReLU/abs signs, clamp regions, argmax
    // rows) taken during the last forward evaluation. Two evaluations with a
    // different signature straddle a nondifferentiable point.
    std::uint64_t signature() const { return signature_; }

    // Populate grad() of every node that requires grad with d loss / d node.
    // The loss node must hold exactly one element.
    void backward(NodeId loss);

private:
    NodeId push(Node n);
    void forward_node(NodeId id);
    void backward_node(NodeId id);
    Tensor& grad_buffer(NodeId id);

    std::vector<Node> nodes_;
    std::uint64_t signature_ = 1469598103934665603ull;  // FNV-1a offset basis
};

struct GradientCheckGroup {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

struct GradientCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates at nondifferentiable points
    std::vector<GradientCheckGroup> groups;
};

// Central finite differences against backward() for every trainable leaf
// coordinate. Relative error uses |analytic - numeric| / max(1, |analytic|).
// A coordinate whose +step/-step evaluations take different branches (sign
// flip through an abs/ReLU kink, argmax change) sits on a nondifferentiable
// point and is excluded from the maximum, mirroring the l1 subgradient
// convention. The graph is restored to its original state on return.
GradientCheckReport gradient_check(Graph& g, NodeId loss, double step = 1e-5);

}  // namespace textloc
