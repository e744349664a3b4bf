#include "textloc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "textloc/errors.hpp"

namespace textloc {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= kFnvPrime;
    }
    return h;
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                a.shape_str() + " and " + b.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
    throw std::invalid_argument(std::string(op) + ": unsupported shape " + a.shape_str());
}

}  // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::MatMulBT: return "matmul_bt";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::AddRows: return "add_rows";
        case OpKind::AddScalarNode: return "add_scalar_node";
        case OpKind::AddConst: return "add_const";
        case OpKind::MulConst: return "mul_const";
        case OpKind::Relu: return "relu";
        case OpKind::Abs: return "abs";
        case OpKind::Square: return "square";
        case OpKind::Log: return "log";
        case OpKind::Exp: return "exp";
        case OpKind::Softplus: return "softplus";
        case OpKind::Softsign: return "softsign";
        case OpKind::Clamp: return "clamp";
        case OpKind::MaxCols: return "max_cols";
        case OpKind::Concat: return "concat";
        case OpKind::Gather: return "gather";
        case OpKind::Reshape: return "reshape";
        case OpKind::Softmax: return "softmax";
        case OpKind::LogSumExp: return "log_sum_exp";
        case OpKind::Sum: return "sum";
        case OpKind::Dropout: return "dropout";
    }
    return "?";
}

NodeId Graph::push(Node n) {
    for (NodeId in : n.inputs) {
        if (in >= nodes_.size())
            throw std::invalid_argument(std::string(op_name(n.kind)) + ": input node id out of range");
        n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    if (n.kind == OpKind::Leaf) n.requires_grad = n.trainable;
    nodes_.push_back(std::move(n));
    NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    forward_node(id);
    return id;
}

NodeId Graph::leaf(Tensor value, bool trainable, std::string name) {
    if (value.size() == 0) throw std::invalid_argument("leaf: empty tensor");
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.trainable = trainable;
    n.name = std::move(name);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2) || A.cols() != B.shape[0])
        shape_error("matmul", A, B);
    Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {a, b};
    n.value = B.rank() == 2 ? Tensor::zeros({A.rows(), B.cols()}) : Tensor::zeros({A.rows()});
    return push(std::move(n));
}

NodeId Graph::matmul_bt(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
        shape_error("matmul_bt", A, B);
    Node n;
    n.kind = OpKind::MatMulBT;
    n.inputs = {a, b};
    n.value = Tensor::zeros({A.rows(), B.rows()});
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        shape_error("add", nodes_[a].value, nodes_[b].value);
    Node n;
    n.kind = OpKind::Add;
    n.inputs = {a, b};
    n.value = Tensor::zeros(nodes_[a].value.shape);
    return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        shape_error("sub", nodes_[a].value, nodes_[b].value);
    Node n;
    n.kind = OpKind::Sub;
    n.inputs = {a, b};
    n.value = Tensor::zeros(nodes_[a].value.shape);
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        shape_error("mul", nodes_[a].value, nodes_[b].value);
    Node n;
    n.kind = OpKind::Mul;
    n.inputs = {a, b};
    n.value = Tensor::zeros(nodes_[a].value.shape);
    return push(std::move(n));
}

NodeId Graph::add_rows(NodeId matrix, NodeId row) {
    const Tensor& M = nodes_[matrix].value;
    const Tensor& r = nodes_[row].value;
    if (M.rank() != 2 || r.rank() != 1 || M.cols() != r.shape[0])
        shape_error("add_rows", M, r);
    Node n;
    n.kind = OpKind::AddRows;
    n.inputs = {matrix, row};
    n.value = Tensor::zeros(M.shape);
    return push(std::move(n));
}

NodeId Graph::add_scalar_node(NodeId v, NodeId scalar) {
    if (nodes_[scalar].value.size() != 1)
        shape_error("add_scalar_node", nodes_[v].value, nodes_[scalar].value);
    Node n;
    n.kind = OpKind::AddScalarNode;
    n.inputs = {v, scalar};
    n.value = Tensor::zeros(nodes_[v].value.shape);
    return push(std::move(n));
}

NodeId Graph::add_const(NodeId v, double c) {
    Node n;
    n.kind = OpKind::AddConst;
    n.inputs = {v};
    n.a = c;
    n.value = Tensor::zeros(nodes_[v].value.shape);
    return push(std::move(n));
}

NodeId Graph::mul_const(NodeId v, double c) {
    Node n;
    n.kind = OpKind::MulConst;
    n.inputs = {v};
    n.a = c;
    n.value = Tensor::zeros(nodes_[v].value.shape);
    return push(std::move(n));
}

#define TEXTLOC_UNARY_BUILDER(method, kindval)            \
    NodeId Graph::method(NodeId v) {                     \
        Node n;                                          \
        n.kind = kindval;                                \
        n.inputs = {v};                                  \
        n.value = Tensor::zeros(nodes_[v].value.shape);  \
        return push(std::move(n));                       \
    }

TEXTLOC_UNARY_BUILDER(relu, OpKind::Relu)
TEXTLOC_UNARY_BUILDER(abs, OpKind::Abs)
TEXTLOC_UNARY_BUILDER(square, OpKind::Square)
TEXTLOC_UNARY_BUILDER(log, OpKind::Log)
TEXTLOC_UNARY_BUILDER(exp, OpKind::Exp)
TEXTLOC_UNARY_BUILDER(softplus, OpKind::Softplus)
TEXTLOC_UNARY_BUILDER(softsign, OpKind::Softsign)

#undef TEXTLOC_UNARY_BUILDER

NodeId Graph::clamp(NodeId v, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    Node n;
    n.kind = OpKind::Clamp;
    n.inputs = {v};
    n.a = lo;
    n.b = hi;
    n.value = Tensor::zeros(nodes_[v].value.shape);
    return push(std::move(n));
}

NodeId Graph::max_cols(NodeId matrix) {
    const Tensor& M = nodes_[matrix].value;
    if (M.rank() != 2 || M.rows() == 0) shape_error("max_cols", M);
    Node n;
    n.kind = OpKind::MaxCols;
    n.inputs = {matrix};
    n.value = Tensor::zeros({M.cols()});
    n.indices.resize(M.cols());
    return push(std::move(n));
}

NodeId Graph::concat(std::span<const NodeId> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::size_t total = 0;
    for (NodeId p : parts) total += nodes_[p].value.size();
    Node n;
    n.kind = OpKind::Concat;
    n.inputs.assign(parts.begin(), parts.end());
    n.value = Tensor::zeros({total});
    return push(std::move(n));
}

NodeId Graph::gather(NodeId src, std::vector<std::size_t> idx,
                     std::vector<std::size_t> out_shape) {
    const Tensor& S = nodes_[src].value;
    if (Tensor::element_count(out_shape) != idx.size())
        throw std::invalid_argument("gather: output shape does not match index count");
    for (std::size_t i : idx)
        if (i >= S.size())
            throw std::invalid_argument("gather: index " + std::to_string(i) +
                                        " out of range for " + S.shape_str());
    Node n;
    n.kind = OpKind::Gather;
    n.inputs = {src};
    n.indices = std::move(idx);
    n.value = Tensor::zeros(std::move(out_shape));
    return push(std::move(n));
}

NodeId Graph::reshape(NodeId v, std::vector<std::size_t> shape) {
    if (Tensor::element_count(shape) != nodes_[v].value.size())
        shape_error("reshape", nodes_[v].value);
    Node n;
    n.kind = OpKind::Reshape;
    n.inputs = {v};
    n.value = Tensor::zeros(std::move(shape));
    return push(std::move(n));
}

NodeId Graph::softmax(NodeId v) {
    if (nodes_[v].value.rank() != 1) shape_error("softmax", nodes_[v].value);
    Node n;
    n.kind = OpKind::Softmax;
    n.inputs = {v};
    n.value = Tensor::zeros(nodes_[v].value.shape);
    return push(std::move(n));
}

NodeId Graph::log_sum_exp(NodeId v) {
    if (nodes_[v].value.rank() != 1) shape_error("log_sum_exp", nodes_[v].value);
    Node n;
    n.kind = OpKind::LogSumExp;
    n.inputs = {v};
    n.value = Tensor::zeros({1});
    return push(std::move(n));
}

NodeId Graph::sum(NodeId v) {
    Node n;
    n.kind = OpKind::Sum;
    n.inputs = {v};
    n.value = Tensor::zeros({1});
    return push(std::move(n));
}

NodeId Graph::dropout(NodeId v, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!training || rate == 0.0) return v;  // identity in evaluation mode
    Node n;
    n.kind = OpKind::Dropout;
    n.inputs = {v};
    n.a = rate;
    const double keep_scale = 1.0 / (1.0 - rate);
    n.mask.resize(nodes_[v].value.size());
    for (double& m : n.mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
    n.value = Tensor::zeros(nodes_[v].value.shape);
    return push(std::move(n));
}

Tensor& Graph::leaf_value(NodeId id) {
    if (nodes_[id].kind != OpKind::Leaf)
        throw std::invalid_argument("leaf_value: node is not a leaf");
    return nodes_[id].value;
}

std::vector<NodeId> Graph::trainable_leaves() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].kind == OpKind::Leaf && nodes_[i].trainable)
            out.push_back(static_cast<NodeId>(i));
    return out;
}

void Graph::recompute() {
    signature_ = kFnvOffset;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        forward_node(static_cast<NodeId>(i));
}

void Graph::forward_node(NodeId id) {
    Node& n = nodes_[id];
    switch (n.kind) {
        case OpKind::Leaf:
            break;
        case OpKind::MatMul: {
            const Tensor& A = nodes_[n.inputs[0]].value;
            const Tensor& B = nodes_[n.inputs[1]].value;
            const std::size_t r = A.rows(), s = A.cols();
            if (B.rank() == 1) {
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    const double* arow = A.data.data() + i * s;
                    for (std::size_t k = 0; k < s; ++k) acc += arow[k] * B.data[k];
                    n.value[i] = acc;
                }
            } else {
                const std::size_t t = B.cols();
                std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
                for (std::size_t i = 0; i < r; ++i) {
                    const double* arow = A.data.data() + i * s;
                    double* crow = n.value.data.data() + i * t;
                    for (std::size_t k = 0; k < s; ++k) {
                        const double a = arow[k];
                        const double* brow = B.data.data() + k * t;
                        for (std::size_t j = 0; j < t; ++j) crow[j] += a * brow[j];
                    }
                }
            }
            break;
        }
        case OpKind::MatMulBT: {
            const Tensor& A = nodes_[n.inputs[0]].value;
            const Tensor& B = nodes_[n.inputs[1]].value;
            const std::size_t r = A.rows(), s = A.cols(), t = B.rows();
            for (std::size_t i = 0; i < r; ++i) {
                const double* arow = A.data.data() + i * s;
                double* crow = n.value.data.data() + i * t;
                for (std::size_t j = 0; j < t; ++j) {
                    const double* brow = B.data.data() + j * s;
                    double acc = 0.0;
                    for (std::size_t k = 0; k < s; ++k) acc += arow[k] * brow[k];
                    crow[j] = acc;
                }
            }
            break;
        }
        case OpKind::Add: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            const auto& b = nodes_[n.inputs[1]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + b[i];
            break;
        }
        case OpKind::Sub: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            const auto& b = nodes_[n.inputs[1]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] - b[i];
            break;
        }
        case OpKind::Mul: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            const auto& b = nodes_[n.inputs[1]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * b[i];
            break;
        }
        case OpKind::AddRows: {
            const Tensor& M = nodes_[n.inputs[0]].value;
            const Tensor& row = nodes_[n.inputs[1]].value;
            const std::size_t c = M.cols();
            for (std::size_t i = 0; i < M.rows(); ++i)
                for (std::size_t j = 0; j < c; ++j)
                    n.value.data[i * c + j] = M.data[i * c + j] + row.data[j];
            break;
        }
        case OpKind::AddScalarNode: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            const double s = nodes_[n.inputs[1]].value[0];
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + s;
            break;
        }
        case OpKind::AddConst: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + n.a;
            break;
        }
        case OpKind::MulConst: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * n.a;
            break;
        }
        case OpKind::Relu: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            std::uint64_t bits = 0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const bool on = a[i] > 0.0;
                n.value[i] = on ? a[i] : 0.0;
                bits = fnv_mix(bits, on);
            }
            signature_ = fnv_mix(signature_, bits);
            break;
        }
        case OpKind::Abs: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            std::uint64_t bits = 0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                n.value[i] = std::fabs(a[i]);
                bits = fnv_mix(bits, a[i] > 0.0 ? 2u : (a[i] < 0.0 ? 1u : 0u));
            }
            signature_ = fnv_mix(signature_, bits);
            break;
        }
        case OpKind::Square: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * a[i];
            break;
        }
        case OpKind::Log: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::log(a[i]);
            break;
        }
        case OpKind::Exp: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::exp(a[i]);
            break;
        }
        case OpKind::Softplus: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = stable_softplus(a[i]);
            break;
        }
        case OpKind::Softsign: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] / (1.0 + std::fabs(a[i]));
            break;
        }
        case OpKind::Clamp: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            std::uint64_t bits = 0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double x = a[i];
                n.value[i] = x < n.a ? n.a : (x > n.b ? n.b : x);
                bits = fnv_mix(bits, x < n.a ? 0u : (x > n.b ? 2u : 1u));
            }
            signature_ = fnv_mix(signature_, bits);
            break;
        }
        case OpKind::MaxCols: {
            const Tensor& M = nodes_[n.inputs[0]].value;
            const std::size_t r = M.rows(), c = M.cols();
            std::uint64_t bits = 0;
            for (std::size_t j = 0; j < c; ++j) {
                std::size_t best = 0;
                double best_v = M.data[j];
                for (std::size_t i = 1; i < r; ++i) {
                    const double v = M.data[i * c + j];
                    if (v > best_v) {  // first maximal row wins ties
                        best_v = v;
                        best = i;
                    }
                }
                n.value[j] = best_v;
                n.indices[j] = best;
                bits = fnv_mix(bits, best);
            }
            signature_ = fnv_mix(signature_, bits);
            break;
        }
        case OpKind::Concat: {
            std::size_t off = 0;
            for (NodeId in : n.inputs) {
                const auto& src = nodes_[in].value.data;
                std::copy(src.begin(), src.end(), n.value.data.begin() + off);
                off += src.size();
            }
            break;
        }
        case OpKind::Gather: {
            const auto& src = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < n.indices.size(); ++i) n.value[i] = src[n.indices[i]];
            break;
        }
        case OpKind::Reshape: {
            n.value.data = nodes_[n.inputs[0]].value.data;
            break;
        }
        case OpKind::Softmax: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            const double m = *std::max_element(a.begin(), a.end());
            double z = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                n.value[i] = std::exp(a[i] - m);
                z += n.value[i];
            }
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] /= z;
            break;
        }
        case OpKind::LogSumExp: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            const double m = *std::max_element(a.begin(), a.end());
            double z = 0.0;
            for (double v : a) z += std::exp(v - m);
            n.value[0] = m + std::log(z);
            break;
        }
        case OpKind::Sum: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            double acc = 0.0;
            for (double v : a) acc += v;
            n.value[0] = acc;
            break;
        }
        case OpKind::Dropout: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * n.mask[i];
            break;
        }
    }
    for (double v : n.value.data)
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value in forward op ") + op_name(n.kind));
}

Tensor& Graph::grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Graph::backward(NodeId loss) {
    if (loss >= nodes_.size()) throw std::invalid_argument("backward: loss id out of range");
    if (nodes_[loss].value.size() != 1)
        throw std::invalid_argument("backward: loss node is not scalar, shape " +
                                    nodes_[loss].value.shape_str());
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.data.empty() || n.kind == OpKind::Leaf) continue;
        backward_node(static_cast<NodeId>(i));
    }
}

void Graph::backward_node(NodeId id) {
    Node& n = nodes_[id];
    const Tensor& g = n.grad;
    auto want = [&](int slot) { return nodes_[n.inputs[slot]].requires_grad; };
    switch (n.kind) {
        case OpKind::Leaf:
            break;
        case OpKind::MatMul: {
            const Tensor& A = nodes_[n.inputs[0]].value;
            const Tensor& B = nodes_[n.inputs[1]].value;
            const std::size_t r = A.rows(), s = A.cols();
            if (B.rank() == 1) {
                if (want(0)) {
                    Tensor& dA = grad_buffer(n.inputs[0]);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t k = 0; k < s; ++k) dA.data[i * s + k] += g[i] * B.data[k];
                }
                if (want(1)) {
                    Tensor& dB = grad_buffer(n.inputs[1]);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t k = 0; k < s; ++k) dB.data[k] += A.data[i * s + k] * g[i];
                }
            } else {
                const std::size_t t = B.cols();
                if (want(0)) {
                    Tensor& dA = grad_buffer(n.inputs[0]);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t k = 0; k < s; ++k) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < t; ++j)
                                acc += g.data[i * t + j] * B.data[k * t + j];
                            dA.data[i * s + k] += acc;
                        }
                }
                if (want(1)) {
                    Tensor& dB = grad_buffer(n.inputs[1]);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t k = 0; k < s; ++k) {
                            const double a = A.data[i * s + k];
                            for (std::size_t j = 0; j < t; ++j)
                                dB.data[k * t + j] += a * g.data[i * t + j];
                        }
                }
            }
            break;
        }
        case OpKind::MatMulBT: {
            const Tensor& A = nodes_[n.inputs[0]].value;
            const Tensor& B = nodes_[n.inputs[1]].value;
            const std::size_t r = A.rows(), s = A.cols(), t = B.rows();
            if (want(0)) {
                Tensor& dA = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < t; ++j) {
                        const double gij = g.data[i * t + j];
                        if (gij == 0.0) continue;
                        const double* brow = B.data.data() + j * s;
                        double* darow = dA.data.data() + i * s;
                        for (std::size_t k = 0; k < s; ++k) darow[k] += gij * brow[k];
                    }
            }
            if (want(1)) {
                Tensor& dB = grad_buffer(n.inputs[1]);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < t; ++j) {
                        const double gij = g.data[i * t + j];
                        if (gij == 0.0) continue;
                        const double* arow = A.data.data() + i * s;
                        double* dbrow = dB.data.data() + j * s;
                        for (std::size_t k = 0; k < s; ++k) dbrow[k] += gij * arow[k];
                    }
            }
            break;
        }
        case OpKind::Add: {
            for (int slot = 0; slot < 2; ++slot)
                if (want(slot)) {
                    Tensor& d = grad_buffer(n.inputs[slot]);
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                }
            break;
        }
        case OpKind::Sub: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (want(1)) {
                Tensor& d = grad_buffer(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
            }
            break;
        }
        case OpKind::Mul: {
            const auto& a = nodes_[n.inputs[0]].value.data;
            const auto& b = nodes_[n.inputs[1]].value.data;
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b[i];
            }
            if (want(1)) {
                Tensor& d = grad_buffer(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
            }
            break;
        }
        case OpKind::AddRows: {
            const std::size_t c = n.value.cols();
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (want(1)) {
                Tensor& d = grad_buffer(n.inputs[1]);
                for (std::size_t i = 0; i < n.value.rows(); ++i)
                    for (std::size_t j = 0; j < c; ++j) d[j] += g.data[i * c + j];
            }
            break;
        }
        case OpKind::AddScalarNode: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (want(1)) {
                Tensor& d = grad_buffer(n.inputs[1]);
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
                d[0] += acc;
            }
            break;
        }
        case OpKind::AddConst: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            break;
        }
        case OpKind::MulConst: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.a;
            }
            break;
        }
        case OpKind::Relu: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0.0) d[i] += g[i];
            }
            break;
        }
        case OpKind::Abs: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                // subgradient at 0 is 0
                for (std::size_t i = 0; i < g.size(); ++i)
                    d[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
            }
            break;
        }
        case OpKind::Square: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * 2.0 * x[i];
            }
            break;
        }
        case OpKind::Log: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / x[i];
            }
            break;
        }
        case OpKind::Exp: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.value[i];
            }
            break;
        }
        case OpKind::Softplus: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * sigmoid(x[i]);
            }
            break;
        }
        case OpKind::Softsign: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double den = 1.0 + std::fabs(x[i]);
                    d[i] += g[i] / (den * den);
                }
            }
            break;
        }
        case OpKind::Clamp: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] >= n.a && x[i] <= n.b) d[i] += g[i];
            }
            break;
        }
        case OpKind::MaxCols: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                const std::size_t c = n.value.size();
                for (std::size_t j = 0; j < c; ++j) d.data[n.indices[j] * c + j] += g[j];
            }
            break;
        }
        case OpKind::Concat: {
            std::size_t off = 0;
            for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
                const std::size_t len = nodes_[n.inputs[slot]].value.size();
                if (nodes_[n.inputs[slot]].requires_grad) {
                    Tensor& d = grad_buffer(n.inputs[slot]);
                    for (std::size_t i = 0; i < len; ++i) d[i] += g[off + i];
                }
                off += len;
            }
            break;
        }
        case OpKind::Gather: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < n.indices.size(); ++i) d[n.indices[i]] += g[i];
            }
            break;
        }
        case OpKind::Reshape: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            break;
        }
        case OpKind::Softmax: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                double dot = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.value[i];
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += n.value[i] * (g[i] - dot);
            }
            break;
        }
        case OpKind::LogSumExp: {
            if (want(0)) {
                const auto& x = nodes_[n.inputs[0]].value.data;
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < x.size(); ++i)
                    d[i] += g[0] * std::exp(x[i] - n.value[0]);
            }
            break;
        }
        case OpKind::Sum: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
            }
            break;
        }
        case OpKind::Dropout: {
            if (want(0)) {
                Tensor& d = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.mask[i];
            }
            break;
        }
    }
}

GradientCheckReport gradient_check(Graph& g, NodeId loss, double step) {
    if (g.value(loss).size() != 1)
        throw std::invalid_argument("gradient_check: loss node is not scalar");
    g.recompute();
    g.backward(loss);

    GradientCheckReport report;
    for (NodeId leaf : g.trainable_leaves()) {
        const Tensor analytic = g.grad(leaf);  // empty if the leaf is off-path
        Tensor& value = g.leaf_value(leaf);
        GradientCheckGroup group;
        group.name = g.node(leaf).name.empty() ? ("leaf" + std::to_string(leaf))
                                               : g.node(leaf).name;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value[i];
            value[i] = orig + step;
            g.recompute();
            const double f_plus = g.value(loss)[0];
            const std::uint64_t sig_plus = g.signature();
            value[i] = orig - step;
            g.recompute();
            const double f_minus = g.value(loss)[0];
            const std::uint64_t sig_minus = g.signature();
            value[i] = orig;
            if (sig_plus != sig_minus) {
                ++group.skipped;
                continue;
            }
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double a = analytic.data.empty() ? 0.0 : analytic[i];
            const double rel = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
            group.max_rel_error = std::max(group.max_rel_error, rel);
            ++group.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
        report.checked += group.checked;
        report.skipped += group.skipped;
        report.groups.push_back(std::move(group));
    }
    g.recompute();
    return report;
}

}  // namespace textloc
