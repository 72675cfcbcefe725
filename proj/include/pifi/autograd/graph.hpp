#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pifi/autograd/param_store.hpp"
#include "pifi/autograd/tensor.hpp"

namespace pifi {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
    constant,
    leaf,
    param,
    matmul,
    linear,
    add,
    mul,
    scale,
    softmax,
    layer_norm,
    rms_norm,
    gelu,
    silu,
    tanh,
    embedding,
    gather_rows,
    masked_mean,
    attention,
    rope,
    dropout,
    reshape,
    sum,
    cross_entropy,
};

const char* op_name(OpKind op);

template <typename T>
class Graph;

// Handle to one node of a graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    NodeId id = 0;

    const Shape& shape() const;
    std::span<const T> value() const;
    std::size_t numel() const { return value().size(); }
    bool requires_grad() const;
    Tensor<T> tensor() const;
};

template <typename T>
using GradientMap = std::unordered_map<NodeId, Tensor<T>>;

// Append-only tape of operation records. Nodes are topologically ordered by
// construction; backward walks them once in reverse. A graph built with
// grad_enabled == false records values only.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, NodeId)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var<T> constant(Tensor<T> value);
    Var<T> leaf(Tensor<T> value, bool requires_grad);
    // Leaf viewing the parameter's buffer. The parameter must outlive the graph.
    // Repeated calls for the same parameter return the same node.
    Var<T> param(const Parameter<T>& p, std::string_view name);

    const Shape& shape(NodeId id) const { return nodes_[id].shape; }
    std::span<const T> value(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    OpKind op(NodeId id) const { return nodes_[id].op; }
    const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }
    const std::string& param_name(NodeId id) const { return nodes_[id].name; }
    bool has_grad_buffer(NodeId id) const { return !nodes_[id].grad.empty(); }

    // Gradients for every requires_grad leaf reachable from `loss`.
    GradientMap<T> backward(Var<T> loss);

    // Gradients re-keyed by parameter name (param leaves only).
    std::unordered_map<std::string, Tensor<T>> named(const GradientMap<T>& grads) const;

    // --- op-implementation interface ---
    Var<T> emplace(OpKind op, std::vector<NodeId> inputs, Shape shape, std::vector<T> value, BackwardFn backward);
    // Gradient accumulator for `id`; allocated on first use. Empty when the
    // node does not require grad, so frozen tensors never own a buffer.
    std::span<T> grad_acc(NodeId id);
    std::span<const T> grad(NodeId id) const { return nodes_[id].grad; }

private:
    struct Node {
        OpKind op = OpKind::constant;
        std::vector<NodeId> inputs;
        Shape shape;
        std::vector<T> storage;
        const T* external = nullptr;
        std::size_t external_size = 0;
        std::vector<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
        std::string name;
    };

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<T>*, NodeId> param_nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template struct Var<float>;
extern template struct Var<double>;

}  // namespace pifi
