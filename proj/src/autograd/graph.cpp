#include "pifi/autograd/graph.hpp"

#include <cmath>

#include "pifi/autograd/rng.hpp"

namespace pifi {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::constant: return "constant";
        case OpKind::leaf: return "leaf";
        case OpKind::param: return "param";
        case OpKind::matmul: return "matmul";
        case OpKind::linear: return "linear";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::softmax: return "softmax";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::rms_norm: return "rms_norm";
        case OpKind::gelu: return "gelu";
        case OpKind::silu: return "silu";
        case OpKind::tanh: return "tanh";
        case OpKind::embedding: return "embedding";
        case OpKind::gather_rows: return "gather_rows";
        case OpKind::masked_mean: return "masked_mean";
        case OpKind::attention: return "attention";
        case OpKind::rope: return "rope";
        case OpKind::dropout: return "dropout";
        case OpKind::reshape: return "reshape";
        case OpKind::sum: return "sum";
        case OpKind::cross_entropy: return "cross_entropy";
    }
    return "?";
}

template <typename T>
const Shape& Var<T>::shape() const {
    return graph->shape(id);
}

template <typename T>
std::span<const T> Var<T>::value() const {
    return graph->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
    return graph->requires_grad(id);
}

template <typename T>
Tensor<T> Var<T>::tensor() const {
    auto v = value();
    return Tensor<T>(shape(), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
std::span<const T> Graph<T>::value(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.external) return {n.external, n.external_size};
    return n.storage;
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.op = OpKind::constant;
    n.shape = value.shape();
    n.storage = value.vec();
    nodes_.push_back(std::move(n));
    return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.op = OpKind::leaf;
    n.shape = value.shape();
    n.storage = value.vec();
    n.requires_grad = grad_enabled_ && requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::param(const Parameter<T>& p, std::string_view name) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.op = OpKind::param;
    n.shape = p.value.shape();
    n.external = p.value.data().data();
    n.external_size = p.value.numel();
    n.requires_grad = grad_enabled_ && p.trainable;
    n.name = std::string(name);
    nodes_.push_back(std::move(n));
    const auto id = static_cast<NodeId>(nodes_.size() - 1);
    param_nodes_.emplace(&p, id);
    return {this, id};
}

template <typename T>
Var<T> Graph<T>::emplace(OpKind op, std::vector<NodeId> inputs, Shape shape, std::vector<T> value,
                         BackwardFn backward) {
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.storage = std::move(value);
    if (grad_enabled_) {
        for (auto in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
        if (n.requires_grad) n.backward = std::move(backward);
    }
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

template <typename T>
std::span<T> Graph<T>::grad_acc(NodeId id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(shape_numel(n.shape), T{0});
    return n.grad;
}

template <typename T>
GradientMap<T> Graph<T>::backward(Var<T> loss) {
    if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
    if (shape_numel(shape(loss.id)) != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(shape(loss.id)));
    GradientMap<T> out;
    if (!nodes_[loss.id].requires_grad) return out;

    grad_acc(loss.id)[0] = T{1};
    for (NodeId i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
    }
    for (NodeId i = 0; i <= loss.id; ++i) {
        Node& n = nodes_[i];
        if ((n.op == OpKind::leaf || n.op == OpKind::param) && n.requires_grad && !n.grad.empty())
            out.emplace(i, Tensor<T>(n.shape, n.grad));
    }
    return out;
}

template <typename T>
std::unordered_map<std::string, Tensor<T>> Graph<T>::named(const GradientMap<T>& grads) const {
    std::unordered_map<std::string, Tensor<T>> out;
    for (const auto& [id, g] : grads)
        if (nodes_[id].op == OpKind::param) out.emplace(nodes_[id].name, g);
    return out;
}

std::size_t Rng::categorical(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (r < weights[i]) return i;
        r -= weights[i];
    }
    return weights.size() - 1;
}

double Rng::normal() {
    // Box-Muller; discards the second variate to keep the stream position simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template class Graph<float>;
template class Graph<double>;
template struct Var<float>;
template struct Var<double>;

}  // namespace pifi
