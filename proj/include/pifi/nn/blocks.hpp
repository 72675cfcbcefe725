#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pifi/autograd/ops.hpp"
#include "pifi/nn/config.hpp"

namespace pifi::nn {

// Resolves parameter names against a store and binds them into a graph under
// a model-global name. `store_prefix` is prepended when looking up the store,
// `name_prefix` when naming the graph leaf.
template <typename T>
class ParamView {
public:
    ParamView(Graph<T>& graph, const ParamStore<T>& store, std::string name_prefix = {}, std::string store_prefix = {})
        : graph_(&graph), store_(&store), name_prefix_(std::move(name_prefix)), store_prefix_(std::move(store_prefix)) {}

    Var<T> operator()(std::string_view local) const {
        const std::string key = store_prefix_ + std::string(local);
        return graph_->param(store_->at(key), name_prefix_ + key);
    }
    bool has(std::string_view local) const { return store_->contains(store_prefix_ + std::string(local)); }
    ParamView sub(std::string_view prefix) const {
        return ParamView(*graph_, *store_, name_prefix_, store_prefix_ + std::string(prefix));
    }
    Graph<T>& graph() const { return *graph_; }

private:
    Graph<T>* graph_;
    const ParamStore<T>* store_;
    std::string name_prefix_;
    std::string store_prefix_;
};

// Training flag plus a dropout key stream. Each dropout site draws a fresh key.
struct ForwardContext {
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    std::uint64_t next_key() { return seed * 0x9e3779b97f4a7c15ULL + (++counter); }
};

// Positions 0..n-1.
std::vector<std::size_t> iota_positions(std::size_t n);

template <typename T>
Var<T> attention_forward(Var<T> x_q, Var<T> x_kv, const BoolMask* mask, const AttentionConfig& cfg,
                         const ParamView<T>& params);

template <typename T>
Var<T> donor_block_forward(Var<T> x, const BlockConfig& cfg, const ParamView<T>& params, const BoolMask* mask = nullptr);

template <typename T>
Var<T> slm_block_forward(Var<T> x, const BlockConfig& cfg, const ParamView<T>& params, const BoolMask* mask,
                         ForwardContext& ctx);

// Post-LN decoder block: self-attention (causal), cross-attention over `memory`, FFN.
template <typename T>
Var<T> decoder_block_forward(Var<T> x, Var<T> memory, const BlockConfig& cfg, const ParamView<T>& params,
                             const BoolMask* self_mask, const BoolMask* memory_mask, ForwardContext& ctx);

// Dispatches on cfg.style.
template <typename T>
Var<T> block_forward(Var<T> x, const BlockConfig& cfg, const ParamView<T>& params, const BoolMask* mask,
                     ForwardContext& ctx);

}  // namespace pifi::nn
