#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pifi/autograd/tensor.hpp"

namespace pifi {

// Role of a parameter tensor; drives initialization.
enum class ParamRole : std::uint8_t { weight, bias, gain };

// Name, shape and role of one parameter, without storage.
struct ParamSpec {
    std::string name;
    Shape shape;
    ParamRole role = ParamRole::weight;
};

using ParamLayout = std::vector<ParamSpec>;

std::size_t layout_numel(const ParamLayout& layout);

template <typename T>
struct Parameter {
    Tensor<T> value;
    bool trainable = true;
};

// Insertion-ordered map of named parameters for one module. The unit of
// freezing, counting, saving and extraction.
template <typename T>
class ParamStore {
public:
    using Entry = std::pair<std::string, Parameter<T>>;

    ParamStore() = default;

    Parameter<T>& add(std::string name, Tensor<T> value, bool trainable = true);

    bool contains(std::string_view name) const;
    const Parameter<T>& at(std::string_view name) const;
    Parameter<T>& at(std::string_view name);
    const Tensor<T>& value(std::string_view name) const { return at(name).value; }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t numel() const;
    std::size_t trainable_numel() const;

    void set_trainable(bool trainable);

    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, p] : entries_) out.add(name, p.value.template cast<U>(), p.trainable);
        return out;
    }

    bool operator==(const ParamStore& other) const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// A parameter reached through a model, under its model-global name.
template <typename T>
struct NamedParam {
    std::string name;
    Parameter<T>* param = nullptr;
};

// Bytewise FNV-1a over all parameter payloads, in order. Used to prove frozen
// tensors are untouched.
template <typename T>
std::uint64_t params_hash(const std::vector<NamedParam<T>>& params);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace pifi
