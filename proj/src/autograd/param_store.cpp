#include "pifi/autograd/param_store.hpp"

#include <cstring>

#include "pifi/autograd/rng.hpp"

namespace pifi {

std::size_t layout_numel(const ParamLayout& layout) {
    std::size_t n = 0;
    for (const auto& spec : layout) n += shape_numel(spec.shape);
    return n;
}

template <typename T>
Parameter<T>& ParamStore<T>::add(std::string name, Tensor<T> value, bool trainable) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), Parameter<T>{std::move(value), trainable});
    return entries_.back().second;
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
    return index_.contains(std::string(name));
}

template <typename T>
const Parameter<T>& ParamStore<T>::at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("missing parameter: " + std::string(name));
    return entries_[it->second].second;
}

template <typename T>
Parameter<T>& ParamStore<T>::at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("missing parameter: " + std::string(name));
    return entries_[it->second].second;
}

template <typename T>
std::size_t ParamStore<T>::numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.value.numel();
    return n;
}

template <typename T>
std::size_t ParamStore<T>::trainable_numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.second.trainable) n += e.second.value.numel();
    return n;
}

template <typename T>
void ParamStore<T>::set_trainable(bool trainable) {
    for (auto& e : entries_) e.second.trainable = trainable;
}

template <typename T>
bool ParamStore<T>::operator==(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& [na, pa] = entries_[i];
        const auto& [nb, pb] = other.entries_[i];
        if (na != nb || pa.trainable != pb.trainable || !(pa.value == pb.value)) return false;
    }
    return true;
}

template <typename T>
std::uint64_t params_hash(const std::vector<NamedParam<T>>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& np : params) {
        h = fnv1a64(np.name, h);
        const auto data = np.param->value.data();
        const std::string_view bytes(reinterpret_cast<const char*>(data.data()), data.size_bytes());
        h = fnv1a64(bytes, h);
    }
    return h;
}

template class ParamStore<float>;
template class ParamStore<double>;
template std::uint64_t params_hash(const std::vector<NamedParam<float>>&);
template std::uint64_t params_hash(const std::vector<NamedParam<double>>&);

}  // namespace pifi
