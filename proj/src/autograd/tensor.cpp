#include "pifi/autograd/tensor.hpp"

#include <numeric>

namespace pifi {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T{0}) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
    if (shape_numel(shape_) != data_.size())
        throw DimensionError("shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                             " elements, got " + std::to_string(data_.size()));
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace pifi
