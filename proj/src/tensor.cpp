#include "dsup/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dsup {

std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + std::to_string(e));
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_product(shape_)), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != static_cast<std::int64_t>(data_.size()))
        throw std::invalid_argument("tensor data length does not match shape " + shape_str());
}

Tensor Tensor::uninitialized(std::vector<int> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(static_cast<std::size_t>(shape_product(t.shape_)));
    return t;
}

void Tensor::fill(float v) {
    for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (float x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ')';
    return os.str();
}

} // namespace dsup
