#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dsup {

// Dense row-major float32 array. The unit of all numeric computation and of
// gradient flow; reductions that need extra headroom accumulate in double.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, float fill);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    // Contents unspecified; for buffers that are fully overwritten.
    static Tensor uninitialized(std::vector<int> shape);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-D accessors (batch, channel, height, width).
    std::int64_t index4(int b, int c, int h, int w) const {
        return ((static_cast<std::int64_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }
    float& at4(int b, int c, int h, int w) { return data_[static_cast<std::size_t>(index4(b, c, h, w))]; }
    float at4(int b, int c, int h, int w) const { return data_[static_cast<std::size_t>(index4(b, c, h, w))]; }

    std::int64_t index2(int r, int c) const { return static_cast<std::int64_t>(r) * shape_[1] + c; }
    float& at2(int r, int c) { return data_[static_cast<std::size_t>(index2(r, c))]; }
    float at2(int r, int c) const { return data_[static_cast<std::size_t>(index2(r, c))]; }

    void fill(float v);
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::int64_t shape_product(const std::vector<int>& shape);

} // namespace dsup
