#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace usra {

// All tensor storage is 64-byte aligned. Vector kernels group operations
// by alignment, so consistent alignment keeps repeated runs bit-identical.
// Large blocks recycle through a thread-local pool: training reallocates the
// same sizes every step, and round trips through the kernel would cost page
// faults and zeroing each time.
struct AlignedFree {
    void operator()(float* p) const;
};
using AlignedStorage = std::unique_ptr<float[], AlignedFree>;
AlignedStorage aligned_alloc_floats(std::size_t n);

/// Dense row-major float32 array. Shape extents are positive; data length
/// always equals the product of the extents. Copies are deep; moves are
/// pointer steals.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);
    Tensor(std::vector<int> shape, std::vector<float> data);
    /// Allocates without zero-filling; caller overwrites every element.
    static Tensor uninit(std::vector<int> shape);

    Tensor(const Tensor& other) { *this = other; }
    Tensor& operator=(const Tensor& other);
    Tensor(Tensor&&) noexcept = default;
    Tensor& operator=(Tensor&&) noexcept = default;

    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    static Tensor from(std::initializer_list<float> vals) {
        return Tensor({static_cast<int>(vals.size())}, std::vector<float>(vals));
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    float* data() { return data_.get(); }
    const float* data() const { return data_.get(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Row-major element access; for tests and low-rate paths, not inner loops.
    float& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
    float at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(float v);
    std::vector<float> to_vector() const { return std::vector<float>(data(), data() + size_); }

    std::string shape_str() const;

private:
    std::size_t offset(std::initializer_list<int> idx) const;

    std::vector<int> shape_;
    std::size_t size_ = 0;
    AlignedStorage data_;
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

/// Max |a-b| over all elements; tensors must be shape-aligned.
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace usra
