#include "usra/tensor.hpp"

#include <cmath>
#include <unordered_map>
#include <cstdlib>
#include <sstream>

#include "usra/error.hpp"

namespace usra {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) raise(ErrorKind::logic, "tensor extent must be positive, got " + shape_to_string(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

namespace {

// every block carries a 64-byte header holding its full size, so release can
// route it back into the right size bucket
constexpr std::size_t kHeader = 64;
constexpr std::size_t kPoolMinBytes = 1 << 20;
constexpr std::size_t kPoolCapBytes = 512u << 20;

struct BlockPool {
    std::unordered_map<std::size_t, std::vector<void*>> buckets;
    std::size_t cached = 0;

    ~BlockPool() {
        for (auto& [size, list] : buckets)
            for (void* p : list) std::free(p);
    }
};

BlockPool& block_pool() {
    static thread_local BlockPool pool;
    return pool;
}

}  // namespace

AlignedStorage aligned_alloc_floats(std::size_t n) {
    const std::size_t bytes = ((n * sizeof(float) + 63) / 64) * 64 + kHeader;
    BlockPool& pool = block_pool();
    void* base = nullptr;
    auto it = pool.buckets.find(bytes);
    if (it != pool.buckets.end() && !it->second.empty()) {
        base = it->second.back();
        it->second.pop_back();
        pool.cached -= bytes;
    } else {
        base = std::aligned_alloc(64, bytes);
        if (!base) throw std::bad_alloc();
        *static_cast<std::size_t*>(base) = bytes;
    }
    return AlignedStorage(reinterpret_cast<float*>(static_cast<char*>(base) + kHeader));
}

void AlignedFree::operator()(float* p) const {
    if (!p) return;
    void* base = static_cast<char*>(static_cast<void*>(p)) - kHeader;
    const std::size_t bytes = *static_cast<std::size_t*>(base);
    BlockPool& pool = block_pool();
    if (bytes >= kPoolMinBytes && pool.cached + bytes <= kPoolCapBytes) {
        pool.buckets[bytes].push_back(base);
        pool.cached += bytes;
    } else {
        std::free(base);
    }
}

Tensor Tensor::uninit(std::vector<int> shape) {
    Tensor t;
    t.size_ = shape_numel(shape);
    t.shape_ = std::move(shape);
    t.data_ = aligned_alloc_floats(t.size_);
    return t;
}

Tensor::Tensor(std::vector<int> shape, float fill_value) {
    *this = uninit(std::move(shape));
    fill(fill_value);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) {
    *this = uninit(std::move(shape));
    if (size_ != data.size())
        raise(ErrorKind::logic,
              "tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str());
    std::memcpy(data_.get(), data.data(), size_ * sizeof(float));
}

Tensor& Tensor::operator=(const Tensor& other) {
    if (this == &other) return *this;
    if (size_ != other.size_) data_ = aligned_alloc_floats(other.size_);
    shape_ = other.shape_;
    size_ = other.size_;
    if (size_) std::memcpy(data_.get(), other.data_.get(), size_ * sizeof(float));
    return *this;
}

std::size_t Tensor::offset(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
        raise(ErrorKind::logic, "index rank " + std::to_string(idx.size()) + " vs tensor " + shape_str());
    std::size_t off = 0;
    int d = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape_[static_cast<size_t>(d)])
            raise(ErrorKind::logic, "index out of range for " + shape_str());
        off = off * static_cast<std::size_t>(shape_[static_cast<size_t>(d)]) + static_cast<std::size_t>(i);
        ++d;
    }
    return off;
}

bool Tensor::all_finite() const {
    for (std::size_t i = 0; i < size_; ++i)
        if (!std::isfinite(data_[i])) return false;
    return true;
}

void Tensor::fill(float v) {
    for (std::size_t i = 0; i < size_; ++i) data_[i] = v;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        raise(ErrorKind::logic, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace usra
