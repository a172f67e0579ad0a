#pragma once

#include <atomic>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <vector>

#include "kvl/errors.hpp"

namespace kvl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

// Global element-count accounting for tensor buffers. Used by the attention
// memory-footprint checks to assert that no N x N intermediate is formed.
struct AllocStats {
    static std::size_t live_elems();
    static std::size_t peak_elems();
    static void reset_peak();
    static void add(std::size_t n);
    static void sub(std::size_t n);
};

template <class T>
struct CountingAllocator {
    using value_type = T;

    CountingAllocator() = default;
    template <class U>
    CountingAllocator(const CountingAllocator<U>&) {}

    T* allocate(std::size_t n) {
        T* p = std::allocator<T>().allocate(n);
        AllocStats::add(n);
        return p;
    }
    void deallocate(T* p, std::size_t n) noexcept {
        std::allocator<T>().deallocate(p, n);
        AllocStats::sub(n);
    }
    template <class U>
    bool operator==(const CountingAllocator<U>&) const {
        return true;
    }
};

// Dense row-major f64 tensor. Values are immutable once shared across
// threads; all mutation happens before a tensor is published.
class Tensor {
  public:
    using Buffer = std::vector<double, CountingAllocator<double>>;

    Tensor() : shape_{}, data_(1, 0.0) {}  // rank-0 scalar zero
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
    Tensor(Shape shape, const std::vector<double>& values);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i) { return data_[i]; }
    double operator()(std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // Scalar extraction; ArgError unless the tensor holds exactly one value.
    double item() const;

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    Tensor reshaped(Shape new_shape) const&;
    Tensor reshaped(Shape new_shape) &&;

  private:
    Shape shape_;
    Buffer data_;
};

// Throws NumericError naming `context` if any value is NaN/Inf.
void ensure_finite(const Tensor& t, const char* context);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace kvl
