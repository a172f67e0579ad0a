#include "kvl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace kvl {

namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

std::size_t AllocStats::live_elems() { return g_live.load(std::memory_order_relaxed); }
std::size_t AllocStats::peak_elems() { return g_peak.load(std::memory_order_relaxed); }

void AllocStats::reset_peak() { g_peak.store(g_live.load(std::memory_order_relaxed), std::memory_order_relaxed); }

void AllocStats::add(std::size_t n) {
    std::size_t cur = g_live.fetch_add(n, std::memory_order_relaxed) + n;
    std::size_t peak = g_peak.load(std::memory_order_relaxed);
    while (cur > peak && !g_peak.compare_exchange_weak(peak, cur, std::memory_order_relaxed)) {
    }
}

void AllocStats::sub(std::size_t n) { g_live.fetch_sub(n, std::memory_order_relaxed); }

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ArgError("tensor dimensions must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, const std::vector<double>& values) : shape_(std::move(shape)) {
    std::size_t n = shape_numel(shape_);
    if (values.size() != n) {
        throw ArgError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape_));
    }
    data_.assign(values.begin(), values.end());
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw ArgError("item() requires a single-element tensor, got shape " + shape_str(shape_));
    return data_[0];
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(Shape new_shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(new_shape));
}

Tensor Tensor::reshaped(Shape new_shape) && {
    if (shape_numel(new_shape) != size()) {
        throw DimError("reshape from " + shape_str(shape_) + " to " + shape_str(new_shape) +
                       " changes element count");
    }
    shape_ = std::move(new_shape);
    return std::move(*this);
}

void ensure_finite(const Tensor& t, const char* context) {
    if (!t.all_finite()) {
        throw NumericError(std::string(context) + ": non-finite value in tensor of shape " + shape_str(t.shape()));
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace kvl
