#include "r3/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "r3/errors.hpp"

namespace r3 {

namespace {
std::atomic<bool> g_checked{true};
}

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }
void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }

CheckedModeScope::CheckedModeScope(bool on) : previous_(checked_mode()) { set_checked_mode(on); }
CheckedModeScope::~CheckedModeScope() { set_checked_mode(previous_); }

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

static void validate(const Shape& shape, const std::vector<double>& data) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero dimension");
    }
    if (shape_size(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                         " elements");
    }
    if (checked_mode()) {
        for (double v : data) {
            if (!std::isfinite(v)) throw ContractError("non-finite value in tensor of shape " + shape_str(shape));
        }
    }
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor shape " + shape_str(shape_) + " has a zero dimension");
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate(shape_, data_);
}

Tensor Tensor::vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor(Shape{rows, cols}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(data));
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<const double>(data_).subspan(r * stride, stride);
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<double>(data_).subspan(r * stride, stride);
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Parameter::Parameter(std::string n, Tensor v, bool train)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

}  // namespace r3
