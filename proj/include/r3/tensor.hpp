#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace r3 {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Checked mode validates shapes and rejects NaN/Inf when tensors are built.
/// On by default; benchmarks switch it off.
bool checked_mode();
void set_checked_mode(bool on);

/// RAII toggle for checked mode.
class CheckedModeScope {
public:
    explicit CheckedModeScope(bool on);
    ~CheckedModeScope();
    CheckedModeScope(const CheckedModeScope&) = delete;
    CheckedModeScope& operator=(const CheckedModeScope&) = delete;

private:
    bool previous_;
};

/// Dense row-major array of doubles. A shape of {} is a scalar.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    /// Contiguous view of row r of a rank-2 (or higher) tensor.
    std::span<const double> row(std::size_t r) const;
    std::span<double> row(std::size_t r);

    bool is_scalar() const { return shape_.empty(); }
    double item() const;

    void fill(double v);
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// A trainable (or frozen) tensor with its gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name, Tensor v, bool trainable = true);

    void zero_grad() { grad.fill(0.0); }
};

}  // namespace r3
