#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "r3/tensor.hpp"

namespace r3 {

enum class OpKind : std::uint8_t {
    Leaf,
    Constant,
    GatherRows,
    MatVec,
    MatMul,
    Outer,
    Concat,
    Conv1dSame,
    Relu,
    MaskedSoftmax,
    Dot,
    Add,
    Sub,
    Mul,
    Scale,
    Square,
    Exp,
    Sum,
    Mean,
    Count_
};

inline constexpr std::size_t kOpKindCount = static_cast<std::size_t>(OpKind::Count_);

std::string_view op_name(OpKind kind);

/// Non-tensor arguments of a primitive.
struct OpAttrs {
    double scalar = 1.0;                 // Scale factor
    bool transpose = false;              // MatVec: A^T x.  MatMul: A B^T.
    bool as_vector = false;              // GatherRows with a single id yields a K-vector
    std::vector<std::uint8_t> mask;      // MaskedSoftmax: 1 = valid position
    std::vector<std::size_t> ids;        // GatherRows
};

/// Process-wide count of primitive evaluations, per kind. Used to prove
/// that a code path never touches a given primitive.
std::uint64_t primitive_calls(OpKind kind);
std::array<std::uint64_t, kOpKindCount> primitive_call_snapshot();
void reset_primitive_calls();

namespace kernels {

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids, bool as_vector);
Tensor matvec(const Tensor& a, const Tensor& x, bool transpose = false);
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor outer_product(const Tensor& a, const Tensor& b);
Tensor concat(std::span<const Tensor* const> parts);
/// H: L x D, filters: F x w x D, bias: F. Zero padding of w/2 rows on both ends; output L x F.
Tensor conv1d_same(const Tensor& h, const Tensor& filters, const Tensor& bias);
Tensor relu(const Tensor& x);
/// Softmax over positions with mask[i] != 0; masked positions are exactly 0.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace kernels

/// Generic dispatcher over the primitive set; the tape replays through it.
Tensor primitive_forward(OpKind kind, std::span<const Tensor* const> inputs, const OpAttrs& attrs = {});

}  // namespace r3
