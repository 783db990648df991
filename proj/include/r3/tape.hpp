#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "r3/kernels.hpp"
#include "r3/tensor.hpp"

namespace r3 {

/// Handle to a value recorded on a Tape.
struct Var {
    std::uint32_t id = 0;
};

/// Reverse-mode tape. Records are appended in evaluation order, so the
/// record list is already topologically sorted. Parameter leaves alias the
/// Parameter's storage; their gradients accumulate into Parameter::grad.
///
/// A tape belongs to one thread and is single-use: build, backward, discard.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    Var param(Parameter& p);
    Var constant(Tensor t);
    Var scalar(double v) { return constant(Tensor::scalar(v)); }

    Var gather_row(Var table, std::size_t id);
    Var gather_rows(Var table, std::vector<std::size_t> ids);
    Var matvec(Var a, Var x, bool transpose = false);
    Var matmul(Var a, Var b, bool transpose_b = false);
    Var outer_product(Var a, Var b);
    Var concat(std::span<const Var> parts);
    Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
    Var conv1d_same(Var h, Var filters, Var bias);
    Var relu(Var x);
    Var masked_softmax(Var x, std::vector<std::uint8_t> mask);
    Var dot(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, double c);
    Var square(Var x);
    Var exp(Var x);
    Var sum(Var x);
    Var mean(Var x);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
    std::size_t size() const { return nodes_.size(); }

    /// Accumulate d(output)/d(leaf) into every trainable Parameter reachable
    /// from `output`. Calling twice without zeroing doubles the gradients.
    void backward(Var output) const;

    /// Re-evaluate every record from its stored inputs; true iff every
    /// recomputed value is bitwise equal to the stored one.
    bool replay_matches() const;

private:
    struct Node {
        OpKind kind = OpKind::Constant;
        std::vector<std::uint32_t> inputs;
        OpAttrs attrs;
        Tensor value;                // unused for parameter leaves
        Parameter* param = nullptr;  // set for parameter leaves
        bool requires_grad = false;
    };

    Var record(OpKind kind, std::vector<std::uint32_t> inputs, OpAttrs attrs);
    void check(Var v) const;

    std::vector<Node> nodes_;
};

/// Test hook: scale the input gradients produced by one primitive's backward
/// rule by `factor`. Used to prove the finite-difference oracle catches bugs.
void set_backward_fault(std::optional<OpKind> kind, double factor = 2.0);

class BackwardFaultScope {
public:
    BackwardFaultScope(OpKind kind, double factor) { set_backward_fault(kind, factor); }
    ~BackwardFaultScope() { set_backward_fault(std::nullopt); }
    BackwardFaultScope(const BackwardFaultScope&) = delete;
    BackwardFaultScope& operator=(const BackwardFaultScope&) = delete;
};

}  // namespace r3
