#include "r3/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "r3/errors.hpp"

namespace r3 {

namespace {

std::array<std::atomic<std::uint64_t>, kOpKindCount> g_calls{};

void count(OpKind k) { g_calls[static_cast<std::size_t>(k)].fetch_add(1, std::memory_order_relaxed); }

[[noreturn]] void shape_fail(OpKind k, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op_name(k)) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_fail(OpKind k, const Shape& a) {
    throw ShapeError(std::string(op_name(k)) + ": invalid input shape " + shape_str(a));
}

Tensor make(Shape s, std::vector<double> d) { return Tensor(std::move(s), std::move(d)); }

}  // namespace

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::MatVec: return "matvec";
        case OpKind::MatMul: return "matmul";
        case OpKind::Outer: return "outer_product";
        case OpKind::Concat: return "concat";
        case OpKind::Conv1dSame: return "conv1d_same";
        case OpKind::Relu: return "relu";
        case OpKind::MaskedSoftmax: return "masked_softmax";
        case OpKind::Dot: return "dot";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Square: return "square";
        case OpKind::Exp: return "exp";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Count_: break;
    }
    return "?";
}

std::uint64_t primitive_calls(OpKind kind) {
    return g_calls[static_cast<std::size_t>(kind)].load(std::memory_order_relaxed);
}

std::array<std::uint64_t, kOpKindCount> primitive_call_snapshot() {
    std::array<std::uint64_t, kOpKindCount> out{};
    for (std::size_t i = 0; i < kOpKindCount; ++i) out[i] = g_calls[i].load(std::memory_order_relaxed);
    return out;
}

void reset_primitive_calls() {
    for (auto& c : g_calls) c.store(0, std::memory_order_relaxed);
}

namespace kernels {

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids, bool as_vector) {
    count(OpKind::GatherRows);
    if (table.rank() != 2) shape_fail(OpKind::GatherRows, table.shape());
    if (ids.empty() || (as_vector && ids.size() != 1)) {
        throw ShapeError("gather_rows: expected " + std::string(as_vector ? "exactly one id" : "at least one id") +
                         ", got " + std::to_string(ids.size()));
    }
    const std::size_t rows = table.dim(0), cols = table.dim(1);
    std::vector<double> out;
    out.reserve(ids.size() * cols);
    for (auto id : ids) {
        if (id >= rows) {
            throw LookupError("gather_rows: id " + std::to_string(id) + " out of range for table with " +
                              std::to_string(rows) + " rows");
        }
        auto r = table.row(id);
        out.insert(out.end(), r.begin(), r.end());
    }
    if (as_vector) return make(Shape{cols}, std::move(out));
    return make(Shape{ids.size(), cols}, std::move(out));
}

Tensor matvec(const Tensor& a, const Tensor& x, bool transpose) {
    count(OpKind::MatVec);
    if (a.rank() != 2 || x.rank() != 1) shape_fail(OpKind::MatVec, a.shape(), x.shape());
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (!transpose) {
        if (x.size() != n) shape_fail(OpKind::MatVec, a.shape(), x.shape());
        std::vector<double> y(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * x[j];
            y[i] = acc;
        }
        return make(Shape{m}, std::move(y));
    }
    if (x.size() != m) shape_fail(OpKind::MatVec, a.shape(), x.shape());
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double xi = x[i];
        for (std::size_t j = 0; j < n; ++j) y[j] += a[i * n + j] * xi;
    }
    return make(Shape{n}, std::move(y));
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    count(OpKind::MatMul);
    if (a.rank() != 2 || b.rank() != 2) shape_fail(OpKind::MatMul, a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1);
    const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
    const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
    if (bk != k) shape_fail(OpKind::MatMul, a.shape(), b.shape());
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            if (transpose_b) {
                for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            } else {
                for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    return make(Shape{m, n}, std::move(c));
}

Tensor outer_product(const Tensor& a, const Tensor& b) {
    count(OpKind::Outer);
    if (a.rank() != 1 || b.rank() != 1) shape_fail(OpKind::Outer, a.shape(), b.shape());
    const std::size_t m = a.size(), n = b.size();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i] * b[j];
    return make(Shape{m, n}, std::move(out));
}

Tensor concat(std::span<const Tensor* const> parts) {
    count(OpKind::Concat);
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::vector<double> out;
    std::size_t total = 0;
    for (const auto* p : parts) total += p->size();
    out.reserve(total);
    for (const auto* p : parts) out.insert(out.end(), p->values().begin(), p->values().end());
    return make(Shape{total}, std::move(out));
}

Tensor conv1d_same(const Tensor& h, const Tensor& filters, const Tensor& bias) {
    count(OpKind::Conv1dSame);
    if (h.rank() != 2 || filters.rank() != 3) shape_fail(OpKind::Conv1dSame, h.shape(), filters.shape());
    const std::size_t len = h.dim(0), depth = h.dim(1);
    const std::size_t nf = filters.dim(0), width = filters.dim(1);
    if (filters.dim(2) != depth) shape_fail(OpKind::Conv1dSame, h.shape(), filters.shape());
    if (width % 2 == 0) throw ShapeError("conv1d_same: filter width must be odd, got " + std::to_string(width));
    if (bias.size() != nf || bias.rank() != 1) shape_fail(OpKind::Conv1dSame, filters.shape(), bias.shape());
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(width / 2);
    std::vector<double> out(len * nf);
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t f = 0; f < nf; ++f) {
            double acc = bias[f];
            for (std::size_t o = 0; o < width; ++o) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(o) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                const double* hrow = h.data().data() + static_cast<std::size_t>(src) * depth;
                const double* frow = filters.data().data() + (f * width + o) * depth;
                for (std::size_t d = 0; d < depth; ++d) acc += hrow[d] * frow[d];
            }
            out[t * nf + f] = acc;
        }
    }
    return make(Shape{len, nf}, std::move(out));
}

Tensor relu(const Tensor& x) {
    count(OpKind::Relu);
    std::vector<double> out(x.values());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return make(x.shape(), std::move(out));
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
    count(OpKind::MaskedSoftmax);
    if (x.rank() != 1) shape_fail(OpKind::MaskedSoftmax, x.shape());
    const std::size_t n = x.size();
    if (mask.size() != n) {
        throw ShapeError("masked_softmax: mask length " + std::to_string(mask.size()) + " vs input " +
                         shape_str(x.shape()));
    }
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) {
            mx = std::max(mx, x[i]);
            any = true;
        }
    }
    if (!any) throw ContractError("masked_softmax: every position is masked");
    std::vector<double> out(n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        out[i] = std::exp(x[i] - mx);
        z += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) out[i] /= z;
    }
    return make(x.shape(), std::move(out));
}

Tensor dot(const Tensor& a, const Tensor& b) {
    count(OpKind::Dot);
    if (a.size() != b.size() || a.rank() != 1 || b.rank() != 1) shape_fail(OpKind::Dot, a.shape(), b.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return make(Shape{}, {acc});
}

namespace {
template <class F>
Tensor binary(OpKind k, const Tensor& a, const Tensor& b, F f) {
    count(k);
    if (a.shape() != b.shape()) shape_fail(k, a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return make(a.shape(), std::move(out));
}

template <class F>
Tensor unary(OpKind k, const Tensor& x, F f) {
    count(k);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return make(x.shape(), std::move(out));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(OpKind::Add, a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(OpKind::Sub, a, b, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(OpKind::Mul, a, b, [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& x, double c) {
    return unary(OpKind::Scale, x, [c](double v) { return v * c; });
}
Tensor square(const Tensor& x) {
    return unary(OpKind::Square, x, [](double v) { return v * v; });
}
Tensor exp(const Tensor& x) {
    return unary(OpKind::Exp, x, [](double v) { return std::exp(v); });
}

Tensor sum(const Tensor& x) {
    count(OpKind::Sum);
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make(Shape{}, {acc});
}

Tensor mean(const Tensor& x) {
    count(OpKind::Mean);
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make(Shape{}, {acc / static_cast<double>(x.size())});
}

}  // namespace kernels

Tensor primitive_forward(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& attrs) {
    auto need = [&](std::size_t n) {
        if (in.size() != n) {
            throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(in.size()));
        }
    };
    switch (kind) {
        case OpKind::GatherRows: need(1); return kernels::gather_rows(*in[0], attrs.ids, attrs.as_vector);
        case OpKind::MatVec: need(2); return kernels::matvec(*in[0], *in[1], attrs.transpose);
        case OpKind::MatMul: need(2); return kernels::matmul(*in[0], *in[1], attrs.transpose);
        case OpKind::Outer: need(2); return kernels::outer_product(*in[0], *in[1]);
        case OpKind::Concat: return kernels::concat(in);
        case OpKind::Conv1dSame: need(3); return kernels::conv1d_same(*in[0], *in[1], *in[2]);
        case OpKind::Relu: need(1); return kernels::relu(*in[0]);
        case OpKind::MaskedSoftmax: need(1); return kernels::masked_softmax(*in[0], attrs.mask);
        case OpKind::Dot: need(2); return kernels::dot(*in[0], *in[1]);
        case OpKind::Add: need(2); return kernels::add(*in[0], *in[1]);
        case OpKind::Sub: need(2); return kernels::sub(*in[0], *in[1]);
        case OpKind::Mul: need(2); return kernels::mul(*in[0], *in[1]);
        case OpKind::Scale: need(1); return kernels::scale(*in[0], attrs.scalar);
        case OpKind::Square: need(1); return kernels::square(*in[0]);
        case OpKind::Exp: need(1); return kernels::exp(*in[0]);
        case OpKind::Sum: need(1); return kernels::sum(*in[0]);
        case OpKind::Mean: need(1); return kernels::mean(*in[0]);
        case OpKind::Leaf:
        case OpKind::Constant:
        case OpKind::Count_: break;
    }
    throw ContractError("primitive_forward: " + std::string(op_name(kind)) + " is not a primitive");
}

}  // namespace r3
