#include "r3/tape.hpp"

#include <atomic>
#include <cstring>
#include <string>

#include "r3/errors.hpp"

namespace r3 {

namespace {

std::atomic<int> g_fault_kind{-1};
std::atomic<double> g_fault_factor{1.0};

double fault_factor(OpKind k) {
    return g_fault_kind.load(std::memory_order_relaxed) == static_cast<int>(k)
               ? g_fault_factor.load(std::memory_order_relaxed)
               : 1.0;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

void set_backward_fault(std::optional<OpKind> kind, double factor) {
    g_fault_factor.store(factor, std::memory_order_relaxed);
    g_fault_kind.store(kind ? static_cast<int>(*kind) : -1, std::memory_order_relaxed);
}

void Tape::check(Var v) const {
    if (v.id >= nodes_.size()) {
        throw ContractError("variable " + std::to_string(v.id) + " is not on this tape (size " +
                            std::to_string(nodes_.size()) + ")");
    }
}

const Tensor& Tape::value(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
}

Var Tape::param(Parameter& p) {
    Node n;
    n.kind = OpKind::Leaf;
    n.param = &p;
    n.requires_grad = p.trainable;
    n.value = Tensor();
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor t) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(OpKind kind, std::vector<std::uint32_t> inputs, OpAttrs attrs) {
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    bool rg = false;
    for (auto id : inputs) {
        check(Var{id});
        in.push_back(&value(Var{id}));
        rg = rg || nodes_[id].requires_grad;
    }
    Tensor out = primitive_forward(kind, in, attrs);
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.attrs = std::move(attrs);
    n.value = std::move(out);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::gather_row(Var table, std::size_t id) {
    OpAttrs a;
    a.ids = {id};
    a.as_vector = true;
    return record(OpKind::GatherRows, {table.id}, std::move(a));
}

Var Tape::gather_rows(Var table, std::vector<std::size_t> ids) {
    OpAttrs a;
    a.ids = std::move(ids);
    return record(OpKind::GatherRows, {table.id}, std::move(a));
}

Var Tape::matvec(Var a, Var x, bool transpose) {
    OpAttrs at;
    at.transpose = transpose;
    return record(OpKind::MatVec, {a.id, x.id}, std::move(at));
}

Var Tape::matmul(Var a, Var b, bool transpose_b) {
    OpAttrs at;
    at.transpose = transpose_b;
    return record(OpKind::MatMul, {a.id, b.id}, std::move(at));
}

Var Tape::outer_product(Var a, Var b) { return record(OpKind::Outer, {a.id, b.id}, {}); }

Var Tape::concat(std::span<const Var> parts) {
    std::vector<std::uint32_t> ids;
    ids.reserve(parts.size());
    for (auto p : parts) ids.push_back(p.id);
    return record(OpKind::Concat, std::move(ids), {});
}

Var Tape::conv1d_same(Var h, Var filters, Var bias) {
    return record(OpKind::Conv1dSame, {h.id, filters.id, bias.id}, {});
}

Var Tape::relu(Var x) { return record(OpKind::Relu, {x.id}, {}); }

Var Tape::masked_softmax(Var x, std::vector<std::uint8_t> mask) {
    OpAttrs a;
    a.mask = std::move(mask);
    return record(OpKind::MaskedSoftmax, {x.id}, std::move(a));
}

Var Tape::dot(Var a, Var b) { return record(OpKind::Dot, {a.id, b.id}, {}); }
Var Tape::add(Var a, Var b) { return record(OpKind::Add, {a.id, b.id}, {}); }
Var Tape::sub(Var a, Var b) { return record(OpKind::Sub, {a.id, b.id}, {}); }
Var Tape::mul(Var a, Var b) { return record(OpKind::Mul, {a.id, b.id}, {}); }

Var Tape::scale(Var x, double c) {
    OpAttrs a;
    a.scalar = c;
    return record(OpKind::Scale, {x.id}, std::move(a));
}

Var Tape::square(Var x) { return record(OpKind::Square, {x.id}, {}); }
Var Tape::exp(Var x) { return record(OpKind::Exp, {x.id}, {}); }
Var Tape::sum(Var x) { return record(OpKind::Sum, {x.id}, {}); }
Var Tape::mean(Var x) { return record(OpKind::Mean, {x.id}, {}); }

void Tape::backward(Var output) const {
    check(output);
    const Tensor& out = value(output);
    if (!out.is_scalar()) throw ContractError("backward: output must be a scalar, got shape " + shape_str(out.shape()));
    if (!nodes_[output.id].requires_grad) return;

    // Each node (parameter leaves included) gets its own buffer for this pass;
    // leaf buffers are folded into Parameter::grad at the end, so a second
    // backward adds exactly the same amount again.
    std::vector<std::optional<Tensor>> grads(output.id + 1);
    grads[output.id] = Tensor::scalar(1.0);

    // Writable gradient buffer for node `id`; empty if it needs no gradient.
    auto sink = [&](std::uint32_t id) -> std::span<double> {
        const Node& n = nodes_[id];
        if (!n.requires_grad) return {};
        if (!grads[id]) grads[id] = Tensor(n.param ? n.param->value.shape() : n.value.shape());
        return grads[id]->data();
    };

    for (std::uint32_t idx = output.id + 1; idx-- > 0;) {
        const Node& n = nodes_[idx];
        if (n.kind == OpKind::Leaf || n.kind == OpKind::Constant || !grads[idx]) continue;
        const auto g = grads[idx]->data();
        const double f = fault_factor(n.kind);
        auto in = [&](std::size_t k) -> const Tensor& { return value(Var{n.inputs[k]}); };

        switch (n.kind) {
            case OpKind::GatherRows: {
                auto d = sink(n.inputs[0]);
                if (d.empty()) break;
                const std::size_t cols = in(0).dim(1);
                for (std::size_t r = 0; r < n.attrs.ids.size(); ++r) {
                    const std::size_t base = n.attrs.ids[r] * cols;
                    for (std::size_t c = 0; c < cols; ++c) d[base + c] += f * g[r * cols + c];
                }
                break;
            }
            case OpKind::MatVec: {
                const Tensor& a = in(0);
                const Tensor& x = in(1);
                const std::size_t m = a.dim(0), cols = a.dim(1);
                auto da = sink(n.inputs[0]);
                auto dx = sink(n.inputs[1]);
                if (!n.attrs.transpose) {
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < cols; ++j) {
                            if (!da.empty()) da[i * cols + j] += f * g[i] * x[j];
                            if (!dx.empty()) dx[j] += f * a[i * cols + j] * g[i];
                        }
                    }
                } else {
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < cols; ++j) {
                            if (!da.empty()) da[i * cols + j] += f * x[i] * g[j];
                            if (!dx.empty()) dx[i] += f * a[i * cols + j] * g[j];
                        }
                    }
                }
                break;
            }
            case OpKind::MatMul: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                const std::size_t m = a.dim(0), k = a.dim(1);
                const bool tb = n.attrs.transpose;
                const std::size_t cols = tb ? b.dim(0) : b.dim(1);
                auto da = sink(n.inputs[0]);
                auto db = sink(n.inputs[1]);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double gij = f * g[i * cols + j];
                        for (std::size_t p = 0; p < k; ++p) {
                            const std::size_t bidx = tb ? j * k + p : p * cols + j;
                            if (!da.empty()) da[i * k + p] += gij * b[bidx];
                            if (!db.empty()) db[bidx] += gij * a[i * k + p];
                        }
                    }
                }
                break;
            }
            case OpKind::Outer: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                auto da = sink(n.inputs[0]);
                auto db = sink(n.inputs[1]);
                const std::size_t m = a.size(), cols = b.size();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double gij = f * g[i * cols + j];
                        if (!da.empty()) da[i] += gij * b[j];
                        if (!db.empty()) db[j] += gij * a[i];
                    }
                }
                break;
            }
            case OpKind::Concat: {
                std::size_t off = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const std::size_t len = in(k).size();
                    auto d = sink(n.inputs[k]);
                    if (!d.empty()) {
                        for (std::size_t i = 0; i < len; ++i) d[i] += f * g[off + i];
                    }
                    off += len;
                }
                break;
            }
            case OpKind::Conv1dSame: {
                const Tensor& h = in(0);
                const Tensor& filt = in(1);
                const std::size_t len = h.dim(0), depth = h.dim(1);
                const std::size_t nf = filt.dim(0), width = filt.dim(1);
                const auto pad = static_cast<std::ptrdiff_t>(width / 2);
                auto dh = sink(n.inputs[0]);
                auto dfilt = sink(n.inputs[1]);
                auto dbias = sink(n.inputs[2]);
                for (std::size_t t = 0; t < len; ++t) {
                    for (std::size_t fi = 0; fi < nf; ++fi) {
                        const double gtf = f * g[t * nf + fi];
                        if (!dbias.empty()) dbias[fi] += gtf;
                        for (std::size_t o = 0; o < width; ++o) {
                            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + o) - pad;
                            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                            const std::size_t hbase = static_cast<std::size_t>(src) * depth;
                            const std::size_t fbase = (fi * width + o) * depth;
                            for (std::size_t d = 0; d < depth; ++d) {
                                if (!dfilt.empty()) dfilt[fbase + d] += gtf * h[hbase + d];
                                if (!dh.empty()) dh[hbase + d] += gtf * filt[fbase + d];
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::Relu: {
                auto d = sink(n.inputs[0]);
                const Tensor& x = in(0);
                if (!d.empty()) {
                    for (std::size_t i = 0; i < x.size(); ++i) d[i] += x[i] > 0.0 ? f * g[i] : 0.0;
                }
                break;
            }
            case OpKind::MaskedSoftmax: {
                auto d = sink(n.inputs[0]);
                if (d.empty()) break;
                const Tensor& y = n.value;
                const auto& mask = n.attrs.mask;
                double inner = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) {
                    if (mask[i]) inner += y[i] * g[i];
                }
                for (std::size_t i = 0; i < y.size(); ++i) {
                    if (mask[i]) d[i] += f * y[i] * (g[i] - inner);
                }
                break;
            }
            case OpKind::Dot: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                auto da = sink(n.inputs[0]);
                auto db = sink(n.inputs[1]);
                const double gs = f * g[0];
                for (std::size_t i = 0; i < a.size(); ++i) {
                    if (!da.empty()) da[i] += gs * b[i];
                    if (!db.empty()) db[i] += gs * a[i];
                }
                break;
            }
            case OpKind::Add:
            case OpKind::Sub: {
                const double sign = n.kind == OpKind::Sub ? -1.0 : 1.0;
                auto da = sink(n.inputs[0]);
                auto db = sink(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (!da.empty()) da[i] += f * g[i];
                    if (!db.empty()) db[i] += sign * f * g[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                auto da = sink(n.inputs[0]);
                auto db = sink(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (!da.empty()) da[i] += f * g[i] * b[i];
                    if (!db.empty()) db[i] += f * g[i] * a[i];
                }
                break;
            }
            case OpKind::Scale: {
                auto d = sink(n.inputs[0]);
                if (!d.empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += f * n.attrs.scalar * g[i];
                }
                break;
            }
            case OpKind::Square: {
                auto d = sink(n.inputs[0]);
                const Tensor& x = in(0);
                if (!d.empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += f * 2.0 * x[i] * g[i];
                }
                break;
            }
            case OpKind::Exp: {
                auto d = sink(n.inputs[0]);
                if (!d.empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += f * n.value[i] * g[i];
                }
                break;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                auto d = sink(n.inputs[0]);
                if (d.empty()) break;
                const double gs =
                    f * (n.kind == OpKind::Mean ? g[0] / static_cast<double>(d.size()) : g[0]);
                for (auto& v : d) v += gs;
                break;
            }
            case OpKind::Leaf:
            case OpKind::Constant:
            case OpKind::Count_: break;
        }
    }

    for (std::uint32_t idx = 0; idx <= output.id; ++idx) {
        const Node& n = nodes_[idx];
        if (!n.param || !grads[idx]) continue;
        auto dst = n.param->grad.data();
        const auto src = grads[idx]->data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

bool Tape::replay_matches() const {
    std::vector<const Tensor*> in;
    for (const Node& n : nodes_) {
        if (n.kind == OpKind::Leaf || n.kind == OpKind::Constant) continue;
        in.clear();
        for (auto id : n.inputs) in.push_back(&value(Var{id}));
        if (!bitwise_equal(primitive_forward(n.kind, in, n.attrs), n.value)) return false;
    }
    return true;
}

}  // namespace r3
