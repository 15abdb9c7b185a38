#include "attnseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "gemm.hpp"

namespace attnseg {

int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    for (int64_t e : impl->shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(impl->shape));
    }
    impl->data.assign(static_cast<size_t>(numel_of(impl->shape)), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) {
    return from_data({1}, {value});
}

const std::vector<double>& Tensor::grad() const {
    if (!impl_->has_grad()) throw ContractError("tensor has no gradient buffer");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_->has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
    if (static_cast<int64_t>(index.size()) != rank()) {
        throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
    }
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : index) {
        off = off * impl_->shape[k] + i;
        ++k;
    }
    return impl_->data[static_cast<size_t>(off)];
}

Tensor Tensor::detach() const {
    return Tensor::from_data(shape(), data(), false);
}

// ---- Tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward requires a loss produced on an active tape");
    }
    loss.impl()->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void record_output(Tensor& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    Tape::active()->record(std::move(fn));
}

// ---- broadcasting machinery ----

struct BroadcastPlan {
    Shape out_shape;
    std::vector<int64_t> stride_a; // aligned to out rank, 0 on broadcast axes
    std::vector<int64_t> stride_b;
};

std::vector<int64_t> contiguous_strides(const Shape& shape) {
    std::vector<int64_t> s(shape.size(), 1);
    for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i) {
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i + 1)] * shape[static_cast<size_t>(i + 1)];
    }
    return s;
}

BroadcastPlan make_broadcast_plan(const char* op, const Shape& a, const Shape& b) {
    const size_t rank = std::max(a.size(), b.size());
    BroadcastPlan plan;
    plan.out_shape.assign(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        const int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                 shape_str(b) + " are not broadcast-compatible");
        }
        plan.out_shape[i] = std::max(ea, eb);
    }
    const auto sa = contiguous_strides(a);
    const auto sb = contiguous_strides(b);
    plan.stride_a.assign(rank, 0);
    plan.stride_b.assign(rank, 0);
    for (size_t i = 0; i < rank; ++i) {
        if (i >= rank - a.size()) {
            const size_t j = i - (rank - a.size());
            plan.stride_a[i] = (a[j] == 1 && plan.out_shape[i] != 1) ? 0 : sa[j];
        }
        if (i >= rank - b.size()) {
            const size_t j = i - (rank - b.size());
            plan.stride_b[i] = (b[j] == 1 && plan.out_shape[i] != 1) ? 0 : sb[j];
        }
    }
    return plan;
}

// Calls fn(flat_out, off_a, off_b) for every output element in row-major order.
template <class Fn>
void walk_broadcast(const BroadcastPlan& plan, Fn&& fn) {
    const size_t rank = plan.out_shape.size();
    const int64_t total = numel_of(plan.out_shape);
    if (rank == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<int64_t> idx(rank, 0);
    int64_t off_a = 0, off_b = 0;
    for (int64_t flat = 0; flat < total; ++flat) {
        fn(flat, off_a, off_b);
        for (int64_t axis = static_cast<int64_t>(rank) - 1; axis >= 0; --axis) {
            const size_t ax = static_cast<size_t>(axis);
            off_a += plan.stride_a[ax];
            off_b += plan.stride_b[ax];
            if (++idx[ax] < plan.out_shape[ax]) break;
            off_a -= plan.stride_a[ax] * plan.out_shape[ax];
            off_b -= plan.stride_b[ax] * plan.out_shape[ax];
            idx[ax] = 0;
        }
    }
}

enum class BinaryKind { Add, Mul, Div };

Tensor binary_broadcast(BinaryKind kind, const char* name, const Tensor& a, const Tensor& b) {
    const bool same_shape = a.shape() == b.shape();
    BroadcastPlan plan;
    Tensor out;
    if (same_shape) {
        const auto& av = a.data();
        const auto& bv = b.data();
        std::vector<double> ov(av.size());
        switch (kind) {
            case BinaryKind::Add:
                for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
                break;
            case BinaryKind::Mul:
                for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
                break;
            case BinaryKind::Div:
                for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / bv[i];
                break;
        }
        out = Tensor::from_data(a.shape(), std::move(ov));
    } else {
        plan = make_broadcast_plan(name, a.shape(), b.shape());
        out = Tensor::zeros(plan.out_shape);
        const auto& av = a.data();
        const auto& bv = b.data();
        auto& ov = out.data();
        switch (kind) {
            case BinaryKind::Add:
                walk_broadcast(plan, [&](int64_t o, int64_t ia, int64_t ib) { ov[o] = av[ia] + bv[ib]; });
                break;
            case BinaryKind::Mul:
                walk_broadcast(plan, [&](int64_t o, int64_t ia, int64_t ib) { ov[o] = av[ia] * bv[ib]; });
                break;
            case BinaryKind::Div:
                walk_broadcast(plan, [&](int64_t o, int64_t ia, int64_t ib) { ov[o] = av[ia] / bv[ib]; });
                break;
        }
    }

    if (should_record({&a, &b})) {
        Tensor ta = a, tb = b, to = out;
        record_output(out, [kind, same_shape, plan, ta, tb, to]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.impl()->grad;
            const auto& av = ta.data();
            const auto& bv = tb.data();
            const bool need_a = ta.requires_grad();
            const bool need_b = tb.requires_grad();
            double* ga = need_a ? ta.grad().data() : nullptr;
            double* gb = need_b ? tb.grad().data() : nullptr;
            auto accum = [&](int64_t o, int64_t ia, int64_t ib) {
                switch (kind) {
                    case BinaryKind::Add:
                        if (ga) ga[ia] += g[o];
                        if (gb) gb[ib] += g[o];
                        break;
                    case BinaryKind::Mul:
                        if (ga) ga[ia] += g[o] * bv[ib];
                        if (gb) gb[ib] += g[o] * av[ia];
                        break;
                    case BinaryKind::Div:
                        if (ga) ga[ia] += g[o] / bv[ib];
                        if (gb) gb[ib] -= g[o] * av[ia] / (bv[ib] * bv[ib]);
                        break;
                }
            };
            if (same_shape) {
                for (int64_t i = 0; i < static_cast<int64_t>(g.size()); ++i) accum(i, i, i);
            } else {
                walk_broadcast(plan, accum);
            }
        });
    }
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast(BinaryKind::Add, "add", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_broadcast(BinaryKind::Mul, "mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_broadcast(BinaryKind::Div, "div", a, b); }

Tensor affine(const Tensor& x, double scale, double shift) {
    const auto& xv = x.data();
    std::vector<double> ov(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = scale * xv[i] + shift;
    Tensor out = Tensor::from_data(x.shape(), std::move(ov));
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [scale, tx, to]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
    if (should_record({&a, &b})) {
        Tensor ta = a, tb = b, to = out;
        record_output(out, [m, n, k, ta, tb, to]() mutable {
            if (!to.has_grad()) return;
            const double* g = to.impl()->grad.data();
            if (ta.requires_grad()) {
                detail::gemm_nt(m, k, n, g, tb.data().data(), ta.grad().data());
            }
            if (tb.requires_grad()) {
                detail::gemm_tn(k, n, m, ta.data().data(), g, tb.grad().data());
            }
        });
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose2d requires rank-2 input, got " + shape_str(a.shape()));
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const auto& av = a.data();
    auto& ov = out.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
    }
    if (should_record({&a})) {
        Tensor ta = a, to = out;
        record_output(out, [m, n, ta, to]() mutable {
            if (!to.has_grad() || !ta.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& ga = ta.grad();
            for (int64_t j = 0; j < n; ++j) {
                for (int64_t i = 0; i < m; ++i) ga[i * n + j] += g[j * m + i];
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out = Tensor::from_data(std::move(shape), x.data());
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int64_t axis) {
    if (xs.empty()) throw ContractError("concat requires at least one input");
    const int64_t rank = xs[0].rank();
    if (axis < 0 || axis >= rank) throw DimensionError("concat: axis out of range");
    Shape out_shape = xs[0].shape();
    for (size_t i = 1; i < xs.size(); ++i) {
        const Shape& s = xs[i].shape();
        if (static_cast<int64_t>(s.size()) != rank) {
            throw DimensionError("concat: rank mismatch between " + shape_str(xs[0].shape()) + " and " +
                                 shape_str(s));
        }
        for (int64_t d = 0; d < rank; ++d) {
            if (d == axis) continue;
            if (s[static_cast<size_t>(d)] != out_shape[static_cast<size_t>(d)]) {
                throw DimensionError("concat: extent mismatch between " + shape_str(xs[0].shape()) +
                                     " and " + shape_str(s) + " outside axis " + std::to_string(axis));
            }
        }
        out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
    }

    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
    for (int64_t d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<size_t>(d)];

    Tensor out = Tensor::zeros(out_shape);
    auto& ov = out.data();
    const int64_t out_row = out_shape[static_cast<size_t>(axis)] * inner;
    int64_t col_off = 0;
    for (const Tensor& x : xs) {
        const int64_t rows = x.dim(axis) * inner;
        const auto& xv = x.data();
        for (int64_t o = 0; o < outer; ++o) {
            std::copy_n(xv.begin() + o * rows, rows, ov.begin() + o * out_row + col_off);
        }
        col_off += rows;
    }

    bool any_grad = false;
    for (const Tensor& x : xs) any_grad = any_grad || x.requires_grad();
    if (Tape::active() && any_grad) {
        std::vector<Tensor> inputs = xs;
        Tensor to = out;
        record_output(out, [inputs, to, outer, out_row]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.impl()->grad;
            int64_t off = 0;
            for (Tensor x : inputs) {
                const int64_t rows = x.numel() / outer; // axis extent × inner
                if (x.requires_grad()) {
                    auto& gx = x.grad();
                    for (int64_t o = 0; o < outer; ++o) {
                        const double* src = g.data() + o * out_row + off;
                        double* dst = gx.data() + o * rows;
                        for (int64_t i = 0; i < rows; ++i) dst[i] += src[i];
                    }
                }
                off += rows;
            }
        });
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_channels requires at least one input");
    return concat(xs, xs[0].rank() == 4 ? 1 : 0);
}

Tensor select0(const Tensor& x, int64_t index) {
    if (x.rank() < 1 || index < 0 || index >= x.dim(0)) {
        throw DimensionError("select0: index " + std::to_string(index) + " out of range for " +
                             shape_str(x.shape()));
    }
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    if (out_shape.empty()) out_shape.push_back(1);
    const int64_t block = numel_of(out_shape);
    std::vector<double> ov(x.data().begin() + index * block, x.data().begin() + (index + 1) * block);
    Tensor out = Tensor::from_data(out_shape, std::move(ov));
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to, index, block]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (int64_t i = 0; i < block; ++i) gx[index * block + i] += g[i];
        });
    }
    return out;
}

Tensor stack0(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("stack0 requires at least one input");
    const Shape& inner = xs[0].shape();
    for (const Tensor& x : xs) {
        if (x.shape() != inner) {
            throw DimensionError("stack0: shape mismatch between " + shape_str(inner) + " and " +
                                 shape_str(x.shape()));
        }
    }
    Shape out_shape;
    out_shape.push_back(static_cast<int64_t>(xs.size()));
    out_shape.insert(out_shape.end(), inner.begin(), inner.end());
    Tensor out = Tensor::zeros(out_shape);
    const int64_t block = numel_of(inner);
    for (size_t i = 0; i < xs.size(); ++i) {
        std::copy_n(xs[i].data().begin(), block, out.data().begin() + static_cast<int64_t>(i) * block);
    }
    bool any_grad = false;
    for (const Tensor& x : xs) any_grad = any_grad || x.requires_grad();
    if (Tape::active() && any_grad) {
        std::vector<Tensor> inputs = xs;
        Tensor to = out;
        record_output(out, [inputs, to, block]() mutable {
            if (!to.has_grad()) return;
            const auto& g = to.impl()->grad;
            for (size_t i = 0; i < inputs.size(); ++i) {
                Tensor x = inputs[i];
                if (!x.requires_grad()) continue;
                auto& gx = x.grad();
                const double* src = g.data() + static_cast<int64_t>(i) * block;
                for (int64_t j = 0; j < block; ++j) gx[j] += src[j];
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    const auto& xv = x.data();
    std::vector<double> ov(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    Tensor out = Tensor::from_data(x.shape(), std::move(ov));
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            const auto& xv2 = tx.data();
            auto& gx = tx.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                if (xv2[i] > 0.0) gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    const auto& xv = x.data();
    std::vector<double> ov(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        // branch keeps exp() argument non-positive so large |v| cannot overflow
        ov[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    Tensor out = Tensor::from_data(x.shape(), std::move(ov));
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            const auto& y = to.data();
            auto& gx = tx.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

namespace {

// softmax over contiguous stretches of length `len`, `count` of them
void softmax_stretches(const double* x, double* y, int64_t count, int64_t len) {
    for (int64_t r = 0; r < count; ++r) {
        const double* row = x + r * len;
        double* out = y + r * len;
        double mx = row[0];
        for (int64_t i = 1; i < len; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < len; ++i) {
            out[i] = std::exp(row[i] - mx);
            sum += out[i];
        }
        for (int64_t i = 0; i < len; ++i) out[i] /= sum;
    }
}

void softmax_stretches_backward(const double* y, const double* g, double* gx, int64_t count, int64_t len) {
    for (int64_t r = 0; r < count; ++r) {
        const double* yr = y + r * len;
        const double* gr = g + r * len;
        double* gxr = gx + r * len;
        double dot = 0.0;
        for (int64_t i = 0; i < len; ++i) dot += gr[i] * yr[i];
        for (int64_t i = 0; i < len; ++i) gxr[i] += yr[i] * (gr[i] - dot);
    }
}

} // namespace

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("softmax_rows requires rank-2 input, got " + shape_str(x.shape()));
    const int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out = Tensor::zeros(x.shape());
    softmax_stretches(x.data().data(), out.data().data(), rows, cols);
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to, rows, cols]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            softmax_stretches_backward(to.data().data(), to.impl()->grad.data(), tx.grad().data(), rows, cols);
        });
    }
    return out;
}

Tensor softmax_channels(const Tensor& x) {
    if (x.rank() != 4) {
        throw DimensionError("softmax_channels requires N×C×H×W input, got " + shape_str(x.shape()));
    }
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    // gather each pixel's channel column, softmax, scatter back
    std::vector<double> col(static_cast<size_t>(c)), res(static_cast<size_t>(c));
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t p = 0; p < hw; ++p) {
            const int64_t base = b * c * hw + p;
            for (int64_t k = 0; k < c; ++k) col[static_cast<size_t>(k)] = xv[base + k * hw];
            softmax_stretches(col.data(), res.data(), 1, c);
            for (int64_t k = 0; k < c; ++k) ov[base + k * hw] = res[static_cast<size_t>(k)];
        }
    }
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to, n, c, hw]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& y = to.data();
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (int64_t b = 0; b < n; ++b) {
                for (int64_t p = 0; p < hw; ++p) {
                    const int64_t base = b * c * hw + p;
                    double dot = 0.0;
                    for (int64_t k = 0; k < c; ++k) dot += g[base + k * hw] * y[base + k * hw];
                    for (int64_t k = 0; k < c; ++k) {
                        gx[base + k * hw] += y[base + k * hw] * (g[base + k * hw] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const double g = to.impl()->grad[0];
            auto& gx = tx.grad();
            for (double& v : gx) v += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s * inv);
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to, inv]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const double g = to.impl()->grad[0] * inv;
            auto& gx = tx.grad();
            for (double& v : gx) v += g;
        });
    }
    return out;
}

Tensor sum_spatial(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("sum_spatial requires N×C×H×W input, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({n, c});
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        const double* p = xv.data() + i * hw;
        for (int64_t j = 0; j < hw; ++j) s += p[j];
        ov[i] = s;
    }
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to, n, c, hw]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (int64_t i = 0; i < n * c; ++i) {
                double* p = gx.data() + i * hw;
                const double gi = g[i];
                for (int64_t j = 0; j < hw; ++j) p[j] += gi;
            }
        });
    }
    return out;
}

Tensor channel_group_expand(const Tensor& x, int64_t repeat) {
    if (x.rank() < 2) throw DimensionError("channel_group_expand requires rank >= 2, got " + shape_str(x.shape()));
    if (repeat < 1) throw ContractError("channel_group_expand: repeat must be positive");
    const int64_t n = x.dim(0), c = x.dim(1);
    int64_t inner = 1;
    for (int64_t d = 2; d < x.rank(); ++d) inner *= x.dim(d);
    Shape out_shape = x.shape();
    out_shape[1] = c * repeat;
    Tensor out = Tensor::zeros(out_shape);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t k = 0; k < c; ++k) {
            const double* src = xv.data() + (b * c + k) * inner;
            for (int64_t r = 0; r < repeat; ++r) {
                double* dst = ov.data() + ((b * c + k) * repeat + r) * inner;
                std::copy_n(src, inner, dst);
            }
        }
    }
    if (should_record({&x})) {
        Tensor tx = x, to = out;
        record_output(out, [tx, to, n, c, inner, repeat]() mutable {
            if (!to.has_grad() || !tx.requires_grad()) return;
            const auto& g = to.impl()->grad;
            auto& gx = tx.grad();
            for (int64_t b = 0; b < n; ++b) {
                for (int64_t k = 0; k < c; ++k) {
                    double* dst = gx.data() + (b * c + k) * inner;
                    for (int64_t r = 0; r < repeat; ++r) {
                        const double* src = g.data() + ((b * c + k) * repeat + r) * inner;
                        for (int64_t j = 0; j < inner; ++j) dst[j] += src[j];
                    }
                }
            }
        });
    }
    return out;
}

bool all_finite(const Tensor& x) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void check_finite(const Tensor& x, const std::string& what) {
    if (!all_finite(x)) throw ContractError(what + " contains NaN/Inf");
}

} // namespace attnseg
