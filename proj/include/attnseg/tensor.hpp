#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "attnseg/errors.hpp"

namespace attnseg {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // empty until a gradient is accumulated

    bool has_grad() const { return !grad.empty(); }
    std::vector<double>& grad_buffer(); // allocates zeros on first use
};

// Dense n-dimensional tensor of 64-bit reals. Value-semantics handle over a
// shared buffer; operations on tensors record backward rules on the active
// Tape (define-by-run), so a fresh graph is built on every forward pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool value) { impl_->requires_grad = value; }

    bool has_grad() const { return impl_->has_grad(); }
    std::vector<double>& grad() { return impl_->grad_buffer(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const; // scalar tensors only
    double at(std::initializer_list<int64_t> index) const;

    Tensor detach() const; // deep copy, no grad, never recorded
    Tensor clone_values() const { return detach(); }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode gradient tape. Operations append one node each in execution
// order, which is a topological order of the dataflow graph; backward() walks
// the nodes exactly once in reverse and lets each node add into its inputs'
// grad buffers. Accumulation is additive; callers zero grads between steps.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    static Tape* active();

private:
    friend class TapeScope;
    std::vector<std::function<void()>> nodes_;
};

// Activates a tape on the current thread for its lifetime. No active tape
// means ops run inference-only: values are computed, nothing is recorded.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// ---- elementary differentiable operations ----

// Broadcasting binary ops (numpy-style right-aligned; an extent matches if
// equal or 1). Backward sums gradients over the broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);

Tensor matmul(const Tensor& a, const Tensor& b); // [M×K]·[K×N] -> [M×N]
Tensor transpose2d(const Tensor& a);             // [M×N] -> [N×M]

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, int64_t axis);
Tensor concat_channels(const std::vector<Tensor>& xs); // axis 1 of N×C×H×W (or axis 0 of C×H×W)
Tensor select0(const Tensor& x, int64_t index);        // x[i], drops axis 0
Tensor stack0(const std::vector<Tensor>& xs);          // new leading axis

Tensor relu(const Tensor& x);    // subgradient at 0 is 0
Tensor sigmoid(const Tensor& x);

Tensor softmax_rows(const Tensor& x);     // 2D, row-wise, max-subtracted
Tensor softmax_channels(const Tensor& x); // N×C×H×W, across C

Tensor sum_all(const Tensor& x);   // -> scalar
Tensor mean_all(const Tensor& x);  // -> scalar
Tensor sum_spatial(const Tensor& x); // N×C×H×W -> N×C

// Repeats every channel `repeat` times consecutively: N×C×... -> N×(C·repeat)×...
// Backward sums each output group back into its source channel.
Tensor channel_group_expand(const Tensor& x, int64_t repeat);

void check_finite(const Tensor& x, const std::string& what); // throws ContractError on NaN/Inf
bool all_finite(const Tensor& x);

} // namespace attnseg
