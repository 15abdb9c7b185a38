#pragma once

#include <string>
#include <utility>
#include <vector>

#include "attnseg/rng.hpp"
#include "attnseg/serialize.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

// ---- differentiable layer primitives (tape ops) ----

// Cross-correlation (no kernel flip). weight: Cout×Cin×k×k, bias: Cout or an
// undefined tensor. Output spatial extent: floor((H + 2·pad − k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int64_t stride, int64_t padding);

// Train mode normalizes with batch statistics and folds them into the running
// buffers; eval mode normalizes with the running buffers.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var,
                   double eps, double momentum, bool training);

Tensor maxpool2x2(const Tensor& x);                       // stride 2; H, W must be even
Tensor global_avg_pool(const Tensor& x);                  // N×C×H×W -> N×C×1×1
Tensor global_max_pool(const Tensor& x);                  // N×C×H×W -> N×C×1×1
Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w); // align-corners=false

// ---- parameter records ----

struct Conv2d {
    Tensor weight;
    Tensor bias; // undefined when the conv feeds a BatchNorm
    int64_t stride = 1;
    int64_t padding = 0;

    Conv2d() = default;
    Conv2d(int64_t in_channels, int64_t out_channels, int64_t kernel,
           int64_t stride, int64_t padding, bool with_bias);

    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
    int64_t in_channels() const { return weight.dim(1); }
    int64_t out_channels() const { return weight.dim(0); }

    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct BatchNorm2d {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int64_t channels);

    Tensor forward(const Tensor& x, bool training) {
        return batchnorm2d(x, gamma, beta, running_mean, running_var, eps, momentum, training);
    }

    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct Linear {
    Tensor weight; // out×in
    Tensor bias;   // out

    Linear() = default;
    Linear(int64_t in_features, int64_t out_features);

    Tensor forward(const Tensor& x) const; // N×in -> N×out
    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// 3×3 (or 1×1) conv without bias, then BN, then ReLU — the backbone brick.
struct ConvBNRelu {
    Conv2d conv;
    BatchNorm2d bn;

    ConvBNRelu() = default;
    ConvBNRelu(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t padding);

    Tensor forward(const Tensor& x, bool training) {
        return relu(bn.forward(conv.forward(x), training));
    }
    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// ---- initialization ----

// Zero-mean normal scaled by fan-in (variance 2/fan_in); biases zero.
void init_parameters(Conv2d& layer, Rng& rng);
void init_parameters(Linear& layer, Rng& rng);
void init_parameters(BatchNorm2d& layer); // gamma 1, beta 0, running stats 0/1

// Learnable element count over a named collection (running stats excluded by
// construction: they are collected as buffers, not parameters).
int64_t parameter_count(const std::vector<NamedTensor>& params);

} // namespace attnseg
