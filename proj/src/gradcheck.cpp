#include "attnseg/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "attnseg/attention.hpp"
#include "attnseg/layers.hpp"
#include "attnseg/model.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/train.hpp"

namespace attnseg {

double gradcheck_max_rel_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                               double step, int64_t max_coords, uint64_t seed) {
    for (Tensor& t : inputs) t.set_requires_grad(true);

    // analytic gradients from one taped run
    std::vector<std::vector<double>> analytic;
    {
        for (Tensor& t : inputs) {
            t.grad();
            t.zero_grad();
        }
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn();
        tape.backward(loss);
        for (Tensor& t : inputs) analytic.push_back(t.grad());
    }

    Rng rng(seed ^ 0x5eedf00d);
    double worst = 0.0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor& t = inputs[ti];
        const int64_t n = t.numel();
        std::vector<int64_t> coords;
        if (max_coords <= 0 || n <= max_coords) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(0, n - 1));
        }

        double max_abs_diff = 0.0, max_ad = 0.0, max_fd = 0.0;
        for (int64_t c : coords) {
            double& slot = t.data()[static_cast<size_t>(c)];
            const double original = slot;
            slot = original + step;
            const double up = loss_fn().item();
            slot = original - step;
            const double down = loss_fn().item();
            slot = original;
            const double fd = (up - down) / (2.0 * step);
            const double ad = analytic[ti][static_cast<size_t>(c)];
            max_abs_diff = std::max(max_abs_diff, std::abs(ad - fd));
            max_ad = std::max(max_ad, std::abs(ad));
            max_fd = std::max(max_fd, std::abs(fd));
        }
        worst = std::max(worst, max_abs_diff / std::max({1.0, max_ad, max_fd}));
    }
    return worst;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.normal(0.0, scale);
    return t;
}

// fixed random projection turning any output into a scalar
Tensor project(const Tensor& y, uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::zeros(y.shape());
    for (double& v : w.data()) v = rng.normal(0.0, 1.0);
    return sum_all(mul(y, w));
}

constexpr double kSmoothStep = 1e-4, kSmoothTol = 1e-6;
constexpr double kBlockStep = 1e-3, kBlockTol = 1e-4;

} // namespace

std::vector<GradCheckResult> run_gradcheck_suite(double* elapsed_seconds) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<GradCheckResult> results;
    auto check = [&](const std::string& name, double threshold, double err) {
        results.push_back({name, err, threshold});
    };

    Rng rng(20240601);

    { // smooth scalar ops
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
        check("matmul", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(matmul(a, b), 11); }, {a, b}, kSmoothStep));
    }
    {
        Tensor x = random_tensor({5, 7}, rng);
        check("softmax_rows", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(softmax_rows(x), 12); }, {x}, kSmoothStep));
    }
    {
        Tensor x = random_tensor({2, 3, 2, 2}, rng);
        check("softmax_channels", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(softmax_channels(x), 13); }, {x}, kSmoothStep));
    }
    {
        Tensor x = random_tensor({3, 4}, rng);
        check("sigmoid", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(sigmoid(x), 14); }, {x}, kSmoothStep));
    }
    {
        // inputs kept away from the kink
        Tensor x = random_tensor({3, 4}, rng);
        for (double& v : x.data()) {
            if (std::abs(v) < 0.1) v = v < 0 ? v - 0.1 : v + 0.1;
        }
        check("relu", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(relu(x), 15); }, {x}, kSmoothStep));
    }
    {
        Tensor x = random_tensor({2, 3, 2, 2}, rng);
        Tensor s = random_tensor({3, 1, 1}, rng);
        check("broadcast_add", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(add(x, s), 16); }, {x, s}, kSmoothStep));
        check("broadcast_mul", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(mul(x, s), 17); }, {x, s}, kSmoothStep));
    }
    {
        Tensor x = random_tensor({2, 5}, rng);
        Tensor d = random_tensor({2, 5}, rng);
        for (double& v : d.data()) v = 1.5 + std::abs(v); // keep the divisor away from zero
        check("div", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(div(x, d), 18); }, {x, d}, kSmoothStep));
    }
    {
        Tensor a = random_tensor({2, 3, 3}, rng), b = random_tensor({4, 3, 3}, rng);
        check("concat_channels", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(concat_channels({a, b}), 19); }, {a, b},
                                      kSmoothStep));
    }
    {
        Tensor x = random_tensor({2, 4, 1, 1}, rng);
        check("channel_group_expand", kSmoothTol,
              gradcheck_max_rel_error([&]() { return project(channel_group_expand(x, 4), 20); }, {x},
                                      kSmoothStep));
    }

    { // soft dice loss (smooth given probs bounded away from 0/1)
        Tensor probs = Tensor::zeros({1, 2, 4, 4});
        for (double& v : probs.data()) v = rng.uniform(0.15, 0.85);
        Tensor target = Tensor::zeros({1, 2, 4, 4});
        for (int64_t p = 0; p < 16; ++p) {
            const int64_t cls = rng.uniform_int(0, 1);
            target.data()[static_cast<size_t>(cls * 16 + p)] = 1.0;
        }
        check("soft_dice_loss", 1e-5,
              gradcheck_max_rel_error([&]() { return soft_dice_loss(probs, target); }, {probs}, kSmoothStep));
    }

    { // conv2d, 3×3 stride 1 pad 1
        Tensor x = random_tensor({2, 3, 8, 8}, rng);
        Tensor w = random_tensor({4, 3, 3, 3}, rng, 0.3);
        Tensor b = random_tensor({4}, rng, 0.3);
        check("conv2d_3x3", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(conv2d(x, w, b, 1, 1), 21); }, {x, w, b},
                                      kBlockStep));
    }
    { // conv2d, stride 2, no padding
        Tensor x = random_tensor({1, 2, 6, 6}, rng);
        Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.3);
        Tensor b = random_tensor({3}, rng, 0.3);
        check("conv2d_stride2", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(conv2d(x, w, b, 2, 0), 22); }, {x, w, b},
                                      kBlockStep));
    }
    { // batch norm, train mode
        Tensor x = random_tensor({2, 3, 4, 4}, rng);
        Tensor gamma = random_tensor({3}, rng, 0.5);
        for (double& v : gamma.data()) v += 1.0;
        Tensor beta = random_tensor({3}, rng, 0.3);
        BatchNorm2d bn(3);
        check("batchnorm_train", kBlockTol,
              gradcheck_max_rel_error(
                  [&]() {
                      return project(batchnorm2d(x, gamma, beta, bn.running_mean, bn.running_var,
                                                 bn.eps, bn.momentum, true),
                                     23);
                  },
                  {x, gamma, beta}, kBlockStep));
    }
    { // linear
        Tensor x = random_tensor({3, 5}, rng);
        Linear lin(5, 4);
        Rng lr(7);
        init_parameters(lin, lr);
        check("linear", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(lin.forward(x), 24); },
                                      {x, lin.weight, lin.bias}, kBlockStep));
    }
    { // pooling
        Tensor x = random_tensor({2, 2, 4, 4}, rng);
        check("maxpool2x2", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(maxpool2x2(x), 25); }, {x}, kBlockStep));
        check("global_avg_pool", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(global_avg_pool(x), 26); }, {x}, kBlockStep));
        check("global_max_pool", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(global_max_pool(x), 27); }, {x}, kBlockStep));
    }
    { // bilinear resize 5×5 -> 8×8
        Tensor x = random_tensor({1, 2, 5, 5}, rng);
        check("bilinear_resize", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(bilinear_resize(x, 8, 8), 28); }, {x},
                                      kBlockStep));
    }

    { // non-local block at 1×256×3×3
        NonLocalBlock block;
        Rng br(31);
        block.init(br);
        Tensor x = random_tensor({1, 256, 3, 3}, rng, 0.5);
        std::vector<Tensor> inputs = {x};
        std::vector<NamedTensor> named;
        block.collect_parameters("nl", named);
        for (auto& [name, t] : named) inputs.push_back(t);
        check("nonlocal_block", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(block.forward(x, true).y, 32); }, inputs,
                                      kBlockStep, 6, 99));
    }
    { // dual-pathway gate on 1×8×6×6
        DualPathGate gate(8, 16, 4, true);
        Rng br(33);
        gate.init(br);
        Tensor xl = random_tensor({1, 8, 6, 6}, rng, 0.5);
        Tensor xh = random_tensor({1, 16, 6, 6}, rng, 0.5);
        std::vector<Tensor> inputs = {xl, xh};
        std::vector<NamedTensor> named;
        gate.collect_parameters("gate", named);
        for (auto& [name, t] : named) inputs.push_back(t);
        check("dual_path_gate", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(gate.forward(xl, xh, true).y, 34); }, inputs,
                                      kBlockStep, 24, 100));
    }
    { // channel attention on 1×8×5×5
        ChannelAttention ca(8);
        Rng br(35);
        ca.init(br);
        Tensor x = random_tensor({1, 8, 5, 5}, rng, 0.5);
        std::vector<Tensor> inputs = {x};
        std::vector<NamedTensor> named;
        ca.collect_parameters("ca", named);
        for (auto& [name, t] : named) inputs.push_back(t);
        check("channel_attention", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(ca.forward(x).y, 36); }, inputs, kBlockStep,
                                      24, 101));
    }
    { // scale attention over four small decoder features
        ScaleAttention la({4, 8, 16, 32});
        Rng br(37);
        la.init(br);
        std::vector<Tensor> feats = {random_tensor({1, 4, 8, 8}, rng, 0.5),
                                     random_tensor({1, 8, 4, 4}, rng, 0.5),
                                     random_tensor({1, 16, 2, 2}, rng, 0.5),
                                     random_tensor({1, 32, 1, 1}, rng, 0.5)};
        std::vector<Tensor> inputs = feats;
        std::vector<NamedTensor> named;
        la.collect_parameters("la", named);
        for (auto& [name, t] : named) inputs.push_back(t);
        check("scale_attention", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(la.forward(feats, 8, 8, true).y, 38); },
                                      inputs, kBlockStep, 16, 102));
    }

    { // full model at 1×1×32×32, two probed coordinates per parameter tensor
        ModelConfig cfg;
        cfg.in_channels = 1;
        cfg.num_classes = 2;
        CANetModel model = CANetModel::build(cfg, 404);
        Tensor x = random_tensor({1, 1, 32, 32}, rng, 0.5);
        std::vector<Tensor> inputs = {x};
        for (auto& [name, t] : model.parameters()) inputs.push_back(t);
        check("canet_full", kBlockTol,
              gradcheck_max_rel_error([&]() { return project(model.forward(x, true), 40); }, inputs,
                                      kBlockStep, 2, 103));
    }

    if (elapsed_seconds) {
        *elapsed_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    return results;
}

bool all_passed(const std::vector<GradCheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const GradCheckResult& r) { return r.passed(); });
}

} // namespace attnseg
