#include "attnseg/attention.hpp"

namespace attnseg {

// ---- NonLocalBlock ----

NonLocalBlock::NonLocalBlock()
    : theta(256, 64, 1, 1, 0, /*with_bias=*/true),
      phi(256, 64, 1, 1, 0, true),
      g(256, 64, 1, 1, 0, true),
      expand(64, 256, 1, 1, 0, /*with_bias=*/false),
      expand_bn(256) {}

NonLocalResult NonLocalBlock::forward(const Tensor& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != in_channels) {
        throw ContractError("non-local block expects channel extent " + std::to_string(in_channels) +
                            ", got input " + shape_str(x.shape()));
    }
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int64_t hw = h * w;
    if (hw > max_spatial) {
        throw ContractError("non-local block spatial extent " + std::to_string(hw) +
                            " exceeds the cap " + std::to_string(max_spatial));
    }

    Tensor tq = theta.forward(x);
    Tensor tk = phi.forward(x);
    Tensor tv = g.forward(x);

    std::vector<Tensor> calibrated, alphas;
    calibrated.reserve(static_cast<size_t>(n));
    alphas.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Tensor q2 = reshape(select0(tq, i), {inter_channels, hw});
        Tensor k2 = reshape(select0(tk, i), {inter_channels, hw});
        Tensor v2 = reshape(select0(tv, i), {inter_channels, hw});
        Tensor alpha = softmax_rows(matmul(transpose2d(q2), k2)); // HW×HW, rows sum to 1
        Tensor mixed = matmul(alpha, transpose2d(v2));            // HW×inter
        calibrated.push_back(reshape(transpose2d(mixed), {inter_channels, h, w}));
        alphas.push_back(alpha);
    }
    Tensor xhat = stack0(calibrated); // N×inter×H×W
    Tensor y = add(expand_bn.forward(expand.forward(xhat), training), x);
    return {y, stack0(alphas)};
}

void NonLocalBlock::init(Rng& rng) {
    init_parameters(theta, rng);
    init_parameters(phi, rng);
    init_parameters(g, rng);
    init_parameters(expand, rng);
    init_parameters(expand_bn);
}

void NonLocalBlock::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    theta.collect_parameters(prefix + ".theta", out);
    phi.collect_parameters(prefix + ".phi", out);
    g.collect_parameters(prefix + ".g", out);
    expand.collect_parameters(prefix + ".expand", out);
    expand_bn.collect_parameters(prefix + ".expand_bn", out);
}

void NonLocalBlock::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
    expand_bn.collect_buffers(prefix + ".expand_bn", out);
}

// ---- DualPathGate ----

GatePath::GatePath(int64_t low_ch, int64_t high_ch, int64_t width)
    : wl(low_ch, width, 1, 1, 0, true),
      wh(high_ch, width, 1, 1, 0, true),
      psi(width, 1, 1, 1, 0, true) {}

Tensor GatePath::coefficient(const Tensor& x_low, const Tensor& x_high) const {
    return sigmoid(psi.forward(relu(add(wl.forward(x_low), wh.forward(x_high)))));
}

DualPathGate::DualPathGate(int64_t low_ch, int64_t high_ch, int64_t width, bool dual_pathway)
    : path_a(low_ch, high_ch, width),
      merge((dual_pathway ? 2 * low_ch : low_ch), width, 1, 1, 0, /*with_bias=*/false),
      merge_bn(width),
      dual(dual_pathway) {
    if (dual) path_b = GatePath(low_ch, high_ch, width);
}

DualGateResult DualPathGate::forward(const Tensor& x_low, const Tensor& x_high, bool training) {
    if (x_low.rank() != 4 || x_high.rank() != 4 || x_low.dim(2) != x_high.dim(2) ||
        x_low.dim(3) != x_high.dim(3) || x_low.dim(0) != x_high.dim(0)) {
        throw DimensionError("attention gate inputs must share batch and spatial extents, got " +
                             shape_str(x_low.shape()) + " and " + shape_str(x_high.shape()));
    }
    DualGateResult r;
    r.alpha_hat = path_a.coefficient(x_low, x_high);
    Tensor gated;
    if (dual) {
        r.alpha_tilde = path_b.coefficient(x_low, x_high);
        gated = concat_channels({mul(x_low, r.alpha_hat), mul(x_low, r.alpha_tilde)});
    } else {
        gated = mul(x_low, r.alpha_hat);
    }
    r.y = relu(merge_bn.forward(merge.forward(gated), training));
    return r;
}

void DualPathGate::init(Rng& rng) {
    init_parameters(path_a.wl, rng);
    init_parameters(path_a.wh, rng);
    init_parameters(path_a.psi, rng);
    if (dual) {
        init_parameters(path_b.wl, rng);
        init_parameters(path_b.wh, rng);
        init_parameters(path_b.psi, rng);
    }
    init_parameters(merge, rng);
    init_parameters(merge_bn);
}

void DualPathGate::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    path_a.wl.collect_parameters(prefix + ".a.wl", out);
    path_a.wh.collect_parameters(prefix + ".a.wh", out);
    path_a.psi.collect_parameters(prefix + ".a.psi", out);
    if (dual) {
        path_b.wl.collect_parameters(prefix + ".b.wl", out);
        path_b.wh.collect_parameters(prefix + ".b.wh", out);
        path_b.psi.collect_parameters(prefix + ".b.psi", out);
    }
    merge.collect_parameters(prefix + ".merge", out);
    merge_bn.collect_parameters(prefix + ".merge_bn", out);
}

void DualPathGate::collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
    merge_bn.collect_buffers(prefix + ".merge_bn", out);
}

// ---- ChannelAttention ----

ChannelAttention::ChannelAttention(int64_t channels_)
    : fc1(channels_, channels_ / 2), fc2(channels_ / 2, channels_), channels(channels_) {
    if (channels_ % 2 != 0) {
        throw ContractError("channel attention needs an even channel count for r=2, got " +
                            std::to_string(channels_));
    }
}

ChannelAttentionResult ChannelAttention::forward(const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != channels) {
        throw ContractError("channel attention built for C=" + std::to_string(channels) +
                            ", got input " + shape_str(x.shape()));
    }
    const int64_t n = x.dim(0);
    Tensor pa = reshape(global_avg_pool(x), {n, channels});
    Tensor pm = reshape(global_max_pool(x), {n, channels});
    Tensor shared_a = fc2.forward(relu(fc1.forward(pa)));
    Tensor shared_m = fc2.forward(relu(fc1.forward(pm)));
    Tensor beta = reshape(sigmoid(add(shared_a, shared_m)), {n, channels, 1, 1});
    return {combine(x, beta), beta};
}

Tensor ChannelAttention::combine(const Tensor& x, const Tensor& beta) {
    return add(mul(x, beta), x);
}

void ChannelAttention::init(Rng& rng) {
    init_parameters(fc1, rng);
    init_parameters(fc2, rng);
}

void ChannelAttention::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    fc1.collect_parameters(prefix + ".fc1", out);
    fc2.collect_parameters(prefix + ".fc2", out);
}

// ---- ScaleAttention ----

ScaleAttention::ScaleAttention(const std::vector<int64_t>& channels_per_scale, bool single_star)
    : fc1(4 * static_cast<int64_t>(channels_per_scale.size()),
          2 * static_cast<int64_t>(channels_per_scale.size())),
      fc2(2 * static_cast<int64_t>(channels_per_scale.size()),
          4 * static_cast<int64_t>(channels_per_scale.size())),
      refine1(4 * static_cast<int64_t>(channels_per_scale.size()), 4, 3, 1, 1, true),
      refine2(4, single_star ? 1 : static_cast<int64_t>(channels_per_scale.size()), 1, 1, 0, true),
      scales(static_cast<int64_t>(channels_per_scale.size())),
      single_channel_star(single_star) {
    if (channels_per_scale.size() < 2) {
        throw ContractError("scale attention needs at least 2 scales");
    }
    compress.reserve(channels_per_scale.size());
    for (int64_t c : channels_per_scale) compress.emplace_back(c, 4, 1, 1, 0, true);
}

ScaleAttentionResult ScaleAttention::forward(const std::vector<Tensor>& features, int64_t out_h,
                                             int64_t out_w, bool training) {
    (void)training;
    if (static_cast<int64_t>(features.size()) != scales) {
        throw ContractError("scale attention built for " + std::to_string(scales) + " scales, got " +
                            std::to_string(features.size()) + " feature maps");
    }
    std::vector<Tensor> parts;
    parts.reserve(features.size());
    for (size_t s = 0; s < features.size(); ++s) {
        Tensor r = bilinear_resize(features[s], out_h, out_w);
        parts.push_back(compress[s].forward(r));
    }
    Tensor fhat = concat_channels(parts); // N×4S×H×W
    const int64_t n = fhat.dim(0);

    Tensor pa = reshape(global_avg_pool(fhat), {n, 4 * scales});
    Tensor pm = reshape(global_max_pool(fhat), {n, 4 * scales});
    Tensor m = add(fc2.forward(relu(fc1.forward(pa))), fc2.forward(relu(fc1.forward(pm))));

    // mean over each scale's 4-channel group, then sigmoid -> one γ per scale
    Tensor group_avg = Tensor::zeros({4 * scales, scales});
    for (int64_t s = 0; s < scales; ++s) {
        for (int64_t j = 0; j < 4; ++j) group_avg.data()[(s * 4 + j) * scales + s] = 0.25;
    }
    Tensor gamma = reshape(sigmoid(matmul(m, group_avg)), {n, scales, 1, 1});

    Tensor fg = mul(fhat, channel_group_expand(gamma, 4));
    Tensor star = sigmoid(refine2.forward(relu(refine1.forward(fg)))); // N×S×H×W or N×1×H×W
    Tensor star_full = single_channel_star ? star : channel_group_expand(star, 4);

    ScaleAttentionResult r;
    r.y = add(add(mul(fg, star_full), fg), fhat);
    r.gamma = gamma;
    r.gamma_star = star;
    r.gamma_map = mul(gamma, star); // broadcasts to N×S×H×W in both modes
    return r;
}

void ScaleAttention::init(Rng& rng) {
    for (Conv2d& c : compress) init_parameters(c, rng);
    init_parameters(fc1, rng);
    init_parameters(fc2, rng);
    init_parameters(refine1, rng);
    init_parameters(refine2, rng);
}

void ScaleAttention::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
    for (size_t s = 0; s < compress.size(); ++s) {
        compress[s].collect_parameters(prefix + ".compress" + std::to_string(s + 1), out);
    }
    fc1.collect_parameters(prefix + ".fc1", out);
    fc2.collect_parameters(prefix + ".fc2", out);
    refine1.collect_parameters(prefix + ".refine1", out);
    refine2.collect_parameters(prefix + ".refine2", out);
}

// ---- export ----

std::vector<NamedTensor> export_attention_maps(const std::optional<AttentionSet>& set) {
    if (!set.has_value()) {
        throw ContractError("export_attention_maps called before a forward pass");
    }
    std::vector<NamedTensor> out;
    int64_t sa_index = 1;
    if (set->sa1_map.defined()) {
        out.emplace_back("sa1", set->sa1_map.detach());
        ++sa_index;
    }
    for (size_t i = 0; i < set->gate_hat.size(); ++i) {
        Tensor map = set->gate_tilde[i].defined()
                         ? affine(add(set->gate_hat[i].detach(), set->gate_tilde[i].detach()), 0.5, 0.0)
                         : set->gate_hat[i].detach();
        out.emplace_back("sa" + std::to_string(sa_index + static_cast<int64_t>(i)), map.detach());
    }
    for (size_t i = 0; i < set->beta.size(); ++i) {
        out.emplace_back("ca" + std::to_string(i + 1), set->beta[i].detach());
    }
    if (set->gamma_map.defined()) {
        out.emplace_back("la", set->gamma_map.detach());
    }
    return out;
}

} // namespace attnseg
