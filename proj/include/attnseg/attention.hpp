#pragma once

#include <optional>
#include <vector>

#include "attnseg/layers.hpp"

namespace attnseg {

// ---- non-local spatial attention (bottleneck) ----
//
// Three parallel 1×1 convs compress the input to 64 channels; the row-wise
// softmax of x'ᵀ·x'' gives a row-stochastic HW×HW affinity so every pixel's
// feature becomes a weighted sum over all pixels. A 1×1 conv + BN expands back
// and a residual connection closes the block.

struct NonLocalResult {
    Tensor y;     // same shape as the input
    Tensor alpha; // N×HW×HW, each row sums to 1
};

struct NonLocalBlock {
    Conv2d theta, phi, g;  // 1×1, in -> inter, with bias
    Conv2d expand;         // 1×1, inter -> in, no bias (feeds BN)
    BatchNorm2d expand_bn;
    int64_t in_channels = 256;
    int64_t inter_channels = 64;
    int64_t max_spatial = 4096; // H·W cap

    NonLocalBlock();
    NonLocalResult forward(const Tensor& x, bool training);

    void init(Rng& rng);
    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// ---- dual-pathway attention gate (skip connections) ----

struct GatePath {
    Conv2d wl;  // 1×1 low -> width, bias
    Conv2d wh;  // 1×1 high -> width, bias
    Conv2d psi; // 1×1 width -> 1, bias

    GatePath() = default;
    GatePath(int64_t low_ch, int64_t high_ch, int64_t width);
    Tensor coefficient(const Tensor& x_low, const Tensor& x_high) const; // N×1×H×W in (0,1)
};

struct DualGateResult {
    Tensor y;           // N×width×H×W
    Tensor alpha_hat;   // N×1×H×W
    Tensor alpha_tilde; // N×1×H×W; undefined for a single-pathway gate
};

struct DualPathGate {
    GatePath path_a;
    GatePath path_b; // unused when dual == false
    Conv2d merge;    // 1×1 (2·low or low) -> width, no bias (feeds BN)
    BatchNorm2d merge_bn;
    bool dual = true;

    DualPathGate() = default;
    DualPathGate(int64_t low_ch, int64_t high_ch, int64_t width, bool dual_pathway = true);
    DualGateResult forward(const Tensor& x_low, const Tensor& x_high, bool training);

    void init(Rng& rng);
    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// ---- channel attention ----
//
// Global average- and max-pooled descriptors pass through one shared
// bottleneck perceptron (compression ratio r = 2); the summed responses gate
// every channel, with a residual connection: y = x·β + x.

struct ChannelAttentionResult {
    Tensor y;    // same shape as the input
    Tensor beta; // N×C×1×1 in (0,1)
};

struct ChannelAttention {
    Linear fc1; // C -> C/2
    Linear fc2; // C/2 -> C
    int64_t channels = 0;

    ChannelAttention() = default;
    explicit ChannelAttention(int64_t channels); // C must be even
    ChannelAttentionResult forward(const Tensor& x);

    static Tensor combine(const Tensor& x, const Tensor& beta); // x·β + x

    void init(Rng& rng);
    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// ---- scale attention ----
//
// Decoder features from S scales are resampled to the output resolution,
// compressed to 4 channels each and concatenated into F̂. A channel-attention
// style perceptron gives one coefficient per scale (γ); a small conv head
// refines it into a pixel-wise map (γ*). y = F̂·γ·γ* + F̂·γ + F̂.

struct ScaleAttentionResult {
    Tensor y;          // N×4S×H×W
    Tensor gamma;      // N×S×1×1 in (0,1)
    Tensor gamma_star; // N×S×H×W (N×1×H×W in single-channel mode), in (0,1)
    Tensor gamma_map;  // γ·γ* per scale, N×S×H×W
};

struct ScaleAttention {
    std::vector<Conv2d> compress; // per scale 1×1 (C_s -> 4), bias
    Linear fc1;                   // 4S -> 2S
    Linear fc2;                   // 2S -> 4S
    Conv2d refine1;               // 3×3 4S -> 4, bias
    Conv2d refine2;               // 1×1 4 -> S (or 4 -> 1), bias
    int64_t scales = 0;
    bool single_channel_star = false;

    ScaleAttention() = default;
    ScaleAttention(const std::vector<int64_t>& channels_per_scale, bool single_channel_star = false);
    ScaleAttentionResult forward(const std::vector<Tensor>& features, int64_t out_h, int64_t out_w,
                                 bool training);

    void init(Rng& rng);
    void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// ---- attention map export ----

struct AttentionSet {
    Tensor sa1_alpha;               // raw N×HW×HW affinity (when non-local enabled)
    Tensor sa1_map;                 // column-mean of alpha as N×1×h×w
    std::vector<Tensor> gate_hat;   // per gated level, N×1×H×W
    std::vector<Tensor> gate_tilde; // same order; undefined entries for single gates
    std::vector<Tensor> beta;       // per channel attention, N×C×1×1
    Tensor gamma;                   // N×S×1×1
    Tensor gamma_star;
    Tensor gamma_map;               // N×S×H×W
};

// Copies every retained coefficient out as a named, detached tensor
// (sa1..saK, ca1..caK, la). Throws ContractError when no forward pass has
// populated the set.
std::vector<NamedTensor> export_attention_maps(const std::optional<AttentionSet>& set);

} // namespace attnseg
