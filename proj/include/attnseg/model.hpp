#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnseg/attention.hpp"
#include "attnseg/layers.hpp"

namespace attnseg {

enum class SpatialVariant { SingleGate, DualGate, NonLocalOnly, Joint };
enum class CaPlacement { Encoder, Decoder, EncoderDecoder };

std::string to_string(SpatialVariant v);
std::string to_string(CaPlacement p);
SpatialVariant spatial_variant_from_string(const std::string& s);
CaPlacement ca_placement_from_string(const std::string& s);

struct ModelConfig {
    int64_t in_channels = 3;
    int64_t num_classes = 2;
    int64_t base_channels = 16; // doubled after each downsampling: 16/32/64/128/256
    bool enable_sa = true;
    bool enable_ca = true;
    bool enable_la = true;
    SpatialVariant sa_variant = SpatialVariant::Joint;
    CaPlacement ca_placement = CaPlacement::Decoder;
    int64_t la_scales = 4; // K in {2..5}; 5 taps the bottleneck
    bool la_star_single_channel = false;

    void validate() const; // throws ConfigError
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Per-pixel integer label maps for a batch.
struct MaskBatch {
    int64_t n = 0, h = 0, w = 0;
    std::vector<int32_t> labels; // n·h·w, row-major

    int32_t at(int64_t b, int64_t y, int64_t x) const { return labels[(b * h + y) * w + x]; }
};

struct EncoderBlock {
    ConvBNRelu c1, c2;
    EncoderBlock() = default;
    EncoderBlock(int64_t in_ch, int64_t out_ch)
        : c1(in_ch, out_ch, 3, 1), c2(out_ch, out_ch, 3, 1) {}
    Tensor forward(const Tensor& x, bool training) { return c2.forward(c1.forward(x, training), training); }
};

using DecoderBlock = EncoderBlock; // same two-conv brick, widths set by the builder

// The assembled encoder-decoder: 5-level backbone (16..256 channels), the
// non-local block at the bottleneck, dual-pathway gates on the skip
// connections, channel attention on the decoder concatenations, scale
// attention over the decoder outputs, and a 1×1 class head.
class CANetModel {
public:
    ModelConfig config;

    std::array<EncoderBlock, 5> encoders; // encoders[4] is the bottleneck
    std::array<DecoderBlock, 4> decoders; // index 0 = level 4 (deepest) ... 3 = level 1

    bool has_nonlocal = false;
    NonLocalBlock nonlocal;

    std::vector<int64_t> gate_levels;     // decoder levels carrying a gate, deepest first
    std::vector<DualPathGate> gates;

    std::vector<ChannelAttention> ca_encoder; // per encoder level 1..4 when placed in the encoder
    std::vector<ChannelAttention> ca_decoder; // per decoder level 4..1 when placed in the decoder

    bool has_la = false;
    ScaleAttention scale_attention;

    Conv2d head;

    static CANetModel build(const ModelConfig& config, uint64_t seed);

    // Logits at full resolution; the retained attention coefficients are
    // available through attention() until the next forward call.
    Tensor forward(const Tensor& x, bool training);

    const std::optional<AttentionSet>& attention() const { return last_attention_; }

    std::vector<NamedTensor> parameters() const; // learnables only
    std::vector<NamedTensor> buffers() const;    // BN running statistics
    std::vector<NamedTensor> state() const;      // parameters + buffers

    void load_state(const std::vector<NamedTensor>& named); // by name, throws FormatError

    int64_t parameter_total() const;
    std::vector<std::pair<std::string, int64_t>> parameter_counts_by_module() const;

private:
    std::optional<AttentionSet> last_attention_;
};

MaskBatch predict_mask(const Tensor& logits); // per-pixel argmax, ties to the lower class

} // namespace attnseg
