#include "attnseg/model.hpp"

#include <algorithm>
#include <map>

namespace attnseg {

std::string to_string(SpatialVariant v) {
    switch (v) {
        case SpatialVariant::SingleGate: return "s-AG";
        case SpatialVariant::DualGate: return "t-AG";
        case SpatialVariant::NonLocalOnly: return "n-Local";
        case SpatialVariant::Joint: return "Js-A";
    }
    return "Js-A";
}

std::string to_string(CaPlacement p) {
    switch (p) {
        case CaPlacement::Encoder: return "Enc";
        case CaPlacement::Decoder: return "Dec";
        case CaPlacement::EncoderDecoder: return "EncDec";
    }
    return "Dec";
}

SpatialVariant spatial_variant_from_string(const std::string& s) {
    if (s == "s-AG") return SpatialVariant::SingleGate;
    if (s == "t-AG") return SpatialVariant::DualGate;
    if (s == "n-Local") return SpatialVariant::NonLocalOnly;
    if (s == "Js-A") return SpatialVariant::Joint;
    throw ConfigError("unknown spatial attention variant: " + s);
}

CaPlacement ca_placement_from_string(const std::string& s) {
    if (s == "Enc") return CaPlacement::Encoder;
    if (s == "Dec") return CaPlacement::Decoder;
    if (s == "EncDec") return CaPlacement::EncoderDecoder;
    throw ConfigError("unknown channel attention placement: " + s);
}

void ModelConfig::validate() const {
    if (in_channels < 1) throw ConfigError("in_channels must be positive");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (base_channels < 8 || base_channels % 2 != 0) {
        throw ConfigError("base_channels must be an even value >= 8");
    }
    if (la_scales < 2 || la_scales > 5) {
        throw ConfigError("la_scales must lie in [2,5]; scale 5 taps the bottleneck output");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"in_channels", in_channels},
            {"num_classes", num_classes},
            {"base_channels", base_channels},
            {"enable_sa", enable_sa},
            {"enable_ca", enable_ca},
            {"enable_la", enable_la},
            {"sa_variant", to_string(sa_variant)},
            {"ca_placement", to_string(ca_placement)},
            {"la_scales", la_scales},
            {"la_star_single_channel", la_star_single_channel}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.in_channels = j.value("in_channels", c.in_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.enable_sa = j.value("enable_sa", c.enable_sa);
    c.enable_ca = j.value("enable_ca", c.enable_ca);
    c.enable_la = j.value("enable_la", c.enable_la);
    if (j.contains("sa_variant")) c.sa_variant = spatial_variant_from_string(j["sa_variant"].get<std::string>());
    if (j.contains("ca_placement")) c.ca_placement = ca_placement_from_string(j["ca_placement"].get<std::string>());
    c.la_scales = j.value("la_scales", c.la_scales);
    c.la_star_single_channel = j.value("la_star_single_channel", c.la_star_single_channel);
    c.validate();
    return c;
}

namespace {

// channel width at decoder/encoder level s (1-based): base·2^(s-1)
int64_t level_channels(const ModelConfig& cfg, int64_t level) {
    return cfg.base_channels << (level - 1);
}

bool uses_gates(const ModelConfig& cfg) {
    return cfg.enable_sa && cfg.sa_variant != SpatialVariant::NonLocalOnly;
}

bool uses_nonlocal(const ModelConfig& cfg) {
    return cfg.enable_sa && (cfg.sa_variant == SpatialVariant::Joint ||
                             cfg.sa_variant == SpatialVariant::NonLocalOnly);
}

std::vector<int64_t> gate_level_list(const ModelConfig& cfg) {
    if (!uses_gates(cfg)) return {};
    // Js-A gates skips 4..2 (level-1 skip stays ungated); the pure gate
    // variants gate all four skip levels.
    if (cfg.sa_variant == SpatialVariant::Joint) return {4, 3, 2};
    return {4, 3, 2, 1};
}

bool ca_in_encoder(const ModelConfig& cfg) {
    return cfg.enable_ca && (cfg.ca_placement == CaPlacement::Encoder ||
                             cfg.ca_placement == CaPlacement::EncoderDecoder);
}

bool ca_in_decoder(const ModelConfig& cfg) {
    return cfg.enable_ca && (cfg.ca_placement == CaPlacement::Decoder ||
                             cfg.ca_placement == CaPlacement::EncoderDecoder);
}

} // namespace

CANetModel CANetModel::build(const ModelConfig& config, uint64_t seed) {
    config.validate();
    CANetModel model;
    model.config = config;
    Rng rng(seed);

    const int64_t base = config.base_channels;

    // encoder: in -> 16 -> 32 -> 64 -> 128 -> 256
    int64_t in_ch = config.in_channels;
    for (int64_t level = 1; level <= 5; ++level) {
        const int64_t out_ch = level_channels(config, level);
        model.encoders[static_cast<size_t>(level - 1)] = EncoderBlock(in_ch, out_ch);
        in_ch = out_ch;
    }

    model.has_nonlocal = uses_nonlocal(config);
    model.gate_levels = gate_level_list(config);
    const bool dual = config.sa_variant != SpatialVariant::SingleGate;
    for (int64_t level : model.gate_levels) {
        const int64_t low_ch = level_channels(config, level);
        const int64_t high_ch = 2 * low_ch; // upsampled feature from the level below
        model.gates.emplace_back(low_ch, high_ch, low_ch / 2, dual);
    }

    // decoder levels 4..1; concat = upsampled (2·C_s) + skip (C_s or C_s/2 gated)
    const bool widen = ca_in_decoder(config);
    for (int64_t level = 4; level >= 1; --level) {
        const int64_t cs = level_channels(config, level);
        const bool gated = std::find(model.gate_levels.begin(), model.gate_levels.end(), level) !=
                           model.gate_levels.end();
        const int64_t concat_ch = 2 * cs + (gated ? cs / 2 : cs);
        const int64_t mid_ch = widen ? 2 * cs : cs;
        DecoderBlock& block = model.decoders[static_cast<size_t>(4 - level)];
        block.c1 = ConvBNRelu(concat_ch, mid_ch, 3, 1);
        block.c2 = ConvBNRelu(mid_ch, cs, 3, 1);
        if (ca_in_decoder(config)) model.ca_decoder.emplace_back(concat_ch);
    }
    if (ca_in_encoder(config)) {
        for (int64_t level = 1; level <= 4; ++level) {
            model.ca_encoder.emplace_back(level_channels(config, level));
        }
    }

    model.has_la = config.enable_la;
    if (model.has_la) {
        std::vector<int64_t> per_scale;
        for (int64_t s = 1; s <= config.la_scales; ++s) per_scale.push_back(level_channels(config, s));
        model.scale_attention = ScaleAttention(per_scale, config.la_star_single_channel);
    }

    const int64_t head_in = model.has_la ? 4 * config.la_scales : base;
    model.head = Conv2d(head_in, config.num_classes, 1, 1, 0, /*with_bias=*/true);

    // deterministic initialization order: encoders, decoders, non-local,
    // gates, channel attentions, scale attention, head
    for (auto& e : model.encoders) {
        init_parameters(e.c1.conv, rng);
        init_parameters(e.c1.bn);
        init_parameters(e.c2.conv, rng);
        init_parameters(e.c2.bn);
    }
    for (auto& d : model.decoders) {
        init_parameters(d.c1.conv, rng);
        init_parameters(d.c1.bn);
        init_parameters(d.c2.conv, rng);
        init_parameters(d.c2.bn);
    }
    if (model.has_nonlocal) model.nonlocal.init(rng);
    for (auto& g : model.gates) g.init(rng);
    for (auto& ca : model.ca_encoder) ca.init(rng);
    for (auto& ca : model.ca_decoder) ca.init(rng);
    if (model.has_la) model.scale_attention.init(rng);
    init_parameters(model.head, rng);
    return model;
}

namespace {

// mean over rows of each sample's HW×HW affinity, reshaped to a spatial map
Tensor alpha_column_mean(const Tensor& alpha, int64_t h, int64_t w) {
    const int64_t n = alpha.dim(0), hw = alpha.dim(1);
    Tensor map = Tensor::zeros({n, 1, h, w});
    const auto& av = alpha.data();
    auto& mv = map.data();
    for (int64_t b = 0; b < n; ++b) {
        const double* mat = av.data() + b * hw * hw;
        double* out = mv.data() + b * hw;
        for (int64_t j = 0; j < hw; ++j) {
            double s = 0.0;
            for (int64_t i = 0; i < hw; ++i) s += mat[i * hw + j];
            out[j] = s / static_cast<double>(hw);
        }
    }
    return map;
}

} // namespace

Tensor CANetModel::forward(const Tensor& x, bool training) {
    if (x.rank() != 4) throw DimensionError("model input must be N×C×H×W, got " + shape_str(x.shape()));
    if (x.dim(1) != config.in_channels) {
        throw DimensionError("model built for " + std::to_string(config.in_channels) +
                             " input channels, got " + shape_str(x.shape()));
    }
    const int64_t h = x.dim(2), w = x.dim(3);
    if (h % 16 != 0 || w % 16 != 0) {
        throw DimensionError("input extents must be divisible by 16, got " + shape_str(x.shape()));
    }

    AttentionSet maps;

    // encoder
    std::array<Tensor, 5> enc_out;
    Tensor cur = x;
    for (int64_t level = 1; level <= 5; ++level) {
        if (level > 1) cur = maxpool2x2(cur);
        cur = encoders[static_cast<size_t>(level - 1)].forward(cur, training);
        if (level <= 4 && !ca_encoder.empty()) {
            auto r = ca_encoder[static_cast<size_t>(level - 1)].forward(cur);
            maps.beta.push_back(r.beta);
            cur = r.y;
        }
        enc_out[static_cast<size_t>(level - 1)] = cur;
    }

    Tensor bottom = enc_out[4];
    if (has_nonlocal) {
        auto r = nonlocal.forward(bottom, training);
        bottom = r.y;
        maps.sa1_alpha = r.alpha;
        maps.sa1_map = alpha_column_mean(r.alpha.detach(), h / 16, w / 16);
    }

    // decoder, deepest level first
    std::array<Tensor, 4> dec_out;
    Tensor prev = bottom;
    size_t gate_idx = 0, ca_idx = 0;
    for (int64_t level = 4; level >= 1; --level) {
        const int64_t target_h = h >> (level - 1);
        const int64_t target_w = w >> (level - 1);
        Tensor up = bilinear_resize(prev, target_h, target_w);

        Tensor skip = enc_out[static_cast<size_t>(level - 1)];
        if (gate_idx < gate_levels.size() && gate_levels[gate_idx] == level) {
            auto r = gates[gate_idx].forward(skip, up, training);
            maps.gate_hat.push_back(r.alpha_hat);
            maps.gate_tilde.push_back(r.alpha_tilde);
            skip = r.y;
            ++gate_idx;
        }

        Tensor cat = concat_channels({up, skip});
        if (!ca_decoder.empty()) {
            auto r = ca_decoder[ca_idx++].forward(cat);
            maps.beta.push_back(r.beta);
            cat = r.y;
        }
        prev = decoders[static_cast<size_t>(4 - level)].forward(cat, training);
        dec_out[static_cast<size_t>(4 - level)] = prev;
    }

    Tensor features = prev; // decoder output at full resolution
    if (has_la) {
        std::vector<Tensor> scale_feats;
        for (int64_t s = 1; s <= config.la_scales; ++s) {
            scale_feats.push_back(s <= 4 ? dec_out[static_cast<size_t>(4 - s)] : bottom);
        }
        auto r = scale_attention.forward(scale_feats, h, w, training);
        maps.gamma = r.gamma;
        maps.gamma_star = r.gamma_star;
        maps.gamma_map = r.gamma_map;
        features = r.y;
    }

    last_attention_ = std::move(maps);
    return head.forward(features);
}

std::vector<NamedTensor> CANetModel::parameters() const {
    std::vector<NamedTensor> out;
    for (size_t i = 0; i < encoders.size(); ++i) {
        const std::string p = "encoder" + std::to_string(i + 1);
        encoders[i].c1.collect_parameters(p + ".c1", out);
        encoders[i].c2.collect_parameters(p + ".c2", out);
    }
    for (size_t i = 0; i < decoders.size(); ++i) {
        const std::string p = "decoder" + std::to_string(4 - i); // named by level
        decoders[i].c1.collect_parameters(p + ".c1", out);
        decoders[i].c2.collect_parameters(p + ".c2", out);
    }
    if (has_nonlocal) nonlocal.collect_parameters("sa.nonlocal", out);
    for (size_t i = 0; i < gates.size(); ++i) {
        gates[i].collect_parameters("sa.gate" + std::to_string(gate_levels[i]), out);
    }
    for (size_t i = 0; i < ca_encoder.size(); ++i) {
        ca_encoder[i].collect_parameters("ca.enc" + std::to_string(i + 1), out);
    }
    for (size_t i = 0; i < ca_decoder.size(); ++i) {
        ca_decoder[i].collect_parameters("ca.dec" + std::to_string(4 - static_cast<int64_t>(i)), out);
    }
    if (has_la) scale_attention.collect_parameters("la", out);
    head.collect_parameters("head", out);
    return out;
}

std::vector<NamedTensor> CANetModel::buffers() const {
    std::vector<NamedTensor> out;
    for (size_t i = 0; i < encoders.size(); ++i) {
        const std::string p = "encoder" + std::to_string(i + 1);
        encoders[i].c1.collect_buffers(p + ".c1", out);
        encoders[i].c2.collect_buffers(p + ".c2", out);
    }
    for (size_t i = 0; i < decoders.size(); ++i) {
        const std::string p = "decoder" + std::to_string(4 - i);
        decoders[i].c1.collect_buffers(p + ".c1", out);
        decoders[i].c2.collect_buffers(p + ".c2", out);
    }
    if (has_nonlocal) nonlocal.collect_buffers("sa.nonlocal", out);
    for (size_t i = 0; i < gates.size(); ++i) {
        gates[i].collect_buffers("sa.gate" + std::to_string(gate_levels[i]), out);
    }
    return out;
}

std::vector<NamedTensor> CANetModel::state() const {
    std::vector<NamedTensor> out = parameters();
    std::vector<NamedTensor> buf = buffers();
    out.insert(out.end(), buf.begin(), buf.end());
    return out;
}

void CANetModel::load_state(const std::vector<NamedTensor>& named) {
    std::map<std::string, const Tensor*> lookup;
    for (const auto& [name, t] : named) lookup[name] = &t;
    for (auto& [name, t] : state()) {
        auto it = lookup.find(name);
        if (it == lookup.end()) throw FormatError("checkpoint is missing tensor: " + name);
        if (it->second->shape() != t.shape()) {
            throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(it->second->shape()) +
                              ", model expects " + shape_str(t.shape()));
        }
        t.data() = it->second->data();
    }
}

int64_t CANetModel::parameter_total() const { return parameter_count(parameters()); }

std::vector<std::pair<std::string, int64_t>> CANetModel::parameter_counts_by_module() const {
    std::vector<std::pair<std::string, int64_t>> out = {
        {"encoder", 0}, {"decoder", 0}, {"spatial_attention", 0},
        {"channel_attention", 0}, {"scale_attention", 0}, {"head", 0}};
    for (const auto& [name, t] : parameters()) {
        size_t slot;
        if (name.rfind("encoder", 0) == 0) slot = 0;
        else if (name.rfind("decoder", 0) == 0) slot = 1;
        else if (name.rfind("sa.", 0) == 0) slot = 2;
        else if (name.rfind("ca.", 0) == 0) slot = 3;
        else if (name.rfind("la", 0) == 0) slot = 4;
        else slot = 5;
        out[slot].second += t.numel();
    }
    return out;
}

MaskBatch predict_mask(const Tensor& logits) {
    if (logits.rank() != 4) throw DimensionError("predict_mask expects N×K×H×W logits, got " + shape_str(logits.shape()));
    check_finite(logits, "logits");
    MaskBatch m;
    m.n = logits.dim(0);
    m.h = logits.dim(2);
    m.w = logits.dim(3);
    const int64_t k = logits.dim(1), hw = m.h * m.w;
    m.labels.assign(static_cast<size_t>(m.n * hw), 0);
    const auto& lv = logits.data();
    for (int64_t b = 0; b < m.n; ++b) {
        for (int64_t p = 0; p < hw; ++p) {
            int32_t best = 0;
            double bv = lv[(b * k) * hw + p];
            for (int64_t c = 1; c < k; ++c) {
                const double v = lv[(b * k + c) * hw + p];
                if (v > bv) { // strict: ties resolve to the lower class index
                    bv = v;
                    best = static_cast<int32_t>(c);
                }
            }
            m.labels[static_cast<size_t>(b * hw + p)] = best;
        }
    }
    return m;
}

} // namespace attnseg
