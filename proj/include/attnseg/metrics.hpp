#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnseg/model.hpp"

namespace attnseg {

struct BinaryMask {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> on; // h·w, nonzero = foreground

    BinaryMask() = default;
    BinaryMask(int64_t h_, int64_t w_) : h(h_), w(w_), on(static_cast<size_t>(h_ * w_), 0) {}

    static BinaryMask from_labels(const MaskBatch& batch, int64_t image, int32_t label);

    bool at(int64_t y, int64_t x) const { return on[static_cast<size_t>(y * w + x)] != 0; }
    void set(int64_t y, int64_t x, bool v) { on[static_cast<size_t>(y * w + x)] = v ? 1 : 0; }
    int64_t count() const;
    bool empty() const { return count() == 0; }
};

// 2|a∩b| / (|a|+|b|); both-empty pairs score 1.0.
double dice(const BinaryMask& a, const BinaryMask& b);

// Foreground pixels with at least one background 4-neighbour; the image edge
// counts as background.
std::vector<std::pair<int64_t, int64_t>> extract_boundary(const BinaryMask& m);

// Average symmetric surface distance in pixels, via an exact Euclidean
// distance transform. Throws ContractError when either mask is empty (the
// metric is undefined there).
double assd(const BinaryMask& a, const BinaryMask& b);

struct ImageMetrics {
    std::string id;
    double dice = 0.0;
    std::optional<double> assd; // null when undefined for this image
};

struct ClassSummary {
    double dice_mean = 0.0, dice_std = 0.0;     // population std
    std::optional<double> assd_mean, assd_std;  // over defined entries only
    int64_t assd_undefined = 0;
};

struct MetricsReport {
    std::vector<int32_t> classes; // foreground classes evaluated
    std::map<int32_t, std::vector<ImageMetrics>> per_image;
    std::map<int32_t, ClassSummary> summary;

    nlohmann::json to_json() const;
    std::string to_csv() const; // header + one row per image × class
};

// Per-class, per-image Dice/ASSD with mean ± std aggregates. Undefined ASSDs
// are recorded as nulls and excluded from the means with a count note.
MetricsReport report(const MaskBatch& pred, const MaskBatch& truth,
                     const std::vector<int32_t>& classes, const std::vector<std::string>& ids);

} // namespace attnseg
