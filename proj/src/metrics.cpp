#include "attnseg/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace attnseg {

BinaryMask BinaryMask::from_labels(const MaskBatch& batch, int64_t image, int32_t label) {
    BinaryMask m(batch.h, batch.w);
    const int64_t hw = batch.h * batch.w;
    for (int64_t i = 0; i < hw; ++i) {
        m.on[static_cast<size_t>(i)] = batch.labels[static_cast<size_t>(image * hw + i)] == label ? 1 : 0;
    }
    return m;
}

int64_t BinaryMask::count() const {
    int64_t n = 0;
    for (uint8_t v : on) n += v != 0;
    return n;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    if (a.h != b.h || a.w != b.w) {
        throw DimensionError("dice: mask extents differ: " + std::to_string(a.h) + "x" + std::to_string(a.w) +
                             " vs " + std::to_string(b.h) + "x" + std::to_string(b.w));
    }
    int64_t inter = 0, ca = 0, cb = 0;
    for (size_t i = 0; i < a.on.size(); ++i) {
        const bool va = a.on[i] != 0, vb = b.on[i] != 0;
        inter += va && vb;
        ca += va;
        cb += vb;
    }
    if (ca + cb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

std::vector<std::pair<int64_t, int64_t>> extract_boundary(const BinaryMask& m) {
    std::vector<std::pair<int64_t, int64_t>> pts;
    for (int64_t y = 0; y < m.h; ++y) {
        for (int64_t x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool border = y == 0 || x == 0 || y == m.h - 1 || x == m.w - 1 ||
                                !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
            if (border) pts.emplace_back(y, x);
        }
    }
    return pts;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher 1D squared distance transform (lower envelope of
// parabolas rooted at (i, f[i])).
void dt1d(const double* f, int64_t n, double* d, int64_t* v, double* z) {
    int64_t k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int64_t q = 1; q < n; ++q) {
        double s = ((f[q] + static_cast<double>(q * q)) -
                    (f[v[k]] + static_cast<double>(v[k] * v[k]))) /
                   static_cast<double>(2 * q - 2 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + static_cast<double>(q * q)) -
                 (f[v[k]] + static_cast<double>(v[k] * v[k]))) /
                static_cast<double>(2 * q - 2 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double dq = static_cast<double>(q - v[k]);
        d[q] = dq * dq + f[v[k]];
    }
}

// exact squared Euclidean distance to the nearest site
std::vector<double> squared_edt(int64_t h, int64_t w,
                                const std::vector<std::pair<int64_t, int64_t>>& sites) {
    std::vector<double> grid(static_cast<size_t>(h * w), kInf);
    for (const auto& [y, x] : sites) grid[static_cast<size_t>(y * w + x)] = 0.0;

    const int64_t n = std::max(h, w);
    std::vector<double> f(static_cast<size_t>(n)), d(static_cast<size_t>(n)), z(static_cast<size_t>(n + 1));
    std::vector<int64_t> v(static_cast<size_t>(n));

    for (int64_t x = 0; x < w; ++x) { // columns
        for (int64_t y = 0; y < h; ++y) f[static_cast<size_t>(y)] = grid[static_cast<size_t>(y * w + x)];
        dt1d(f.data(), h, d.data(), v.data(), z.data());
        for (int64_t y = 0; y < h; ++y) grid[static_cast<size_t>(y * w + x)] = d[static_cast<size_t>(y)];
    }
    for (int64_t y = 0; y < h; ++y) { // rows
        for (int64_t x = 0; x < w; ++x) f[static_cast<size_t>(x)] = grid[static_cast<size_t>(y * w + x)];
        dt1d(f.data(), w, d.data(), v.data(), z.data());
        for (int64_t x = 0; x < w; ++x) grid[static_cast<size_t>(y * w + x)] = d[static_cast<size_t>(x)];
    }
    return grid;
}

} // namespace

double assd(const BinaryMask& a, const BinaryMask& b) {
    if (a.h != b.h || a.w != b.w) {
        throw DimensionError("assd: mask extents differ");
    }
    const auto sa = extract_boundary(a);
    const auto sb = extract_boundary(b);
    if (sa.empty() || sb.empty()) {
        throw ContractError("assd is undefined for an empty mask");
    }
    const auto dist_to_b = squared_edt(a.h, a.w, sb);
    const auto dist_to_a = squared_edt(a.h, a.w, sa);
    double total = 0.0;
    for (const auto& [y, x] : sa) total += std::sqrt(dist_to_b[static_cast<size_t>(y * a.w + x)]);
    for (const auto& [y, x] : sb) total += std::sqrt(dist_to_a[static_cast<size_t>(y * a.w + x)]);
    return total / static_cast<double>(sa.size() + sb.size());
}

namespace {

std::pair<double, double> mean_and_population_std(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double v : xs) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : xs) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / n)};
}

} // namespace

MetricsReport report(const MaskBatch& pred, const MaskBatch& truth,
                     const std::vector<int32_t>& classes, const std::vector<std::string>& ids) {
    if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w) {
        throw DimensionError("report: prediction and ground-truth batches are misaligned");
    }
    if (static_cast<int64_t>(ids.size()) != pred.n) {
        throw DimensionError("report: id list does not match batch size");
    }
    MetricsReport rep;
    rep.classes = classes;
    for (int32_t cls : classes) {
        auto& rows = rep.per_image[cls];
        std::vector<double> dices, assds;
        int64_t undefined = 0;
        for (int64_t i = 0; i < pred.n; ++i) {
            const BinaryMask pm = BinaryMask::from_labels(pred, i, cls);
            const BinaryMask tm = BinaryMask::from_labels(truth, i, cls);
            ImageMetrics im;
            im.id = ids[static_cast<size_t>(i)];
            im.dice = dice(pm, tm);
            dices.push_back(im.dice);
            try {
                im.assd = assd(pm, tm);
                assds.push_back(*im.assd);
            } catch (const ContractError&) {
                ++undefined;
            }
            rows.push_back(std::move(im));
        }
        ClassSummary s;
        auto [dm, ds] = mean_and_population_std(dices);
        s.dice_mean = dm;
        s.dice_std = ds;
        s.assd_undefined = undefined;
        if (!assds.empty()) {
            auto [am, as] = mean_and_population_std(assds);
            s.assd_mean = am;
            s.assd_std = as;
        }
        rep.summary[cls] = s;
    }
    return rep;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    for (int32_t cls : classes) {
        nlohmann::json jc;
        const ClassSummary& s = summary.at(cls);
        jc["dice_mean"] = s.dice_mean;
        jc["dice_std"] = s.dice_std;
        jc["assd_mean"] = s.assd_mean ? nlohmann::json(*s.assd_mean) : nlohmann::json(nullptr);
        jc["assd_std"] = s.assd_std ? nlohmann::json(*s.assd_std) : nlohmann::json(nullptr);
        jc["assd_undefined_count"] = s.assd_undefined;
        nlohmann::json rows = nlohmann::json::array();
        for (const ImageMetrics& im : per_image.at(cls)) {
            rows.push_back({{"id", im.id},
                            {"dice", im.dice},
                            {"assd", im.assd ? nlohmann::json(*im.assd) : nlohmann::json(nullptr)}});
        }
        jc["images"] = rows;
        j["class_" + std::to_string(cls)] = jc;
    }
    return j;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "id,class,dice,assd\n";
    for (int32_t cls : classes) {
        for (const ImageMetrics& im : per_image.at(cls)) {
            os << im.id << "," << cls << "," << im.dice << ",";
            if (im.assd) os << *im.assd;
            os << "\n";
        }
    }
    return os.str();
}

} // namespace attnseg
