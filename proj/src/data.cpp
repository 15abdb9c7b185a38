#include "attnseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace attnseg {

namespace {

int read_pnm_token(std::istream& is) {
    // skips whitespace and '#' comments
    while (true) {
        const int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int value = 0;
    is >> value;
    if (!is) throw FormatError("malformed PNM header");
    return value;
}

} // namespace

ImageU8 read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    int64_t channels;
    if (m0 == 'P' && m1 == '5') {
        channels = 1;
    } else if (m0 == 'P' && m1 == '6') {
        channels = 3;
    } else {
        std::ostringstream msg;
        msg << "unsupported image magic bytes: 0x" << std::hex << (0xff & static_cast<int>(m0))
            << " 0x" << (0xff & static_cast<int>(m1)) << " in " << path;
        throw FormatError(msg.str());
    }
    const int w = read_pnm_token(is);
    const int h = read_pnm_token(is);
    const int maxval = read_pnm_token(is);
    if (w <= 0 || h <= 0) throw FormatError("invalid image extents in " + path);
    if (maxval <= 0 || maxval > 255) {
        throw FormatError("only 8-bit PNM supported, maxval=" + std::to_string(maxval) + " in " + path);
    }
    is.get(); // the single whitespace after maxval

    ImageU8 img;
    img.channels = channels;
    img.h = h;
    img.w = w;
    const int64_t count = channels * static_cast<int64_t>(h) * w;
    std::vector<uint8_t> raw(static_cast<size_t>(count));
    is.read(reinterpret_cast<char*>(raw.data()), count);
    if (!is) throw FormatError("truncated image data in " + path);

    if (channels == 1) {
        img.pixels = std::move(raw);
    } else {
        // interleaved RGB -> planar R,G,B
        img.pixels.resize(static_cast<size_t>(count));
        const int64_t hw = static_cast<int64_t>(h) * w;
        for (int64_t i = 0; i < hw; ++i) {
            for (int64_t c = 0; c < 3; ++c) {
                img.pixels[static_cast<size_t>(c * hw + i)] = raw[static_cast<size_t>(3 * i + c)];
            }
        }
    }
    return img;
}

void write_pgm(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& gray) {
    if (static_cast<int64_t>(gray.size()) != h * w) throw DimensionError("write_pgm: pixel count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

void write_ppm(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& rgb_planar) {
    if (static_cast<int64_t>(rgb_planar.size()) != 3 * h * w) {
        throw DimensionError("write_ppm: pixel count mismatch");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    const int64_t hw = h * w;
    for (int64_t i = 0; i < hw; ++i) {
        for (int64_t c = 0; c < 3; ++c) {
            os.put(static_cast<char>(rgb_planar[static_cast<size_t>(c * hw + i)]));
        }
    }
}

// ---- manifest ----

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open manifest: " + path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw FormatError("manifest is not valid JSON: " + path);

    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();
    m.classes = j.value("classes", 2);
    m.channels = j.value("channels", 1);
    m.mean = j.value("mean", std::vector<double>(static_cast<size_t>(m.channels), 0.0));
    m.stddev = j.value("std", std::vector<double>(static_cast<size_t>(m.channels), 1.0));
    if (static_cast<int64_t>(m.mean.size()) != m.channels ||
        static_cast<int64_t>(m.stddev.size()) != m.channels) {
        throw FormatError("manifest mean/std length does not match channel count in " + path);
    }
    if (j.contains("value_to_label")) {
        for (auto& [key, val] : j["value_to_label"].items()) {
            m.value_to_label[std::stoi(key)] = val.get<int>();
        }
    } else {
        m.value_to_label = {{0, 0}, {255, 1}};
    }

    std::set<std::string> seen_ids;
    for (const std::string split_name : {"train", "val", "test"}) {
        if (!j.contains("splits") || !j["splits"].contains(split_name)) continue;
        for (const auto& je : j["splits"][split_name]) {
            Entry e;
            e.image = je.at("image").get<std::string>();
            e.mask = je.at("mask").get<std::string>();
            e.id = je.value("id", e.image);
            if (!seen_ids.insert(e.id).second) {
                throw ConfigError("manifest splits are not disjoint: id '" + e.id + "' appears twice");
            }
            for (const std::string& rel : {e.image, e.mask}) {
                const std::string full = (fs::path(m.base_dir) / rel).string();
                if (!fs::exists(full)) {
                    throw ConfigError("manifest references a missing file: " + full);
                }
            }
            m.splits[split_name].push_back(std::move(e));
        }
    }
    return m;
}

void DatasetManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["classes"] = classes;
    j["channels"] = channels;
    j["mean"] = mean;
    j["std"] = stddev;
    nlohmann::json v2l;
    for (const auto& [value, label] : value_to_label) v2l[std::to_string(value)] = label;
    j["value_to_label"] = v2l;
    nlohmann::json js;
    for (const auto& [name, entries] : splits) {
        nlohmann::json arr = nlohmann::json::array();
        for (const Entry& e : entries) {
            arr.push_back({{"image", e.image}, {"mask", e.mask}, {"id", e.id}});
        }
        js[name] = arr;
    }
    j["splits"] = js;
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

std::string DatasetManifest::resolve(const std::string& relative) const {
    return (fs::path(base_dir) / relative).string();
}

const std::vector<DatasetManifest::Entry>& DatasetManifest::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end() || it->second.empty()) {
        throw ConfigError("manifest split '" + name + "' is empty or missing");
    }
    return it->second;
}

Tensor load_image(const std::string& path, const DatasetManifest& m) {
    const ImageU8 img = read_pnm(path);
    if (img.channels != m.channels) {
        throw FormatError("image " + path + " has " + std::to_string(img.channels) +
                          " channels, manifest declares " + std::to_string(m.channels));
    }
    const int64_t hw = img.h * img.w;
    std::vector<double> values(static_cast<size_t>(img.channels * hw));
    for (int64_t c = 0; c < img.channels; ++c) {
        const double mu = m.mean[static_cast<size_t>(c)];
        const double sd = m.stddev[static_cast<size_t>(c)];
        for (int64_t i = 0; i < hw; ++i) {
            const double v = static_cast<double>(img.pixels[static_cast<size_t>(c * hw + i)]) / 255.0;
            values[static_cast<size_t>(c * hw + i)] = (v - mu) / sd;
        }
    }
    return Tensor::from_data({img.channels, img.h, img.w}, std::move(values));
}

Tensor denormalize_image(const Tensor& image, const DatasetManifest& m) {
    const int64_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
    std::vector<double> values(image.data());
    for (int64_t ch = 0; ch < c; ++ch) {
        const double mu = m.mean[static_cast<size_t>(ch)];
        const double sd = m.stddev[static_cast<size_t>(ch)];
        for (int64_t i = 0; i < hw; ++i) {
            values[static_cast<size_t>(ch * hw + i)] =
                values[static_cast<size_t>(ch * hw + i)] * sd + mu;
        }
    }
    return Tensor::from_data(image.shape(), std::move(values));
}

std::vector<int32_t> load_mask(const std::string& path, const DatasetManifest& m, int64_t& h, int64_t& w) {
    const ImageU8 img = read_pnm(path);
    if (img.channels != 1) throw FormatError("mask must be grayscale PGM: " + path);
    h = img.h;
    w = img.w;
    std::vector<int32_t> labels(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        const int value = img.pixels[i];
        auto it = m.value_to_label.find(value);
        if (it == m.value_to_label.end()) {
            throw FormatError("mask " + path + " contains unmapped gray value " + std::to_string(value));
        }
        labels[i] = it->second;
    }
    return labels;
}

Sample load_sample(const DatasetManifest& m, const DatasetManifest::Entry& entry) {
    Sample s;
    s.id = entry.id;
    s.image = load_image(m.resolve(entry.image), m);
    s.mask = load_mask(m.resolve(entry.mask), m, s.h, s.w);
    if (s.h != s.image.dim(1) || s.w != s.image.dim(2)) {
        throw FormatError("image/mask extents differ for id " + entry.id);
    }
    return s;
}

std::vector<Sample> load_split(const DatasetManifest& m, const std::string& split) {
    std::vector<Sample> out;
    for (const auto& e : m.split(split)) out.push_back(load_sample(m, e));
    return out;
}

// ---- synthetic blobs ----

namespace {

struct Blob {
    double cy, cx, ry, rx, angle, bump;
};

void render(int64_t size, const std::vector<Blob>& blobs, Rng& rng,
            std::vector<uint8_t>& image, std::vector<uint8_t>& mask) {
    const double n = static_cast<double>(size);
    // low-frequency texture waves
    struct Wave {
        double amp, fy, fx, phase;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 3; ++k) {
        const double freq = rng.uniform(0.5, 2.5) * 6.283185307179586 / n;
        const double dir = rng.uniform(0.0, 6.283185307179586);
        waves.push_back({rng.uniform(0.03, 0.08), freq * std::sin(dir), freq * std::cos(dir),
                         rng.uniform(0.0, 6.283185307179586)});
    }

    image.assign(static_cast<size_t>(size * size), 0);
    mask.assign(static_cast<size_t>(size * size), 0);
    for (int64_t y = 0; y < size; ++y) {
        for (int64_t x = 0; x < size; ++x) {
            double v = 0.35;
            for (const Wave& wv : waves) {
                v += wv.amp * std::cos(wv.fy * static_cast<double>(y) + wv.fx * static_cast<double>(x) + wv.phase);
            }
            v += rng.uniform(-0.03, 0.03); // grain
            bool inside = false;
            for (const Blob& b : blobs) {
                const double dy = static_cast<double>(y) - b.cy;
                const double dx = static_cast<double>(x) - b.cx;
                const double uy = std::cos(b.angle) * dy - std::sin(b.angle) * dx;
                const double ux = std::sin(b.angle) * dy + std::cos(b.angle) * dx;
                const double d = std::sqrt((uy / b.ry) * (uy / b.ry) + (ux / b.rx) * (ux / b.rx));
                if (d <= 1.0) inside = true;
                const double soft = std::clamp((1.08 - d) / 0.16, 0.0, 1.0);
                v += b.bump * soft;
            }
            v = std::clamp(v, 0.0, 1.0);
            image[static_cast<size_t>(y * size + x)] = static_cast<uint8_t>(std::lround(v * 255.0));
            if (inside) mask[static_cast<size_t>(y * size + x)] = 255;
        }
    }
}

Blob random_blob(int64_t size, double scale_lo, double scale_hi, Rng& rng) {
    Blob b;
    const double n = static_cast<double>(size);
    b.rx = std::max(2.0, rng.uniform(scale_lo, scale_hi) * n);
    b.ry = std::max(2.0, b.rx * rng.uniform(0.6, 1.0));
    const double r = std::max(b.rx, b.ry);
    const double margin = std::min(r + 2.0, n / 2.0 - 1.0);
    b.cy = rng.uniform(margin, n - 1.0 - margin);
    b.cx = rng.uniform(margin, n - 1.0 - margin);
    b.angle = rng.uniform(0.0, 3.141592653589793);
    b.bump = rng.uniform(0.25, 0.35);
    return b;
}

} // namespace

std::string synth_blobs(const SynthConfig& cfg, const std::string& out_dir) {
    if (cfg.size % 16 != 0) throw ConfigError("synthetic image size must be divisible by 16");
    if (cfg.scale_lo <= 0.0 || cfg.scale_hi <= cfg.scale_lo || cfg.scale_hi > 0.45) {
        throw ConfigError("synthetic scale range must satisfy 0 < lo < hi <= 0.45");
    }
    fs::create_directories(out_dir);
    Rng rng(cfg.seed);

    const int64_t total = cfg.n_train + cfg.n_val + cfg.n_test;
    std::vector<std::vector<uint8_t>> images(static_cast<size_t>(total)), masks(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        std::vector<Blob> blobs;
        const int n_blobs = rng.uniform() < 0.5 ? 1 : 2;
        for (int b = 0; b < n_blobs; ++b) blobs.push_back(random_blob(cfg.size, cfg.scale_lo, cfg.scale_hi, rng));
        render(cfg.size, blobs, rng, images[static_cast<size_t>(i)], masks[static_cast<size_t>(i)]);
    }

    // dataset-level statistics over every generated image
    double sum = 0.0, sum_sq = 0.0;
    int64_t count = 0;
    for (const auto& img : images) {
        for (uint8_t p : img) {
            const double v = static_cast<double>(p) / 255.0;
            sum += v;
            sum_sq += v * v;
            ++count;
        }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sum_sq / static_cast<double>(count) - mean * mean;
    const double stddev = std::sqrt(std::max(var, 1e-12));

    DatasetManifest m;
    m.classes = 2;
    m.channels = 1;
    m.mean = {mean};
    m.stddev = {stddev};
    m.value_to_label = {{0, 0}, {255, 1}};
    m.base_dir = out_dir;

    char name[64];
    for (int64_t i = 0; i < total; ++i) {
        std::snprintf(name, sizeof(name), "img_%04d.pgm", static_cast<int>(i));
        const std::string img_name = name;
        std::snprintf(name, sizeof(name), "msk_%04d.pgm", static_cast<int>(i));
        const std::string msk_name = name;
        write_pgm((fs::path(out_dir) / img_name).string(), cfg.size, cfg.size, images[static_cast<size_t>(i)]);
        write_pgm((fs::path(out_dir) / msk_name).string(), cfg.size, cfg.size, masks[static_cast<size_t>(i)]);
        std::snprintf(name, sizeof(name), "sample_%04d", static_cast<int>(i));
        const std::string split = i < cfg.n_train ? "train" : (i < cfg.n_train + cfg.n_val ? "val" : "test");
        m.splits[split].push_back({img_name, msk_name, name});
    }

    const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
    m.save(manifest_path);
    return manifest_path;
}

void write_blob_probe(const std::string& image_path, const std::string& mask_path,
                      int64_t size, double radius_frac, uint64_t seed) {
    Rng rng(seed);
    Blob b;
    const double n = static_cast<double>(size);
    b.rx = std::max(2.0, radius_frac * n);
    b.ry = b.rx * rng.uniform(0.85, 1.0);
    b.cy = n / 2.0 + rng.uniform(-0.05, 0.05) * n;
    b.cx = n / 2.0 + rng.uniform(-0.05, 0.05) * n;
    b.angle = rng.uniform(0.0, 3.141592653589793);
    b.bump = 0.3;
    std::vector<uint8_t> image, mask;
    render(size, {b}, rng, image, mask);
    write_pgm(image_path, size, size, image);
    if (!mask_path.empty()) write_pgm(mask_path, size, size, mask);
}

} // namespace attnseg
