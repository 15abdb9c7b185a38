#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnseg/rng.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

// Raw 8-bit image, planar channel-major storage.
struct ImageU8 {
    int64_t channels = 0, h = 0, w = 0;
    std::vector<uint8_t> pixels; // channels·h·w
};

ImageU8 read_pnm(const std::string& path); // binary PGM (P5) or PPM (P6), maxval <= 255
void write_pgm(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& gray);
void write_ppm(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& rgb_planar);

struct DatasetManifest {
    struct Entry {
        std::string image, mask, id;
    };

    int64_t classes = 2;
    int64_t channels = 1;
    std::vector<double> mean, stddev;        // per channel, in [0,1] units
    std::map<int, int> value_to_label;       // mask gray value -> class label
    std::map<std::string, std::vector<Entry>> splits; // train / val / test
    std::string base_dir;                    // resolved from the manifest location

    // Validates split-id disjointness and that every referenced file exists.
    static DatasetManifest load(const std::string& path);
    void save(const std::string& path) const;

    std::string resolve(const std::string& relative) const;
    const std::vector<Entry>& split(const std::string& name) const;
};

struct Sample {
    Tensor image;              // C×H×W, normalized
    std::vector<int32_t> mask; // h·w labels
    int64_t h = 0, w = 0;
    std::string id;
};

// [0,1] scaling followed by per-channel standardization with the manifest's
// dataset-level mean/std.
Tensor load_image(const std::string& path, const DatasetManifest& m);
std::vector<int32_t> load_mask(const std::string& path, const DatasetManifest& m, int64_t& h, int64_t& w);
Tensor denormalize_image(const Tensor& image, const DatasetManifest& m); // back to [0,1] scale

Sample load_sample(const DatasetManifest& m, const DatasetManifest::Entry& entry);
std::vector<Sample> load_split(const DatasetManifest& m, const std::string& split);

// ---- synthetic blob dataset ----

struct SynthConfig {
    int64_t n_train = 20;
    int64_t n_val = 4;
    int64_t n_test = 0;
    int64_t size = 64;          // square images, must be divisible by 16
    double scale_lo = 0.05;     // blob radius as a fraction of size
    double scale_hi = 0.4;
    uint64_t seed = 0;
};

// Writes img_*.pgm / msk_*.pgm plus manifest.json into out_dir; images carry
// 1-2 soft-edged elliptical blobs over textured noise with exact masks.
// Returns the manifest path. Deterministic per seed.
std::string synth_blobs(const SynthConfig& cfg, const std::string& out_dir);

// One single-blob probe image (plus optional exact mask) at a fixed radius
// fraction; used for scale-attention inspection.
void write_blob_probe(const std::string& image_path, const std::string& mask_path,
                      int64_t size, double radius_frac, uint64_t seed);

} // namespace attnseg
