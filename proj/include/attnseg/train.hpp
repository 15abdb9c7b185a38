#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnseg/data.hpp"
#include "attnseg/model.hpp"

namespace attnseg {

struct TrainConfig {
    double lr0 = 1e-4;
    double weight_decay = 1e-8;
    int64_t batch_size = 4;
    int64_t epochs = 100;
    int64_t lr_decay_every = 256; // halve the rate every this many epochs
    uint64_t seed = 0;

    // augmentation switches
    bool augment_flips = false;
    bool augment_rotation = false;
    double rotation_range = 0.5235987755982988; // π/6
    int64_t crop_h = 0, crop_w = 0;             // 0 disables random cropping

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// lr0 · 0.5^floor(epoch / decay_every)
double lr_at(int64_t epoch, const TrainConfig& cfg);

// 1 − mean over samples and classes of (2·Σp·g + ε)/(Σp + Σg + ε), ε = 1e-5.
// probs must already be softmaxed over the class channel; target is one-hot.
Tensor soft_dice_loss(const Tensor& probs, const Tensor& target_onehot);

// ---- optimizer ----

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step_count = 0;
    std::vector<std::vector<double>> m, v; // per-parameter moment buffers

    void init(const std::vector<NamedTensor>& params);
};

// Reads each parameter's grad buffer and applies the bias-corrected update.
// Callers add any L2 term to the grads beforehand and zero them afterwards.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr);

void add_weight_decay(std::vector<NamedTensor>& params, double weight_decay); // grad += wd·w
void zero_grads(std::vector<NamedTensor>& params);

// ---- augmentation ----

// Identical geometric transforms for image and mask: optional random crop,
// horizontal/vertical flips, rotation (bilinear + zero padding for the image,
// nearest-neighbour for the mask).
Sample augment(const Sample& sample, const TrainConfig& cfg, Rng& rng);

// ---- batch assembly ----

Tensor stack_images(const std::vector<Sample>& samples, const std::vector<int64_t>& indices);
Tensor one_hot_masks(const std::vector<Sample>& samples, const std::vector<int64_t>& indices,
                     int64_t num_classes);

// Mean Dice of the argmax mask over all foreground classes and samples.
double mean_foreground_dice(CANetModel& model, const std::vector<Sample>& samples);

// ---- training loop ----

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_dice = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int64_t best_epoch = -1;
    double best_val_dice = -1.0;
    std::vector<NamedTensor> best_state; // detached snapshot (parameters + buffers)
};

// Epoch loop with seeded shuffling and augmentation; retains the snapshot
// with the best validation Dice. `progress`, when given, receives one JSON
// line per epoch.
TrainResult train(CANetModel& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

} // namespace attnseg
