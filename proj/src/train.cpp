#include "attnseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include "attnseg/metrics.hpp"

namespace attnseg {

void TrainConfig::validate() const {
    if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be positive");
    if (rotation_range < 0.0 || rotation_range > 3.141592653589793) {
        throw ConfigError("rotation_range must lie in [0, pi]");
    }
    if (crop_h < 0 || crop_w < 0 || (crop_h > 0) != (crop_w > 0)) {
        throw ConfigError("crop extents must both be zero or both positive");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lr0", lr0},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"lr_decay_every", lr_decay_every},
            {"seed", seed},
            {"augment_flips", augment_flips},
            {"augment_rotation", augment_rotation},
            {"rotation_range", rotation_range},
            {"crop_h", crop_h},
            {"crop_w", crop_w}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr0 = j.value("lr0", c.lr0);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.seed = j.value("seed", c.seed);
    c.augment_flips = j.value("augment_flips", c.augment_flips);
    c.augment_rotation = j.value("augment_rotation", c.augment_rotation);
    c.rotation_range = j.value("rotation_range", c.rotation_range);
    c.crop_h = j.value("crop_h", c.crop_h);
    c.crop_w = j.value("crop_w", c.crop_w);
    c.validate();
    return c;
}

double lr_at(int64_t epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ContractError("lr_at: epoch must be non-negative");
    return cfg.lr0 * std::pow(0.5, static_cast<double>(epoch / cfg.lr_decay_every));
}

Tensor soft_dice_loss(const Tensor& probs, const Tensor& target_onehot) {
    if (probs.shape() != target_onehot.shape() || probs.rank() != 4) {
        throw DimensionError("soft_dice_loss: probs " + shape_str(probs.shape()) +
                             " and target " + shape_str(target_onehot.shape()) + " must both be N×K×H×W");
    }
    constexpr double kEps = 1e-5;
    Tensor inter = sum_spatial(mul(probs, target_onehot)); // N×K
    Tensor denom = add(sum_spatial(probs), sum_spatial(target_onehot));
    Tensor per_class = div(affine(inter, 2.0, kEps), affine(denom, 1.0, kEps));
    return affine(mean_all(per_class), -1.0, 1.0);
}

// ---- optimizer ----

void AdamState::init(const std::vector<NamedTensor>& params) {
    step_count = 0;
    m.clear();
    v.clear();
    for (const auto& [name, t] : params) {
        m.emplace_back(static_cast<size_t>(t.numel()), 0.0);
        v.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    }
}

void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr) {
    if (state.m.size() != params.size()) {
        throw ContractError("adam state does not match the parameter list");
    }
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p].second;
        if (!t.has_grad()) continue; // no gradient reached this parameter
        auto& w = t.data();
        const auto& g = t.grad();
        auto& mp = state.m[p];
        auto& vp = state.v[p];
        if (mp.size() != w.size()) throw ContractError("adam moment buffer shape mismatch");
        for (size_t i = 0; i < w.size(); ++i) {
            mp[i] = state.beta1 * mp[i] + (1.0 - state.beta1) * g[i];
            vp[i] = state.beta2 * vp[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = mp[i] / bc1;
            const double vhat = vp[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void add_weight_decay(std::vector<NamedTensor>& params, double weight_decay) {
    if (weight_decay == 0.0) return;
    for (auto& [name, t] : params) {
        auto& g = t.grad(); // allocate so decay applies even to untouched params
        const auto& w = t.data();
        for (size_t i = 0; i < g.size(); ++i) g[i] += weight_decay * w[i];
    }
}

void zero_grads(std::vector<NamedTensor>& params) {
    for (auto& [name, t] : params) t.zero_grad();
}

// ---- augmentation ----

namespace {

Sample crop_sample(const Sample& s, int64_t crop_h, int64_t crop_w, Rng& rng) {
    if (crop_h > s.h || crop_w > s.w) {
        throw ConfigError("crop size exceeds the image extents");
    }
    const int64_t c = s.image.dim(0);
    const int64_t top = rng.uniform_int(0, s.h - crop_h);
    const int64_t left = rng.uniform_int(0, s.w - crop_w);
    Sample out;
    out.id = s.id;
    out.h = crop_h;
    out.w = crop_w;
    std::vector<double> img(static_cast<size_t>(c * crop_h * crop_w));
    out.mask.resize(static_cast<size_t>(crop_h * crop_w));
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < crop_h; ++y) {
            for (int64_t x = 0; x < crop_w; ++x) {
                img[static_cast<size_t>((ch * crop_h + y) * crop_w + x)] =
                    s.image.data()[static_cast<size_t>((ch * s.h + top + y) * s.w + left + x)];
            }
        }
    }
    for (int64_t y = 0; y < crop_h; ++y) {
        for (int64_t x = 0; x < crop_w; ++x) {
            out.mask[static_cast<size_t>(y * crop_w + x)] =
                s.mask[static_cast<size_t>((top + y) * s.w + left + x)];
        }
    }
    out.image = Tensor::from_data({c, crop_h, crop_w}, std::move(img));
    return out;
}

void flip_horizontal(Sample& s) {
    const int64_t c = s.image.dim(0);
    auto& img = s.image.data();
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < s.h; ++y) {
            double* row = img.data() + (ch * s.h + y) * s.w;
            std::reverse(row, row + s.w);
        }
    }
    for (int64_t y = 0; y < s.h; ++y) {
        int32_t* row = s.mask.data() + y * s.w;
        std::reverse(row, row + s.w);
    }
}

void flip_vertical(Sample& s) {
    const int64_t c = s.image.dim(0);
    auto& img = s.image.data();
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t y = 0; y < s.h / 2; ++y) {
            double* a = img.data() + (ch * s.h + y) * s.w;
            double* b = img.data() + (ch * s.h + (s.h - 1 - y)) * s.w;
            std::swap_ranges(a, a + s.w, b);
        }
    }
    for (int64_t y = 0; y < s.h / 2; ++y) {
        int32_t* a = s.mask.data() + y * s.w;
        int32_t* b = s.mask.data() + (s.h - 1 - y) * s.w;
        std::swap_ranges(a, a + s.w, b);
    }
}

Sample rotate_sample(const Sample& s, double angle) {
    const int64_t c = s.image.dim(0);
    const double cy = static_cast<double>(s.h - 1) / 2.0;
    const double cx = static_cast<double>(s.w - 1) / 2.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    Sample out;
    out.id = s.id;
    out.h = s.h;
    out.w = s.w;
    std::vector<double> img(static_cast<size_t>(c * s.h * s.w), 0.0);
    out.mask.assign(static_cast<size_t>(s.h * s.w), 0);
    for (int64_t y = 0; y < s.h; ++y) {
        for (int64_t x = 0; x < s.w; ++x) {
            // inverse rotation around the image centre
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double sy = ca * dy + sa * dx + cy;
            const double sx = -sa * dy + ca * dx + cx;
            // bilinear with zero padding for the image
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            const int64_t x0 = static_cast<int64_t>(std::floor(sx));
            const double fy = sy - static_cast<double>(y0);
            const double fx = sx - static_cast<double>(x0);
            for (int64_t ch = 0; ch < c; ++ch) {
                auto pix = [&](int64_t yy, int64_t xx) -> double {
                    if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) return 0.0;
                    return s.image.data()[static_cast<size_t>((ch * s.h + yy) * s.w + xx)];
                };
                const double top = pix(y0, x0) + fx * (pix(y0, x0 + 1) - pix(y0, x0));
                const double bot = pix(y0 + 1, x0) + fx * (pix(y0 + 1, x0 + 1) - pix(y0 + 1, x0));
                img[static_cast<size_t>((ch * s.h + y) * s.w + x)] = top + fy * (bot - top);
            }
            // nearest neighbour for the mask
            const int64_t ny = static_cast<int64_t>(std::lround(sy));
            const int64_t nx = static_cast<int64_t>(std::lround(sx));
            if (ny >= 0 && ny < s.h && nx >= 0 && nx < s.w) {
                out.mask[static_cast<size_t>(y * s.w + x)] = s.mask[static_cast<size_t>(ny * s.w + nx)];
            }
        }
    }
    out.image = Tensor::from_data({c, s.h, s.w}, std::move(img));
    return out;
}

} // namespace

Sample augment(const Sample& sample, const TrainConfig& cfg, Rng& rng) {
    Sample out = sample;
    out.image = sample.image.detach();
    if (cfg.crop_h > 0) out = crop_sample(out, cfg.crop_h, cfg.crop_w, rng);
    if (cfg.augment_flips) {
        if (rng.uniform() < 0.5) flip_horizontal(out);
        if (rng.uniform() < 0.5) flip_vertical(out);
    }
    if (cfg.augment_rotation && cfg.rotation_range > 0.0) {
        out = rotate_sample(out, rng.uniform(-cfg.rotation_range, cfg.rotation_range));
    }
    return out;
}

// ---- batch assembly ----

Tensor stack_images(const std::vector<Sample>& samples, const std::vector<int64_t>& indices) {
    if (indices.empty()) throw ContractError("stack_images: empty batch");
    const Sample& first = samples[static_cast<size_t>(indices[0])];
    const int64_t c = first.image.dim(0), h = first.h, w = first.w;
    Tensor batch = Tensor::zeros({static_cast<int64_t>(indices.size()), c, h, w});
    const int64_t block = c * h * w;
    for (size_t i = 0; i < indices.size(); ++i) {
        const Sample& s = samples[static_cast<size_t>(indices[i])];
        if (s.image.dim(0) != c || s.h != h || s.w != w) {
            throw ContractError("stack_images: samples in a batch must share extents");
        }
        std::copy_n(s.image.data().begin(), block, batch.data().begin() + static_cast<int64_t>(i) * block);
    }
    return batch;
}

Tensor one_hot_masks(const std::vector<Sample>& samples, const std::vector<int64_t>& indices,
                     int64_t num_classes) {
    const Sample& first = samples[static_cast<size_t>(indices[0])];
    const int64_t h = first.h, w = first.w, hw = h * w;
    Tensor target = Tensor::zeros({static_cast<int64_t>(indices.size()), num_classes, h, w});
    auto& tv = target.data();
    for (size_t i = 0; i < indices.size(); ++i) {
        const Sample& s = samples[static_cast<size_t>(indices[i])];
        for (int64_t p = 0; p < hw; ++p) {
            const int32_t label = s.mask[static_cast<size_t>(p)];
            if (label < 0 || label >= num_classes) {
                throw ContractError("mask label " + std::to_string(label) + " outside [0," +
                                    std::to_string(num_classes) + ") for id " + s.id);
            }
            tv[static_cast<size_t>((static_cast<int64_t>(i) * num_classes + label) * hw + p)] = 1.0;
        }
    }
    return target;
}

double mean_foreground_dice(CANetModel& model, const std::vector<Sample>& samples) {
    double total = 0.0;
    int64_t count = 0;
    for (const Sample& s : samples) {
        Tensor x = stack_images({s}, {0});
        Tensor logits = model.forward(x, /*training=*/false);
        MaskBatch pred = predict_mask(logits);
        MaskBatch truth;
        truth.n = 1;
        truth.h = s.h;
        truth.w = s.w;
        truth.labels = s.mask;
        for (int32_t cls = 1; cls < model.config.num_classes; ++cls) {
            total += dice(BinaryMask::from_labels(pred, 0, cls), BinaryMask::from_labels(truth, 0, cls));
            ++count;
        }
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

// ---- training loop ----

namespace {

std::vector<NamedTensor> snapshot_state(const CANetModel& model) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : model.state()) out.emplace_back(name, t.detach());
    return out;
}

} // namespace

TrainResult train(CANetModel& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  std::ostream* progress) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) {
        throw ConfigError("training requires non-empty train and validation splits");
    }

    TrainResult result;
    std::vector<NamedTensor> params = model.parameters();
    AdamState adam;
    adam.init(params);
    zero_grads(params);

    Rng rng(cfg.seed);
    std::vector<int64_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg);

        // seeded Fisher-Yates shuffle
        for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
        }

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<Sample> batch_samples;
            std::vector<int64_t> batch_idx;
            for (size_t i = start; i < end; ++i) {
                batch_samples.push_back(augment(train_set[static_cast<size_t>(order[i])], cfg, rng));
                batch_idx.push_back(static_cast<int64_t>(batch_samples.size()) - 1);
            }
            Tensor x = stack_images(batch_samples, batch_idx);
            Tensor target = one_hot_masks(batch_samples, batch_idx, model.config.num_classes);

            Tape tape;
            {
                TapeScope scope(tape);
                Tensor logits = model.forward(x, /*training=*/true);
                Tensor loss = soft_dice_loss(softmax_channels(logits), target);
                loss_sum += loss.item();
                tape.backward(loss);
            }
            add_weight_decay(params, cfg.weight_decay);
            adam_step(params, adam, lr);
            zero_grads(params);
            ++batches;
        }

        const double val_dice = mean_foreground_dice(model, val_set);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

        EpochLog entry{epoch, lr, loss_sum / static_cast<double>(batches), val_dice, seconds};
        result.log.push_back(entry);
        if (progress) {
            nlohmann::json j{{"epoch", entry.epoch},
                             {"lr", entry.lr},
                             {"train_loss", entry.train_loss},
                             {"val_dice", entry.val_dice},
                             {"seconds", entry.seconds}};
            (*progress) << j.dump() << "\n";
        }
        if (val_dice > result.best_val_dice) {
            result.best_val_dice = val_dice;
            result.best_epoch = epoch;
            result.best_state = snapshot_state(model);
        }
    }
    if (result.best_epoch < 0) {
        result.best_epoch = cfg.epochs - 1;
        result.best_state = snapshot_state(model);
    }
    return result;
}

} // namespace attnseg
