#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patchnet/backbone.hpp"
#include "patchnet/image.hpp"
#include "patchnet/kv_config.hpp"
#include "patchnet/rng.hpp"

namespace patchnet {

struct AugmentSpec {
    double crop_area_min = 0.5;
    double crop_area_max = 1.0;
    double rotation_deg_min = -5.0;
    double rotation_deg_max = 5.0;
    double brightness_min = 0.7;
    double brightness_max = 1.3;

    void validate() const;
};

struct TrainConfig {
    int epochs = 20;
    int batch_images = 16;
    double peak_lr = 1e-4;
    double warmup_fraction = 0.05;
    double weight_decay = 0.01;
    uint64_t seed = 0;
    bool augment_crop = true;
    bool augment_rotation = true;
    bool augment_brightness = true;
    AugmentSpec augment;

    void validate() const;
    // Collapses disabled stages to identity ranges.
    AugmentSpec effective_augment() const;

    static TrainConfig from_kv(const KvConfig& kv);
    std::string to_kv_text() const;
};

// Decoupled weight decay (applied to the parameters, never to the
// moment-filtered gradient), then the bias-corrected Adam update. Parameters
// without a grad buffer are treated as having zero gradient.
struct AdamWState {
    size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

void adamw_step(std::vector<std::pair<std::string, Tensor>>& params, AdamWState& state,
                double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.01);

// Cosine ramp from peak/25 to peak at step = warmup_fraction * total_steps,
// then cosine anneal down to peak/1e4 at the final step.
double onecycle_lr(size_t step, size_t total_steps, const TrainConfig& config);

// Random square crop (area fraction uniform in range, position uniform)
// resized back to S x S, rotation with zero fill, brightness multiply with
// clamp to [0,1]. The same geometric transform is applied to the mask
// (nearest-neighbor); brightness never touches masks.
std::pair<Image, Mask> augment(const Image& image, const Mask* mask, const AugmentSpec& spec,
                               Rng& rng);

// The training path sees labels only; there is no way to hand it a mask.
struct TrainSample {
    Image image;
    std::vector<uint8_t> labels;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    std::optional<double> valid_auroc;
};

struct TrainResult {
    Backbone model;
    std::vector<EpochLog> log;
};

// Full run: shuffled minibatches, per-image augmentation, patches stacked
// along the batch dimension, loss on the averaged global logits only,
// AdamW + onecycle schedule. Deterministic given (seed, config, dataset).
TrainResult train(Backbone model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& valid_set, const PatchGridSpec& grid,
                  const TrainConfig& config);

}  // namespace patchnet
