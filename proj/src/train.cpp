#include "patchnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "patchnet/metrics.hpp"
#include "patchnet/patch_engine.hpp"

namespace patchnet {

void AugmentSpec::validate() const {
    if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0)) {
        throw ConfigError("augment: crop area range must satisfy 0 < min <= max <= 1");
    }
    if (rotation_deg_min > rotation_deg_max) {
        throw ConfigError("augment: rotation range is reversed");
    }
    if (!(brightness_min > 0.0 && brightness_min <= brightness_max)) {
        throw ConfigError("augment: brightness range must satisfy 0 < min <= max");
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_images < 1) throw ConfigError("train: batch_images must be >= 1");
    if (peak_lr <= 0.0) throw ConfigError("train: peak_lr must be > 0");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0) {
        throw ConfigError("train: warmup_fraction must be in (0,1)");
    }
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    augment.validate();
}

AugmentSpec TrainConfig::effective_augment() const {
    AugmentSpec spec = augment;
    if (!augment_crop) {
        spec.crop_area_min = 1.0;
        spec.crop_area_max = 1.0;
    }
    if (!augment_rotation) {
        spec.rotation_deg_min = 0.0;
        spec.rotation_deg_max = 0.0;
    }
    if (!augment_brightness) {
        spec.brightness_min = 1.0;
        spec.brightness_max = 1.0;
    }
    return spec;
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
    TrainConfig c;
    c.epochs = kv.get_int("epochs", c.epochs);
    c.batch_images = kv.get_int("batch_images", c.batch_images);
    c.peak_lr = kv.get_double("peak_lr", c.peak_lr);
    c.warmup_fraction = kv.get_double("warmup_fraction", c.warmup_fraction);
    c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
    c.seed = kv.get_u64("seed", c.seed);
    c.augment_crop = kv.get_bool("augment_crop", c.augment_crop);
    c.augment_rotation = kv.get_bool("augment_rotation", c.augment_rotation);
    c.augment_brightness = kv.get_bool("augment_brightness", c.augment_brightness);
    c.augment.crop_area_min = kv.get_double("crop_area_min", c.augment.crop_area_min);
    c.augment.crop_area_max = kv.get_double("crop_area_max", c.augment.crop_area_max);
    c.augment.rotation_deg_min = kv.get_double("rotation_deg_min", c.augment.rotation_deg_min);
    c.augment.rotation_deg_max = kv.get_double("rotation_deg_max", c.augment.rotation_deg_max);
    c.augment.brightness_min = kv.get_double("brightness_min", c.augment.brightness_min);
    c.augment.brightness_max = kv.get_double("brightness_max", c.augment.brightness_max);
    return c;
}

std::string TrainConfig::to_kv_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "epochs = " << epochs << "\n";
    out << "batch_images = " << batch_images << "\n";
    out << "peak_lr = " << peak_lr << "\n";
    out << "warmup_fraction = " << warmup_fraction << "\n";
    out << "weight_decay = " << weight_decay << "\n";
    out << "seed = " << seed << "\n";
    out << "augment_crop = " << (augment_crop ? "true" : "false") << "\n";
    out << "augment_rotation = " << (augment_rotation ? "true" : "false") << "\n";
    out << "augment_brightness = " << (augment_brightness ? "true" : "false") << "\n";
    out << "crop_area_min = " << augment.crop_area_min << "\n";
    out << "crop_area_max = " << augment.crop_area_max << "\n";
    out << "rotation_deg_min = " << augment.rotation_deg_min << "\n";
    out << "rotation_deg_max = " << augment.rotation_deg_max << "\n";
    out << "brightness_min = " << augment.brightness_min << "\n";
    out << "brightness_max = " << augment.brightness_max << "\n";
    return out.str();
}

void adamw_step(std::vector<std::pair<std::string, Tensor>>& params, AdamWState& state,
                double lr, double beta1, double beta2, double eps, double weight_decay) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].second.numel(), 0.0);
            state.v[i].assign(params[i].second.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adamw: state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].second;
        if (state.m[i].size() != t.numel()) {
            throw ShapeError("adamw: state shape mismatch for '" + params[i].first + "'");
        }
        std::span<double> p = t.mutable_data();
        const bool has_grad = t.has_grad();
        std::span<const double> g_buf = has_grad ? t.grad() : std::span<const double>{};
        double check = 0.0;
        for (size_t j = 0; j < p.size(); ++j) {
            const double g = has_grad ? g_buf[j] : 0.0;
            p[j] *= (1.0 - lr * weight_decay);
            double& m = state.m[i][j];
            double& v = state.v[i][j];
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            p[j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
            check += p[j];
        }
        if (!std::isfinite(check)) {
            throw NumericError("adamw: non-finite parameter values in '" + params[i].first +
                               "' after update");
        }
    }
}

double onecycle_lr(size_t step, size_t total_steps, const TrainConfig& config) {
    if (total_steps < 1 || step >= total_steps) {
        throw ConfigError("onecycle: step " + std::to_string(step) + " outside [0," +
                          std::to_string(total_steps) + ")");
    }
    const double start_lr = config.peak_lr / 25.0;
    const double final_lr = config.peak_lr / 1e4;
    size_t warmup = static_cast<size_t>(std::llround(config.warmup_fraction * total_steps));
    warmup = std::min(std::max<size_t>(warmup, 1), total_steps - 1);

    if (step == warmup) return config.peak_lr;
    if (step == total_steps - 1) return final_lr;
    if (step < warmup) {
        const double u = static_cast<double>(step) / warmup;
        return start_lr + (config.peak_lr - start_lr) * (1.0 - std::cos(M_PI * u)) / 2.0;
    }
    const double u = static_cast<double>(step - warmup) / (total_steps - 1 - warmup);
    return final_lr + (config.peak_lr - final_lr) * (1.0 + std::cos(M_PI * u)) / 2.0;
}

std::pair<Image, Mask> augment(const Image& image, const Mask* mask, const AugmentSpec& spec,
                               Rng& rng) {
    spec.validate();
    const int S = image.side;
    // Parameter draws happen in a fixed order so streams stay aligned no
    // matter which stages end up as identities.
    const double area = rng.uniform(spec.crop_area_min, spec.crop_area_max);
    int side = static_cast<int>(std::lround(S * std::sqrt(area)));
    side = std::clamp(side, 1, S);
    const int top = static_cast<int>(rng.uniform_index(S - side + 1));
    const int left = static_cast<int>(rng.uniform_index(S - side + 1));
    const double angle = rng.uniform(spec.rotation_deg_min, spec.rotation_deg_max);
    const double factor = rng.uniform(spec.brightness_min, spec.brightness_max);

    Image img = image;
    Mask out_mask = mask ? *mask : Mask{};
    if (side != S) {
        img = bilinear_resize(crop_image(img, top, left, side), S);
        if (out_mask.present()) out_mask = nearest_resize(crop_mask(out_mask, top, left, side), S);
    }
    if (angle != 0.0) {
        img = rotate_bilinear(img, angle);
        if (out_mask.present()) out_mask = rotate_nearest(out_mask, angle);
    }
    if (factor != 1.0) {
        for (double& v : img.px) v = std::clamp(v * factor, 0.0, 1.0);
    }
    return {std::move(img), std::move(out_mask)};
}

namespace {

// Scores every sample of a set and returns (loss mean, per-class AUROC mean
// over the classes where both labels occur).
std::pair<double, std::optional<double>> score_set(const Backbone& model,
                                                   const std::vector<TrainSample>& samples,
                                                   const PatchGridSpec& grid) {
    NoGradGuard no_grad;
    const size_t C = model.config().num_classes;
    std::vector<std::vector<double>> scores(C);
    std::vector<std::vector<uint8_t>> labels(C);
    double loss_sum = 0.0;
    for (const TrainSample& s : samples) {
        Tensor image = image_to_tensor(s.image);
        Tensor batch = stack_patches({image}, grid);
        Tensor logits = model.forward(batch);
        Tensor global = group_mean_rows(logits, grid.num_patches());
        std::vector<double> targets(C);
        for (size_t c = 0; c < C; ++c) targets[c] = s.labels[c] ? 1.0 : 0.0;
        Tensor target_t = Tensor::from_data({1, C}, targets);
        loss_sum += bce_with_logits(global, target_t).item();
        for (size_t c = 0; c < C; ++c) {
            scores[c].push_back(stable_sigmoid(global.data()[c]));
            labels[c].push_back(s.labels[c]);
        }
    }
    double auroc_sum = 0.0;
    int auroc_count = 0;
    for (size_t c = 0; c < C; ++c) {
        try {
            auroc_sum += auroc(scores[c], labels[c]);
            ++auroc_count;
        } catch (const Error&) {
            // class absent (or all-positive) in this set
        }
    }
    std::optional<double> mean_auroc;
    if (auroc_count > 0) mean_auroc = auroc_sum / auroc_count;
    return {loss_sum / samples.size(), mean_auroc};
}

}  // namespace

TrainResult train(Backbone model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& valid_set, const PatchGridSpec& grid,
                  const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw Error("train: empty training set");
    if (model.config().input_side != grid.patch_side) {
        throw ConfigError("train: model input side " + std::to_string(model.config().input_side) +
                          " != patch side " + std::to_string(grid.patch_side));
    }
    const size_t C = model.config().num_classes;
    for (const TrainSample& s : train_set) {
        if (s.labels.size() != C) {
            throw ShapeError("train: sample with " + std::to_string(s.labels.size()) +
                             " labels, model expects " + std::to_string(C));
        }
    }
    const AugmentSpec aug = config.effective_augment();
    const size_t B = config.batch_images;
    const size_t steps_per_epoch = (train_set.size() + B - 1) / B;
    const size_t total_steps = steps_per_epoch * config.epochs;

    AdamWState opt_state;
    TrainResult result;
    size_t step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        {
            Rng shuffle_rng(Rng::key(config.seed, {0x5F, static_cast<uint64_t>(epoch)}));
            for (size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
            }
        }
        double epoch_loss = 0.0;
        size_t epoch_batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += B) {
            const size_t end = std::min(begin + B, order.size());
            std::vector<Tensor> images;
            std::vector<double> targets;
            images.reserve(end - begin);
            for (size_t i = begin; i < end; ++i) {
                const TrainSample& s = train_set[order[i]];
                Rng sample_rng(Rng::key(config.seed, {0xA46, static_cast<uint64_t>(epoch),
                                                      static_cast<uint64_t>(order[i])}));
                auto [img, unused_mask] = augment(s.image, nullptr, aug, sample_rng);
                images.push_back(image_to_tensor(img));
                for (size_t c = 0; c < C; ++c) targets.push_back(s.labels[c] ? 1.0 : 0.0);
            }
            const double lr = onecycle_lr(step, total_steps, config);
            Tensor batch = stack_patches(images, grid);
            model.zero_grad();
            Tensor logits = model.forward(batch);
            Tensor global = group_mean_rows(logits, grid.num_patches());
            Tensor target_t = Tensor::from_data({images.size(), C}, std::move(targets));
            Tensor loss = bce_with_logits(global, target_t);
            backward(loss);
            adamw_step(model.parameters(), opt_state, lr, 0.9, 0.999, 1e-8, config.weight_decay);
            epoch_loss += loss.item();
            ++epoch_batches;
            ++step;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / epoch_batches;
        if (!valid_set.empty()) {
            auto [vloss, vauroc] = score_set(model, valid_set, grid);
            log.valid_loss = vloss;
            log.valid_auroc = vauroc;
        }
        result.log.push_back(log);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace patchnet
