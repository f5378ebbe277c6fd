#include "patchnet/patch_engine.hpp"

namespace patchnet {

PatchGridSpec::PatchGridSpec(int image_side_, int patches_per_side_)
    : image_side(image_side_), patches_per_side(patches_per_side_) {
    if (patches_per_side < 1) {
        throw ConfigError("patch grid: P must be >= 1, got " + std::to_string(patches_per_side));
    }
    if (image_side < 1 || image_side % patches_per_side != 0) {
        throw ConfigError("patch grid: image side " + std::to_string(image_side) +
                          " is not divisible by P=" + std::to_string(patches_per_side));
    }
    patch_side = image_side / patches_per_side;
}

Tensor partition(const Tensor& image, const PatchGridSpec& spec) {
    const Shape& s = image.shape();
    const size_t S = spec.image_side;
    if (s.size() != 3 || s[0] != 1 || s[1] != S || s[2] != S) {
        throw ShapeError("partition: expected image [1," + std::to_string(S) + "," +
                         std::to_string(S) + "], got " + shape_str(s));
    }
    const size_t P = spec.patches_per_side;
    const size_t p = spec.patch_side;
    std::vector<double> out(S * S);
    const double* src = image.data().data();
    size_t idx = 0;
    for (size_t r = 0; r < P; ++r) {
        for (size_t c = 0; c < P; ++c) {
            for (size_t y = 0; y < p; ++y) {
                const double* row = src + (r * p + y) * S + c * p;
                for (size_t x = 0; x < p; ++x) out[idx++] = row[x];
            }
        }
    }
    return Tensor::from_data({P * P, 1, p, p}, std::move(out));
}

Tensor reassemble(const Tensor& patches, const PatchGridSpec& spec) {
    const size_t P = spec.patches_per_side;
    const size_t p = spec.patch_side;
    const size_t S = spec.image_side;
    const Shape& s = patches.shape();
    if (s.size() != 4 || s[0] != P * P || s[1] != 1 || s[2] != p || s[3] != p) {
        throw ShapeError("reassemble: expected patches [" + std::to_string(P * P) + ",1," +
                         std::to_string(p) + "," + std::to_string(p) + "], got " + shape_str(s));
    }
    std::vector<double> out(S * S);
    const double* src = patches.data().data();
    size_t idx = 0;
    for (size_t r = 0; r < P; ++r) {
        for (size_t c = 0; c < P; ++c) {
            for (size_t y = 0; y < p; ++y) {
                double* row = out.data() + (r * p + y) * S + c * p;
                for (size_t x = 0; x < p; ++x) row[x] = src[idx++];
            }
        }
    }
    return Tensor::from_data({1, S, S}, std::move(out));
}

Tensor stack_patches(const std::vector<Tensor>& images, const PatchGridSpec& spec) {
    if (images.empty()) throw ShapeError("stack_patches: empty image list");
    const size_t P = spec.patches_per_side;
    const size_t p = spec.patch_side;
    std::vector<double> data;
    data.reserve(images.size() * P * P * p * p);
    for (const Tensor& img : images) {
        Tensor patches = partition(img, spec);
        data.insert(data.end(), patches.data().begin(), patches.data().end());
    }
    return Tensor::from_data({images.size() * P * P, 1, p, p}, std::move(data));
}

PatchLogitGrid predict(const Tensor& image, const Backbone& model, const PatchGridSpec& spec) {
    if (model.config().input_side != spec.patch_side) {
        throw ConfigError("predict: model expects input side " +
                          std::to_string(model.config().input_side) + " but patch side is " +
                          std::to_string(spec.patch_side));
    }
    NoGradGuard no_grad;
    Tensor patches = partition(image, spec);
    Tensor logits = model.forward(patches);  // [P^2, C]

    PatchLogitGrid grid;
    grid.spec = spec;
    grid.num_classes = model.config().num_classes;
    grid.logits.assign(logits.data().begin(), logits.data().end());

    const size_t n_patches = spec.num_patches();
    const size_t C = grid.num_classes;
    grid.global_logits.assign(C, 0.0);
    for (size_t i = 0; i < n_patches; ++i) {
        for (size_t c = 0; c < C; ++c) grid.global_logits[c] += grid.logits[i * C + c];
    }
    for (size_t c = 0; c < C; ++c) grid.global_logits[c] /= static_cast<double>(n_patches);

    grid.probabilities.resize(C);
    for (size_t c = 0; c < C; ++c) grid.probabilities[c] = stable_sigmoid(grid.global_logits[c]);

    grid.scaled_logits.resize(grid.logits.size());
    for (size_t i = 0; i < n_patches; ++i) {
        for (size_t c = 0; c < C; ++c) {
            grid.scaled_logits[i * C + c] = grid.probabilities[c] * grid.logits[i * C + c];
        }
    }
    return grid;
}

std::vector<double> occlusion_delta(const PatchLogitGrid& grid, int r, int c,
                                    std::span<const double> replacement_logits) {
    const int P = grid.spec.patches_per_side;
    if (r < 0 || r >= P || c < 0 || c >= P) {
        throw ConfigError("occlusion_delta: patch (" + std::to_string(r) + "," +
                          std::to_string(c) + ") outside the " + std::to_string(P) + "x" +
                          std::to_string(P) + " grid");
    }
    if (replacement_logits.size() != static_cast<size_t>(grid.num_classes)) {
        throw ShapeError("occlusion_delta: replacement has " +
                         std::to_string(replacement_logits.size()) + " entries, expected " +
                         std::to_string(grid.num_classes));
    }
    const double n = static_cast<double>(grid.spec.num_patches());
    std::vector<double> out(grid.num_classes);
    for (int k = 0; k < grid.num_classes; ++k) {
        out[k] = (grid.global_logits[k] * n - grid.z(r, c, k) + replacement_logits[k]) / n;
    }
    return out;
}

std::vector<double> predict_full_image(const Tensor& image, const Backbone& model) {
    const PatchGridSpec spec(model.config().input_side, 1);
    PatchLogitGrid grid = predict(image, model, spec);
    return grid.global_logits;
}

}  // namespace patchnet
