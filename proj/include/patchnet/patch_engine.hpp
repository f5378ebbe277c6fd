#pragma once

#include <span>
#include <vector>

#include "patchnet/backbone.hpp"
#include "patchnet/patch_grid.hpp"

namespace patchnet {

// Per-patch logits z, their arithmetic mean Z (sequential row-major
// summation), the class probabilities yhat = sigmoid(Z), and the scaled
// logits zhat = yhat (.) z.
struct PatchLogitGrid {
    PatchGridSpec spec;
    int num_classes = 0;
    std::vector<double> logits;         // z    [P,P,C]
    std::vector<double> global_logits;  // Z    [C]
    std::vector<double> probabilities;  // yhat [C]
    std::vector<double> scaled_logits;  // zhat [P,P,C]

    double z(int r, int c, int k) const {
        return logits[(size_t(r) * spec.patches_per_side + c) * num_classes + k];
    }
    double zhat(int r, int c, int k) const {
        return scaled_logits[(size_t(r) * spec.patches_per_side + c) * num_classes + k];
    }
};

// Runs the backbone on every patch of one image (a single batched forward)
// and aggregates. Requires model.config().input_side == spec.patch_side.
PatchLogitGrid predict(const Tensor& image, const Backbone& model, const PatchGridSpec& spec);

// Exact new global logits after substituting the logits of patch (r,c):
// (Z * P^2 - z[r,c] + replacement) / P^2. No forward pass involved.
std::vector<double> occlusion_delta(const PatchLogitGrid& grid, int r, int c,
                                    std::span<const double> replacement_logits);

// The degenerate P=1 route: the patch pipeline collapses to a plain
// full-image forward. Returns Z (== the backbone's logits).
std::vector<double> predict_full_image(const Tensor& image, const Backbone& model);

}  // namespace patchnet
