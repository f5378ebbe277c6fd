#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patchnet/image.hpp"
#include "patchnet/patch_engine.hpp"

namespace patchnet {

// Pixel stride between translated copies of the image used to smooth the
// block saliency map. An offset o over patch side p yields (p/o)^2 shifted
// maps: o == p is the single plain block map, o == 1 needs p^2 forward
// passes.
struct ShiftSpec {
    int offset = 0;

    explicit ShiftSpec(int offset_) : offset(offset_) {}
    void validate(int patch_side) const;
    int num_shifts(int patch_side) const {
        validate(patch_side);
        const int m = patch_side / offset;
        return m * m;
    }
};

enum class SaliencyKind { raw_patch, scaled_patch, gradcam };

std::string saliency_kind_name(SaliencyKind kind);

// Per-pixel class-evidence field. Signed for patch methods (positive pixels
// vote for the class, negative against), non-negative for Grad-CAM.
struct SaliencyMap {
    int side = 0;
    std::vector<double> values;  // [S,S]
    int class_id = 0;
    SaliencyKind kind = SaliencyKind::raw_patch;

    double at(int y, int x) const { return values[size_t(y) * side + x]; }
    double& at(int y, int x) { return values[size_t(y) * side + x]; }
};

// Block-constant map from one grid: block (r,c) filled with z[r,c,class]
// (or zhat when use_scaled).
SaliencyMap patch_saliency(const PatchLogitGrid& grid, int class_id, bool use_scaled);

// Shift-averaged map. For every (dy,dx) in {0,o,...,p-o}^2 the image content
// is translated up-left by (dy,dx) with zero fill at the exposed border, a
// block map is computed from a fresh forward pass, translated back, and all
// n = (p/o)^2 maps are averaged pixelwise (always dividing by n).
SaliencyMap shifted_saliency(const Tensor& image, const Backbone& model,
                             const PatchGridSpec& spec, const ShiftSpec& shift, int class_id,
                             bool use_scaled);

// Post-hoc baseline on the P=1 configuration: the class logit's gradient
// w.r.t. the final conv feature maps is spatially averaged into channel
// weights, the weighted sum is ReLU-clamped, bilinearly upsampled to S x S
// and min-max normalized to [0,1].
SaliencyMap gradcam(const Tensor& image, const Backbone& model, int class_id);
// Same computation from already-captured feature maps [1,C,h,w].
SaliencyMap gradcam_from_features(const Backbone& model, const Tensor& features, int class_id,
                                  int out_side);
// Channel weights alpha_c (mean of d logit / d A_c); exposed for testing.
std::vector<double> gradcam_channel_weights(const Backbone& model, const Tensor& features,
                                            int class_id);

// Argmax pixel; ties broken by smallest row, then smallest column.
std::pair<int, int> most_salient_point(const SaliencyMap& map);

// Min-max normalizes the map over its full signed range and keeps pixels with
// normalized value >= threshold. A constant map normalizes to all zeros.
Mask threshold_to_mask(const SaliencyMap& map, double threshold);

// Grayscale base blended with a signed diverging colormap (positive -> red,
// negative -> blue, zero -> untouched gray), blend weight 0.5 at the signed
// maximum. Deterministic bytes; written as binary PPM (P6).
void render_overlay(const Image& base, const SaliencyMap& map, const std::string& out_path);

// 16-bit PGM (P5) plus a JSON sidecar <path>.json holding min/max (and class
// id/kind) for dequantization.
void write_saliency_pgm(const SaliencyMap& map, const std::string& path);
SaliencyMap read_saliency_pgm(const std::string& path);

// Total variation across the P-grid block boundaries; the smoothness measure
// for comparing shift offsets.
double block_boundary_tv(const SaliencyMap& map, int patch_side);

}  // namespace patchnet
