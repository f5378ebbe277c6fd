#pragma once

#include <cstdint>
#include <vector>

#include "patchnet/tensor.hpp"

namespace patchnet {

// Square grayscale image, values in [0,1], row-major.
struct Image {
    int side = 0;
    std::vector<double> px;

    static Image zeros(int side) { return Image{side, std::vector<double>(size_t(side) * side, 0.0)}; }
    double at(int y, int x) const { return px[size_t(y) * side + x]; }
    double& at(int y, int x) { return px[size_t(y) * side + x]; }
};

// Square binary mask; side == 0 means "absent".
struct Mask {
    int side = 0;
    std::vector<uint8_t> px;

    static Mask zeros(int side) { return Mask{side, std::vector<uint8_t>(size_t(side) * side, 0)}; }
    bool present() const { return side > 0; }
    uint8_t at(int y, int x) const { return px[size_t(y) * side + x]; }
    uint8_t& at(int y, int x) { return px[size_t(y) * side + x]; }
    size_t area() const {
        size_t n = 0;
        for (uint8_t v : px) n += (v != 0);
        return n;
    }
    bool any() const { return area() > 0; }
};

Tensor image_to_tensor(const Image& img);               // [1,S,S]
Image tensor_to_image(const Tensor& t);                 // [1,S,S] -> Image
Tensor images_to_batch(const std::vector<Image>& imgs); // [N,1,S,S]

// Geometry helpers shared by augmentation and saliency. Resizes use
// half-pixel centers (exact identity when sizes match); rotations sample the
// inverse map with zero fill outside the source.
Image crop_image(const Image& img, int top, int left, int side);
Mask crop_mask(const Mask& m, int top, int left, int side);
Image bilinear_resize(const Image& img, int out_side);
Mask nearest_resize(const Mask& m, int out_side);
Image rotate_bilinear(const Image& img, double degrees);
Mask rotate_nearest(const Mask& m, double degrees);

// Generic bilinear upsample of an h x w plane to side x side.
std::vector<double> bilinear_upsample(const std::vector<double>& src, int h, int w, int side);

}  // namespace patchnet
