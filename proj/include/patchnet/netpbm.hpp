#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patchnet/image.hpp"

namespace patchnet {

// Raw PGM (P5) contents. 16-bit samples are stored big-endian on disk per the
// netpbm convention.
struct PgmImage {
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::vector<uint16_t> px;
};

PgmImage read_pgm(const std::string& path);
void write_pgm16(const std::string& path, int width, int height, std::span<const uint16_t> px);
void write_pgm8(const std::string& path, int width, int height, std::span<const uint8_t> px);
// 8-bit RGB, interleaved.
void write_ppm(const std::string& path, int width, int height, std::span<const uint8_t> rgb);

// Maxval-normalized to [0,1]. Requires a square image.
Image pgm_to_image(const PgmImage& pgm);
// Any sample > 0 becomes 1.
Mask pgm_to_mask(const PgmImage& pgm);

// Image quantized to the 16-bit grid. Round-trips exactly for values already
// on the grid.
void write_image_pgm(const std::string& path, const Image& img);
void write_mask_pgm(const std::string& path, const Mask& mask);

}  // namespace patchnet
