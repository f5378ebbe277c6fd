#include "patchnet/image.hpp"

#include <algorithm>
#include <cmath>

namespace patchnet {

Tensor image_to_tensor(const Image& img) {
    return Tensor::from_data({1, size_t(img.side), size_t(img.side)}, img.px);
}

Image tensor_to_image(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.size() != 3 || s[0] != 1 || s[1] != s[2]) {
        throw ShapeError("tensor_to_image: expected [1,S,S], got " + shape_str(s));
    }
    Image img;
    img.side = static_cast<int>(s[1]);
    img.px.assign(t.data().begin(), t.data().end());
    return img;
}

Tensor images_to_batch(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw ShapeError("images_to_batch: empty image list");
    const size_t side = imgs[0].side;
    std::vector<double> data;
    data.reserve(imgs.size() * side * side);
    for (const Image& img : imgs) {
        if (size_t(img.side) != side) {
            throw ShapeError("images_to_batch: mixed image sides " + std::to_string(side) +
                             " vs " + std::to_string(img.side));
        }
        data.insert(data.end(), img.px.begin(), img.px.end());
    }
    return Tensor::from_data({imgs.size(), 1, side, side}, std::move(data));
}

Image crop_image(const Image& img, int top, int left, int side) {
    Image out = Image::zeros(side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) out.at(y, x) = img.at(top + y, left + x);
    return out;
}

Mask crop_mask(const Mask& m, int top, int left, int side) {
    Mask out = Mask::zeros(side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) out.at(y, x) = m.at(top + y, left + x);
    return out;
}

namespace {

// Half-pixel source coordinate for a destination index.
inline double src_coord(int dst, int in_size, int out_size) {
    return (dst + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
}

}  // namespace

Image bilinear_resize(const Image& img, int out_side) {
    if (img.side == out_side) return img;
    Image out = Image::zeros(out_side);
    for (int y = 0; y < out_side; ++y) {
        double sy = std::clamp(src_coord(y, img.side, out_side), 0.0, double(img.side - 1));
        int y0 = static_cast<int>(std::floor(sy));
        int y1 = std::min(y0 + 1, img.side - 1);
        double fy = sy - y0;
        for (int x = 0; x < out_side; ++x) {
            double sx = std::clamp(src_coord(x, img.side, out_side), 0.0, double(img.side - 1));
            int x0 = static_cast<int>(std::floor(sx));
            int x1 = std::min(x0 + 1, img.side - 1);
            double fx = sx - x0;
            double v = (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
                       fy * ((1 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
            out.at(y, x) = v;
        }
    }
    return out;
}

Mask nearest_resize(const Mask& m, int out_side) {
    if (m.side == out_side) return m;
    Mask out = Mask::zeros(out_side);
    for (int y = 0; y < out_side; ++y) {
        int sy = std::clamp(static_cast<int>(std::lround(src_coord(y, m.side, out_side))), 0,
                            m.side - 1);
        for (int x = 0; x < out_side; ++x) {
            int sx = std::clamp(static_cast<int>(std::lround(src_coord(x, m.side, out_side))), 0,
                                m.side - 1);
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

Image rotate_bilinear(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double center = (img.side - 1) / 2.0;
    Image out = Image::zeros(img.side);
    for (int y = 0; y < img.side; ++y) {
        for (int x = 0; x < img.side; ++x) {
            const double dx = x - center, dy = y - center;
            const double sx = center + c * dx + s * dy;
            const double sy = center - s * dx + c * dy;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            double v = 0.0;
            for (int oy = 0; oy <= 1; ++oy) {
                for (int ox = 0; ox <= 1; ++ox) {
                    const int yy = y0 + oy, xx = x0 + ox;
                    if (yy < 0 || yy >= img.side || xx < 0 || xx >= img.side) continue;
                    const double w = (oy ? fy : 1 - fy) * (ox ? fx : 1 - fx);
                    v += w * img.at(yy, xx);
                }
            }
            out.at(y, x) = v;
        }
    }
    return out;
}

Mask rotate_nearest(const Mask& m, double degrees) {
    if (degrees == 0.0) return m;
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double center = (m.side - 1) / 2.0;
    Mask out = Mask::zeros(m.side);
    for (int y = 0; y < m.side; ++y) {
        for (int x = 0; x < m.side; ++x) {
            const double dx = x - center, dy = y - center;
            const int sx = static_cast<int>(std::lround(center + c * dx + s * dy));
            const int sy = static_cast<int>(std::lround(center - s * dx + c * dy));
            if (sx < 0 || sx >= m.side || sy < 0 || sy >= m.side) continue;
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

std::vector<double> bilinear_upsample(const std::vector<double>& src, int h, int w, int side) {
    std::vector<double> out(size_t(side) * side);
    for (int y = 0; y < side; ++y) {
        double sy = std::clamp(src_coord(y, h, side), 0.0, double(h - 1));
        int y0 = static_cast<int>(std::floor(sy));
        int y1 = std::min(y0 + 1, h - 1);
        double fy = sy - y0;
        for (int x = 0; x < side; ++x) {
            double sx = std::clamp(src_coord(x, w, side), 0.0, double(w - 1));
            int x0 = static_cast<int>(std::floor(sx));
            int x1 = std::min(x0 + 1, w - 1);
            double fx = sx - x0;
            out[size_t(y) * side + x] = (1 - fy) * ((1 - fx) * src[size_t(y0) * w + x0] +
                                                    fx * src[size_t(y0) * w + x1]) +
                                        fy * ((1 - fx) * src[size_t(y1) * w + x0] +
                                              fx * src[size_t(y1) * w + x1]);
        }
    }
    return out;
}

}  // namespace patchnet
