#include "patchnet/netpbm.hpp"

#include <cmath>
#include <fstream>

namespace patchnet {

namespace {

// Skips whitespace and '#' comment lines, then reads one unsigned decimal.
int read_header_int(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) {
        throw IoError(path + ": malformed PGM header");
    }
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > 1'000'000'000) throw IoError(path + ": header value out of range");
        c = in.get();
    }
    if (c != EOF) in.unget();
    return static_cast<int>(v);
}

}  // namespace

PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5') {
        throw IoError(path + ": not a binary PGM (P5) file");
    }
    PgmImage pgm;
    pgm.width = read_header_int(in, path);
    pgm.height = read_header_int(in, path);
    pgm.maxval = read_header_int(in, path);
    if (pgm.width < 1 || pgm.height < 1) throw IoError(path + ": invalid PGM dimensions");
    if (pgm.maxval < 1 || pgm.maxval > 65535) throw IoError(path + ": invalid PGM maxval");
    in.get();  // single whitespace after maxval
    const size_t n = size_t(pgm.width) * pgm.height;
    pgm.px.resize(n);
    if (pgm.maxval > 255) {
        std::vector<uint8_t> raw(n * 2);
        in.read(reinterpret_cast<char*>(raw.data()), raw.size());
        if (static_cast<size_t>(in.gcount()) != raw.size()) throw IoError(path + ": truncated PGM data");
        for (size_t i = 0; i < n; ++i) {
            pgm.px[i] = static_cast<uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
        }
    } else {
        std::vector<uint8_t> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), raw.size());
        if (static_cast<size_t>(in.gcount()) != raw.size()) throw IoError(path + ": truncated PGM data");
        for (size_t i = 0; i < n; ++i) pgm.px[i] = raw[i];
    }
    return pgm;
}

void write_pgm16(const std::string& path, int width, int height, std::span<const uint16_t> px) {
    if (px.size() != size_t(width) * height) {
        throw ShapeError(path + ": pixel count does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P5\n" << width << " " << height << "\n65535\n";
    std::vector<uint8_t> raw(px.size() * 2);
    for (size_t i = 0; i < px.size(); ++i) {
        raw[2 * i] = static_cast<uint8_t>(px[i] >> 8);
        raw[2 * i + 1] = static_cast<uint8_t>(px[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), raw.size());
    if (!out) throw IoError(path + ": write failed");
}

void write_pgm8(const std::string& path, int width, int height, std::span<const uint8_t> px) {
    if (px.size() != size_t(width) * height) {
        throw ShapeError(path + ": pixel count does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), px.size());
    if (!out) throw IoError(path + ": write failed");
}

void write_ppm(const std::string& path, int width, int height, std::span<const uint8_t> rgb) {
    if (rgb.size() != size_t(width) * height * 3) {
        throw ShapeError(path + ": pixel count does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P6\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), rgb.size());
    if (!out) throw IoError(path + ": write failed");
}

Image pgm_to_image(const PgmImage& pgm) {
    if (pgm.width != pgm.height) {
        throw IoError("expected a square image, got " + std::to_string(pgm.width) + "x" +
                      std::to_string(pgm.height));
    }
    Image img = Image::zeros(pgm.width);
    for (size_t i = 0; i < pgm.px.size(); ++i) {
        img.px[i] = static_cast<double>(pgm.px[i]) / pgm.maxval;
    }
    return img;
}

Mask pgm_to_mask(const PgmImage& pgm) {
    if (pgm.width != pgm.height) {
        throw IoError("expected a square mask, got " + std::to_string(pgm.width) + "x" +
                      std::to_string(pgm.height));
    }
    Mask m = Mask::zeros(pgm.width);
    for (size_t i = 0; i < pgm.px.size(); ++i) m.px[i] = pgm.px[i] > 0 ? 1 : 0;
    return m;
}

void write_image_pgm(const std::string& path, const Image& img) {
    std::vector<uint16_t> q(img.px.size());
    for (size_t i = 0; i < q.size(); ++i) {
        double v = std::clamp(img.px[i], 0.0, 1.0);
        q[i] = static_cast<uint16_t>(std::lround(v * 65535.0));
    }
    write_pgm16(path, img.side, img.side, q);
}

void write_mask_pgm(const std::string& path, const Mask& mask) {
    std::vector<uint8_t> q(mask.px.size());
    for (size_t i = 0; i < q.size(); ++i) q[i] = mask.px[i] ? 255 : 0;
    write_pgm8(path, mask.side, mask.side, q);
}

}  // namespace patchnet
