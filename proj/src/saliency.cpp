#include "patchnet/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "patchnet/netpbm.hpp"

namespace patchnet {

void ShiftSpec::validate(int patch_side) const {
    if (offset < 1 || offset > patch_side || patch_side % offset != 0) {
        throw ConfigError("shift offset " + std::to_string(offset) +
                          " invalid for patch side " + std::to_string(patch_side) +
                          " (need 1 <= o <= p and p % o == 0)");
    }
}

std::string saliency_kind_name(SaliencyKind kind) {
    switch (kind) {
        case SaliencyKind::raw_patch: return "raw_patch";
        case SaliencyKind::scaled_patch: return "scaled_patch";
        case SaliencyKind::gradcam: return "gradcam";
    }
    return "unknown";
}

SaliencyMap patch_saliency(const PatchLogitGrid& grid, int class_id, bool use_scaled) {
    if (class_id < 0 || class_id >= grid.num_classes) {
        throw ConfigError("patch_saliency: class " + std::to_string(class_id) +
                          " outside [0," + std::to_string(grid.num_classes) + ")");
    }
    const int S = grid.spec.image_side;
    const int P = grid.spec.patches_per_side;
    const int p = grid.spec.patch_side;
    SaliencyMap map;
    map.side = S;
    map.values.assign(size_t(S) * S, 0.0);
    map.class_id = class_id;
    map.kind = use_scaled ? SaliencyKind::scaled_patch : SaliencyKind::raw_patch;
    for (int r = 0; r < P; ++r) {
        for (int c = 0; c < P; ++c) {
            const double v = use_scaled ? grid.zhat(r, c, class_id) : grid.z(r, c, class_id);
            for (int y = r * p; y < (r + 1) * p; ++y) {
                for (int x = c * p; x < (c + 1) * p; ++x) map.at(y, x) = v;
            }
        }
    }
    return map;
}

SaliencyMap shifted_saliency(const Tensor& image, const Backbone& model,
                             const PatchGridSpec& spec, const ShiftSpec& shift, int class_id,
                             bool use_scaled) {
    shift.validate(spec.patch_side);
    const int S = spec.image_side;
    const int p = spec.patch_side;
    const int o = shift.offset;
    const int n = shift.num_shifts(p);

    std::vector<double> accum(size_t(S) * S, 0.0);
    const double* src = image.data().data();
    for (int dy = 0; dy < p; dy += o) {
        for (int dx = 0; dx < p; dx += o) {
            // Content moves up-left by (dy,dx); the exposed bottom-right
            // border is zero filled, so border patches are evaluated on the
            // padded content exactly as any forward pass would see it.
            std::vector<double> shifted(size_t(S) * S, 0.0);
            for (int y = 0; y + dy < S; ++y) {
                for (int x = 0; x + dx < S; ++x) {
                    shifted[size_t(y) * S + x] = src[size_t(y + dy) * S + (x + dx)];
                }
            }
            Tensor shifted_t = Tensor::from_data({1, size_t(S), size_t(S)}, std::move(shifted));
            PatchLogitGrid grid = predict(shifted_t, model, spec);
            SaliencyMap block = patch_saliency(grid, class_id, use_scaled);
            // Translate the block map back down-right; pixels shifted out of
            // frame contribute nothing for this offset.
            for (int y = dy; y < S; ++y) {
                for (int x = dx; x < S; ++x) {
                    accum[size_t(y) * S + x] += block.at(y - dy, x - dx);
                }
            }
        }
    }
    SaliencyMap map;
    map.side = S;
    map.class_id = class_id;
    map.kind = use_scaled ? SaliencyKind::scaled_patch : SaliencyKind::raw_patch;
    map.values.resize(accum.size());
    for (size_t i = 0; i < accum.size(); ++i) map.values[i] = accum[i] / n;
    return map;
}

std::vector<double> gradcam_channel_weights(const Backbone& model, const Tensor& features,
                                            int class_id) {
    const Shape& fs = features.shape();
    if (fs.size() != 4 || fs[0] != 1) {
        throw ShapeError("gradcam: expected features [1,C,h,w], got " + shape_str(fs));
    }
    if (class_id < 0 || class_id >= model.config().num_classes) {
        throw ConfigError("gradcam: class " + std::to_string(class_id) + " outside [0," +
                          std::to_string(model.config().num_classes) + ")");
    }
    // Re-run only the head with the features as a fresh leaf; the backward
    // sweep then yields d logit / d A without touching the conv stack.
    Tensor leaf = Tensor::from_data(fs, {features.data().begin(), features.data().end()},
                                    /*requires_grad=*/true);
    Tensor logits = model.forward_head(leaf);
    Tensor picked = select_scalar(logits, class_id);
    backward(picked);

    const size_t C = fs[1], plane = fs[2] * fs[3];
    std::span<const double> g = leaf.grad();
    std::vector<double> alpha(C, 0.0);
    for (size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += g[c * plane + i];
        alpha[c] = s / static_cast<double>(plane);
    }
    return alpha;
}

SaliencyMap gradcam_from_features(const Backbone& model, const Tensor& features, int class_id,
                                  int out_side) {
    const std::vector<double> alpha = gradcam_channel_weights(model, features, class_id);
    const Shape& fs = features.shape();
    const size_t C = fs[1];
    const int h = static_cast<int>(fs[2]);
    const int w = static_cast<int>(fs[3]);
    const size_t plane = size_t(h) * w;

    std::vector<double> cam(plane, 0.0);
    const double* fd = features.data().data();
    for (size_t c = 0; c < C; ++c) {
        for (size_t i = 0; i < plane; ++i) cam[i] += alpha[c] * fd[c * plane + i];
    }
    for (double& v : cam) v = v > 0.0 ? v : 0.0;

    std::vector<double> up = bilinear_upsample(cam, h, w, out_side);
    double lo = up[0], hi = up[0];
    for (double v : up) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        for (double& v : up) v = (v - lo) / (hi - lo);
    } else {
        std::fill(up.begin(), up.end(), 0.0);
    }

    SaliencyMap map;
    map.side = out_side;
    map.values = std::move(up);
    map.class_id = class_id;
    map.kind = SaliencyKind::gradcam;
    return map;
}

SaliencyMap gradcam(const Tensor& image, const Backbone& model, int class_id) {
    const Shape& s = image.shape();
    const size_t S = model.config().input_side;
    if (s.size() != 3 || s[0] != 1 || s[1] != S || s[2] != S) {
        throw ShapeError("gradcam: expected a full image [1," + std::to_string(S) + "," +
                         std::to_string(S) + "] matching the model input, got " + shape_str(s));
    }
    Tensor features;
    {
        NoGradGuard no_grad;
        Tensor batch = Tensor::from_data({1, 1, S, S}, {image.data().begin(), image.data().end()});
        features = model.forward_features(batch);
    }
    return gradcam_from_features(model, features, class_id, static_cast<int>(S));
}

std::pair<int, int> most_salient_point(const SaliencyMap& map) {
    if (map.side < 1 || map.values.empty()) throw Error("most_salient_point: empty map");
    size_t best = 0;
    for (size_t i = 1; i < map.values.size(); ++i) {
        if (map.values[i] > map.values[best]) best = i;
    }
    return {static_cast<int>(best / map.side), static_cast<int>(best % map.side)};
}

Mask threshold_to_mask(const SaliencyMap& map, double threshold) {
    double lo = map.values[0], hi = map.values[0];
    for (double v : map.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Mask mask = Mask::zeros(map.side);
    for (size_t i = 0; i < map.values.size(); ++i) {
        const double norm = hi > lo ? (map.values[i] - lo) / (hi - lo) : 0.0;
        mask.px[i] = norm >= threshold ? 1 : 0;
    }
    return mask;
}

void render_overlay(const Image& base, const SaliencyMap& map, const std::string& out_path) {
    if (base.side != map.side) {
        throw ShapeError("render_overlay: image side " + std::to_string(base.side) +
                         " != map side " + std::to_string(map.side));
    }
    double max_abs = 0.0;
    for (double v : map.values) max_abs = std::max(max_abs, std::abs(v));

    const int S = base.side;
    std::vector<uint8_t> rgb(size_t(S) * S * 3);
    for (size_t i = 0; i < map.values.size(); ++i) {
        const double gray = 255.0 * std::clamp(base.px[i], 0.0, 1.0);
        const double vn = max_abs > 0.0 ? map.values[i] / max_abs : 0.0;
        const double w = 0.5 * std::abs(vn);
        // Blend toward pure red (positive) or pure blue (negative).
        const double cr = vn > 0.0 ? 255.0 : 0.0;
        const double cb = vn < 0.0 ? 255.0 : 0.0;
        rgb[3 * i + 0] = static_cast<uint8_t>(std::lround((1.0 - w) * gray + w * cr));
        rgb[3 * i + 1] = static_cast<uint8_t>(std::lround((1.0 - w) * gray));
        rgb[3 * i + 2] = static_cast<uint8_t>(std::lround((1.0 - w) * gray + w * cb));
    }
    write_ppm(out_path, S, S, rgb);
}

void write_saliency_pgm(const SaliencyMap& map, const std::string& path) {
    double lo = map.values[0], hi = map.values[0];
    for (double v : map.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<uint16_t> q(map.values.size(), 0);
    if (hi > lo) {
        for (size_t i = 0; i < q.size(); ++i) {
            q[i] = static_cast<uint16_t>(std::lround((map.values[i] - lo) / (hi - lo) * 65535.0));
        }
    }
    write_pgm16(path, map.side, map.side, q);

    nlohmann::json sidecar{{"min", lo},
                           {"max", hi},
                           {"class_id", map.class_id},
                           {"kind", saliency_kind_name(map.kind)}};
    std::ofstream out(path + ".json");
    if (!out) throw IoError(path + ".json: cannot open for writing");
    out << sidecar.dump(2) << "\n";
}

SaliencyMap read_saliency_pgm(const std::string& path) {
    PgmImage pgm = read_pgm(path);
    std::ifstream in(path + ".json");
    if (!in) throw IoError(path + ".json: missing saliency sidecar");
    nlohmann::json sidecar = nlohmann::json::parse(in);
    const double lo = sidecar.at("min").get<double>();
    const double hi = sidecar.at("max").get<double>();
    const std::string kind = sidecar.at("kind").get<std::string>();

    SaliencyMap map;
    map.side = pgm.width;
    map.class_id = sidecar.at("class_id").get<int>();
    map.kind = kind == "gradcam" ? SaliencyKind::gradcam
               : kind == "scaled_patch" ? SaliencyKind::scaled_patch
                                        : SaliencyKind::raw_patch;
    map.values.resize(pgm.px.size());
    for (size_t i = 0; i < pgm.px.size(); ++i) {
        map.values[i] = lo + (hi - lo) * (static_cast<double>(pgm.px[i]) / pgm.maxval);
    }
    return map;
}

double block_boundary_tv(const SaliencyMap& map, int patch_side) {
    const int S = map.side;
    double tv = 0.0;
    for (int x = patch_side; x < S; x += patch_side) {
        for (int y = 0; y < S; ++y) tv += std::abs(map.at(y, x) - map.at(y, x - 1));
    }
    for (int y = patch_side; y < S; y += patch_side) {
        for (int x = 0; x < S; ++x) tv += std::abs(map.at(y, x) - map.at(y - 1, x));
    }
    return tv;
}

}  // namespace patchnet
