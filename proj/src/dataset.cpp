#include "patchnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "patchnet/netpbm.hpp"
#include "patchnet/rng.hpp"

namespace fs = std::filesystem;

namespace patchnet {

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "valid") return Split::valid;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train|valid|test)");
}

std::string signature_name(SignatureKind kind) {
    switch (kind) {
        case SignatureKind::blob: return "blob";
        case SignatureKind::ridge: return "ridge";
        case SignatureKind::marker: return "marker";
        case SignatureKind::texture: return "texture";
    }
    return "blob";
}

SignatureKind signature_from_name(const std::string& name) {
    if (name == "blob") return SignatureKind::blob;
    if (name == "ridge") return SignatureKind::ridge;
    if (name == "marker") return SignatureKind::marker;
    if (name == "texture") return SignatureKind::texture;
    throw ConfigError("unknown signature '" + name + "' (expected blob|ridge|marker|texture)");
}

void SyntheticSpec::validate() const {
    if (image_side < 16) throw ConfigError("synthetic: image_side must be >= 16");
    if (num_classes < 1) throw ConfigError("synthetic: num_classes must be >= 1");
    if (static_cast<int>(signatures.size()) != num_classes) {
        throw ConfigError("synthetic: " + std::to_string(signatures.size()) +
                          " signatures for " + std::to_string(num_classes) + " classes");
    }
    if (prevalence <= 0.0 || prevalence >= 1.0) {
        throw ConfigError("synthetic: prevalence must be in (0,1)");
    }
    if (noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be >= 0");
    if (blob_radius_min > blob_radius_max || blob_radius_min < 1.0) {
        throw ConfigError("synthetic: invalid blob radius range");
    }
    if (2.0 * blob_radius_max + 2.0 >= image_side) {
        throw ConfigError("synthetic: blob radius too large for image side");
    }
    if (marker_side < 2 || marker_side >= image_side / 2) {
        throw ConfigError("synthetic: marker_side out of range");
    }
    if (texture_side < 2 || texture_side >= image_side) {
        throw ConfigError("synthetic: texture_side out of range");
    }
    if (shortcut_class >= num_classes) {
        throw ConfigError("synthetic: shortcut_class out of range");
    }
    if (shortcut_class >= 0 && signatures[shortcut_class] != SignatureKind::marker) {
        throw ConfigError("synthetic: shortcut_class must use the marker signature");
    }
}

std::vector<std::string> SyntheticSpec::class_names() const {
    std::vector<std::string> names;
    std::map<std::string, int> seen;
    for (SignatureKind kind : signatures) {
        std::string base = signature_name(kind);
        int count = ++seen[base];
        names.push_back(count == 1 ? base : base + std::to_string(count));
    }
    return names;
}

namespace {

void stamp_blob(Image& img, Mask& mask, const SyntheticSpec& spec, Rng& rng) {
    const int S = spec.image_side;
    const double r = rng.uniform(spec.blob_radius_min, spec.blob_radius_max);
    const int margin = static_cast<int>(std::ceil(r)) + 1;
    const int cy = margin + static_cast<int>(rng.uniform_index(S - 2 * margin));
    const int cx = margin + static_cast<int>(rng.uniform_index(S - 2 * margin));
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double d2 = double(y - cy) * (y - cy) + double(x - cx) * (x - cx);
            if (d2 <= r * r) {
                img.at(y, x) += spec.blob_amplitude * (1.0 - d2 / (r * r) * 0.5);
                mask.at(y, x) = 1;
            }
        }
    }
}

void stamp_ridge(Image& img, Mask& mask, const SyntheticSpec& spec, Rng& rng) {
    const int S = spec.image_side;
    const double angle = rng.uniform(0.0, M_PI);
    const double half_len = S / 4.0;
    const double margin = half_len + spec.ridge_width + 1.0;
    const double cy = margin + rng.uniform() * (S - 2.0 * margin);
    const double cx = margin + rng.uniform() * (S - 2.0 * margin);
    const double uy = std::sin(angle), ux = std::cos(angle);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            // Distance to the centered segment of direction (ux,uy).
            const double dy = y - cy, dx = x - cx;
            const double t = std::clamp(dy * uy + dx * ux, -half_len, half_len);
            const double py = dy - t * uy, px = dx - t * ux;
            if (py * py + px * px <= spec.ridge_width * spec.ridge_width / 4.0) {
                img.at(y, x) += spec.ridge_amplitude;
                mask.at(y, x) = 1;
            }
        }
    }
}

void stamp_marker(Image& img, Mask& mask, const SyntheticSpec& spec, Rng& rng) {
    const int S = spec.image_side;
    const int m = spec.marker_side;
    const size_t corner = rng.uniform_index(4);
    const int y0 = (corner & 1) ? S - m : 0;
    const int x0 = (corner & 2) ? S - m : 0;
    for (int y = y0; y < y0 + m; ++y) {
        for (int x = x0; x < x0 + m; ++x) {
            img.at(y, x) = spec.marker_value;
            mask.at(y, x) = 1;
        }
    }
}

void stamp_texture(Image& img, Mask& mask, const SyntheticSpec& spec, Rng& rng) {
    const int S = spec.image_side;
    const int t = spec.texture_side;
    const int y0 = static_cast<int>(rng.uniform_index(S - t));
    const int x0 = static_cast<int>(rng.uniform_index(S - t));
    // 2-px checker period: coarse enough to survive bilinear resampling.
    for (int y = y0; y < y0 + t; ++y) {
        for (int x = x0; x < x0 + t; ++x) {
            const bool bright = ((y / 2) + (x / 2)) % 2 == 0;
            img.at(y, x) += bright ? spec.texture_amplitude : -spec.texture_amplitude;
            mask.at(y, x) = 1;
        }
    }
}

uint64_t split_tag(Split s) {
    switch (s) {
        case Split::train: return 0x51;
        case Split::valid: return 0x52;
        case Split::test: return 0x53;
    }
    return 0x51;
}

}  // namespace

std::vector<Sample> generate(const SyntheticSpec& spec, int n, uint64_t seed, Split split) {
    spec.validate();
    if (n < 1) throw ConfigError("generate: n must be >= 1");
    const int S = spec.image_side;
    std::vector<Sample> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::key(seed, {split_tag(split), static_cast<uint64_t>(i)}));
        Sample s;
        s.split = split;
        {
            std::ostringstream id;
            id << split_name(split) << "_";
            id.width(5);
            id.fill('0');
            id << i;
            s.id = id.str();
        }
        s.image = Image::zeros(S);
        for (double& v : s.image.px) v = spec.background_level + spec.noise_sigma * rng.normal();

        s.labels.resize(spec.num_classes);
        for (int c = 0; c < spec.num_classes; ++c) {
            s.labels[c] = rng.uniform() < spec.prevalence ? 1 : 0;
        }
        s.masks.resize(spec.num_classes);
        for (int c = 0; c < spec.num_classes; ++c) {
            if (!s.labels[c]) continue;
            Mask mask = Mask::zeros(S);
            switch (spec.signatures[c]) {
                case SignatureKind::blob: stamp_blob(s.image, mask, spec, rng); break;
                case SignatureKind::ridge: stamp_ridge(s.image, mask, spec, rng); break;
                case SignatureKind::marker: stamp_marker(s.image, mask, spec, rng); break;
                case SignatureKind::texture: stamp_texture(s.image, mask, spec, rng); break;
            }
            s.masks[c] = std::move(mask);
        }
        // Clamp, then snap to the 16-bit grid so on-disk and in-memory
        // datasets are identical.
        for (double& v : s.image.px) {
            v = std::clamp(v, 0.0, 1.0);
            v = std::lround(v * 65535.0) / 65535.0;
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<Sample> generate_dataset(const SyntheticSpec& spec, const DatasetCounts& counts,
                                     uint64_t seed) {
    std::vector<Sample> all = generate(spec, counts.train, seed, Split::train);
    std::vector<Sample> valid = generate(spec, counts.valid, seed, Split::valid);
    std::vector<Sample> test = generate(spec, counts.test, seed, Split::test);
    all.insert(all.end(), std::make_move_iterator(valid.begin()), std::make_move_iterator(valid.end()));
    all.insert(all.end(), std::make_move_iterator(test.begin()), std::make_move_iterator(test.end()));
    return all;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
    if (dataset.class_names.empty()) throw ConfigError("write_dataset: no class names");
    for (const std::string& name : dataset.class_names) {
        if (name.find(',') != std::string::npos || name.find('\n') != std::string::npos) {
            throw ConfigError("write_dataset: class name '" + name + "' contains a delimiter");
        }
    }
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    if (!manifest) throw IoError(dir + "/manifest.csv: cannot open for writing");
    manifest << "id,split,image_path";
    for (const auto& name : dataset.class_names) manifest << ",label_" << name;
    for (const auto& name : dataset.class_names) manifest << ",mask_path_" << name;
    manifest << "\n";

    for (const Sample& s : dataset.samples) {
        const std::string image_rel = "images/" + s.id + ".pgm";
        write_image_pgm((fs::path(dir) / image_rel).string(), s.image);
        manifest << s.id << "," << split_name(s.split) << "," << image_rel;
        for (size_t c = 0; c < dataset.class_names.size(); ++c) {
            manifest << "," << (c < s.labels.size() && s.labels[c] ? 1 : 0);
        }
        for (size_t c = 0; c < dataset.class_names.size(); ++c) {
            manifest << ",";
            if (c < s.masks.size() && s.masks[c].present() && s.masks[c].any()) {
                const std::string mask_rel =
                    "masks/" + s.id + "_" + dataset.class_names[c] + ".pgm";
                write_mask_pgm((fs::path(dir) / mask_rel).string(), s.masks[c]);
                manifest << mask_rel;
            }
        }
        manifest << "\n";
    }
    if (!manifest) throw IoError(dir + "/manifest.csv: write failed");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

Dataset load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError(manifest_path + ": cannot open");
    const fs::path base = fs::path(manifest_path).parent_path();

    std::string header;
    if (!std::getline(in, header)) throw IoError(manifest_path + ": empty manifest");
    std::vector<std::string> cols = split_csv_line(header);
    if (cols.size() < 4 || cols[0] != "id" || cols[1] != "split" || cols[2] != "image_path") {
        throw IoError(manifest_path + ": malformed header, expected id,split,image_path,label_<class>...,mask_path_<class>...");
    }
    Dataset dataset;
    size_t i = 3;
    for (; i < cols.size() && cols[i].rfind("label_", 0) == 0; ++i) {
        dataset.class_names.push_back(cols[i].substr(6));
    }
    const size_t num_classes = dataset.class_names.size();
    if (num_classes == 0) throw IoError(manifest_path + ": no label_<class> columns");
    if (cols.size() != 3 + 2 * num_classes) {
        throw IoError(manifest_path + ": expected " + std::to_string(3 + 2 * num_classes) +
                      " columns, got " + std::to_string(cols.size()));
    }
    for (size_t c = 0; c < num_classes; ++c) {
        if (cols[3 + num_classes + c] != "mask_path_" + dataset.class_names[c]) {
            throw IoError(manifest_path + ": mask column '" + cols[3 + num_classes + c] +
                          "' does not match class '" + dataset.class_names[c] + "'");
        }
    }

    std::vector<std::string> errors;
    auto fail = [&](const std::string& id, const std::string& what) {
        errors.push_back(id + ": " + what);
    };

    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields = split_csv_line(line);
        const std::string row_id = fields.empty() || fields[0].empty()
                                       ? "line " + std::to_string(line_no)
                                       : fields[0];
        if (fields.size() != cols.size()) {
            fail(row_id, "expected " + std::to_string(cols.size()) + " fields, got " +
                             std::to_string(fields.size()));
            continue;
        }
        Sample s;
        s.id = fields[0];
        try {
            s.split = split_from_name(fields[1]);
        } catch (const ConfigError& e) {
            fail(row_id, e.what());
            continue;
        }
        const fs::path image_path = base / fields[2];
        try {
            s.image = pgm_to_image(read_pgm(image_path.string()));
        } catch (const Error& e) {
            fail(row_id, e.what());
            continue;
        }
        if (dataset.image_side == 0) dataset.image_side = s.image.side;
        if (s.image.side != dataset.image_side) {
            fail(row_id, "image side " + std::to_string(s.image.side) +
                             " differs from dataset side " + std::to_string(dataset.image_side));
            continue;
        }
        s.labels.resize(num_classes);
        bool row_ok = true;
        for (size_t c = 0; c < num_classes; ++c) {
            const std::string& v = fields[3 + c];
            if (v != "0" && v != "1") {
                fail(row_id, "label_" + dataset.class_names[c] + " is '" + v + "', must be 0 or 1");
                row_ok = false;
                break;
            }
            s.labels[c] = v == "1" ? 1 : 0;
        }
        if (!row_ok) continue;
        s.masks.resize(num_classes);
        for (size_t c = 0; c < num_classes; ++c) {
            const std::string& rel = fields[3 + num_classes + c];
            if (rel.empty()) continue;
            Mask mask;
            try {
                mask = pgm_to_mask(read_pgm((base / rel).string()));
            } catch (const Error& e) {
                fail(row_id, e.what());
                row_ok = false;
                break;
            }
            if (mask.side != s.image.side) {
                fail(row_id, "mask for class " + dataset.class_names[c] + " has side " +
                                 std::to_string(mask.side) + ", image has " +
                                 std::to_string(s.image.side));
                row_ok = false;
                break;
            }
            if (!s.labels[c] && mask.any()) {
                fail(row_id, "class " + dataset.class_names[c] +
                                 " is labeled 0 but its mask is non-empty");
                row_ok = false;
                break;
            }
            s.masks[c] = std::move(mask);
        }
        if (!row_ok) continue;
        dataset.samples.push_back(std::move(s));
    }

    if (!errors.empty()) {
        std::string msg = manifest_path + ": " + std::to_string(errors.size()) + " invalid sample(s):";
        for (const std::string& e : errors) msg += "\n  - " + e;
        throw IoError(msg);
    }
    if (dataset.samples.empty()) throw IoError(manifest_path + ": no samples");
    return dataset;
}

}  // namespace patchnet
