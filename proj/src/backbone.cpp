#include "patchnet/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "patchnet/rng.hpp"

namespace patchnet {

void BackboneConfig::validate() const {
    if (in_channels != 1) {
        throw ConfigError("backbone: in_channels must be 1 (grayscale input), got " +
                          std::to_string(in_channels));
    }
    if (num_classes < 1) throw ConfigError("backbone: num_classes must be >= 1");
    if (stage_channels.empty()) throw ConfigError("backbone: stage_channels must be non-empty");
    for (int c : stage_channels) {
        if (c < 1) throw ConfigError("backbone: stage channel counts must be >= 1");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw ConfigError("backbone: kernel_size must be odd and >= 1, got " +
                          std::to_string(kernel_size));
    }
    // Each stage halves the spatial side; it must stay >= 1 throughout.
    int min_side = 1;
    for (size_t i = 0; i < stage_channels.size(); ++i) min_side *= 2;
    if (input_side < min_side) {
        throw ConfigError("backbone: input_side " + std::to_string(input_side) + " too small for " +
                          std::to_string(stage_channels.size()) + " downsampling stages (need >= " +
                          std::to_string(min_side) + ")");
    }
}

Backbone::Backbone(const Backbone& other) : config_(other.config_) {
    params_.reserve(other.params_.size());
    for (const auto& [name, t] : other.params_) {
        params_.emplace_back(name, Tensor::from_data(t.shape(),
                                                     {t.data().begin(), t.data().end()},
                                                     t.requires_grad()));
    }
    forward_calls_.store(other.forward_calls_.load());
    last_forward_rows_.store(other.last_forward_rows_.load());
}

Backbone& Backbone::operator=(const Backbone& other) {
    if (this != &other) {
        Backbone copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Backbone::Backbone(Backbone&& other) noexcept
    : config_(std::move(other.config_)), params_(std::move(other.params_)) {
    forward_calls_.store(other.forward_calls_.load());
    last_forward_rows_.store(other.last_forward_rows_.load());
}

Backbone& Backbone::operator=(Backbone&& other) noexcept {
    if (this != &other) {
        config_ = std::move(other.config_);
        params_ = std::move(other.params_);
        forward_calls_.store(other.forward_calls_.load());
        last_forward_rows_.store(other.last_forward_rows_.load());
    }
    return *this;
}

Backbone Backbone::build(const BackboneConfig& config, uint64_t seed) {
    config.validate();
    Backbone model;
    model.config_ = config;
    Rng rng(Rng::key(seed, {0x1217}));

    auto normal_tensor = [&](Shape shape, double stddev) {
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = rng.normal() * stddev;
        return Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
    };

    int cin = config.in_channels;
    const size_t k = config.kernel_size;
    for (size_t i = 0; i < config.stage_channels.size(); ++i) {
        const size_t cout = config.stage_channels[i];
        const std::string prefix = "stage" + std::to_string(i) + ".";
        model.params_.emplace_back(
            prefix + "conv.weight",
            normal_tensor({cout, size_t(cin), k, k}, std::sqrt(2.0 / (cin * k * k))));
        model.params_.emplace_back(prefix + "conv.bias", Tensor::zeros({cout}, true));
        model.params_.emplace_back(prefix + "down.weight",
                                   normal_tensor({cout, cout, 2, 2}, std::sqrt(2.0 / (cout * 4))));
        model.params_.emplace_back(prefix + "down.bias", Tensor::zeros({cout}, true));
        cin = static_cast<int>(cout);
    }
    model.params_.emplace_back("head.weight",
                               normal_tensor({size_t(config.num_classes), size_t(cin)},
                                             std::sqrt(2.0 / cin)));
    model.params_.emplace_back("head.bias", Tensor::zeros({size_t(config.num_classes)}, true));
    return model;
}

Tensor& Backbone::param(const std::string& name) {
    for (auto& [n, t] : params_) {
        if (n == name) return t;
    }
    throw Error("backbone: no parameter named '" + name + "'");
}

void Backbone::zero_grad() {
    for (auto& [n, t] : params_) t.zero_grad();
}

Tensor Backbone::forward_features(const Tensor& batch) const {
    const Shape& s = batch.shape();
    const Shape expected{s.empty() ? 0 : s[0], size_t(config_.in_channels),
                         size_t(config_.input_side), size_t(config_.input_side)};
    if (s.size() != 4 || s[1] != expected[1] || s[2] != expected[2] || s[3] != expected[3]) {
        throw ShapeError("backbone: expected batch of shape " + shape_str(expected) + ", got " +
                         shape_str(s));
    }
    // const_cast-free lookup on const params.
    auto find = [&](const std::string& name) -> const Tensor& {
        for (const auto& [n, t] : params_) {
            if (n == name) return t;
        }
        throw Error("backbone: no parameter named '" + name + "'");
    };
    Tensor x = batch;
    for (size_t i = 0; i < config_.stage_channels.size(); ++i) {
        const std::string prefix = "stage" + std::to_string(i) + ".";
        x = conv2d(x, find(prefix + "conv.weight"), find(prefix + "conv.bias"), 1,
                   config_.kernel_size / 2);
        x = relu(x);
        x = conv2d(x, find(prefix + "down.weight"), find(prefix + "down.bias"), 2, 0);
    }
    return x;
}

Tensor Backbone::forward_head(const Tensor& features) const {
    auto find = [&](const std::string& name) -> const Tensor& {
        for (const auto& [n, t] : params_) {
            if (n == name) return t;
        }
        throw Error("backbone: no parameter named '" + name + "'");
    };
    Tensor pooled = global_avg_pool(features);
    return linear(pooled, find("head.weight"), find("head.bias"));
}

Tensor Backbone::forward(const Tensor& batch) const {
    forward_calls_.fetch_add(1);
    last_forward_rows_.store(batch.shape().empty() ? 0 : batch.shape()[0]);
    return forward_head(forward_features(batch));
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[8] = {'M', 'P', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kFormatVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ostream& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

void put_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), s.size());
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw IoError(path + ": truncated checkpoint");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

int32_t get_i32(std::istream& in, const std::string& path) {
    return static_cast<int32_t>(get_u32(in, path));
}

uint64_t get_u64(std::istream& in, const std::string& path) {
    uint64_t lo = get_u32(in, path);
    uint64_t hi = get_u32(in, path);
    return lo | (hi << 32);
}

double get_f64(std::istream& in, const std::string& path) {
    uint64_t bits = get_u64(in, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string get_string(std::istream& in, const std::string& path) {
    uint32_t len = get_u32(in, path);
    if (len > (1u << 20)) throw IoError(path + ": unreasonable string length in checkpoint");
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (static_cast<uint32_t>(in.gcount()) != len) throw IoError(path + ": truncated checkpoint");
    return s;
}

std::string config_mismatch_report(const BackboneConfig& a, const BackboneConfig& b) {
    auto stages = [](const BackboneConfig& c) {
        std::string s;
        for (size_t i = 0; i < c.stage_channels.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(c.stage_channels[i]);
        }
        return s;
    };
    return "expected {classes=" + std::to_string(a.num_classes) + ", stages=[" + stages(a) +
           "], kernel=" + std::to_string(a.kernel_size) + ", side=" + std::to_string(a.input_side) +
           "} but checkpoint has {classes=" + std::to_string(b.num_classes) + ", stages=[" +
           stages(b) + "], kernel=" + std::to_string(b.kernel_size) +
           ", side=" + std::to_string(b.input_side) + "}";
}

}  // namespace

void save_checkpoint(const Backbone& model, const PatchGridSpec& grid,
                     const std::vector<std::string>& class_names, const CheckpointMeta& meta,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path + ": cannot open for writing");
    out.write(kMagic, 8);
    put_u32(out, kFormatVersion);

    const BackboneConfig& cfg = model.config();
    put_i32(out, cfg.in_channels);
    put_i32(out, cfg.num_classes);
    put_i32(out, cfg.kernel_size);
    put_i32(out, cfg.input_side);
    put_u32(out, static_cast<uint32_t>(cfg.stage_channels.size()));
    for (int c : cfg.stage_channels) put_i32(out, c);
    put_i32(out, grid.image_side);
    put_i32(out, grid.patches_per_side);
    put_i32(out, grid.patch_side);
    put_u32(out, static_cast<uint32_t>(class_names.size()));
    for (const auto& name : class_names) put_string(out, name);
    put_i32(out, meta.epoch);
    put_u64(out, meta.seed);

    put_u32(out, static_cast<uint32_t>(model.parameters().size()));
    for (const auto& [name, t] : model.parameters()) {
        put_string(out, name);
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape()) put_u64(out, d);
        for (double v : t.data()) put_f64(out, v);
    }
    if (!out) throw IoError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open");
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        throw IoError(path + ": bad magic number, not a checkpoint file");
    }
    Checkpoint ck;
    ck.format_version = get_u32(in, path);
    if (ck.format_version != kFormatVersion) {
        throw IoError(path + ": unsupported checkpoint format version " +
                      std::to_string(ck.format_version));
    }
    ck.config.in_channels = get_i32(in, path);
    ck.config.num_classes = get_i32(in, path);
    ck.config.kernel_size = get_i32(in, path);
    ck.config.input_side = get_i32(in, path);
    const uint32_t n_stages = get_u32(in, path);
    if (n_stages > 64) throw IoError(path + ": unreasonable stage count");
    ck.config.stage_channels.clear();
    for (uint32_t i = 0; i < n_stages; ++i) ck.config.stage_channels.push_back(get_i32(in, path));
    const int S = get_i32(in, path);
    const int P = get_i32(in, path);
    const int p = get_i32(in, path);
    ck.grid = PatchGridSpec(S, P);
    if (ck.grid.patch_side != p) throw IoError(path + ": inconsistent patch geometry");
    const uint32_t n_names = get_u32(in, path);
    if (n_names > 4096) throw IoError(path + ": unreasonable class-name count");
    for (uint32_t i = 0; i < n_names; ++i) ck.class_names.push_back(get_string(in, path));
    ck.meta.epoch = get_i32(in, path);
    ck.meta.seed = get_u64(in, path);

    const uint32_t n_tensors = get_u32(in, path);
    if (n_tensors > 65536) throw IoError(path + ": unreasonable tensor count");
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = get_string(in, path);
        const uint32_t rank = get_u32(in, path);
        if (rank > 8) throw IoError(path + ": unreasonable tensor rank");
        Shape shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(get_u64(in, path));
        const size_t n = shape_numel(shape);
        if (n > (1u << 28)) throw IoError(path + ": unreasonable tensor size");
        std::vector<double> data(n);
        for (size_t j = 0; j < n; ++j) data[j] = get_f64(in, path);
        ck.tensors.emplace_back(std::move(name),
                                Tensor::from_data(std::move(shape), std::move(data), true));
    }
    return ck;
}

Backbone backbone_from_checkpoint(const Checkpoint& ck, const BackboneConfig* expected) {
    if (expected && !(*expected == ck.config)) {
        throw ConfigError("checkpoint config mismatch: " +
                          config_mismatch_report(*expected, ck.config));
    }
    // Build the skeleton to know the expected parameter names and shapes, then
    // fill from the stored tensors.
    Backbone model = Backbone::build(ck.config, /*seed=*/0);
    if (model.parameters().size() != ck.tensors.size()) {
        throw IoError("checkpoint tensor count " + std::to_string(ck.tensors.size()) +
                      " does not match architecture (" +
                      std::to_string(model.parameters().size()) + " expected)");
    }
    for (size_t i = 0; i < ck.tensors.size(); ++i) {
        auto& [want_name, param] = model.parameters()[i];
        const auto& [got_name, stored] = ck.tensors[i];
        if (want_name != got_name) {
            throw IoError("checkpoint tensor '" + got_name + "' where '" + want_name +
                          "' was expected");
        }
        if (stored.shape() != param.shape()) {
            throw IoError("checkpoint tensor '" + got_name + "' has shape " +
                          shape_str(stored.shape()) + ", expected " + shape_str(param.shape()));
        }
        param = Tensor::from_data(stored.shape(), {stored.data().begin(), stored.data().end()},
                                  /*requires_grad=*/true);
    }
    return model;
}

}  // namespace patchnet
