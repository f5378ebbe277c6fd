#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchnet/patch_grid.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

// Small convolutional classifier: per stage conv3x3 -> ReLU -> 2x2 stride-2
// downsampling conv, then global average pooling and a linear head to C
// logits. No normalization layers, so samples in a batch never interact.
struct BackboneConfig {
    int in_channels = 1;
    int num_classes = 1;
    std::vector<int> stage_channels = {16, 32, 64};
    int kernel_size = 3;
    int input_side = 64;

    void validate() const;  // throws ConfigError
    bool operator==(const BackboneConfig&) const = default;
};

class Backbone {
public:
    Backbone() = default;
    Backbone(const Backbone& other);
    Backbone& operator=(const Backbone& other);
    Backbone(Backbone&& other) noexcept;
    Backbone& operator=(Backbone&& other) noexcept;

    // Parameters drawn deterministically from the seed: fan-in-scaled normal
    // weights, zero biases.
    static Backbone build(const BackboneConfig& config, uint64_t seed);

    // [N,1,side,side] -> [N,C]. N may be zero.
    Tensor forward(const Tensor& batch) const;
    // Feature maps entering the pooling head: [N,C_last,h,w].
    Tensor forward_features(const Tensor& batch) const;
    // Pool + linear head on captured feature maps.
    Tensor forward_head(const Tensor& features) const;

    const BackboneConfig& config() const { return config_; }
    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor& param(const std::string& name);
    void zero_grad();

    // Deep copy: parameter storage is duplicated, not shared.
    Backbone clone() const { return Backbone(*this); }

    // Forward bookkeeping (batched calls and rows of the last batch).
    size_t forward_calls() const { return forward_calls_.load(); }
    size_t last_forward_rows() const { return last_forward_rows_.load(); }

private:
    BackboneConfig config_;
    std::vector<std::pair<std::string, Tensor>> params_;
    mutable std::atomic<size_t> forward_calls_{0};
    mutable std::atomic<size_t> last_forward_rows_{0};
};

struct CheckpointMeta {
    int epoch = 0;
    uint64_t seed = 0;
};

struct Checkpoint {
    uint32_t format_version = 1;
    BackboneConfig config;
    PatchGridSpec grid;
    std::vector<std::string> class_names;
    CheckpointMeta meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

// Binary little-endian container: magic "MPNCKPT1", format_version u32,
// config block, then (name-length, name, shape-rank, dims, f64 payload) per
// tensor. Round trips bit-exactly.
void save_checkpoint(const Backbone& model, const PatchGridSpec& grid,
                     const std::vector<std::string>& class_names, const CheckpointMeta& meta,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds a model from checkpoint tensors. When `expected` is given, a
// differing stored config is rejected with a config-mismatch error.
Backbone backbone_from_checkpoint(const Checkpoint& ck,
                                  const BackboneConfig* expected = nullptr);

}  // namespace patchnet
