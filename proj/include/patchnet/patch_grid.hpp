#pragma once

#include "patchnet/tensor.hpp"

namespace patchnet {

// Geometry of the non-overlapping patch partition: an S x S image split into
// P x P patches of side p, with p * P == S enforced exactly.
struct PatchGridSpec {
    int image_side = 64;       // S
    int patches_per_side = 8;  // P
    int patch_side = 8;        // p

    PatchGridSpec() = default;
    PatchGridSpec(int image_side_, int patches_per_side_);

    int num_patches() const { return patches_per_side * patches_per_side; }
    bool operator==(const PatchGridSpec&) const = default;
};

// [1,S,S] -> [P^2,1,p,p]; patches in row-major grid order, patch (r,c)
// covering pixel rows [r*p,(r+1)*p) and cols [c*p,(c+1)*p).
Tensor partition(const Tensor& image, const PatchGridSpec& spec);

// Inverse of partition; the concatenation reproduces the image exactly.
Tensor reassemble(const Tensor& patches, const PatchGridSpec& spec);

// Stacks the patches of several images along the batch dimension:
// B images -> [B*P^2,1,p,p], image-major then row-major patch order.
Tensor stack_patches(const std::vector<Tensor>& images, const PatchGridSpec& spec);

}  // namespace patchnet
