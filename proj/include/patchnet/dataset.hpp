#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchnet/image.hpp"

namespace patchnet {

enum class Split { train, valid, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Sample {
    std::string id;
    Split split = Split::train;
    Image image;                  // [S,S] grayscale in [0,1]
    std::vector<uint8_t> labels;  // [C], 0/1
    std::vector<Mask> masks;      // [C]; side == 0 when absent
};

enum class SignatureKind { blob, ridge, marker, texture };

std::string signature_name(SignatureKind kind);
SignatureKind signature_from_name(const std::string& name);

// Desk-scale synthetic task. Every positive sample carries its class
// signature at a random location, recorded pixel-exactly in the mask;
// negatives are pure background noise. The marker signature is a bright
// square flush against one of the four image corners, the stand-in for a
// dataset shortcut that a faithful saliency method must expose.
struct SyntheticSpec {
    int image_side = 64;
    int num_classes = 4;
    std::vector<SignatureKind> signatures = {SignatureKind::blob, SignatureKind::ridge,
                                             SignatureKind::marker, SignatureKind::texture};
    double prevalence = 0.35;
    double noise_sigma = 0.08;
    double background_level = 0.35;
    double blob_radius_min = 6.0;
    double blob_radius_max = 10.0;
    double blob_amplitude = 0.45;
    double ridge_width = 3.0;
    double ridge_amplitude = 0.35;
    int marker_side = 8;
    double marker_value = 0.95;
    int texture_side = 14;
    double texture_amplitude = 0.25;
    int shortcut_class = 2;  // forced to the marker signature; -1 disables

    void validate() const;
    std::vector<std::string> class_names() const;
};

// Deterministic by (seed, split, index); the content of one split does not
// depend on the sizes of the others.
std::vector<Sample> generate(const SyntheticSpec& spec, int n, uint64_t seed, Split split);

struct DatasetCounts {
    int train = 2000;
    int valid = 200;
    int test = 200;
};

std::vector<Sample> generate_dataset(const SyntheticSpec& spec, const DatasetCounts& counts,
                                     uint64_t seed);

struct Dataset {
    int image_side = 0;
    std::vector<std::string> class_names;
    std::vector<Sample> samples;
};

// Writes images/<id>.pgm (16-bit), masks/<id>_<class>.pgm (8-bit, only for
// nonempty masks) and manifest.csv with header
// id,split,image_path,label_<class>...,mask_path_<class>...
void write_dataset(const Dataset& dataset, const std::string& dir);

// Loads a manifest and every referenced file, validating sizes, binary
// labels and the "negative samples have empty masks" invariant. All
// problems are reported together in one itemized error.
Dataset load_manifest(const std::string& manifest_path);

}  // namespace patchnet
