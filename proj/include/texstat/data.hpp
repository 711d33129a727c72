#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "texstat/common.hpp"
#include "texstat/tensor.hpp"

namespace texstat {

// One training example: RGB image in [0,1] and a strictly binary mask.
template <typename T>
struct SamplePair {
    Tensor<T> image;  // [3 x H x W]
    Tensor<T> mask;   // [1 x H x W], values in {0, 1}
    std::string id;
};

// Controls for the synthetic lesion generator.  Masks are unions of
// rotated ellipses whose radii are perturbed by a smooth periodic noise
// (boundary_roughness scales the perturbation).  The lesion interior is
// darkened by `contrast` relative to the skin tone and carries
// speckle noise drawn from a two-sigma Gaussian scale mixture whose wide
// component has probability `tail_weight`; the background carries plain
// Gaussian grain.  High tail_weight therefore gives the lesion pixels a
// heavier-tailed (higher-kurtosis) intensity distribution than the skin.
struct SynthParams {
    std::int64_t count = 8;
    std::int64_t size = 64;
    std::int64_t blobs_min = 1;
    std::int64_t blobs_max = 3;
    double boundary_roughness = 0.35;
    double contrast = 0.35;
    double tail_weight = 0.8;
    std::uint64_t seed = 0;

    void validate() const;
};

// Loads image/mask pairs from two directories with matching filename
// stems.  Images are decoded as RGB, bilinear-resized to the target,
// and scaled to [0,1]; masks are nearest-neighbor-resized and binarized
// at >127 of 255.  Samples come back sorted by stem.
template <typename T>
std::vector<SamplePair<T>> load_dir(const std::string& images_path, const std::string& masks_path,
                                    std::int64_t target_h, std::int64_t target_w);

// Deterministic synthetic dataset; identical seed gives identical samples.
template <typename T>
std::vector<SamplePair<T>> synth(const SynthParams& params);

// Deterministic shuffled partition into train/val/test by fractions
// (must sum to 1).  A positive fraction that rounds to zero samples is an
// error.
template <typename T>
std::array<std::vector<SamplePair<T>>, 3> split(const std::vector<SamplePair<T>>& samples,
                                                const std::array<double, 3>& fractions,
                                                std::uint64_t seed);

}  // namespace texstat
