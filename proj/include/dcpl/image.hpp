#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcpl/tensor.hpp"

namespace dcpl {

// H×W×3 image, channel-last row-major, values in [0, 1].
struct ImageSample {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;
    std::size_t label = 0;       // class index in the benchmark's class universe
    std::uint32_t domain = 0;
    std::uint64_t id = 0;

    double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

// Source index (into H×W×3 pixels) of every element of the [M×3p²] patch
// matrix. Patches are non-overlapping, row-major over the image; each patch
// is flattened as (dy, dx, channel).
std::vector<std::size_t> patch_index_map(std::size_t height, std::size_t width, std::size_t patch);

// Differentiable patchify of a [H×W×3] tensor.
ad::Tensor patchify(const ad::Tensor& pixels, std::size_t patch);
ad::Tensor patchify(const ImageSample& image, std::size_t patch);
// Inverse of patchify on raw values.
std::vector<double> unpatchify(std::span<const double> patches, std::size_t height, std::size_t width, std::size_t patch);

ad::Tensor pixel_tensor(const ImageSample& image);

}  // namespace dcpl
