#include "dcpl/image.hpp"

#include "dcpl/errors.hpp"
#include "dcpl/ops.hpp"

namespace dcpl {

std::vector<std::size_t> patch_index_map(std::size_t height, std::size_t width, std::size_t patch) {
    if (patch == 0 || height % patch != 0 || width % patch != 0)
        throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible into patches of " + std::to_string(patch));
    const std::size_t per_row = width / patch;
    const std::size_t count = (height / patch) * per_row;
    std::vector<std::size_t> map;
    map.reserve(count * patch * patch * 3);
    for (std::size_t m = 0; m < count; ++m) {
        const std::size_t y0 = (m / per_row) * patch, x0 = (m % per_row) * patch;
        for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx)
                for (std::size_t c = 0; c < 3; ++c) map.push_back(((y0 + dy) * width + (x0 + dx)) * 3 + c);
    }
    return map;
}

ad::Tensor patchify(const ad::Tensor& pixels, std::size_t patch) {
    if (pixels.rank() != 3 || pixels.dim(2) != 3)
        throw DimensionError("patchify expects [H×W×3], got " + ad::shape_str(pixels.shape()));
    const std::size_t h = pixels.dim(0), w = pixels.dim(1);
    const auto map = patch_index_map(h, w, patch);
    const std::size_t count = (h / patch) * (w / patch);
    return ad::gather(pixels, map, {count, patch * patch * 3});
}

ad::Tensor patchify(const ImageSample& image, std::size_t patch) {
    const auto map = patch_index_map(image.height, image.width, patch);
    const std::size_t count = (image.height / patch) * (image.width / patch);
    std::vector<double> out(map.size());
    for (std::size_t j = 0; j < map.size(); ++j) out[j] = image.pixels[map[j]];
    return ad::Tensor::from({count, patch * patch * 3}, std::move(out));
}

std::vector<double> unpatchify(std::span<const double> patches, std::size_t height, std::size_t width, std::size_t patch) {
    const auto map = patch_index_map(height, width, patch);
    if (patches.size() != map.size()) throw DimensionError("unpatchify: wrong patch matrix size");
    std::vector<double> out(height * width * 3);
    for (std::size_t j = 0; j < map.size(); ++j) out[map[j]] = patches[j];
    return out;
}

ad::Tensor pixel_tensor(const ImageSample& image) {
    return ad::Tensor::from({image.height, image.width, 3}, image.pixels);
}

}  // namespace dcpl
