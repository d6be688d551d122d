#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcpl/image.hpp"
#include "dcpl/rng.hpp"

// Procedural multi-domain image benchmark. Every class has a fixed pixel
// prototype (base colour, oriented grating, blob); every domain applies a
// fixed colour/texture transform to all of its images.
namespace dcpl::harness {

// Web domains are mild random photometric variants of the natural domain;
// the dual encoder is pretrained on a mix of them.
enum class DomainFamily { Natural, Web, Aerial, Medical };

std::string to_string(DomainFamily f);
DomainFamily family_from_string(const std::string& s);

struct SyntheticDomainSpec {
    std::string name = "natural";
    std::uint32_t domain_id = 0;
    DomainFamily family = DomainFamily::Natural;
    double strength = 1.0;             // blend between identity (0) and the full family transform (1)
    double v2_level = 0.0;             // extra "v2" re-rendering shift on top (0 disables it)
    std::vector<std::size_t> classes;  // class ids from the universe
    std::size_t samples_per_class = 50;
    std::size_t image_size = 16;
    double pixel_noise = 0.04;
    std::uint64_t universe_seed = 1234;  // fixes the class prototypes
};

struct Dataset {
    SyntheticDomainSpec spec;
    std::vector<ImageSample> train;
    std::vector<ImageSample> test;
};

// Clean class prototype (no per-sample jitter, no domain transform).
ImageSample class_prototype(std::uint64_t universe_seed, std::size_t class_id, std::size_t image_size);

// One rendered sample: jittered prototype, then the domain transform.
ImageSample render_sample(const SyntheticDomainSpec& spec, std::size_t class_id, Rng& rng);

// Visible photometric traits of a web domain, used to caption its images.
// Other families report no traits.
struct DomainStyle {
    bool gray = false, faded = false, textured = false, bright = false, dark = false;
};
DomainStyle domain_style(const SyntheticDomainSpec& spec);

// Applies the spec's domain transform (and v2 shift) in place.
void apply_domain(const SyntheticDomainSpec& spec, ImageSample& image);

// Labeled samples split 80/20 per class (train first). Needs ≥ 4 classes.
Dataset gen_synthetic(const SyntheticDomainSpec& spec, Rng& rng);

}  // namespace dcpl::harness
