#include "dcpl/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "dcpl/errors.hpp"

namespace dcpl::harness {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Prototype {
    std::array<double, 3> color;
    double angle, freq, phase, grating_amp;
    double blob_x, blob_y, blob_radius;
    std::array<double, 3> blob_color;
};

Prototype make_prototype(std::uint64_t universe_seed, std::size_t class_id) {
    Rng rng(universe_seed, 1000 + class_id);
    Prototype p;
    for (auto& c : p.color) c = 0.3 + 0.4 * rng.uniform();
    // Spread orientations evenly with a little randomness so gratings differ.
    p.angle = std::numbers::pi * (static_cast<double>(class_id % 8) + 0.3 * rng.uniform()) / 8.0;
    p.freq = 1.0 + static_cast<double>(class_id % 3) + 0.5 * rng.uniform();
    p.phase = kTwoPi * rng.uniform();
    p.grating_amp = 0.18;
    p.blob_x = 3.0 + 10.0 * rng.uniform();
    p.blob_y = 3.0 + 10.0 * rng.uniform();
    p.blob_radius = 2.0 + 1.5 * rng.uniform();
    for (auto& c : p.blob_color) c = rng.uniform() < 0.5 ? -0.3 : 0.3;
    return p;
}

struct Jitter {
    double phase = 0.0, dx = 0.0, dy = 0.0, brightness = 0.0, noise = 0.0;
};

ImageSample draw(const Prototype& p, std::size_t size, const Jitter& j, Rng* noise_rng) {
    ImageSample img;
    img.height = img.width = size;
    img.pixels.resize(size * size * 3);
    const double scale = 16.0 / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = static_cast<double>(x) * scale, fy = static_cast<double>(y) * scale;
            const double g = p.grating_amp *
                             std::sin(kTwoPi * p.freq * (fx * std::cos(p.angle) + fy * std::sin(p.angle)) / 16.0 + p.phase + j.phase);
            const double ddx = fx - (p.blob_x + j.dx), ddy = fy - (p.blob_y + j.dy);
            const double blob = std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * p.blob_radius * p.blob_radius));
            for (std::size_t c = 0; c < 3; ++c) {
                double v = p.color[c] + g + blob * p.blob_color[c] + j.brightness;
                if (noise_rng) v += j.noise * noise_rng->normal();
                img.pixels[(y * size + x) * 3 + c] = v;
            }
        }
    }
    return img;
}

void clamp01(ImageSample& img) {
    for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

// Per-domain constants drawn once from the domain id.
struct DomainParams {
    std::array<double, 9> mix;
    std::array<double, 3> offset;
    double tex_fx, tex_fy, tex_phase, tex_amp;
    std::array<double, 3> tint;
    double gamma;
    double desaturate, contrast;
};

DomainParams domain_params(const SyntheticDomainSpec& spec) {
    Rng rng(0xD0A1, spec.domain_id);
    DomainParams d{};
    switch (spec.family) {
        case DomainFamily::Aerial: {
            // Earthy colour cast: mostly green/brown channels, washed-out blue.
            const std::array<double, 9> base{0.55, 0.35, 0.10, 0.20, 0.70, 0.10, 0.15, 0.35, 0.30};
            for (std::size_t i = 0; i < 9; ++i) d.mix[i] = base[i] + 0.08 * (rng.uniform() - 0.5);
            d.offset = {0.10 + 0.05 * rng.uniform(), 0.12 + 0.05 * rng.uniform(), 0.02};
            d.tex_amp = 0.10;
            break;
        }
        case DomainFamily::Medical: {
            d.tint = {0.85 + 0.1 * rng.uniform(), 0.80 + 0.1 * rng.uniform(), 0.95};
            d.gamma = 0.6 + 0.2 * rng.uniform();
            d.tex_amp = 0.08;
            break;
        }
        case DomainFamily::Web: {
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t k = 0; k < 3; ++k) d.mix[c * 3 + k] = (c == k ? 0.75 + 0.5 * rng.uniform() : 0.0);
                d.offset[c] = 0.2 * (rng.uniform() - 0.5);
            }
            d.desaturate = 0.8 * rng.uniform();
            d.contrast = 0.7 + 0.5 * rng.uniform();
            d.tex_amp = 0.06 * rng.uniform();
            break;
        }
        case DomainFamily::Natural: d.tex_amp = 0.0; break;
    }
    d.tex_fx = 3.0 + std::floor(3.0 * rng.uniform());
    d.tex_fy = 4.0 + std::floor(3.0 * rng.uniform());
    d.tex_phase = kTwoPi * rng.uniform();
    return d;
}

}  // namespace

std::string to_string(DomainFamily f) {
    switch (f) {
        case DomainFamily::Natural: return "natural";
        case DomainFamily::Web: return "web";
        case DomainFamily::Aerial: return "aerial";
        case DomainFamily::Medical: return "medical";
    }
    return "natural";
}

DomainFamily family_from_string(const std::string& s) {
    if (s == "natural") return DomainFamily::Natural;
    if (s == "web") return DomainFamily::Web;
    if (s == "aerial") return DomainFamily::Aerial;
    if (s == "medical") return DomainFamily::Medical;
    throw ConfigError("unknown domain family '" + s + "' (expected natural, web, aerial or medical)");
}

DomainStyle domain_style(const SyntheticDomainSpec& spec) {
    DomainStyle st;
    if (spec.family != DomainFamily::Web || spec.strength == 0.0) return st;
    const DomainParams d = domain_params(spec);
    const double shift = (d.offset[0] + d.offset[1] + d.offset[2]) / 3.0;
    st.gray = d.desaturate > 0.45;
    st.faded = d.contrast < 0.85;
    st.textured = d.tex_amp > 0.03;
    st.bright = shift > 0.03;
    st.dark = shift < -0.03;
    return st;
}

ImageSample class_prototype(std::uint64_t universe_seed, std::size_t class_id, std::size_t image_size) {
    ImageSample img = draw(make_prototype(universe_seed, class_id), image_size, {}, nullptr);
    clamp01(img);
    img.label = class_id;
    return img;
}

void apply_domain(const SyntheticDomainSpec& spec, ImageSample& img) {
    const double s = spec.strength;
    if (spec.family != DomainFamily::Natural && s != 0.0) {
        const DomainParams d = domain_params(spec);
        const double scale = 16.0 / static_cast<double>(img.width);
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                double* px = &img.pixels[(y * img.width + x) * 3];
                const double fx = static_cast<double>(x) * scale, fy = static_cast<double>(y) * scale;
                const double tex = d.tex_amp * std::sin(kTwoPi * (d.tex_fx * fx + d.tex_fy * fy) / 16.0 + d.tex_phase);
                std::array<double, 3> out{};
                if (spec.family == DomainFamily::Web) {
                    const double g = 0.3 * px[0] + 0.59 * px[1] + 0.11 * px[2];
                    for (std::size_t c = 0; c < 3; ++c) {
                        const double desat = (1.0 - d.desaturate) * px[c] + d.desaturate * g;
                        out[c] = d.contrast * (d.mix[c * 3 + c] * desat - 0.5) + 0.5 + d.offset[c] + tex;
                    }
                } else if (spec.family == DomainFamily::Aerial) {
                    for (std::size_t c = 0; c < 3; ++c)
                        out[c] = d.mix[c * 3] * px[0] + d.mix[c * 3 + 1] * px[1] + d.mix[c * 3 + 2] * px[2] + d.offset[c] + tex;
                } else {
                    const double g = std::clamp(0.3 * px[0] + 0.59 * px[1] + 0.11 * px[2], 0.0, 1.0);
                    const double v = 0.15 + 0.8 * std::pow(g, d.gamma);
                    for (std::size_t c = 0; c < 3; ++c) out[c] = d.tint[c] * v + tex;
                }
                for (std::size_t c = 0; c < 3; ++c) px[c] = (1.0 - s) * px[c] + s * out[c];
            }
        }
    }
    if (spec.v2_level != 0.0) {
        // "v2" re-rendering: lower contrast, warm channel shift, a second texture.
        const double l = spec.v2_level;
        const double scale = 16.0 / static_cast<double>(img.width);
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                double* px = &img.pixels[(y * img.width + x) * 3];
                const double fx = static_cast<double>(x) * scale, fy = static_cast<double>(y) * scale;
                const double tex = 0.12 * std::sin(kTwoPi * (5.0 * fx - 2.0 * fy) / 16.0);
                const std::array<double, 3> shift{0.12, 0.0, -0.10};
                for (std::size_t c = 0; c < 3; ++c) {
                    const double target = 0.6 * px[c] + 0.2 + shift[c] + tex;
                    px[c] = (1.0 - l) * px[c] + l * target;
                }
            }
        }
    }
    clamp01(img);
}

ImageSample render_sample(const SyntheticDomainSpec& spec, std::size_t class_id, Rng& rng) {
    const Prototype p = make_prototype(spec.universe_seed, class_id);
    Jitter j;
    j.phase = 0.8 * (rng.uniform() - 0.5);
    j.dx = 2.0 * (rng.uniform() - 0.5);
    j.dy = 2.0 * (rng.uniform() - 0.5);
    j.brightness = 0.1 * (rng.uniform() - 0.5);
    j.noise = spec.pixel_noise;
    ImageSample img = draw(p, spec.image_size, j, &rng);
    clamp01(img);
    apply_domain(spec, img);
    img.label = class_id;
    img.domain = spec.domain_id;
    return img;
}

Dataset gen_synthetic(const SyntheticDomainSpec& spec, Rng& rng) {
    if (spec.classes.size() < 4)
        throw ConfigError("dataset '" + spec.name + "' has " + std::to_string(spec.classes.size()) +
                          " classes; base/novel splitting needs at least 4");
    if (spec.samples_per_class < 5) throw ConfigError("dataset '" + spec.name + "' needs at least 5 samples per class");
    Dataset ds;
    ds.spec = spec;
    const std::size_t n_test = std::max<std::size_t>(1, (spec.samples_per_class + 2) / 5);
    const std::size_t n_train = spec.samples_per_class - n_test;
    std::uint64_t next_id = static_cast<std::uint64_t>(spec.domain_id) << 32;
    for (std::size_t c : spec.classes) {
        Rng class_rng = rng.split(c);
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            ImageSample img = render_sample(spec, c, class_rng);
            img.id = next_id++;
            (i < n_train ? ds.train : ds.test).push_back(std::move(img));
        }
    }
    return ds;
}

}  // namespace dcpl::harness
