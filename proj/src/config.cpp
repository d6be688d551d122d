#include "dcpl/config.hpp"

#include <cstdio>
#include <fstream>
#include <string_view>

#include "dcpl/errors.hpp"

namespace dcpl::config {

using harness::DomainFamily;
using harness::SyntheticDomainSpec;

namespace {

SyntheticDomainSpec domain(const char* name, DomainFamily family, std::uint32_t id) {
    SyntheticDomainSpec s;
    s.name = name;
    s.family = family;
    s.domain_id = id;
    s.classes = {0, 1, 2, 3, 4, 5, 6, 7};
    s.samples_per_class = 100;
    return s;
}

Json domain_json(const SyntheticDomainSpec& s) {
    return Json{{"name", s.name},
                {"family", harness::to_string(s.family)},
                {"domain_id", s.domain_id},
                {"strength", s.strength},
                {"classes", s.classes},
                {"samples_per_class", s.samples_per_class},
                {"pixel_noise", s.pixel_noise}};
}

const char* type_name(const Json& j) { return j.type_name(); }

bool same_kind(const Json& a, const Json& b) {
    if (a.is_number() && b.is_number()) {
        // Integer fields stay integers; floats accept any number.
        if (a.is_number_float()) return true;
        return !b.is_number_float() && (!a.is_number_unsigned() || !b.is_number_integer() || b.get<std::int64_t>() >= 0);
    }
    return a.type() == b.type();
}

// Overlays `doc` onto `defaults`, rejecting unknown keys and type changes.
void merge_checked(Json& defaults, const Json& doc, const std::string& path, const Json* element_template) {
    if (defaults.is_object()) {
        if (!doc.is_object()) throw ConfigError(path + ": expected an object, got " + type_name(doc));
        for (const auto& [key, value] : doc.items()) {
            const std::string sub = path.empty() ? key : path + "." + key;
            if (!defaults.contains(key)) throw ConfigError("unknown key '" + sub + "'");
            const Json* tmpl = nullptr;
            static const Json domain_template = domain_json(SyntheticDomainSpec{});
            if (sub == "data.domains") tmpl = &domain_template;
            merge_checked(defaults[key], value, sub, tmpl);
        }
        return;
    }
    if (element_template) {
        if (!doc.is_array()) throw ConfigError(path + ": expected an array, got " + type_name(doc));
        Json out = Json::array();
        for (std::size_t i = 0; i < doc.size(); ++i) {
            Json item = *element_template;
            merge_checked(item, doc[i], path + "[" + std::to_string(i) + "]", nullptr);
            out.push_back(std::move(item));
        }
        defaults = std::move(out);
        return;
    }
    if (defaults.is_array()) {
        if (!doc.is_array()) throw ConfigError(path + ": expected an array, got " + type_name(doc));
        if (!defaults.empty())
            for (const auto& v : doc)
                if (!same_kind(defaults.front(), v)) throw ConfigError(path + ": element has the wrong type " + type_name(v));
        defaults = doc;
        return;
    }
    if (!same_kind(defaults, doc))
        throw ConfigError(path + ": expected " + std::string(type_name(defaults)) + ", got " + type_name(doc));
    defaults = doc;
}

template <class T>
T get(const Json& j, const char* key, const std::string& path) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for '" + path + "." + key + "'");
    }
}

}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.world.datasets = {domain("aerial", DomainFamily::Aerial, 1), domain("medical", DomainFamily::Medical, 2),
                        domain("aerial_b", DomainFamily::Aerial, 3), domain("aerial_c", DomainFamily::Aerial, 5),
                        domain("medical_b", DomainFamily::Medical, 4)};
    c.protocol.datasets = {"aerial", "medical"};
    c.protocol.source = "aerial";
    c.protocol.targets = {"aerial_b", "aerial_c"};
    return c;
}

Json to_json(const ExperimentConfig& c) {
    const auto& w = c.world;
    Json domains = Json::array();
    for (const auto& d : w.datasets) domains.push_back(domain_json(d));
    const std::uint64_t universe = w.datasets.empty() ? SyntheticDomainSpec{}.universe_seed : w.datasets.front().universe_seed;
    return Json{
        {"seed", c.seed},
        {"encoders",
         {{"image_size", w.clip.image_size},
          {"patch", w.clip.patch},
          {"width", w.clip.width},
          {"embed_dim", w.clip.embed_dim},
          {"layers", w.clip.layers},
          {"heads", w.clip.heads},
          {"mlp_hidden", w.clip.mlp_hidden},
          {"max_text_len", w.clip.max_text_len},
          {"init_tau", w.clip.init_tau},
          {"pretrain_epochs", w.clip_pretrain.epochs},
          {"pretrain_lr", w.clip_pretrain.lr},
          {"samples_per_class", w.clip_samples_per_class},
          {"web_domains", w.clip_web_domains}}},
        {"lsdm",
         {{"patch", w.lsdm.patch},
          {"width", w.lsdm.width},
          {"embed_dim", w.lsdm.embed_dim},
          {"layers", w.lsdm.layers},
          {"heads", w.lsdm.heads},
          {"mlp_hidden", w.lsdm.mlp_hidden},
          {"decoder_layers", w.lsdm.decoder_layers},
          {"mask_ratio", w.lsdm.mask_ratio},
          {"pretrain_epochs", w.lsdm_pretrain.epochs},
          {"pretrain_lr", w.lsdm_pretrain.lr},
          {"samples_per_class", w.lsdm_samples_per_class}}},
        {"learner",
         {{"variant", c.learner.variant.name()},
          {"n_ctx", c.learner.n_ctx},
          {"hidden", c.learner.hidden},
          {"noise", c.learner.noise.enabled},
          {"noise_at_eval", c.learner.noise.apply_at_eval}}},
        {"data",
         {{"num_classes", w.clip.num_classes},
          {"universe_seed", universe},
          {"domains", domains},
          {"shift_levels", c.protocol.shift_levels}}},
        {"protocol",
         {{"name", c.protocol.name},
          {"seeds", c.protocol.seeds},
          {"shots", c.protocol.shots},
          {"epochs", c.protocol.train.epochs},
          {"batch", c.protocol.train.batch},
          {"lr", c.protocol.train.lr},
          {"split_seed", c.protocol.split_seed},
          {"datasets", c.protocol.datasets},
          {"source", c.protocol.source},
          {"targets", c.protocol.targets},
          {"jobs", c.protocol.jobs}}},
        {"output", {{"dir", c.output_dir}}}};
}

ExperimentConfig from_json(const Json& doc) {
    Json j = to_json(default_config());
    merge_checked(j, doc, "", nullptr);

    ExperimentConfig c;
    c.seed = get<std::uint64_t>(j, "seed", "");
    auto& w = c.world;
    w.seed = c.seed;

    const Json& e = j["encoders"];
    w.clip.image_size = get<std::size_t>(e, "image_size", "encoders");
    w.clip.patch = get<std::size_t>(e, "patch", "encoders");
    w.clip.width = get<std::size_t>(e, "width", "encoders");
    w.clip.embed_dim = get<std::size_t>(e, "embed_dim", "encoders");
    w.clip.layers = get<std::size_t>(e, "layers", "encoders");
    w.clip.heads = get<std::size_t>(e, "heads", "encoders");
    w.clip.mlp_hidden = get<std::size_t>(e, "mlp_hidden", "encoders");
    w.clip.max_text_len = get<std::size_t>(e, "max_text_len", "encoders");
    w.clip.init_tau = get<double>(e, "init_tau", "encoders");
    w.clip_pretrain.epochs = get<std::size_t>(e, "pretrain_epochs", "encoders");
    w.clip_pretrain.lr = get<double>(e, "pretrain_lr", "encoders");
    w.clip_samples_per_class = get<std::size_t>(e, "samples_per_class", "encoders");
    w.clip_web_domains = get<std::size_t>(e, "web_domains", "encoders");

    const Json& l = j["lsdm"];
    w.lsdm.image_size = w.clip.image_size;
    w.lsdm.patch = get<std::size_t>(l, "patch", "lsdm");
    w.lsdm.width = get<std::size_t>(l, "width", "lsdm");
    w.lsdm.embed_dim = get<std::size_t>(l, "embed_dim", "lsdm");
    w.lsdm.layers = get<std::size_t>(l, "layers", "lsdm");
    w.lsdm.heads = get<std::size_t>(l, "heads", "lsdm");
    w.lsdm.mlp_hidden = get<std::size_t>(l, "mlp_hidden", "lsdm");
    w.lsdm.decoder_layers = get<std::size_t>(l, "decoder_layers", "lsdm");
    w.lsdm.mask_ratio = get<double>(l, "mask_ratio", "lsdm");
    w.lsdm_pretrain.epochs = get<std::size_t>(l, "pretrain_epochs", "lsdm");
    w.lsdm_pretrain.lr = get<double>(l, "pretrain_lr", "lsdm");
    w.lsdm_samples_per_class = get<std::size_t>(l, "samples_per_class", "lsdm");

    const Json& lr = j["learner"];
    try {
        c.learner.variant = prompt::Variant::parse(get<std::string>(lr, "variant", "learner"));
    } catch (const ConfigError& err) {
        throw ConfigError(std::string("learner.variant: ") + (err.what() + std::string_view("config error: ").size()));
    }
    c.learner.n_ctx = get<std::size_t>(lr, "n_ctx", "learner");
    c.learner.hidden = get<std::size_t>(lr, "hidden", "learner");
    c.learner.noise.enabled = get<bool>(lr, "noise", "learner");
    c.learner.noise.apply_at_eval = get<bool>(lr, "noise_at_eval", "learner");
    if (c.learner.n_ctx == 0) throw ConfigError("learner.n_ctx must be positive");

    const Json& d = j["data"];
    w.clip.num_classes = get<std::size_t>(d, "num_classes", "data");
    const auto universe = get<std::uint64_t>(d, "universe_seed", "data");
    c.protocol.shift_levels = get<std::vector<double>>(d, "shift_levels", "data");
    for (std::size_t i = 0; i < d["domains"].size(); ++i) {
        const Json& dj = d["domains"][i];
        const std::string path = "data.domains[" + std::to_string(i) + "]";
        SyntheticDomainSpec s;
        s.name = get<std::string>(dj, "name", path);
        try {
            s.family = harness::family_from_string(get<std::string>(dj, "family", path));
        } catch (const ConfigError& err) {
            throw ConfigError(path + ".family: " + (err.what() + std::string_view("config error: ").size()));
        }
        s.domain_id = get<std::uint32_t>(dj, "domain_id", path);
        s.strength = get<double>(dj, "strength", path);
        s.classes = get<std::vector<std::size_t>>(dj, "classes", path);
        if (s.classes.empty())
            for (std::size_t k = 0; k < w.clip.num_classes; ++k) s.classes.push_back(k);
        s.samples_per_class = get<std::size_t>(dj, "samples_per_class", path);
        s.pixel_noise = get<double>(dj, "pixel_noise", path);
        s.image_size = w.clip.image_size;
        s.universe_seed = universe;
        w.datasets.push_back(std::move(s));
    }

    const Json& p = j["protocol"];
    c.protocol.name = get<std::string>(p, "name", "protocol");
    c.protocol.seeds = get<std::vector<std::uint64_t>>(p, "seeds", "protocol");
    c.protocol.shots = get<std::size_t>(p, "shots", "protocol");
    c.protocol.train.epochs = get<std::size_t>(p, "epochs", "protocol");
    c.protocol.train.batch = get<std::size_t>(p, "batch", "protocol");
    c.protocol.train.lr = get<double>(p, "lr", "protocol");
    c.protocol.split_seed = get<std::uint64_t>(p, "split_seed", "protocol");
    c.protocol.datasets = get<std::vector<std::string>>(p, "datasets", "protocol");
    c.protocol.source = get<std::string>(p, "source", "protocol");
    c.protocol.targets = get<std::vector<std::string>>(p, "targets", "protocol");
    c.protocol.jobs = get<int>(p, "jobs", "protocol");
    if (c.protocol.seeds.empty()) throw ConfigError("protocol.seeds must not be empty");
    if (c.protocol.shots == 0 || c.protocol.train.batch == 0) throw ConfigError("protocol.shots and protocol.batch must be positive");
    if (!(c.protocol.train.lr > 0.0)) throw ConfigError("protocol.lr must be positive");
    if (c.protocol.jobs < 0) throw ConfigError("protocol.jobs must be ≥ 0");

    c.output_dir = get<std::string>(j["output"], "dir", "output");
    return c;
}

Json load_document(const std::string& name_or_path) {
    if (name_or_path == "default") return to_json(default_config());
    std::ifstream is(name_or_path);
    if (!is) throw DataError("cannot open config file " + name_or_path);
    try {
        return Json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(name_or_path + ": " + e.what());
    }
}

void apply_override(Json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
        if (!node->is_object()) *node = Json::object();
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

Json recorded_json(const ExperimentConfig& config) {
    Json j = to_json(config);
    j.erase("output");
    j["protocol"].erase("jobs");
    return j;
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string text = recorded_json(config).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace dcpl::config
