#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "dcpl/checkpoint.hpp"
#include "dcpl/config.hpp"
#include "dcpl/errors.hpp"
#include "dcpl/harness.hpp"
#include "dcpl/lsdm.hpp"
#include "dcpl/report.hpp"

namespace fs = std::filesystem;
using namespace dcpl;
using config::ExperimentConfig;
using config::Json;

namespace {

struct Options {
    std::string config = "default";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> variant;
    std::vector<std::string> overrides;
    std::optional<int> jobs;
};

struct Context {
    ExperimentConfig config;
    Json recorded;
    std::string hash;
    fs::path out;
};

Context resolve(const Options& o) {
    Json doc = config::load_document(o.config);
    for (const auto& kv : o.overrides) config::apply_override(doc, kv);
    if (o.seed) doc["seed"] = *o.seed;
    if (o.variant) doc["learner"]["variant"] = *o.variant;
    if (o.jobs) doc["protocol"]["jobs"] = *o.jobs;
    if (o.out) doc["output"]["dir"] = *o.out;
    if (const char* env = std::getenv("DCPL_OUT"); env && *env) doc["output"]["dir"] = env;
    Context c;
    c.config = config::from_json(doc);
    c.recorded = config::recorded_json(c.config);
    c.hash = config::config_hash(c.config);
    c.out = c.config.output_dir;
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (ec) throw DataError("cannot create output directory " + c.out.string() + ": " + ec.message());
    return c;
}

void log(const std::string& msg) { std::cerr << "dcpl: " << msg << '\n'; }

void write_json(const fs::path& path, const Json& j) { report::write_text(path, j.dump(2) + "\n"); }

fs::path lsdm_path(const fs::path& out, harness::DomainFamily f) { return out / ("lsdm_" + harness::to_string(f) + ".dcpw"); }

std::vector<harness::DomainFamily> families(const harness::WorldConfig& w) {
    std::vector<harness::DomainFamily> fs_;
    for (const auto& d : w.datasets)
        if (std::find(fs_.begin(), fs_.end(), d.family) == fs_.end()) fs_.push_back(d.family);
    return fs_;
}

// Frozen encoders come from checkpoints in the output directory when present.
harness::World load_world(const Context& c) {
    const auto& wc = c.config.world;
    std::optional<clip::DualEncoder> clip_model;
    if (fs::exists(c.out / "clip.dcpw")) {
        Rng rng(0);
        clip_model = clip::make_dual_encoder(wc.clip, rng);
        nn::assign(clip_model->parameters(), nn::load_checkpoint(c.out / "clip.dcpw"));
        nn::freeze(clip_model->parameters());
        log("loaded " + (c.out / "clip.dcpw").string());
    }
    std::map<harness::DomainFamily, lsdm::MaskedAutoencoder> maes;
    for (auto f : families(wc)) {
        const fs::path p = lsdm_path(c.out, f);
        if (!fs::exists(p)) continue;
        Rng rng(0);
        auto mae = lsdm::make_mae(wc.lsdm, rng);
        nn::assign(mae.parameters(), nn::load_checkpoint(p));
        nn::freeze(mae.parameters());
        maes.emplace(f, std::move(mae));
        log("loaded " + p.string());
    }
    log("building benchmark world");
    return harness::build_world(wc, std::move(clip_model), std::move(maes));
}

std::string run_label(const prompt::LearnerConfig& l) {
    std::string s = l.variant.name();
    for (auto& ch : s)
        if (ch == ':') ch = '_';
    return l.noise.enabled || !l.variant.uses_noise() ? s : s + "_no_noise";
}

harness::RunSpec spec_for(const prompt::LearnerConfig& base, const std::string& variant, bool noise = true) {
    harness::RunSpec r;
    r.learner = base;
    r.learner.variant = prompt::Variant::parse(variant);
    r.learner.noise.enabled = noise;
    r.label = run_label(r.learner);
    return r;
}

int cmd_gen_data(const Context& c) {
    const fs::path dir = c.out / "data";
    fs::create_directories(dir);
    std::ostringstream manifest;
    manifest << "name,family,domain_id,classes,train,test\n";
    for (std::size_t i = 0; i < c.config.world.datasets.size(); ++i) {
        const auto& spec = c.config.world.datasets[i];
        Rng rng = Rng(c.config.world.seed, 31).split(i);
        const harness::Dataset d = harness::gen_synthetic(spec, rng);
        std::ostringstream labels;
        labels << "split,id,label\n";
        for (const char* part : {"train", "test"}) {
            const auto& images = std::string(part) == "train" ? d.train : d.test;
            lsdm::EmbeddingFile f;
            f.dim = images.empty() ? 0 : images.front().pixels.size();
            for (const auto& im : images) {
                f.rows.insert(f.rows.end(), im.pixels.begin(), im.pixels.end());
                f.ids.push_back(im.id);
                labels << part << ',' << im.id << ',' << im.label << '\n';
            }
            lsdm::write_embeddings(dir / (spec.name + "_" + part + ".dcpe"), f);
        }
        report::write_text(dir / (spec.name + "_labels.csv"), labels.str());
        manifest << spec.name << ',' << harness::to_string(spec.family) << ',' << spec.domain_id << ',' << spec.classes.size()
                 << ',' << d.train.size() << ',' << d.test.size() << '\n';
    }
    report::write_text(dir / "manifest.csv", manifest.str());
    log("wrote " + dir.string());
    return 0;
}

int cmd_pretrain_clip(const Context& c) {
    const auto& wc = c.config.world;
    clip::PretrainReport rep;
    log("pretraining the dual encoder");
    clip::DualEncoder model = harness::pretrain_world_clip(wc, &rep);
    nn::save_checkpoint(c.out / "clip.dcpw", model.parameters());
    Json zs = Json::object();
    for (std::size_t i = 0; i < wc.datasets.size(); ++i) {
        Rng rng = Rng(wc.seed, 31).split(i);
        const auto d = harness::gen_synthetic(wc.datasets[i], rng);
        zs[wc.datasets[i].name] = clip::zero_shot_accuracy(model, d.test, wc.datasets[i].classes);
    }
    write_json(c.out / "pretrain_clip.json",
               {{"config_hash", c.hash}, {"config", c.recorded}, {"epoch_loss", rep.epoch_loss}, {"zero_shot_accuracy", zs}});
    log("wrote " + (c.out / "clip.dcpw").string());
    return 0;
}

int cmd_pretrain_lsdm(const Context& c) {
    const auto& wc = c.config.world;
    Json losses = Json::object();
    for (auto f : families(wc)) {
        log("pretraining the " + harness::to_string(f) + " domain encoder");
        lsdm::PretrainReport rep;
        const auto mae = harness::pretrain_world_lsdm(wc, f, &rep);
        nn::save_checkpoint(lsdm_path(c.out, f), mae.parameters());
        losses[harness::to_string(f)] = rep.epoch_loss;
        for (std::size_t i = 0; i < wc.datasets.size(); ++i) {
            if (wc.datasets[i].family != f) continue;
            Rng rng = Rng(wc.seed, 31).split(i);
            const auto d = harness::gen_synthetic(wc.datasets[i], rng);
            lsdm::write_embeddings(c.out / ("embeddings_" + wc.datasets[i].name + ".dcpe"), lsdm::embed_images(mae.encoder, d.test));
        }
    }
    write_json(c.out / "pretrain_lsdm.json", {{"config_hash", c.hash}, {"config", c.recorded}, {"epoch_loss", losses}});
    return 0;
}

const std::string& first_dataset(const Context& c) {
    if (c.config.protocol.datasets.empty()) throw ConfigError("protocol.datasets is empty");
    return c.config.protocol.datasets.front();
}

int cmd_train(const Context& c) {
    harness::World w = load_world(c);
    const std::string& name = first_dataset(c);
    const std::uint64_t seed = c.config.protocol.seeds.front();
    harness::RunSpec run{run_label(c.config.learner), c.config.learner};
    prompt::GradientAudit audit;
    const auto t = harness::train_base_cell(w, c.config.protocol, run, name, seed, &audit);
    nn::save_checkpoint(c.out / ("learner_" + name + ".dcpw"), t.learner.all_parameters());
    write_json(c.out / ("train_" + name + ".json"), {{"config_hash", c.hash},
                                                      {"config", c.recorded},
                                                      {"dataset", name},
                                                      {"seed", seed},
                                                      {"variant", run.label},
                                                      {"base_classes", t.split.base},
                                                      {"steps", t.report.steps},
                                                      {"epoch_loss", t.report.epoch_loss}});
    log("wrote " + (c.out / ("learner_" + name + ".dcpw")).string());
    return 0;
}

int cmd_eval(const Context& c) {
    const std::string& name = first_dataset(c);
    const fs::path path = c.out / ("learner_" + name + ".dcpw");
    if (!fs::exists(path)) throw DataError("no trained learner at " + path.string() + " (run `dcpl train` first)");
    harness::World w = load_world(c);
    const auto& ds = w.dataset(name);
    const auto models = w.models_for(ds.data.spec.family);
    Rng rng(0);
    prompt::PromptLearner learner = prompt::make_learner(c.config.learner, *models.clip, models.lsdm->embed_dim(), rng);
    nn::assign(learner.all_parameters(), nn::load_checkpoint(path));
    const auto split = harness::split_base_novel(ds.data.spec.classes, c.config.protocol.split_seed);
    const auto m = harness::evaluate_base_cell(w, name, split, learner, c.config.protocol.seeds.front());
    write_json(c.out / ("eval_" + name + ".json"), {{"config_hash", c.hash},
                                                    {"config", c.recorded},
                                                    {"dataset", name},
                                                    {"acc_base", m.acc_base},
                                                    {"acc_novel", m.acc_novel},
                                                    {"hm", m.hm}});
    std::fprintf(stderr, "dcpl: %s base %.2f novel %.2f hm %.2f\n", name.c_str(), m.acc_base, m.acc_novel, m.hm);
    return 0;
}

void check_audit(const harness::RunRecord& r) {
    if (!r.audit.clean())
        throw TrainingError("purity audit failed for " + r.label + ": " + std::to_string(r.audit.novel_samples) +
                            " novel samples, " + std::to_string(r.audit.frozen_with_grad) + " frozen tensors with gradients");
}

int cmd_protocol(const Context& c) {
    harness::World w = load_world(c);
    const auto& learner = c.config.learner;
    std::vector<harness::RunSpec> runs;
    if (learner.variant.kind != prompt::VariantKind::CoopBase) runs.push_back(spec_for(learner, "coop"));
    runs.push_back({run_label(learner), learner});
    std::vector<harness::RunRecord> records;
    for (const auto& run : runs) {
        log("running " + c.config.protocol.name + " with " + run.label);
        records.push_back(harness::run_protocol(w, c.config.protocol, run));
        check_audit(records.back());
    }
    report::write_report(records, c.recorded, c.hash, c.out, "coop", c.config.protocol.name + ": per-dataset change vs coop");
    return 0;
}

int cmd_ablate(const Context& c) {
    harness::World w = load_world(c);
    const auto& l = c.config.learner;
    const std::vector<harness::RunSpec> runs{spec_for(l, "coop"),        spec_for(l, "vc_only"),      spec_for(l, "lc_only"),
                                             spec_for(l, "dcpl"),        spec_for(l, "dcpl", false),  spec_for(l, "dropout:0.3"),
                                             spec_for(l, "dropout:0.5"), spec_for(l, "mutation:0.05"), spec_for(l, "mutation:0.1")};
    std::vector<harness::RunRecord> records;
    for (const auto& run : runs) {
        log("running " + c.config.protocol.name + " with " + run.label);
        records.push_back(harness::run_protocol(w, c.config.protocol, run));
        check_audit(records.back());
    }
    auto rec = [&](const std::string& label) -> const harness::RunRecord& {
        for (const auto& r : records)
            if (r.label == label) return r;
        throw ConfigError("missing run " + label);
    };
    report::write_report(records, c.recorded, c.hash, c.out, "coop", c.config.protocol.name + ": per-dataset change vs coop");

    const std::vector<report::TableRow> t5{{"Baseline", &rec("coop")}, {"+VC", &rec("vc_only")}, {"+LC", &rec("lc_only")},
                                           {"Ours", &rec("dcpl")}};
    const std::vector<report::TableRow> t6{{"Baseline", &rec("dcpl_no_noise")}, {"Dropout 0.3", &rec("dropout_0.3")},
                                           {"Dropout 0.5", &rec("dropout_0.5")},  {"Mutation 0.05", &rec("mutation_0.05")},
                                           {"Mutation 0.1", &rec("mutation_0.1")}, {"Ours", &rec("dcpl")}};
    std::ostringstream s5, s6, checks;
    report::write_table(s5, t5);
    report::write_table(s6, t6);
    report::write_text(c.out / "table5_components.csv", s5.str());
    report::write_text(c.out / "table6_noise.csv", s6.str());

    const auto& p = c.config.protocol.name;
    auto h = [&](const std::string& label) { return report::headline(rec(label).aggregate, p); };
    const std::vector<report::TrendCheck> trend{{"dcpl>=coop", h("dcpl"), h("coop")},
                                                {"vc_only>=coop", h("vc_only"), h("coop")},
                                                {"lc_only>=coop", h("lc_only"), h("coop")},
                                                {"dcpl>=dcpl_no_noise", h("dcpl"), h("dcpl_no_noise")}};
    report::write_checks(checks, trend);
    report::write_text(c.out / "trend_checks.csv", checks.str());
    for (const auto& t : trend)
        if (!t.pass()) log("trend violated: " + t.name);

    const std::vector<harness::RunRecord> noise{rec("dcpl_no_noise"), rec("dcpl")};
    report::write_text(c.out / "noise_gain.svg",
                       report::delta_svg(noise, "dcpl_no_noise", "Adaptive noise: per-dataset change vs no noise"));
    return 0;
}

int cmd_report(const Context& c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(c.out)) {
        const auto name = e.path().filename().string();
        if (name.rfind("run_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
    }
    if (files.empty()) throw DataError("no run records (run_*.json) in " + c.out.string());
    std::sort(files.begin(), files.end());
    std::vector<harness::RunRecord> records;
    Json config;
    std::string hash;
    for (const auto& f : files) {
        std::ifstream is(f);
        Json doc = Json::parse(is, nullptr, false);
        if (doc.is_discarded()) throw FormatError(f.string() + " is not valid JSON");
        records.push_back(report::record_from_json(doc));
        config = doc.at("config");
        hash = doc.at("config_hash").get<std::string>();
    }
    bool has_coop = false;
    for (const auto& r : records) has_coop |= r.label == "coop";
    const std::string baseline = has_coop ? "coop" : "dcpl_no_noise";
    report::write_report(records, config, hash, c.out, baseline, records.front().protocol + ": per-dataset change vs " + baseline);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain-controlled prompt learning: pretraining, few-shot protocols and reports"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    std::string out, variant;
    int jobs = 0;
    const std::vector<std::pair<const char*, const char*>> commands{
        {"gen-data", "Generate the synthetic benchmark datasets"},
        {"pretrain-clip", "Pretrain the toy dual encoder and save clip.dcpw"},
        {"pretrain-lsdm", "Pretrain one domain encoder per family and save lsdm_<family>.dcpw"},
        {"train", "Few-shot train a prompt learner on the first protocol dataset"},
        {"eval", "Evaluate the saved learner on base and novel classes"},
        {"protocol", "Run the configured protocol for the variant and the coop baseline"},
        {"ablate", "Run the component and noise ablations"},
        {"report", "Rebuild metrics.csv and chart.svg from run records"}};
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, help] : commands) {
        CLI::App* s = app.add_subcommand(name, help);
        s->add_option("--config", o.config, "Config file, or 'default'");
        s->add_option("--seed", seed, "Master seed");
        s->add_option("--out", out, "Output directory (DCPL_OUT takes precedence)");
        s->add_option("--variant", variant, "dcpl | coop | vc_only | lc_only | dropout:R | mutation:R");
        s->add_option("--override", o.overrides, "Set a config key, e.g. protocol.epochs=3 (repeatable)");
        s->add_option("--jobs", jobs, "Cap on concurrent protocol cells (default: all processors)")->check(CLI::NonNegativeNumber);
        subs[name] = s;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "dcpl: " << e.what() << "\n\n" << app.help();
        return 1;
    }
    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--out")) o.out = out;
    if (sub->count("--variant")) o.variant = variant;
    if (sub->count("--jobs")) o.jobs = jobs;

    try {
        const Context c = resolve(o);
        const std::string name = sub->get_name();
        log(name + " (config " + c.hash + ", output " + c.out.string() + ")");
        if (name == "gen-data") return cmd_gen_data(c);
        if (name == "pretrain-clip") return cmd_pretrain_clip(c);
        if (name == "pretrain-lsdm") return cmd_pretrain_lsdm(c);
        if (name == "train") return cmd_train(c);
        if (name == "eval") return cmd_eval(c);
        if (name == "protocol") return cmd_protocol(c);
        if (name == "ablate") return cmd_ablate(c);
        return cmd_report(c);
    } catch (const Error& e) {
        std::cerr << "dcpl: " << e.what() << '\n';
        switch (e.kind()) {
            case ErrorKind::Config: return 1;
            case ErrorKind::Data: return 2;
            case ErrorKind::Numerical: return 3;
        }
    } catch (const fs::filesystem_error& e) {
        std::cerr << "dcpl: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "dcpl: " << e.what() << '\n';
        return 3;
    }
    return 3;
}
