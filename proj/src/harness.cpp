#include "dcpl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <numeric>
#include <omp.h>
#include <sstream>

#include "dcpl/errors.hpp"

namespace dcpl::harness {

namespace {

// Stream tags keep every random consumer independent of the others.
enum Stream : std::uint64_t {
    kSplitStream = 0x5311,
    kClipData = 11,
    kLsdmData = 21,
    kBenchData = 31,
    kClipInit = 41,
    kLsdmInit = 51,
    kFewShot = 101,
    kLearnerInit = 102,
    kTrainOrder = 103,
    kEval = 104,
};

std::vector<std::size_t> all_classes(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

int resolve_jobs(int jobs) { return jobs > 0 ? jobs : omp_get_num_procs(); }

// Runs body(i) for i < n on up to `jobs` threads; the first exception (by
// index) is rethrown after the loop.
template <typename F>
void parallel_cells(std::size_t n, int jobs, F&& body) {
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, std::min<int>(resolve_jobs(jobs), static_cast<int>(n))))
    for (std::size_t i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::size_t dataset_index(const WorldConfig& config, const std::string& name) {
    for (std::size_t i = 0; i < config.datasets.size(); ++i)
        if (config.datasets[i].name == name) return i;
    throw ConfigError("unknown dataset '" + name + "'");
}

std::vector<const prompt::Features*> few_shot_features(const PreparedDataset& ds, std::span<const std::size_t> classes,
                                                       std::size_t k, Rng& rng) {
    const auto picked = sample_few_shot(ds.data.train, classes, k, rng);
    std::vector<const prompt::Features*> out;
    out.reserve(picked.size());
    for (const ImageSample* s : picked) out.push_back(&ds.train[static_cast<std::size_t>(s - ds.data.train.data())]);
    return out;
}

void fill_summary(RunRecord& r, const std::vector<std::string>& summarised) {
    for (const auto& name : r.dataset_order) {
        std::vector<Metrics> per_seed;
        for (const auto& c : r.cells)
            if (c.dataset == name) per_seed.push_back(c.metrics);
        r.per_dataset[name] = aggregate_metrics(per_seed);
    }
    std::vector<Metrics> over;
    for (const auto& name : summarised) over.push_back(r.per_dataset.at(name));
    r.aggregate = aggregate_metrics(over);
}

void merge(PurityAudit& into, const prompt::GradientAudit& a, std::span<const std::size_t> allowed) {
    into.steps += a.steps;
    into.samples += a.sample_ids.size();
    into.frozen_with_grad += a.frozen_with_grad;
    for (auto l : a.labels)
        if (std::find(allowed.begin(), allowed.end(), l) == allowed.end()) ++into.novel_samples;
}

}  // namespace

Split split_base_novel(std::span<const std::size_t> classes, std::uint64_t seed) {
    if (classes.size() < 4) throw ConfigError("base/novel split needs at least 4 classes, got " + std::to_string(classes.size()));
    std::vector<std::size_t> order(classes.begin(), classes.end());
    Rng rng(seed, kSplitStream);
    rng.shuffle(order);
    const std::size_t n_base = (order.size() + 1) / 2;
    Split s;
    s.base.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_base));
    s.novel.assign(order.begin() + static_cast<std::ptrdiff_t>(n_base), order.end());
    std::sort(s.base.begin(), s.base.end());
    std::sort(s.novel.begin(), s.novel.end());
    return s;
}

Split split_base_novel(std::size_t num_classes, std::uint64_t seed) {
    const auto classes = all_classes(num_classes);
    return split_base_novel(classes, seed);
}

std::vector<const ImageSample*> sample_few_shot(std::span<const ImageSample> train, std::span<const std::size_t> classes,
                                                std::size_t k, Rng& rng) {
    if (k == 0) throw ConfigError("shots must be positive");
    std::vector<const ImageSample*> out;
    for (auto c : classes) {
        std::vector<const ImageSample*> pool;
        for (const auto& s : train)
            if (s.label == c) pool.push_back(&s);
        if (pool.size() < k)
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) + " training samples, " +
                            std::to_string(k) + " shots requested");
        rng.shuffle(pool);
        out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

double harmonic_mean(double a, double b) { return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b); }

Metrics make_metrics(double a, double b) { return {a, b, harmonic_mean(a, b)}; }

Metrics aggregate_metrics(std::span<const Metrics> ms) {
    if (ms.empty()) throw ConfigError("cannot aggregate an empty metrics list");
    Metrics out;
    for (const auto& m : ms) {
        out.acc_base += m.acc_base;
        out.acc_novel += m.acc_novel;
        out.hm += m.hm;
    }
    const double n = static_cast<double>(ms.size());
    out.acc_base /= n;
    out.acc_novel /= n;
    out.hm /= n;
    return out;
}

TrainReport run_training(prompt::PromptLearner& learner, const prompt::FrozenModels& models,
                         std::span<const prompt::Features* const> train, std::span<const std::size_t> classes,
                         const TrainOptions& options, Rng& rng, prompt::GradientAudit* audit) {
    if (options.batch == 0) throw ConfigError("batch size must be positive");
    if (train.empty()) throw DataError("empty few-shot training set");
    TrainReport report;
    std::vector<const prompt::Features*> order(train.begin(), train.end());
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch) {
            const std::size_t end = std::min(order.size(), start + options.batch);
            const std::span<const prompt::Features* const> batch(order.data() + start, end - start);
            total += prompt::train_step(learner, models, batch, classes, options.lr, rng, audit).loss;
            ++steps;
        }
        report.steps += steps;
        report.epoch_loss.push_back(total / static_cast<double>(steps));
    }
    return report;
}

double eval_accuracy(const prompt::PromptLearner& learner, const prompt::FrozenModels& models,
                     std::span<const prompt::Features> images, std::span<const std::size_t> classes, Rng& rng) {
    if (classes.empty()) throw ConfigError("evaluation over an empty class subset");
    std::vector<prompt::Features> subset;
    std::vector<std::size_t> truth;
    for (const auto& f : images) {
        auto it = std::find(classes.begin(), classes.end(), f.label);
        if (it == classes.end()) continue;
        subset.push_back(f);
        truth.push_back(static_cast<std::size_t>(it - classes.begin()));
    }
    if (subset.empty()) throw DataError("no evaluation images belong to the requested classes");
    // A single-class subset is correct by construction.
    if (classes.size() == 1) return 100.0;
    const auto pred = prompt::predict(learner, models, subset, classes, rng);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<std::size_t> caption_prefix(const DomainStyle& st) {
    using V = clip::Vocabulary;
    std::vector<std::size_t> words;
    if (st.gray) words.push_back(V::kGray);
    if (st.faded) words.push_back(V::kFaded);
    if (st.textured) words.push_back(V::kTextured);
    if (st.bright) words.push_back(V::kBright);
    if (st.dark) words.push_back(V::kDark);
    if (words.empty()) return {V::kA, V::kPhoto, V::kOf, V::kA};
    if (words.size() == 1) return {V::kA, words[0], V::kPhoto, V::kOf};
    return {V::kA, words[0], words[1], V::kPhoto};
}

std::vector<clip::CaptionedImage> clip_corpus(const WorldConfig& config) {
    std::vector<clip::CaptionedImage> corpus;
    Rng rng(config.seed, kClipData);
    for (std::size_t d = 0; d <= config.clip_web_domains; ++d) {
        SyntheticDomainSpec spec;
        spec.name = d == 0 ? "natural" : "web" + std::to_string(d);
        spec.family = d == 0 ? DomainFamily::Natural : DomainFamily::Web;
        spec.domain_id = d == 0 ? 0 : static_cast<std::uint32_t>(100 + d);
        spec.classes = all_classes(config.clip.num_classes);
        spec.samples_per_class = config.clip_samples_per_class;
        spec.image_size = config.clip.image_size;
        if (!config.datasets.empty()) spec.universe_seed = config.datasets.front().universe_seed;
        Rng child = rng.split(d);
        Dataset ds = gen_synthetic(spec, child);
        const auto prefix = caption_prefix(domain_style(spec));
        for (auto* part : {&ds.train, &ds.test})
            for (auto& img : *part) corpus.push_back({std::move(img), prefix});
    }
    return corpus;
}

std::vector<ImageSample> lsdm_corpus(const WorldConfig& config, DomainFamily family) {
    std::vector<ImageSample> corpus;
    Rng rng(config.seed, kLsdmData);
    for (std::size_t i = 0; i < config.datasets.size(); ++i) {
        if (config.datasets[i].family != family) continue;
        SyntheticDomainSpec spec = config.datasets[i];
        spec.samples_per_class = config.lsdm_samples_per_class;
        Rng child = rng.split(i);
        Dataset ds = gen_synthetic(spec, child);
        corpus.insert(corpus.end(), ds.train.begin(), ds.train.end());
        corpus.insert(corpus.end(), ds.test.begin(), ds.test.end());
    }
    if (corpus.empty()) throw ConfigError("no dataset of family " + to_string(family) + " to pretrain its domain encoder on");
    return corpus;
}

clip::DualEncoder pretrain_world_clip(const WorldConfig& config, clip::PretrainReport* report) {
    Rng rng(config.seed, kClipInit);
    clip::DualEncoder model = clip::make_dual_encoder(config.clip, rng);
    const auto corpus = clip_corpus(config);
    auto r = clip::pretrain_clip(model, corpus, config.clip_pretrain, rng);
    if (report) *report = std::move(r);
    return model;
}

lsdm::MaskedAutoencoder pretrain_world_lsdm(const WorldConfig& config, DomainFamily family, lsdm::PretrainReport* report) {
    Rng rng(config.seed, kLsdmInit + static_cast<std::uint64_t>(family));
    lsdm::MaskedAutoencoder model = lsdm::make_mae(config.lsdm, rng);
    const auto corpus = lsdm_corpus(config, family);
    auto r = lsdm::pretrain_lsdm(model, corpus, config.lsdm_pretrain, rng);
    if (report) *report = std::move(r);
    return model;
}

prompt::FrozenModels World::models_for(DomainFamily family) const {
    auto it = lsdm.find(family);
    if (it == lsdm.end()) throw ConfigError("no domain encoder for family " + to_string(family));
    return {&clip, &it->second.encoder};
}

const PreparedDataset& World::dataset(const std::string& name) const {
    auto it = datasets.find(name);
    if (it == datasets.end()) throw ConfigError("unknown dataset '" + name + "'");
    return it->second;
}

const PreparedDataset& World::prepare(const SyntheticDomainSpec& spec) {
    if (auto it = datasets.find(spec.name); it != datasets.end()) return it->second;
    // Shifted variants reuse the stream of the dataset they re-render, so a
    // zero shift reproduces it exactly.
    const std::string base_name = spec.name.substr(0, spec.name.find('@'));
    Rng rng = Rng(config.seed, kBenchData).split(dataset_index(config, base_name));
    PreparedDataset p;
    p.data = gen_synthetic(spec, rng);
    const prompt::FrozenModels m = models_for(spec.family);
    p.train = prompt::extract_features(m, p.data.train);
    p.test = prompt::extract_features(m, p.data.test);
    return datasets.emplace(spec.name, std::move(p)).first->second;
}

World build_world(const WorldConfig& config, std::optional<clip::DualEncoder> clip_model,
                  std::map<DomainFamily, lsdm::MaskedAutoencoder> lsdm_models) {
    if (config.datasets.empty()) throw ConfigError("the benchmark lists no datasets");
    for (std::size_t i = 0; i < config.datasets.size(); ++i) {
        const auto& d = config.datasets[i];
        if (d.name.find('@') != std::string::npos) throw ConfigError("dataset name '" + d.name + "' may not contain '@'");
        for (std::size_t j = 0; j < i; ++j)
            if (config.datasets[j].name == d.name) throw ConfigError("duplicate dataset name '" + d.name + "'");
        for (auto c : d.classes)
            if (c >= config.clip.num_classes)
                throw ConfigError("dataset '" + d.name + "' uses class " + std::to_string(c) + " outside the vocabulary");
    }
    World w;
    w.config = config;
    w.clip = clip_model ? std::move(*clip_model) : pretrain_world_clip(config);
    w.lsdm = std::move(lsdm_models);
    for (const auto& d : config.datasets)
        if (!w.lsdm.count(d.family)) w.lsdm.emplace(d.family, pretrain_world_lsdm(config, d.family));
    for (const auto& d : config.datasets) w.prepare(d);
    return w;
}

std::string shifted_name(const std::string& name, double level) {
    std::ostringstream os;
    os << name << "@v2=" << level;
    return os.str();
}

CellTraining train_base_cell(const World& world, const ProtocolConfig& config, const RunSpec& run, const std::string& dataset,
                             std::uint64_t seed, prompt::GradientAudit* audit) {
    const PreparedDataset& ds = world.dataset(dataset);
    const std::size_t key = dataset_index(world.config, dataset);
    const prompt::FrozenModels models = world.models_for(ds.data.spec.family);
    Rng shot_rng = Rng(seed, kFewShot).split(key);
    Rng init_rng = Rng(seed, kLearnerInit).split(key);
    Rng train_rng = Rng(seed, kTrainOrder).split(key);
    CellTraining t{split_base_novel(ds.data.spec.classes, config.split_seed),
                   prompt::make_learner(run.learner, *models.clip, models.lsdm->embed_dim(), init_rng), {}};
    const auto shots = few_shot_features(ds, t.split.base, config.shots, shot_rng);
    t.report = run_training(t.learner, models, shots, t.split.base, config.train, train_rng, audit);
    return t;
}

Metrics evaluate_base_cell(const World& world, const std::string& dataset, const Split& split,
                           const prompt::PromptLearner& learner, std::uint64_t seed) {
    const PreparedDataset& ds = world.dataset(dataset);
    const prompt::FrozenModels models = world.models_for(ds.data.spec.family);
    Rng eval_rng = Rng(seed, kEval).split(dataset_index(world.config, dataset));
    const double base = eval_accuracy(learner, models, ds.test, split.base, eval_rng);
    return make_metrics(base, eval_accuracy(learner, models, ds.test, split.novel, eval_rng));
}

RunRecord protocol_base_to_novel(World& world, const ProtocolConfig& config, const RunSpec& run) {
    if (config.seeds.empty()) throw ConfigError("protocol needs at least one seed");
    RunRecord r;
    r.protocol = "base_to_novel";
    r.label = run.label;
    r.variant = run.learner.variant.name();
    r.dataset_order = config.datasets;
    if (r.dataset_order.empty())
        for (const auto& d : world.config.datasets) r.dataset_order.push_back(d.name);
    for (const auto& name : r.dataset_order) world.dataset(name);

    const std::size_t n_seeds = config.seeds.size();
    r.cells.resize(r.dataset_order.size() * n_seeds);
    std::vector<prompt::GradientAudit> audits(r.cells.size());
    std::vector<Split> splits;
    for (const auto& name : r.dataset_order) splits.push_back(split_base_novel(world.dataset(name).data.spec.classes, config.split_seed));

    parallel_cells(r.cells.size(), config.jobs, [&](std::size_t cell) {
        const std::size_t di = cell / n_seeds;
        const std::uint64_t seed = config.seeds[cell % n_seeds];
        const CellTraining t = train_base_cell(world, config, run, r.dataset_order[di], seed, &audits[cell]);
        CellResult& c = r.cells[cell];
        c.dataset = r.dataset_order[di];
        c.seed = seed;
        c.epoch_loss = t.report.epoch_loss;
        c.metrics = evaluate_base_cell(world, r.dataset_order[di], t.split, t.learner, seed);
    });
    for (std::size_t cell = 0; cell < r.cells.size(); ++cell) merge(r.audit, audits[cell], splits[cell / n_seeds].base);
    fill_summary(r, r.dataset_order);
    return r;
}

namespace {

// Shared body of the two transfer protocols: train on every class of the
// source, evaluate each target over its full class list.
RunRecord transfer(World& world, const ProtocolConfig& config, const RunSpec& run, const std::string& protocol,
                   const std::vector<std::string>& targets) {
    if (config.seeds.empty()) throw ConfigError("protocol needs at least one seed");
    if (config.source.empty()) throw ConfigError(protocol + " needs a source dataset");
    if (targets.empty()) throw ConfigError(protocol + " needs at least one target dataset");
    RunRecord r;
    r.protocol = protocol;
    r.label = run.label;
    r.variant = run.learner.variant.name();
    r.dataset_order.push_back(config.source);
    r.dataset_order.insert(r.dataset_order.end(), targets.begin(), targets.end());
    const PreparedDataset& src = world.dataset(config.source);
    const std::size_t key = dataset_index(world.config, config.source);
    for (const auto& t : targets) world.dataset(t);

    const std::size_t n_seeds = config.seeds.size(), n_ds = r.dataset_order.size();
    r.cells.resize(n_ds * n_seeds);
    std::vector<prompt::GradientAudit> audits(n_seeds);
    parallel_cells(n_seeds, config.jobs, [&](std::size_t si) {
        const std::uint64_t seed = config.seeds[si];
        const prompt::FrozenModels models = world.models_for(src.data.spec.family);
        const auto& classes = src.data.spec.classes;
        Rng shot_rng = Rng(seed, kFewShot).split(key);
        Rng init_rng = Rng(seed, kLearnerInit).split(key);
        Rng train_rng = Rng(seed, kTrainOrder).split(key);
        Rng eval_rng = Rng(seed, kEval).split(key);
        const auto shots = few_shot_features(src, classes, config.shots, shot_rng);
        prompt::PromptLearner learner = prompt::make_learner(run.learner, *models.clip, models.lsdm->embed_dim(), init_rng);
        const TrainReport tr = run_training(learner, models, shots, classes, config.train, train_rng, &audits[si]);
        for (std::size_t di = 0; di < n_ds; ++di) {
            const PreparedDataset& ds = world.dataset(r.dataset_order[di]);
            const double acc = eval_accuracy(learner, world.models_for(ds.data.spec.family), ds.test, ds.data.spec.classes, eval_rng);
            CellResult& c = r.cells[di * n_seeds + si];
            c.dataset = r.dataset_order[di];
            c.seed = seed;
            c.has_novel = false;
            c.metrics = {acc, 0.0, 0.0};
            if (di == 0) c.epoch_loss = tr.epoch_loss;
        }
    });
    for (const auto& a : audits) merge(r.audit, a, src.data.spec.classes);
    fill_summary(r, targets);
    return r;
}

}  // namespace

RunRecord protocol_cross_dataset(World& world, const ProtocolConfig& config, const RunSpec& run) {
    return transfer(world, config, run, "cross_dataset", config.targets);
}

RunRecord protocol_domain_generalization(World& world, const ProtocolConfig& config, const RunSpec& run) {
    if (config.shift_levels.empty()) throw ConfigError("domain generalization needs at least one shift level");
    std::vector<std::string> targets;
    for (const auto& t : config.targets) {
        const SyntheticDomainSpec& base = world.dataset(t).data.spec;
        for (double level : config.shift_levels) {
            if (!(level >= 0.0 && level <= 1.0)) throw ConfigError("shift level " + std::to_string(level) + " outside [0, 1]");
            SyntheticDomainSpec spec = base;
            spec.name = shifted_name(t, level);
            spec.v2_level = level;
            world.prepare(spec);
            targets.push_back(spec.name);
        }
    }
    return transfer(world, config, run, "domain_generalization", targets);
}

RunRecord run_protocol(World& world, const ProtocolConfig& config, const RunSpec& run) {
    if (config.name == "base_to_novel") return protocol_base_to_novel(world, config, run);
    if (config.name == "cross_dataset") return protocol_cross_dataset(world, config, run);
    if (config.name == "domain_generalization") return protocol_domain_generalization(world, config, run);
    throw ConfigError("unknown protocol '" + config.name + "' (expected base_to_novel, cross_dataset or domain_generalization)");
}

}  // namespace dcpl::harness
