#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcpl/clip.hpp"
#include "dcpl/lsdm.hpp"
#include "dcpl/prompt.hpp"
#include "dcpl/synthetic.hpp"

namespace dcpl::harness {

struct Split {
    std::vector<std::size_t> base;
    std::vector<std::size_t> novel;
};

// Fixed-seed shuffle of `classes`; the first ⌈C/2⌉ are base.
Split split_base_novel(std::span<const std::size_t> classes, std::uint64_t seed);
Split split_base_novel(std::size_t num_classes, std::uint64_t seed);

// Exactly k training samples per class in `classes`, in class order.
std::vector<const ImageSample*> sample_few_shot(std::span<const ImageSample> train, std::span<const std::size_t> classes,
                                                std::size_t k, Rng& rng);

struct Metrics {
    double acc_base = 0.0;
    double acc_novel = 0.0;
    double hm = 0.0;
};

// 2ab/(a+b); defined as 0 when a + b == 0.
double harmonic_mean(double acc_base, double acc_novel);
Metrics make_metrics(double acc_base, double acc_novel);
// Componentwise mean; the HM is the mean of the per-dataset HMs.
Metrics aggregate_metrics(std::span<const Metrics> metrics);

struct TrainOptions {
    std::size_t epochs = 5;
    std::size_t batch = 4;
    double lr = 0.0035;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    std::size_t steps = 0;
};

TrainReport run_training(prompt::PromptLearner& learner, const prompt::FrozenModels& models,
                         std::span<const prompt::Features* const> train, std::span<const std::size_t> classes,
                         const TrainOptions& options, Rng& rng, prompt::GradientAudit* audit = nullptr);

// Top-1 accuracy (percent) over images whose label is in `classes`,
// classifying among `classes` only.
double eval_accuracy(const prompt::PromptLearner& learner, const prompt::FrozenModels& models,
                     std::span<const prompt::Features> images, std::span<const std::size_t> classes, Rng& rng);

// ---- Benchmark world: pretrained frozen encoders plus datasets. ----

struct WorldConfig {
    std::uint64_t seed = 1;
    clip::ClipConfig clip;
    clip::PretrainOptions clip_pretrain{10, 3e-3};
    std::size_t clip_samples_per_class = 20;  // per pretraining domain
    std::size_t clip_web_domains = 16;
    lsdm::LsdmConfig lsdm;
    lsdm::PretrainOptions lsdm_pretrain;
    std::size_t lsdm_samples_per_class = 20;  // per dataset of the family
    std::vector<SyntheticDomainSpec> datasets;
};

// Image-text pairs the dual encoder is pretrained on: the natural domain and
// several web domains, all classes.
std::vector<clip::CaptionedImage> clip_corpus(const WorldConfig& config);
// Caption prefix naming up to two style traits, e.g. "a gray textured photo".
std::vector<std::size_t> caption_prefix(const DomainStyle& style);
// Unlabelled images of one family, drawn independently of the benchmark
// datasets of that family.
std::vector<ImageSample> lsdm_corpus(const WorldConfig& config, DomainFamily family);

clip::DualEncoder pretrain_world_clip(const WorldConfig& config, clip::PretrainReport* report = nullptr);
lsdm::MaskedAutoencoder pretrain_world_lsdm(const WorldConfig& config, DomainFamily family,
                                            lsdm::PretrainReport* report = nullptr);

struct PreparedDataset {
    Dataset data;
    std::vector<prompt::Features> train;
    std::vector<prompt::Features> test;
};

struct World {
    WorldConfig config;
    clip::DualEncoder clip;
    std::map<DomainFamily, lsdm::MaskedAutoencoder> lsdm;
    std::map<std::string, PreparedDataset> datasets;

    prompt::FrozenModels models_for(DomainFamily family) const;
    const PreparedDataset& dataset(const std::string& name) const;
    // Generates (or returns) the dataset with frozen features extracted.
    const PreparedDataset& prepare(const SyntheticDomainSpec& spec);
};

// Encoders are pretrained here unless already supplied (e.g. loaded from
// checkpoints); datasets are generated and featurised.
World build_world(const WorldConfig& config, std::optional<clip::DualEncoder> clip_model = std::nullopt,
                  std::map<DomainFamily, lsdm::MaskedAutoencoder> lsdm_models = {});

// ---- Protocols. ----

struct RunSpec {
    std::string label;  // record / chart name, e.g. "dcpl" or "dcpl_no_noise"
    prompt::LearnerConfig learner;
};

struct ProtocolConfig {
    std::string name = "base_to_novel";  // base_to_novel | cross_dataset | domain_generalization
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::size_t shots = 16;
    TrainOptions train;
    std::uint64_t split_seed = 7;
    std::vector<std::string> datasets;  // base_to_novel
    std::string source;                 // cross_dataset / domain_generalization
    std::vector<std::string> targets;
    std::vector<double> shift_levels{0.0, 0.5, 1.0};
    int jobs = 0;                       // 0 → all available processors
};

struct CellResult {
    std::string dataset;
    std::uint64_t seed = 0;
    Metrics metrics;
    bool has_novel = true;  // false for transfer protocols (accuracy only, in acc_base)
    std::vector<double> epoch_loss;
};

struct PurityAudit {
    std::size_t steps = 0;
    std::size_t samples = 0;
    std::size_t novel_samples = 0;      // must stay 0
    std::size_t frozen_with_grad = 0;   // must stay 0
    bool clean() const { return novel_samples == 0 && frozen_with_grad == 0; }
};

struct RunRecord {
    std::string protocol;
    std::string label;
    std::string variant;
    std::vector<CellResult> cells;                  // dataset-major, then seed
    std::vector<std::string> dataset_order;
    std::map<std::string, Metrics> per_dataset;     // seed-averaged
    Metrics aggregate;
    PurityAudit audit;
};

// One base-to-novel cell, drawing from the same random streams as the
// protocol: few-shot training on the base classes of `dataset`.
struct CellTraining {
    Split split;
    prompt::PromptLearner learner;
    TrainReport report;
};
CellTraining train_base_cell(const World& world, const ProtocolConfig& config, const RunSpec& run, const std::string& dataset,
                             std::uint64_t seed, prompt::GradientAudit* audit = nullptr);
Metrics evaluate_base_cell(const World& world, const std::string& dataset, const Split& split,
                           const prompt::PromptLearner& learner, std::uint64_t seed);

RunRecord protocol_base_to_novel(World& world, const ProtocolConfig& config, const RunSpec& run);
RunRecord protocol_cross_dataset(World& world, const ProtocolConfig& config, const RunSpec& run);
RunRecord protocol_domain_generalization(World& world, const ProtocolConfig& config, const RunSpec& run);
RunRecord run_protocol(World& world, const ProtocolConfig& config, const RunSpec& run);

// Name of the v2 variant of `spec` at the given shift level.
std::string shifted_name(const std::string& name, double level);

}  // namespace dcpl::harness
