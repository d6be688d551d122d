// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <sys/wait.h>

#include "dcpl/checkpoint.hpp"
#include "dcpl/config.hpp"
#include "dcpl/harness.hpp"
#include "dcpl/report.hpp"
#include "gradcheck.hpp"

using namespace dcpl;
using namespace dcpl::ad;
using dcpl::testing::grad_check;
using dcpl::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
    std::printf("criterion %d %s: %s (%s)\n", id, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !pass;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

bool bitwise(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

// ---- 1 ----

void criterion_metrics() {
    using harness::harmonic_mean;
    const double g = harmonic_mean(98.00, 80.00), h = harmonic_mean(98.77, 93.70);
    const double hms[] = {70.54, 77.21, 93.48, 83.62, 76.94, 88.09, 96.17, 80.81};
    const double bases[] = {87.05, 95.93, 91.67, 92.90, 95.03, 98.00, 98.77, 90.80};
    std::vector<harness::Metrics> ms;
    for (int i = 0; i < 8; ++i) ms.push_back({bases[i], 0.0, hms[i]});
    const auto agg = harness::aggregate_metrics(ms);
    const bool pass = std::abs(g - 88.09) <= 0.005 && std::abs(h - 96.17) <= 0.005 && std::abs(agg.hm - 83.36) <= 0.005 &&
                      std::abs(agg.acc_base - 93.77) <= 0.005;
    verdict(1, pass, "metric oracle vs paper",
            fmt("HM %.4f, %.4f; mean HM %.4f; mean base %.4f", g, h, agg.hm, agg.acc_base));
}

// ---- 2 ----

struct Case {
    std::string name;
    std::function<Tensor()> loss;
    std::vector<Tensor> leaves;
    bool primitive;
};

void criterion_gradients() {
    Rng rng(2024);
    std::vector<Case> cases;
    auto prim = [&](std::string name, std::vector<Tensor> leaves, std::function<Tensor()> f) {
        Tensor w;
        {
            NoGradGuard g;
            w = random_tensor(rng, f().shape(), false);
        }
        cases.push_back({std::move(name), [f, w] { return sum(mul(f(), w)); }, std::move(leaves), true});
    };
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 5}), v = random_tensor(rng, {4});
    Tensor c = random_tensor(rng, {3, 4}), bias = random_tensor(rng, {5}), wt = random_tensor(rng, {5, 4});
    Tensor pos = random_tensor(rng, {6});
    for (auto& x : pos.mutable_data()) x = 0.5 + std::abs(x);
    Tensor away = testing::away_from_zero(rng, {3, 4}, 0.05);
    Tensor gain = random_tensor(rng, {4}), lnb = random_tensor(rng, {4});
    Tensor probs;
    {
        NoGradGuard g;
        probs = softmax(random_tensor(rng, {5}, false));
    }
    probs.set_requires_grad(true);
    Tensor logits = random_tensor(rng, {3, 5}), lvec = random_tensor(rng, {5});
    Tensor cube = random_tensor(rng, {2, 3, 4});
    const std::size_t labels[] = {4, 0, 2};
    const std::size_t rows[] = {2, 0, 2, 1};
    const std::size_t src[] = {0, 5, 5, 23, 7, 11};

    prim("matmul", {a, b}, [=] { return matmul(a, b); });
    prim("matvec", {a, v}, [=] { return matmul(a, v); });
    prim("vecmat", {v, b}, [=] { return matmul(v, b); });
    prim("transpose", {a}, [=] { return transpose(a); });
    prim("affine", {a, wt, bias}, [=] { return affine(a, wt, bias); });
    prim("add", {a, c}, [=] { return add(a, c); });
    prim("add_row_broadcast", {a, v}, [=] { return add(a, v); });
    prim("sub", {a, c}, [=] { return sub(a, c); });
    prim("mul", {a, c}, [=] { return mul(a, c); });
    prim("add_scalar", {a}, [=] { return add(a, 0.7); });
    prim("scale", {a}, [=] { return scale(a, -1.3); });
    prim("relu", {away}, [=] { return relu(away); });
    prim("exp", {a}, [=] { return exp(a); });
    prim("log", {pos}, [=] { return log(pos); });
    prim("softmax", {lvec}, [=] { return softmax(lvec); });
    prim("softmax_rows", {logits}, [=] { return softmax(logits); });
    prim("mean", {a}, [=] { return mean(a); });
    prim("sum", {a}, [=] { return sum(a); });
    prim("cosine_similarity", {v, gain}, [=] { return cosine_similarity(v, gain); });
    prim("normalize", {a}, [=] { return normalize(a); });
    prim("layer_norm", {a, gain, lnb}, [=] { return layer_norm(a, gain, lnb); });
    prim("cross_entropy", {probs}, [=] { return cross_entropy(probs, 3); });
    prim("softmax_cross_entropy", {lvec}, [=] { return softmax_cross_entropy(lvec, 1); });
    prim("softmax_cross_entropy_rows", {logits}, [=] { return softmax_cross_entropy_rows(logits, labels); });
    prim("slice_cols", {logits}, [=] { return slice_cols(logits, 1, 4); });
    prim("concat_cols", {a, c}, [=] { return concat_cols({a, c}); });
    prim("concat_rows", {a, v}, [=] { return concat_rows({a, v}); });
    prim("concat", {v, bias}, [=] { return concat({v, bias}); });
    prim("row", {a}, [=] { return row(a, 1); });
    prim("gather_rows", {a}, [=] { return gather_rows(a, rows); });
    prim("reshape", {cube}, [=] { return reshape(cube, {6, 4}); });
    prim("gather", {cube}, [=] { return gather(cube, src, {2, 3}); });

    // Layers and the prompt pipeline are compositions.
    auto comp = [&](std::string name, std::vector<Tensor> leaves, std::function<Tensor()> f) {
        Tensor w;
        {
            NoGradGuard g;
            w = random_tensor(rng, f().shape(), false);
        }
        cases.push_back({std::move(name), [f, w] { return sum(mul(f(), w)); }, std::move(leaves), false});
    };
    auto params_of = [](const nn::ParamList& ps) {
        std::vector<Tensor> out;
        for (const auto& p : ps) out.push_back(p.tensor);
        return out;
    };
    auto jitter = [&](const nn::ParamList& ps) {
        for (const auto& p : ps) {
            Tensor t = p.tensor;
            for (auto& x : t.mutable_data()) x += 0.3 * rng.normal();
        }
    };
    {
        auto mlp = nn::make_mlp(4, 6, 3, rng);
        nn::ParamList ps;
        mlp.collect("mlp", ps);
        jitter(ps);
        Tensor x = random_tensor(rng, {2, 4});
        auto leaves = params_of(ps);
        leaves.push_back(x);
        comp("mlp", leaves, [=] { return mlp.forward(x); });
    }
    {
        auto block = nn::make_block(6, 2, 8, rng);
        nn::ParamList ps;
        block.collect("block", ps);
        jitter(ps);
        Tensor x = random_tensor(rng, {3, 6});
        auto leaves = params_of(ps);
        leaves.push_back(x);
        comp("transformer_block", leaves, [=] { return block.forward(x); });
    }

    // Full prompt composition with noise off: context shift, visual fusion,
    // prompts through the frozen text encoder, similarity softmax; gradients
    // into the learner and, through the frozen encoders, into the pixels.
    clip::ClipConfig cc;
    cc.image_size = 8;
    cc.width = 8;
    cc.embed_dim = 6;
    cc.layers = 1;
    cc.mlp_hidden = 8;
    cc.num_classes = 4;
    cc.init_tau = 0.5;
    auto clip_model = clip::make_dual_encoder(cc, rng);
    jitter(clip_model.parameters());
    nn::freeze(clip_model.parameters());
    lsdm::LsdmConfig lc;
    lc.image_size = 8;
    lc.width = 8;
    lc.embed_dim = 5;
    lc.layers = 1;
    lc.mlp_hidden = 8;
    auto mae = lsdm::make_mae(lc, rng);
    nn::freeze(mae.parameters());
    const prompt::FrozenModels models{&clip_model, &mae.encoder};
    prompt::LearnerConfig lcfg;
    lcfg.noise.enabled = false;
    auto learner = prompt::make_learner(lcfg, clip_model, 5, rng);
    jitter(learner.all_parameters());
    Tensor pixels = random_tensor(rng, {8, 8, 3}, true, 0.5);
    static const std::size_t classes[] = {0, 1, 2, 3};
    auto pipeline = [&] {
        prompt::Features f;
        f.x = clip::encode_image(clip_model.visual, pixels);
        f.r_b = lsdm::encode_domain(mae.encoder, pixels);
        Rng unused(0);
        return prompt::dcpl_probs(learner, models, f, classes, prompt::Mode::Train, unused);
    };
    auto leaves = params_of(learner.parameters());
    leaves.push_back(pixels);
    cases.push_back({"dcpl_pipeline", [&] { return cross_entropy(pipeline(), 2); }, leaves, false});

    double worst_prim = 0.0, worst_comp = 0.0;
    std::string worst_name, failed;
    for (auto& cs : cases) {
        const auto gc = grad_check(cs.loss, cs.leaves);
        const double tol = cs.primitive ? 1e-6 : 1e-5;
        double& worst = cs.primitive ? worst_prim : worst_comp;
        if (gc.rel_error > worst) worst = gc.rel_error;
        if (!(gc.rel_error < tol) || !(gc.grad_norm > 0.0)) failed += (failed.empty() ? "" : ",") + cs.name;
    }
    verdict(2, failed.empty(), "gradient suite vs central finite differences",
            std::to_string(cases.size()) + " cases; worst rel err primitives " + fmt("%.2e", worst_prim) + ", compositions " +
                fmt("%.2e", worst_comp) + (failed.empty() ? "" : "; failed: " + failed));
}

// ---- 3 ----

void criterion_reduction() {
    Rng rng(31);
    clip::ClipConfig cc;
    cc.image_size = 8;
    cc.width = 8;
    cc.embed_dim = 6;
    cc.layers = 1;
    cc.mlp_hidden = 8;
    cc.num_classes = 5;
    auto clip_model = clip::make_dual_encoder(cc, rng);
    for (const auto& p : clip_model.parameters()) {
        if (p.name == "log_tau") continue;
        Tensor t = p.tensor;
        for (auto& x : t.mutable_data()) x += 0.3 * rng.normal();
    }
    nn::freeze(clip_model.parameters());
    lsdm::LsdmConfig lc;
    lc.image_size = 8;
    lc.width = 8;
    lc.embed_dim = 5;
    lc.layers = 1;
    lc.mlp_hidden = 8;
    auto mae = lsdm::make_mae(lc, rng);
    nn::freeze(mae.parameters());
    const prompt::FrozenModels models{&clip_model, &mae.encoder};
    const std::size_t classes[] = {0, 1, 2, 3, 4};

    prompt::LearnerConfig cfg;
    cfg.noise.enabled = false;
    const auto literal = prompt::make_learner(cfg, clip_model, 5, rng);
    // Trained-looking context and first layers; second layers zeroed.
    auto trained = literal;
    trained.ctx = Tensor::from(literal.ctx.shape(), literal.ctx.to_vector());
    for (auto& x : trained.ctx.mutable_data()) x += 0.4 * rng.normal();
    for (nn::Mlp* net : {&trained.lc, &trained.vc}) {
        net->first.weight = random_tensor(rng, net->first.weight.shape());
        net->first.bias = random_tensor(rng, net->first.bias.shape());
        net->second.weight = Tensor::zeros(net->second.weight.shape());
        net->second.bias = Tensor::zeros(net->second.bias.shape());
    }

    // CoOp path, written out independently: learned context + class token
    // through the text encoder, cosine/τ softmax against the image embedding.
    auto coop = [&](const prompt::PromptLearner& l, const prompt::Features& f) {
        std::vector<Tensor> w;
        for (auto c : classes) w.push_back(clip::encode_text(clip_model.text, concat_rows({l.ctx, clip::class_token_embedding(clip_model, c)})));
        return clip::zero_shot_probs(clip_model, f.x, w);
    };
    std::size_t equal = 0;
    for (int i = 0; i < 100; ++i) {
        ImageSample img;
        img.height = img.width = 8;
        img.id = static_cast<std::uint64_t>(i);
        for (int k = 0; k < 8 * 8 * 3; ++k) img.pixels.push_back(rng.uniform());
        const auto f = prompt::extract_features(models, img);
        equal += bitwise(prompt::dcpl_probs(literal, models, f, classes, prompt::Mode::Train, rng), coop(literal, f)) &&
                 bitwise(prompt::dcpl_probs(trained, models, f, classes, prompt::Mode::Train, rng), coop(trained, f));
    }
    verdict(3, equal == 100, "zero control nets reduce DCPL to the CoOp path bitwise",
            std::to_string(equal) + "/100 images equal at literal init and with zeroed nets");
}

// ---- 4 ----

void criterion_noise() {
    Rng rng(44);
    prompt::NoiseConfig on;
    const Tensor xd = Tensor::vector({0.25, -1.5, 3.0});
    double worst = 0.0;
    for (const auto& xs : {std::vector<double>{1, 2, 3}, {-1, -2, -3}, {0.5, 4, -1.5}}) {
        const Tensor x = Tensor::vector(xs);
        const double sigma = std::abs((xs[0] + xs[1] + xs[2]) / 3.0);
        const int n = 100000;
        double s1[3] = {}, s2[3] = {};
        for (int i = 0; i < n; ++i) {
            const Tensor out = prompt::add_adaptive_noise(xd, x, on, prompt::Mode::Train, rng);
            for (std::size_t k = 0; k < 3; ++k) {
                const double d = out[k] - xd[k];
                s1[k] += d;
                s2[k] += d * d;
            }
        }
        for (std::size_t k = 0; k < 3; ++k) {
            const double m = s1[k] / n, sd = std::sqrt(s2[k] / n - m * m);
            worst = std::max(worst, std::abs(sd - sigma) / sigma);
        }
    }
    const Tensor z0 = Tensor::zeros({3});
    const bool pass_through = bitwise(prompt::add_adaptive_noise(xd, Tensor::vector({1, 2, 3}), on, prompt::Mode::Train, rng, &z0), xd);
    verdict(4, worst < 0.02 && pass_through, "adaptive noise statistics",
            fmt("worst relative std error %.4f over 1e5 draws; z=0 pass-through ", worst) + (pass_through ? "exact" : "NOT exact"));
}

// ---- 5 to 8 ----

void criteria_pipeline() {
    const config::ExperimentConfig cfg = config::default_config();
    config::ExperimentConfig run_cfg = cfg;
    run_cfg.protocol.jobs = 1;  // single-process timing
    const auto t0 = std::chrono::steady_clock::now();
    harness::World world = harness::build_world(cfg.world);
    const double t_world = seconds_since(t0);

    double worst_zs = 100.0;
    std::string zs;
    for (const auto& name : cfg.protocol.datasets) {
        const auto& d = world.dataset(name).data;
        const double acc = clip::zero_shot_accuracy(world.clip, d.test, d.spec.classes);
        worst_zs = std::min(worst_zs, acc);
        zs += name + " " + fmt("%.1f%%", acc) + ", ";
    }
    auto spec = [&](const std::string& variant, bool noise = true) {
        harness::RunSpec r;
        r.learner = cfg.learner;
        r.learner.variant = prompt::Variant::parse(variant);
        r.learner.noise.enabled = noise;
        r.label = noise ? variant : variant + "_no_noise";
        return r;
    };
    const auto t1 = std::chrono::steady_clock::now();
    const auto dcpl = harness::protocol_base_to_novel(world, run_cfg.protocol, spec("dcpl"));
    const double t_protocol = seconds_since(t1), total = t_world + t_protocol;
    verdict(5, worst_zs >= 60.0 && total < 600.0 && dcpl.cells.size() == 3 * cfg.protocol.datasets.size(),
            "end-to-end desk pipeline",
            "zero-shot " + zs + fmt("pretraining %.1fs + 3-seed base-to-novel %.1fs = %.1fs", t_world, t_protocol, total));

    const auto coop = harness::protocol_base_to_novel(world, run_cfg.protocol, spec("coop"));
    const auto vc = harness::protocol_base_to_novel(world, run_cfg.protocol, spec("vc_only"));
    const auto lc = harness::protocol_base_to_novel(world, run_cfg.protocol, spec("lc_only"));
    const double h_d = dcpl.aggregate.hm, h_c = coop.aggregate.hm, h_v = vc.aggregate.hm, h_l = lc.aggregate.hm;
    std::string violations;
    if (!(h_d >= h_c)) violations += " DCPL<COOP";
    if (!(h_v >= h_c)) violations += " VC<COOP";
    if (!(h_l >= h_c)) violations += " LC<COOP";
    verdict(6, violations.empty(), "Table 1/5 direction: DCPL, VC_ONLY, LC_ONLY >= COOP_BASE in mean HM",
            fmt("HM coop %.2f, vc_only %.2f, lc_only %.2f, dcpl %.2f", h_c, h_v, h_l, h_d) +
                (violations.empty() ? "" : "; violated:" + violations));

    const auto quiet = harness::protocol_base_to_novel(world, run_cfg.protocol, spec("dcpl", false));
    verdict(7, dcpl.aggregate.hm >= quiet.aggregate.hm, "Table 6 / Figure 3 direction: noise >= no noise in mean HM",
            fmt("HM with noise %.4f, without %.4f, gain %+.4f", dcpl.aggregate.hm, quiet.aggregate.hm,
                dcpl.aggregate.hm - quiet.aggregate.hm));

    // Every sample that reached a loss is recorded by the training step; the
    // expected count is shots × base classes × epochs per cell.
    std::size_t expected = 0;
    for (const auto& name : cfg.protocol.datasets)
        expected += cfg.protocol.shots * harness::split_base_novel(world.dataset(name).data.spec.classes, cfg.protocol.split_seed).base.size() *
                    cfg.protocol.train.epochs * cfg.protocol.seeds.size();
    bool clean = true;
    std::size_t samples = 0, novel = 0, frozen = 0;
    for (const auto* r : {&dcpl, &coop, &vc, &lc, &quiet}) {
        clean &= r->audit.clean() && r->audit.samples == expected;
        samples += r->audit.samples;
        novel += r->audit.novel_samples;
        frozen += r->audit.frozen_with_grad;
    }
    verdict(8, clean, "protocol purity audit",
            std::to_string(samples) + " audited training samples over 5 runs, " + std::to_string(novel) +
                " from novel classes, " + std::to_string(frozen) + " frozen tensors with gradients");
}

// ---- 9 ----

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void criterion_determinism() {
    const fs::path root = fs::temp_directory_path() / "dcpl_acceptance";
    fs::remove_all(root);
    bool ok = true;
    std::string detail;
    for (const char* run : {"a", "b"}) {
        const std::string cmd = std::string(DCPL_CLI_PATH) + " protocol --config default --seed 1 --out " + (root / run).string() +
                                " 2> " + (root.string() + "_" + run + ".log");
        const int status = std::system(cmd.c_str());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            ok = false;
            detail += std::string("run ") + run + " exited abnormally; ";
        }
    }
    std::size_t files = 0;
    if (ok)
        for (const auto& e : fs::directory_iterator(root / "a")) {
            ++files;
            const fs::path other = root / "b" / e.path().filename();
            if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
                ok = false;
                detail += e.path().filename().string() + " differs; ";
            }
        }
    const bool has_all = fs::exists(root / "a" / "metrics.csv") && fs::exists(root / "a" / "chart.svg") &&
                         fs::exists(root / "a" / "run_base_to_novel_dcpl.json");
    ok &= has_all;

    // Checkpoint and embedding-file round trips.
    Rng rng(9);
    auto model = clip::make_dual_encoder(clip::ClipConfig{}, rng);
    for (const auto& p : model.parameters()) {
        Tensor t = p.tensor;
        for (auto& x : t.mutable_data()) x = rng.normal() * 1e-3 + x;
    }
    std::stringstream ck;
    nn::write_checkpoint(ck, model.parameters());
    const auto back = nn::read_checkpoint(ck);
    bool ck_ok = back.size() == model.parameters().size();
    for (std::size_t i = 0; ck_ok && i < back.size(); ++i) ck_ok = back[i].name == model.parameters()[i].name && bitwise(back[i].tensor, model.parameters()[i].tensor);
    lsdm::EmbeddingFile ef;
    ef.dim = 7;
    for (int i = 0; i < 5 * 7; ++i) ef.rows.push_back(static_cast<float>(rng.normal()));
    for (int i = 0; i < 5; ++i) ef.ids.push_back(rng.next_u64());
    std::stringstream es;
    lsdm::write_embeddings(es, ef);
    const auto eb = lsdm::read_embeddings(es);
    const bool emb_ok = eb.dim == ef.dim && eb.ids == ef.ids &&
                        std::memcmp(eb.rows.data(), ef.rows.data(), ef.rows.size() * sizeof(float)) == 0;
    ok &= ck_ok && emb_ok;
    verdict(9, ok, "determinism and bit-exact round trips",
            std::to_string(files) + " output files byte-identical across two `protocol --seed 1` runs" +
                (detail.empty() ? "" : " [" + detail + "]") + "; checkpoint " + (ck_ok ? "exact" : "MISMATCH") +
                "; embeddings " + (emb_ok ? "exact" : "MISMATCH"));
    fs::remove_all(root);
}

}  // namespace

int main() {
    criterion_metrics();
    criterion_gradients();
    criterion_reduction();
    criterion_noise();
    criteria_pipeline();
    criterion_determinism();
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
