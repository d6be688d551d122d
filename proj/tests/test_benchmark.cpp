#include <doctest.h>

#include "dcpl/config.hpp"
#include "dcpl/harness.hpp"

// Run-and-measure checks on the default benchmark. The world is built once.

using namespace dcpl;
using namespace dcpl::harness;

namespace {

const config::ExperimentConfig& cfg() {
    static const config::ExperimentConfig c = config::default_config();
    return c;
}

World& world() {
    static World w = build_world(cfg().world);
    return w;
}

RunSpec spec(const std::string& variant) {
    RunSpec r;
    r.label = variant;
    r.learner = cfg().learner;
    r.learner.variant = prompt::Variant::parse(variant);
    return r;
}

RunRecord run(const std::string& protocol, const std::string& variant) {
    ProtocolConfig p = cfg().protocol;
    p.name = protocol;
    return run_protocol(world(), p, spec(variant));
}

}  // namespace

TEST_CASE("training with noise lowers the loss on the default benchmark") {
    for (const auto& name : cfg().protocol.datasets)
        for (std::uint64_t seed : cfg().protocol.seeds) {
            const auto t = train_base_cell(world(), cfg().protocol, spec("dcpl"), name, seed);
            CHECK(t.learner.config.noise.enabled);
            CHECK(t.report.steps == 80);
            CHECK(t.report.epoch_loss.back() < t.report.epoch_loss.front());
        }
}

TEST_CASE("cross-dataset transfer: DCPL at least matches COOP") {
    const RunRecord d = run("cross_dataset", "dcpl"), c = run("cross_dataset", "coop");
    MESSAGE("mean target accuracy dcpl " << d.aggregate.acc_base << " coop " << c.aggregate.acc_base);
    CHECK(d.aggregate.acc_base >= c.aggregate.acc_base);
    CHECK(d.audit.clean());
}

TEST_CASE("domain generalization: DCPL at least matches COOP; shift hurts COOP") {
    const RunRecord d = run("domain_generalization", "dcpl"), c = run("domain_generalization", "coop");
    MESSAGE("mean shifted-target accuracy dcpl " << d.aggregate.acc_base << " coop " << c.aggregate.acc_base);
    CHECK(d.aggregate.acc_base >= c.aggregate.acc_base);

    const auto& levels = cfg().protocol.shift_levels;
    REQUIRE(levels.size() == 3);
    std::vector<double> acc(levels.size(), 0.0);
    for (std::size_t i = 0; i < levels.size(); ++i) {
        for (const auto& t : cfg().protocol.targets) acc[i] += c.per_dataset.at(shifted_name(t, levels[i])).acc_base;
        acc[i] /= static_cast<double>(cfg().protocol.targets.size());
    }
    MESSAGE("coop accuracy by shift level " << acc[0] << " " << acc[1] << " " << acc[2]);
    const int drops = (acc[1] < acc[0]) + (acc[2] < acc[1]) + (acc[2] < acc[0]);
    CHECK(drops >= 2);
}
