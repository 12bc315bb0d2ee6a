#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "fann/error.hpp"
#include "fann/trainer.hpp"
#include "test_util.hpp"

using namespace fann;

namespace {

struct SmallData {
    DatasetManifest manifest;
    std::vector<Sample> samples;
};

// Synthetic desk-size data, generated once per name.
const SmallData& small_data(const std::string& name = "trainer", std::size_t identities = 6) {
    static std::map<std::string, SmallData> cache;
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    SyntheticSpec spec;
    spec.identities = identities;
    spec.images_per_camera = 2;
    spec.seed = 3;
    auto dir = fann::testing::scratch_dir(name);
    auto ds = generate_synthetic_dataset(spec, dir);
    SmallData d{ds.manifest, ds.manifest.load_all(spec.height, spec.width)};
    return cache.emplace(name, std::move(d)).first->second;
}

RunConfig small_config() {
    auto c = RunConfig::desk();
    c.trainer.batch_size = 4;
    c.trainer.monitor_batch = 8;
    c.trainer.log_interval = 5;
    return c;
}

std::vector<ManifestEntry> entries(std::initializer_list<std::pair<int, int>> id_cam) {
    std::vector<ManifestEntry> out;
    for (auto [id, cam] : id_cam) out.push_back({"", "", id, cam});
    return out;
}

bool params_equal(const Network& a, const Network& b) {
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        if (!(a.params()[i].weights == b.params()[i].weights) || !(a.params()[i].biases == b.params()[i].biases)) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST(Sampler, ExhaustiveInvariantsOnTinyManifest) {
    auto e = entries({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    std::mt19937_64 rng(1);
    std::set<Triplet> seen;
    for (int k = 0; k < 200; ++k) {
        for (const auto& t : sample_triplets(e, 8, rng).triplets) {
            EXPECT_EQ(e[t.anchor].identity, e[t.positive].identity);
            EXPECT_NE(e[t.anchor].identity, e[t.negative].identity);
            EXPECT_NE(t.anchor, t.positive);
            seen.insert(t);
        }
    }
    // 2 identities x 2 ordered cross-camera pairs x 2 negatives
    EXPECT_EQ(seen.size(), 8u);
}

TEST(Sampler, DeterministicForSeed) {
    const auto& d = small_data();
    std::mt19937_64 a(5), b(5);
    EXPECT_EQ(sample_triplets(d.manifest.entries, 32, a).triplets, sample_triplets(d.manifest.entries, 32, b).triplets);
}

TEST(Sampler, PrefersCrossCamera) {
    const auto& d = small_data();
    TripletSampler sampler(d.manifest.entries);
    std::mt19937_64 rng(7);
    auto batch = sampler.sample(1000, rng);
    std::size_t cross = 0;
    for (const auto& t : batch.triplets) cross += d.manifest.entries[t.anchor].camera != d.manifest.entries[t.positive].camera;
    EXPECT_GE(cross, 950u);
}

TEST(Sampler, SkipsSingletonsAndRejectsEmpty) {
    auto e = entries({{0, 0}, {0, 1}, {1, 0}, {2, 1}});
    TripletSampler s(e);
    EXPECT_EQ(s.skipped_identities(), (std::vector<int>{1, 2}));
    std::mt19937_64 rng(1);
    for (const auto& t : s.sample(50, rng).triplets) EXPECT_EQ(e[t.anchor].identity, 0);
    EXPECT_THROW(TripletSampler(entries({{0, 0}, {1, 0}})), FormatError);
    EXPECT_THROW(TripletSampler(entries({{0, 0}, {0, 1}})), FormatError);
}

TEST(Schedule, DecaysEveryInterval) {
    TrainerConfig t;
    EXPECT_EQ(TrainState::scheduled_rate(t, 0), 0.01);
    EXPECT_EQ(TrainState::scheduled_rate(t, 9999), 0.01);
    EXPECT_NEAR(TrainState::scheduled_rate(t, 10000), 0.001, 1e-18);
    EXPECT_NEAR(TrainState::scheduled_rate(t, 25000), 0.0001, 1e-18);
    t.lr_decay_interval = 0;
    EXPECT_EQ(TrainState::scheduled_rate(t, 50000), 0.01);
}

TEST(TrainStep, DescentOnSameBatch) {
    const auto& d = small_data();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto cfg = small_config();
        cfg.trainer.learning_rate = 1e-3;
        cfg.net.seed = seed;
        auto net = Network::build(cfg.network(), seed);
        auto state = TrainState::initial(cfg);
        auto batch = sample_triplets(d.manifest.entries, cfg.trainer.batch_size, state.rng);

        // E before and after, both with the weights the step itself uses.
        auto probe = state;
        std::vector<AdaptiveWeightState> w;
        auto before_net = net;
        (void)train_step(net, d.samples, batch, probe, cfg);
        for (const auto& t : batch.triplets) w.push_back(weight_state_for(probe, t, cfg.net));
        double before = batch_objective(before_net, d.samples, batch, w).objective;
        double after = batch_objective(net, d.samples, batch, w).objective;
        EXPECT_LT(after, before) << "seed " << seed;
    }
}

TEST(TrainStep, NoMaskNoRegularizerLeavesDecoderUntouched) {
    const auto& d = small_data();
    auto cfg = small_config();
    cfg.net.zeta = 0.0;
    cfg.net.eta = 0.0;
    auto net = Network::build(cfg.network(), 2);
    auto before = net;
    auto state = TrainState::initial(cfg);
    for (int i = 0; i < 3; ++i) {
        auto batch = sample_triplets(d.manifest.entries, cfg.trainer.batch_size, state.rng);
        (void)train_step(net, d.samples, batch, state, cfg);
    }
    for (auto i : net.decoder_param_indices()) {
        EXPECT_EQ(net.params()[i].weights, before.params()[i].weights) << net.param_names()[i];
        EXPECT_EQ(net.params()[i].biases, before.params()[i].biases);
    }
    EXPECT_FALSE(params_equal(net, before));
}

TEST(TrainStep, RegularizerGradientSharesTheBatchAverage) {
    // Same parameters and batch of 3, eta on vs off: the gradients differ by 2 eta Omega / 3.
    const auto& d = small_data();
    auto cfg = small_config();
    std::mt19937_64 rng(1);
    auto batch = sample_triplets(d.manifest.entries, 3, rng);
    std::vector<AdaptiveWeightState> w(3, AdaptiveWeightState::from_weights(0.6, 0.4, 0.01));
    auto on = Network::build(cfg.network(), 4);
    cfg.net.eta = 0.0;
    auto off = Network::build(cfg.network(), 4);
    (void)objective_gradient(on, d.samples, batch, w);
    (void)objective_gradient(off, d.samples, batch, w);
    const double eta = RunConfig::desk().net.eta;
    for (std::size_t l = 0; l < on.params().size(); ++l) {
        const auto& p = on.params()[l];
        for (std::size_t i = 0; i < p.weights.size(); ++i) {
            EXPECT_NEAR(p.weight_grads[i] - off.params()[l].weight_grads[i], 2 * eta * p.weights[i] / 3, 1e-12);
        }
    }
}

TEST(Train, ZeroIterationsLeavesParameters) {
    const auto& d = small_data();
    auto cfg = small_config();
    auto net = Network::build(cfg.network(), 1);
    auto before = net;
    auto state = train(net, d.samples, d.manifest.entries, cfg, 0);
    EXPECT_TRUE(params_equal(net, before));
    EXPECT_EQ(state.iteration, 0u);
    EXPECT_EQ(state.log.size(), 1u);
}

TEST(Train, LogRowsAndWeightSum) {
    const auto& d = small_data();
    auto cfg = small_config();
    for (std::size_t h : {1u, 5u, 12u}) {
        auto net = Network::build(cfg.network(), 3);
        auto state = train(net, d.samples, d.manifest.entries, cfg, h);
        std::size_t k = cfg.trainer.log_interval;
        EXPECT_EQ(state.log.size(), (h + k - 1) / k + 1) << "H=" << h;
        EXPECT_EQ(state.log.back().iteration, h);
        for (const auto& row : state.log) EXPECT_EQ(row.mean_u + row.mean_v, 1.0);
        for (const auto& [key, w] : state.weights) EXPECT_EQ(w.u() + w.v(), 1.0);
    }
}

TEST(Train, BitwiseReproducibleFiles) {
    const auto& d = small_data();
    auto cfg = small_config();
    auto a = fann::testing::scratch_dir("repro_a"), b = fann::testing::scratch_dir("repro_b");
    for (const auto& dir : {a, b}) {
        auto net = Network::build(cfg.network(), cfg.net.seed);
        (void)train(net, d.samples, d.manifest.entries, cfg, 6, TrainOptions{dir, {}});
    }
    EXPECT_EQ(read_bytes(a / "metrics.csv"), read_bytes(b / "metrics.csv"));
    for (const auto& f : std::filesystem::directory_iterator(a / "checkpoint")) {
        EXPECT_EQ(read_bytes(f.path()), read_bytes(b / "checkpoint" / f.path().filename())) << f.path();
    }
}

TEST(Train, ReproducibleAcrossThreadCounts) {
    const auto& d = small_data();
    auto cfg = small_config();
    auto run = [&](const char* threads) {
        setenv("FANN_THREADS", threads, 1);
        auto net = Network::build(cfg.network(), 9);
        (void)train(net, d.samples, d.manifest.entries, cfg, 3);
        unsetenv("FANN_THREADS");
        return net;
    };
    auto one = run("1");
    auto three = run("3");
    EXPECT_TRUE(params_equal(one, three));
}

TEST(Train, AsymmetricModeKeepsFixedWeights) {
    const auto& d = small_data();
    auto cfg = small_config();
    cfg.net.loss_kind = TripletLossKind::asymmetric;
    auto net = Network::build(cfg.network(), 1);
    auto state = train(net, d.samples, d.manifest.entries, cfg, 3);
    EXPECT_TRUE(state.weights.empty());
    EXPECT_EQ(state.log.back().mean_u, 1.0);
    EXPECT_EQ(state.log.back().mean_v, 0.0);
}

TEST(Train, MetricsCsvHeader) {
    std::ostringstream out;
    MetricsRow r;
    r.iteration = 3;
    r.objective = 1.5;
    write_metrics_csv(out, std::span(&r, 1));
    EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "iter,E,L1,L2,R,mean_u,mean_v,lr");
    EXPECT_EQ(out.str().substr(out.str().find('\n') + 1, 6), "3,1.5,");
}

TEST(Train, NonFiniteLossNamesTerm) {
    const auto& d = small_data();
    auto cfg = small_config();
    auto net = Network::build(cfg.network(), 1);
    net.params()[net.param_index("decoder.deconv2")].biases[0] = std::numeric_limits<double>::infinity();
    auto state = TrainState::initial(cfg);
    auto batch = sample_triplets(d.manifest.entries, 2, state.rng);
    try {
        (void)train_step(net, d.samples, batch, state, cfg);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("regression"), std::string::npos) << e.what();
    }
}
