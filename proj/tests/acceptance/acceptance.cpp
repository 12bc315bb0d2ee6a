// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: fann_acceptance [--work DIR] [--only N]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fann/checkpoint.hpp"
#include "fann/config.hpp"
#include "fann/dataio.hpp"
#include "fann/error.hpp"
#include "fann/evaluator.hpp"
#include "fann/gradcheck.hpp"
#include "fann/losses.hpp"
#include "fann/network.hpp"
#include "fann/trainer.hpp"

namespace fs = std::filesystem;
using namespace fann;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

// ---- 1: gradients ----

Outcome gradients() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto cfg = RunConfig::desk().network();
    double worst_term = 0.0, worst_net = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto report = run_gradcheck(cfg, seed);
        for (const auto& e : report.entries) {
            checked += e.checked;
            if (e.tolerance == kNetworkTolerance) worst_net = std::max(worst_net, e.max_rel_error);
            else worst_term = std::max(worst_term, e.max_rel_error);
            o.require(e.passed(), "seed " + std::to_string(seed) + " " + e.term + " rel err " +
                                      fmt("%.2e", e.max_rel_error) + " kinks " + std::to_string(e.kinks));
        }
    }
    const double secs = seconds_since(t0);
    o.require(secs < 120.0, "took " + fmt("%.1f", secs) + " s");
    if (o.pass) {
        o.detail = "20 seeds, " + std::to_string(checked) + " coordinates, max rel err terms " +
                   fmt("%.1e", worst_term) + " network " + fmt("%.1e", worst_net) + ", " + fmt("%.1f", secs) + " s";
    }
    return o;
}

// ---- 2: weight dynamics ----

bool gap_non_increasing(const std::vector<DynamicsRow>& rows, bool& saw_active) {
    saw_active = false;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        saw_active = saw_active || rows[i].hinge_active;
        if (!saw_active) continue;
        if (std::abs(rows[i].d13 - rows[i].d23) > std::abs(rows[i - 1].d13 - rows[i - 1].d23) + 1e-9) return false;
    }
    return true;
}

Outcome weight_dynamics(const fs::path& work) {
    Outcome o;

    // u + v during a real training run, for every triplet and every logged mean.
    SyntheticSpec spec;
    spec.identities = 6;
    spec.images_per_camera = 2;
    const auto ds = generate_synthetic_dataset(spec, work / "dynamics_data");
    const auto data = ds.manifest.load_all(spec.height, spec.width);
    auto cfg = RunConfig::desk();
    cfg.trainer.batch_size = 8;
    cfg.trainer.log_interval = 10;
    auto net = Network::build(cfg.network(), 1);
    const auto state = train(net, data, ds.manifest.entries, cfg, 100);
    std::size_t moved = 0;
    for (const auto& [key, w] : state.weights) {
        o.require(w.u() + w.v() == 1.0, "u + v != 1 for a triplet");
        moved += w.u() != cfg.net.init_u;
    }
    for (const auto& row : state.log) o.require(row.mean_u + row.mean_v == 1.0, "logged mean u + mean v != 1");
    o.require(moved > 0, "no triplet weight ever moved");

    // Textual sign on the default simulation.
    DynamicsConfig sym;
    bool active = false;
    o.require(gap_non_increasing(simulate_triplet_dynamics(sym), active), "symmetric |d13 - d23| increased");
    o.require(active, "symmetric hinge never active");

    // Asymmetric loss: find an initialization where the gap grows.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    int found = -1;
    for (int trial = 0; trial < 100 && found < 0; ++trial) {
        DynamicsConfig asym;
        asym.kind = TripletLossKind::asymmetric;
        for (auto& p : asym.init) p = Point2{coord(rng), coord(rng)};
        bool asym_active = false;
        if (!gap_non_increasing(simulate_triplet_dynamics(asym), asym_active) && asym_active) found = trial;
    }
    o.require(found >= 0, "no asymmetric counterexample in 100 initializations");
    if (o.pass) {
        o.detail = std::to_string(state.weights.size()) + " triplet weights (" + std::to_string(moved) +
                   " moved) sum to 1; symmetric gap non-increasing; asymmetric counterexample at init " +
                   std::to_string(found + 1);
    }
    return o;
}

// ---- 3: shapes ----

Outcome shapes() {
    Outcome o;
    const auto net = Network::build(RunConfig::paper().network(), 1);
    const auto& s = net.shapes();
    o.require(s.tap == Shape({64, 36, 11}), "encoder tap " + s.tap.str());
    o.require(s.reconstruction == Shape({3, 229, 79}), "decoder output " + s.reconstruction.str());
    o.require(s.slices.size() == 4, "part count " + std::to_string(s.slices.size()));
    for (const auto& sl : s.slices) o.require(sl == Shape({64, 9, 11}), "part slice " + sl.str());
    o.require(s.embedding_dim == 1200, "embedding " + std::to_string(s.embedding_dim));

    // Build-time verification: a decoder that no longer maps back to the input is refused.
    auto bad = RunConfig::paper();
    bad.set("dec2_stride", "2x2");
    bool rejected = false;
    try {
        (void)Network::build(bad.network(), 1);
    } catch (const ShapeError&) {
        rejected = true;
    }
    o.require(rejected, "mismatched decoder accepted at build time");
    if (o.pass) o.detail = "tap 64x36x11, output 3x229x79, 4 slices 64x9x11, embedding 1200, bad geometry rejected";
    return o;
}

// ---- 4: evaluation oracles ----

std::vector<std::size_t> full_sort(std::span<const double> row) {
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t j = 0; j < row.size(); ++j) keyed.emplace_back(row[j], j);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> order;
    for (const auto& k : keyed) order.push_back(k.second);
    return order;
}

Outcome evaluation_oracles() {
    Outcome o;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> np(1, 20), ng(1, 80);
    std::uniform_int_distribution<int> level(0, 40);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = np(rng), g = ng(rng);
        std::uniform_int_distribution<int> id(0, static_cast<int>(std::max<std::size_t>(1, g / 3)));
        std::vector<int> gid(g), pid(p);
        for (auto& x : gid) x = id(rng);
        std::uniform_int_distribution<std::size_t> pick(0, g - 1);
        for (auto& x : pid) x = gid[pick(rng)];
        DistanceMatrix d;
        d.rows = p;
        d.cols = g;
        for (std::size_t k = 0; k < p * g; ++k) d.values.push_back(level(rng) / 10.0);  // coarse grid forces ties

        std::vector<double> want_cmc(g, 0.0);
        double want_map = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            const auto order = full_sort(d.row(i));
            std::size_t first = 0;
            while (gid[order[first]] != pid[i]) ++first;
            for (std::size_t r = first; r < g; ++r) want_cmc[r] += 1.0 / static_cast<double>(p);
            double hits = 0.0, sum = 0.0;
            for (std::size_t r = 0; r < g; ++r) {
                if (gid[order[r]] == pid[i]) sum += ++hits / static_cast<double>(r + 1);
            }
            want_map += sum / hits / static_cast<double>(p);
        }
        const auto got = cmc(d, pid, gid, g);
        for (std::size_t r = 0; r < g; ++r) worst = std::max(worst, std::abs(got[r] - want_cmc[r]));
        worst = std::max(worst, std::abs(mean_average_precision(d, pid, gid) - want_map));
        o.require(std::is_sorted(got.begin(), got.end()), "CMC not monotone in trial " + std::to_string(trial));
    }
    o.require(worst <= 1e-12, "max deviation from brute force " + fmt("%.2e", worst));

    // Squared distance and cosine similarity order unit vectors identically.
    for (int trial = 0; trial < 100; ++trial) {
        auto unit = [&] {
            std::normal_distribution<double> n(0.0, 1.0);
            std::vector<double> v(16);
            for (auto& x : v) x = n(rng);
            const double norm = std::sqrt(dot(v, v));
            for (auto& x : v) x /= norm;
            return Tensor::vector(v);
        };
        std::vector<Tensor> probe{unit()}, gallery;
        for (int j = 0; j < 40; ++j) gallery.push_back(unit());
        const auto d = distance_matrix(probe, gallery);
        std::vector<std::size_t> by_cos(gallery.size());
        std::iota(by_cos.begin(), by_cos.end(), 0);
        std::stable_sort(by_cos.begin(), by_cos.end(), [&](std::size_t a, std::size_t b) {
            return dot(probe[0].values(), gallery[a].values()) > dot(probe[0].values(), gallery[b].values());
        });
        o.require(rank_gallery(d.row(0)) == by_cos, "distance and cosine orders differ");
    }
    if (o.pass) o.detail = "100 instances, max deviation " + fmt("%.1e", worst) + ", cosine order identical";
    return o;
}

// ---- 5: end-to-end experiment ----

constexpr std::size_t kIterations = 2000;
constexpr std::size_t kHeavyClutter = 8;

RunConfig experiment_config(double zeta, std::uint64_t seed) {
    auto cfg = RunConfig::desk();
    cfg.net.residual_blocks_per_part = 1;
    cfg.net.zeta = zeta;
    cfg.net.eta = 0.05;
    cfg.net.margin = 0.1;
    cfg.net.seed = seed;
    cfg.eval.trials = 10;
    return cfg;
}

struct RunResult {
    double top1 = 0.0;
    double map = 0.0;
    double seconds = 0.0;
};

RunResult train_and_evaluate(const SyntheticDataset& ds, const std::vector<Sample>& data, const RunConfig& cfg,
                             const fs::path& out) {
    const auto t0 = Clock::now();
    auto net = Network::build(cfg.network(), cfg.net.seed);
    (void)train(net, data, ds.manifest.entries, cfg, kIterations, TrainOptions{out, {}});
    SplitSpec split;
    split.max_rank = cfg.eval.max_rank;
    std::mt19937_64 rng(cfg.net.seed);
    const auto result = evaluate_protocol(net, data, ds.manifest.entries, split, cfg.eval.trials, rng);
    write_ranking_results(out / "eval", result);
    return RunResult{result.cmc[0], result.map, seconds_since(t0)};
}

Outcome end_to_end(const fs::path& work) {
    Outcome o;
    const auto t0 = Clock::now();

    SyntheticSpec spec;  // 20 identities x 2 cameras x 4 images at 37x13
    const auto ds = generate_synthetic_dataset(spec, work / "e2e_data");
    const auto data = ds.manifest.load_all(spec.height, spec.width);
    const auto main = train_and_evaluate(ds, data, experiment_config(0.02, 1), work / "e2e_main");
    std::printf("  main run: top-1 %.4f  mAP %.4f  (%.0f s)\n", main.top1, main.map, main.seconds);
    std::fflush(stdout);
    o.require(main.top1 >= 0.90, "top-1 " + fmt("%.4f", main.top1) + " < 0.90");
    o.require(main.map >= 0.80, "mAP " + fmt("%.4f", main.map) + " < 0.80");

    double with_mask = 0.0, without_mask = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        SyntheticSpec heavy;
        heavy.clutter = kHeavyClutter;
        heavy.seed = 100 + seed;
        const auto hds = generate_synthetic_dataset(heavy, work / ("e2e_heavy_" + std::to_string(seed)));
        const auto hdata = hds.manifest.load_all(heavy.height, heavy.width);
        const auto a = train_and_evaluate(hds, hdata, experiment_config(0.02, seed),
                                          work / ("e2e_heavy_mask_" + std::to_string(seed)));
        const auto b = train_and_evaluate(hds, hdata, experiment_config(0.0, seed),
                                          work / ("e2e_heavy_nomask_" + std::to_string(seed)));
        std::printf("  heavy clutter seed %llu: top-1 with mask %.4f, without %.4f\n",
                    static_cast<unsigned long long>(seed), a.top1, b.top1);
        std::fflush(stdout);
        with_mask += a.top1 / 3.0;
        without_mask += b.top1 / 3.0;
    }
    o.require(without_mask < with_mask, "heavy clutter mean top-1 without mask " + fmt("%.4f", without_mask) +
                                            " not below with mask " + fmt("%.4f", with_mask));
    const double secs = seconds_since(t0);
    o.require(secs < 600.0, "took " + fmt("%.0f", secs) + " s");
    const std::string summary = "top-1 " + fmt("%.4f", main.top1) + " mAP " + fmt("%.4f", main.map) +
                                "; heavy clutter mean top-1 " + fmt("%.4f", with_mask) + " with mask vs " +
                                fmt("%.4f", without_mask) + " without; " + fmt("%.0f", secs) + " s";
    o.detail = o.pass ? summary : o.detail + " [" + summary + "]";
    return o;
}

// ---- 6: reproducibility ----

bool same_files(const fs::path& a, const fs::path& b, std::string& diff) {
    std::set<fs::path> names;
    for (const auto& root : {a, b}) {
        for (const auto& f : fs::recursive_directory_iterator(root)) {
            if (f.is_regular_file()) names.insert(fs::relative(f.path(), root));
        }
    }
    for (const auto& n : names) {
        if (!fs::exists(a / n) || !fs::exists(b / n) || read_bytes(a / n) != read_bytes(b / n)) {
            diff = n.string();
            return false;
        }
    }
    return !names.empty();
}

Outcome reproducibility(const fs::path& work) {
    Outcome o;
    SyntheticSpec spec;
    spec.identities = 8;
    spec.images_per_camera = 2;
    const auto ds = generate_synthetic_dataset(spec, work / "repro_data");
    const auto data = ds.manifest.load_all(spec.height, spec.width);
    auto cfg = RunConfig::desk();
    cfg.trainer.batch_size = 8;
    cfg.trainer.log_interval = 10;
    cfg.trainer.checkpoint_interval = 20;
    for (const char* run : {"repro_a", "repro_b"}) {
        fs::remove_all(work / run);
        auto net = Network::build(cfg.network(), cfg.net.seed);
        (void)train(net, data, ds.manifest.entries, cfg, 50, TrainOptions{work / run, {}});
    }
    std::string diff;
    o.require(same_files(work / "repro_a", work / "repro_b", diff), "runs differ in " + diff);
    if (o.pass) o.detail = "50 iterations twice: checkpoints and metrics.csv bit-identical";
    return o;
}

// ---- 7: formats ----

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const FormatError& e) {
        return e.what();
    } catch (const ShapeError& e) {
        return e.what();
    }
    return {};
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Outcome formats(const fs::path& work) {
    Outcome o;
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> byte(0, 255), dim(1, 9), rank(1, 4);
    std::normal_distribution<double> gauss(0.0, 1e3);
    std::size_t trips = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::size_t> dims(static_cast<std::size_t>(rank(rng)));
        for (auto& d : dims) d = static_cast<std::size_t>(dim(rng));
        Tensor t{Shape(dims)};
        for (auto& v : t.values()) v = gauss(rng);
        if (trial == 0) t.values()[0] = -0.0;
        const auto enc = encode_fant(t);
        const auto back = decode_fant(enc);
        o.require(back.shape() == t.shape() && bit_equal(back, t), "FANT round trip changed values");
        o.require(encode_fant(back) == enc, "FANT re-encoding changed bytes");

        const auto h = static_cast<std::size_t>(dim(rng)), w = static_cast<std::size_t>(dim(rng));
        Tensor img(Shape{3, h, w}), gray(Shape{1, h, w});
        for (auto& v : img.values()) v = byte(rng) / 255.0;
        for (auto& v : gray.values()) v = byte(rng) / 255.0;
        const auto ppm = encode_ppm(img);
        o.require(decode_ppm(ppm) == img && encode_ppm(decode_ppm(ppm)) == ppm, "PPM round trip");
        const auto pgm = encode_pgm(gray);
        o.require(decode_pgm(pgm) == gray && encode_pgm(decode_pgm(pgm)) == pgm, "PGM round trip");
        trips += 3;
    }
    write_fant(work / "v.fant", Tensor::vector({1.0, -2.5}));
    o.require(read_fant(work / "v.fant") == Tensor::vector({1.0, -2.5}), "FANT file round trip");

    // Malformed inputs: rejected, and the message says where.
    auto fant = encode_fant(Tensor::vector({1.0, 2.0, 3.0}));
    auto broken = fant;
    broken[0] = 'X';
    o.require(error_of([&] { decode_fant(broken); }).find("magic") != std::string::npos, "FANT bad magic");
    broken = fant;
    broken.pop_back();
    o.require(!error_of([&] { decode_fant(broken); }).empty(), "FANT truncation");
    auto truncated = bytes_of("P6\n2 2\n255\n");
    truncated.insert(truncated.end(), 5, 7);
    const auto msg = error_of([&] { decode_ppm(truncated); });
    o.require(msg.find("expected 12") != std::string::npos && msg.find("got 5") != std::string::npos,
              "PPM truncation diagnostic: " + msg);
    o.require(error_of([&] { decode_ppm(bytes_of("P5\n1 1\n255\n\x01")); }).find("magic") != std::string::npos,
              "PPM wrong magic");
    o.require(!error_of([&] { decode_pgm(bytes_of("P5\n1 x\n255\n\x01")); }).empty(), "PGM bad header");
    {
        std::ofstream(work / "bad_manifest.txt") << "a.ppm\ta.pgm\t1\t0\nb.ppm\tb.pgm\tx\t0\n";
    }
    o.require(error_of([&] { DatasetManifest::load(work / "bad_manifest.txt"); }).find("bad_manifest.txt:2:") !=
                  std::string::npos,
              "manifest diagnostic lacks file:line");
    if (o.pass) o.detail = std::to_string(trips) + " bit-exact round trips; malformed FANT/PPM/PGM/manifest rejected";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "fann_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else if (arg == "--only" && i + 1 < argc) {
            only.insert(std::atoi(argv[++i]));
        } else {
            std::cerr << "usage: fann_acceptance [--work DIR] [--only N]...\n";
            return 2;
        }
    }
    fs::create_directories(work);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient fidelity", gradients},
        {"weight dynamics", [&] { return weight_dynamics(work); }},
        {"shape fidelity", shapes},
        {"evaluation oracles", evaluation_oracles},
        {"end-to-end synthetic experiment", [&] { return end_to_end(work); }},
        {"reproducibility", [&] { return reproducibility(work); }},
        {"format round trips", [&] { return formats(work); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(n)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
