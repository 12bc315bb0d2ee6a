// fann: synthetic data, training, evaluation and diagnostics from the command line.
//
// Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "fann/checkpoint.hpp"
#include "fann/config.hpp"
#include "fann/dataio.hpp"
#include "fann/error.hpp"
#include "fann/evaluator.hpp"
#include "fann/gradcheck.hpp"
#include "fann/losses.hpp"
#include "fann/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

fann::RunConfig load_config(const std::string& file, const std::string& preset) {
    if (!file.empty()) return fann::RunConfig::load(file);
    if (preset == "paper") return fann::RunConfig::paper();
    if (preset == "desk") return fann::RunConfig::desk();
    throw fann::Error("unknown preset '" + preset + "' (expected paper or desk)");
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw fann::FormatError(std::string(what) + " not found: " + p.string());
}

struct SynthArgs {
    std::string out;
    fann::SyntheticSpec spec;
};

int run_synth(const SynthArgs& a) {
    const auto ds = fann::generate_synthetic_dataset(a.spec, a.out);
    std::cout << "wrote " << ds.manifest.entries.size() << " samples to " << (fs::path(a.out) / "manifest.txt").string()
              << '\n';
    return kExitOk;
}

struct TrainArgs {
    std::string config;
    std::string preset = "desk";
    std::string data;
    std::size_t iters = 0;
    std::string out;
};

int run_train(const TrainArgs& a) {
    const auto cfg = load_config(a.config, a.preset);
    require_file(a.data, "manifest");
    const auto manifest = fann::DatasetManifest::load(a.data);
    const auto net_cfg = cfg.network();
    const auto data = manifest.load_all(net_cfg.input_height, net_cfg.input_width);
    auto net = fann::Network::build(net_cfg, net_cfg.seed);

    fann::TrainOptions opts;
    opts.out_dir = a.out;
    opts.on_log = [](const fann::MetricsRow& r) {
        std::printf("iter %zu  E=%.6g  L1=%.6g  L2=%.6g  R=%.6g  u=%.4f  v=%.4f  lr=%g\n", r.iteration, r.objective,
                    r.triplet, r.regression, r.regularizer, r.mean_u, r.mean_v, r.learning_rate);
        std::fflush(stdout);
    };
    fann::train(net, data, manifest.entries, cfg, a.iters, opts);
    std::cout << "checkpoint: " << (fs::path(a.out) / "checkpoint").string() << '\n';
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::size_t trials = 0;
    std::string out;
    std::uint64_t seed = 1;
};

int run_eval(const EvalArgs& a) {
    require_file(fs::path(a.checkpoint) / "layers.txt", "checkpoint");
    require_file(a.data, "manifest");
    const auto ck = fann::load_checkpoint(a.checkpoint);
    const auto manifest = fann::DatasetManifest::load(a.data);
    const auto& nc = ck.network.config();
    const auto data = manifest.load_all(nc.input_height, nc.input_width);

    fann::SplitSpec split;
    split.probe_camera = ck.config.eval.probe_camera;
    split.gallery_camera = ck.config.eval.gallery_camera;
    split.identities = ck.config.eval.identities;
    split.multi_shot = ck.config.eval.multi_shot;
    split.max_rank = ck.config.eval.max_rank;
    const std::size_t trials = a.trials == 0 ? ck.config.eval.trials : a.trials;

    std::mt19937_64 rng(a.seed);
    const auto result = fann::evaluate_protocol(ck.network, data, manifest.entries, split, trials, rng);
    const fs::path out = a.out.empty() ? fs::path(a.checkpoint) / "eval" : fs::path(a.out);
    fann::write_ranking_results(out, result);
    for (std::size_t r : {1, 5, 10, 20}) {
        if (r <= result.cmc.size()) std::printf("top-%zu %.4f\n", r, result.cmc[r - 1]);
    }
    std::printf("mAP %.4f\n", result.map);
    std::cout << "results: " << out.string() << '\n';
    return kExitOk;
}

struct EmbedArgs {
    std::string checkpoint;
    std::string image;
    std::string out;
};

int run_embed(const EmbedArgs& a) {
    require_file(fs::path(a.checkpoint) / "layers.txt", "checkpoint");
    require_file(a.image, "image");
    const auto ck = fann::load_checkpoint(a.checkpoint);
    const auto& nc = ck.network.config();
    auto image = fann::read_image_ppm(a.image);
    if (image.shape()[1] != nc.input_height || image.shape()[2] != nc.input_width) {
        image = fann::resize_bilinear(image, nc.input_height, nc.input_width);
    }
    const auto embedding = ck.network.embed(image);
    const fs::path out = a.out.empty() ? fs::path(a.image).replace_extension(".fant") : fs::path(a.out);
    fann::write_fant(out, embedding);
    std::cout << "wrote " << embedding.size() << "-d embedding to " << out.string() << '\n';
    return kExitOk;
}

struct GradcheckArgs {
    std::string config;
    std::string preset = "desk";
    std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckArgs& a) {
    const auto cfg = load_config(a.config, a.preset);
    const auto report = fann::run_gradcheck(cfg.network(), a.seed);
    fann::print_report(std::cout, report);
    bool ok = true;
    for (const auto& e : report.entries) ok = ok && e.checked > 0 && e.max_rel_error <= fann::kNetworkTolerance;
    std::cout << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return ok ? kExitOk : kExitNumeric;
}

struct DynamicsArgs {
    std::string loss = "symmetric";
    std::string sign = "textual";
    std::size_t steps = 200;
    std::string out;
};

int run_dynamics(const DynamicsArgs& a) {
    fann::DynamicsConfig cfg;
    cfg.kind = a.loss == "symmetric" ? fann::TripletLossKind::symmetric : fann::TripletLossKind::asymmetric;
    cfg.sign_mode = a.sign == "textual" ? fann::SignMode::textual : fann::SignMode::literal;
    cfg.steps = a.steps;
    const auto rows = fann::simulate_triplet_dynamics(cfg);
    if (a.out.empty() || a.out == "-") {
        fann::write_dynamics_csv(std::cout, rows);
        return kExitOk;
    }
    if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream file(a.out, std::ios::trunc);
    if (!file) throw fann::FormatError("cannot write " + a.out);
    fann::write_dynamics_csv(file, rows);
    std::cout << "wrote " << rows.size() << " rows to " << a.out << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Foreground-attentive re-identification network: training and evaluation"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth-gen", "Generate a synthetic re-identification dataset");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--identities", synth.spec.identities, "Number of identities")->capture_default_str();
    s->add_option("--cameras", synth.spec.cameras, "Cameras per identity")->capture_default_str();
    s->add_option("--per-camera", synth.spec.images_per_camera, "Images per identity and camera")
        ->capture_default_str();
    s->add_option("--height", synth.spec.height, "Image height")->capture_default_str();
    s->add_option("--width", synth.spec.width, "Image width")->capture_default_str();
    s->add_option("--seed", synth.spec.seed, "Random seed")->capture_default_str();
    s->add_option("--clutter", synth.spec.clutter, "Background distractors per image")->capture_default_str();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a network on a manifest");
    t->add_option("--config", train.config, "key=value config file")->check(CLI::ExistingFile);
    t->add_option("--preset", train.preset, "Preset used when no config file is given")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    t->add_option("--data", train.data, "Manifest file or dataset directory")->required();
    t->add_option("--iters", train.iters, "Iterations")->required();
    t->add_option("--out", train.out, "Output directory")->required();

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "CMC and mAP of a checkpoint");
    e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
    e->add_option("--data", eval.data, "Manifest file or dataset directory")->required();
    e->add_option("--trials", eval.trials, "Random trials (default from the checkpoint config)");
    e->add_option("--out", eval.out, "Results directory (default <checkpoint>/eval)");
    e->add_option("--seed", eval.seed, "Split seed")->capture_default_str();

    EmbedArgs embed;
    auto* m = app.add_subcommand("embed", "Embed one PPM image");
    m->add_option("--checkpoint", embed.checkpoint, "Checkpoint directory")->required();
    m->add_option("--image", embed.image, "PPM image")->required();
    m->add_option("--out", embed.out, "Output FANT file (default <image>.fant)");

    GradcheckArgs grad;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
    g->add_option("--config", grad.config, "key=value config file")->check(CLI::ExistingFile);
    g->add_option("--preset", grad.preset, "Preset used when no config file is given")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    g->add_option("--seed", grad.seed, "Random seed")->capture_default_str();

    DynamicsArgs dyn;
    auto* d = app.add_subcommand("dynamics", "Trajectory of three points under a triplet loss");
    d->add_option("--loss", dyn.loss, "Triplet loss")
        ->check(CLI::IsMember({"symmetric", "asymmetric"}))
        ->capture_default_str();
    d->add_option("--sign", dyn.sign, "Sign of the weight update")
        ->check(CLI::IsMember({"textual", "literal"}))
        ->capture_default_str();
    d->add_option("--steps", dyn.steps, "Gradient steps")->capture_default_str();
    d->add_option("--out", dyn.out, "CSV file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (s->parsed()) return run_synth(synth);
        if (t->parsed()) return run_train(train);
        if (e->parsed()) return run_eval(eval);
        if (m->parsed()) return run_embed(embed);
        if (g->parsed()) return run_gradcheck(grad);
        if (d->parsed()) return run_dynamics(dyn);
    } catch (const fann::NumericError& err) {
        std::cerr << "numerical failure: " << err.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
