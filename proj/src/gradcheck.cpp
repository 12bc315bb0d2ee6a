#include "fann/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "fann/dataio.hpp"
#include "fann/error.hpp"
#include "fann/losses.hpp"
#include "fann/trainer.hpp"

namespace fann {

bool GradcheckEntry::passed() const {
    // A handful of kinks is expected from relu and max pooling; more means something is off.
    return checked > 0 && max_rel_error < tolerance && kinks * 20 <= checked + kinks;
}

bool GradcheckReport::passed() const {
    return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

const GradcheckEntry& GradcheckReport::at(const std::string& term) const {
    for (const auto& e : entries) {
        if (e.term == term) return e;
    }
    throw Error("gradcheck: no term " + term);
}

void GradcheckReport::merge(const GradcheckReport& other) {
    for (const auto& o : other.entries) {
        auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.term == o.term; });
        if (it == entries.end()) {
            entries.push_back(o);
            continue;
        }
        it->max_rel_error = std::max(it->max_rel_error, o.max_rel_error);
        it->checked += o.checked;
        it->kinks += o.kinks;
    }
}

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

void check_coordinates(const std::function<double()>& f, std::span<double> x, std::span<const double> analytic,
                       std::span<const std::size_t> indices, const GradcheckOptions& opts, GradcheckEntry& entry) {
    struct Estimate {
        double value;
        double noise;  // bound on the rounding error of the difference quotient
    };
    auto central = [&](std::size_t i, double step) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = f();
        x[i] = saved - step;
        const double down = f();
        x[i] = saved;
        const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down)) /
                             (2.0 * step);
        return Estimate{(up - down) / (2.0 * step), noise};
    };
    // Relative disagreement beyond what rounding alone explains.
    auto mismatch = [&](double a, double b, double noise) {
        return std::max(0.0, std::abs(a - b) - noise) / std::max({std::abs(a), std::abs(b), opts.floor});
    };
    for (auto i : indices) {
        // The smooth range of the objective around x is not known up front (relu
        // kinks, 1/|x| curvature under l2 normalization), so the step shrinks by 10
        // each level. Levels whose estimate agrees with the previous one are
        // trusted; the error is the best match among them.
        Estimate previous = central(i, opts.step);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t level = 1; level < opts.refinements; ++level) {
            const Estimate numeric = central(i, opts.step * std::pow(0.1, static_cast<double>(level)));
            if (mismatch(previous.value, numeric.value, previous.noise + numeric.noise) < 0.1 * entry.tolerance) {
                best = std::min(best, mismatch(analytic[i], numeric.value, numeric.noise));
                if (best < 0.01 * entry.tolerance) break;
            }
            previous = numeric;
        }
        if (!std::isfinite(best)) {
            // No two levels agree; the finest step is the last word.
            const double last = mismatch(analytic[i], previous.value, previous.noise);
            if (last < entry.tolerance) best = last;
        }
        if (!std::isfinite(best)) {
            // Not smooth at any tried scale.
            ++entry.kinks;
            continue;
        }
        entry.max_rel_error = std::max(entry.max_rel_error, best);
        ++entry.checked;
    }
}

namespace {

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (count == 0 || count >= n) return all;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    std::sort(all.begin(), all.end());
    return all;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    Tensor t(shape);
    for (auto& v : t.values()) v = normal(rng);
    return t;
}

GradcheckEntry& add_entry(GradcheckReport& report, const std::string& term, double tolerance) {
    report.entries.push_back(GradcheckEntry{term, 0.0, tolerance, 0, 0});
    return report.entries.back();
}

// f = <r, layer(x)> with random r; checks d/dx and, when present, d/dW and d/db.
void check_layer(GradcheckReport& report, const std::string& name, const LayerSpec& spec, const Shape& input,
                 std::mt19937_64& rng, const GradcheckOptions& opts) {
    Tensor x = random_tensor(input, rng);
    ParamSet p = spec.has_params() ? ParamSet::for_layer(spec) : ParamSet{};
    if (spec.has_params()) {
        for (auto& v : p.weights.values()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
        for (auto& v : p.biases.values()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
    }
    const ParamSet* pp = spec.has_params() ? &p : nullptr;
    const Tensor r = random_tensor(output_shape(spec, input), rng);

    const auto ctx = layer_forward(spec, x, pp);
    ParamSet acc = spec.has_params() ? ParamSet::for_layer(spec) : ParamSet{};
    const Tensor gx = layer_backward(spec, ctx, r, pp, spec.has_params() ? &acc : nullptr);

    auto f = [&] { return dot(r.values(), layer_forward(spec, x, pp).output.values()); };
    auto& entry = add_entry(report, "layer " + name, kTermTolerance);
    check_coordinates(f, x.values(), gx.values(), pick_indices(x.size(), opts.term_coordinates, rng), opts, entry);
    if (spec.has_params()) {
        check_coordinates(f, p.weights.values(), acc.weight_grads.values(),
                          pick_indices(p.weights.size(), opts.term_coordinates, rng), opts, entry);
        check_coordinates(f, p.biases.values(), acc.bias_grads.values(),
                          pick_indices(p.biases.size(), opts.term_coordinates, rng), opts, entry);
    }
}

Tensor random_unit(std::size_t dim, std::mt19937_64& rng) {
    return l2_normalize_forward(random_tensor(Shape{dim}, rng));
}

}  // namespace

GradcheckReport check_terms(const NetworkConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts) {
    std::mt19937_64 rng(seed);
    GradcheckReport report;
    const Network net = Network::build(cfg, seed);
    const auto& shapes = net.shapes();

    // Encoder and decoder stacks at their real input geometry.
    Shape shape = shapes.input;
    for (std::size_t i = 0; i < cfg.encoder.size(); ++i) {
        check_layer(report, "encoder." + std::to_string(i) + " " + to_string(cfg.encoder[i].kind), cfg.encoder[i],
                    shape, rng, opts);
        shape = output_shape(cfg.encoder[i], shape);
    }
    check_layer(report, "encoder.pool", cfg.encoder_pool, shapes.tap, rng, opts);
    shape = shapes.tap;
    for (std::size_t i = 0; i < cfg.decoder.size(); ++i) {
        check_layer(report, "decoder." + std::to_string(i) + " " + to_string(cfg.decoder[i].kind), cfg.decoder[i],
                    shape, rng, opts);
        shape = output_shape(cfg.decoder[i], shape);
    }

    // One part stack at the first slice geometry.
    const Shape slice = shapes.slices.front();
    const auto block_conv1 = LayerSpec::conv(slice[0], cfg.part_channels, {3, 3}, {1, 1}, {1, 1});
    const Shape block_shape = output_shape(block_conv1, slice);
    check_layer(report, "part.conv1", block_conv1, slice, rng, opts);
    check_layer(report, "part.conv2",
                LayerSpec::conv(cfg.part_channels, cfg.part_channels, {3, 3}, {1, 1}, {1, 1}), block_shape, rng,
                opts);
    check_layer(report, "part.relu", LayerSpec::relu(), block_shape, rng, opts);
    check_layer(report, "part.pool", cfg.encoder_pool, block_shape, rng, opts);
    const std::size_t flat = shapes.part_outputs.front().numel();
    check_layer(report, "part.fc_a", LayerSpec::fully_connected(flat, cfg.fc_small_dim), Shape{flat}, rng, opts);
    check_layer(report, "part.fc_b", LayerSpec::fully_connected(cfg.fc_small_dim, cfg.fc_small_dim),
                Shape{cfg.fc_small_dim}, rng, opts);
    const std::size_t fused = cfg.parts * cfg.fc_small_dim;
    check_layer(report, "fusion.fc_large", LayerSpec::fully_connected(fused, cfg.fc_large_dim), Shape{fused}, rng,
                opts);
    check_layer(report, "fusion.l2_normalize", LayerSpec::l2_normalize(), Shape{cfg.embedding_dim()}, rng, opts);

    // Triplet term on unit vectors with an active hinge.
    {
        auto& entry = add_entry(report, "loss L1", kTermTolerance);
        // Steps must stay inside the unit-norm tolerance of the distance.
        GradcheckOptions l1_opts = opts;
        l1_opts.step = std::min(opts.step, 1e-7);
        const std::size_t dim = cfg.embedding_dim();
        for (int attempt = 0; attempt < 100 && entry.checked == 0; ++attempt) {
            TripletFeatures t{random_unit(dim, rng), random_unit(dim, rng), random_unit(dim, rng)};
            const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            const double v = 1.0 - u;
            const double margin = std::max(cfg.margin, 4.5);  // random unit vectors sit near distance 2
            if (hinge_argument(triplet_distances(t), u, v, margin) <= 1e-3) continue;
            const auto g = symmetric_triplet_grad(t, u, v, margin);
            auto f = [&] { return symmetric_triplet_loss(t, u, v, margin); };
            // The loss itself takes no unit-norm constraint, so raw coordinates are checked.
            check_coordinates(f, t.anchor.values(), g.anchor.values(), pick_indices(dim, opts.term_coordinates, rng),
                              l1_opts, entry);
            check_coordinates(f, t.positive.values(), g.positive.values(),
                              pick_indices(dim, opts.term_coordinates, rng), l1_opts, entry);
            check_coordinates(f, t.negative.values(), g.negative.values(),
                              pick_indices(dim, opts.term_coordinates, rng), l1_opts, entry);
        }
    }

    // Regression term, with the configured kernel and with a wide one so neighbours interact.
    for (const double sigma : {cfg.kernel_sigma, 1.0}) {
        const GaussianKernel kernel(sigma, cfg.kernel_rho, cfg.kernel_normalized);
        Tensor recon = random_tensor(shapes.reconstruction, rng);
        Tensor mask(shapes.reconstruction);
        for (auto& v : mask.values()) v = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
        const Tensor g = local_regression_grad(recon, mask, kernel);
        auto f = [&] { return local_regression_loss(recon, mask, kernel); };
        auto& entry = sigma == cfg.kernel_sigma ? add_entry(report, "loss L2", kTermTolerance) : report.entries.back();
        check_coordinates(f, recon.values(), g.values(), pick_indices(recon.size(), opts.term_coordinates, rng), opts,
                          entry);
    }

    // Regularizer over every parameter tensor of a network with random weights.
    {
        auto& entry = add_entry(report, "loss R", kTermTolerance);
        std::vector<ParamSet> params = net.params();
        for (auto& p : params) {
            for (auto& v : p.weights.values()) v = std::normal_distribution<double>(0.0, 0.1)(rng);
            for (auto& v : p.biases.values()) v = std::normal_distribution<double>(0.0, 0.1)(rng);
            p.zero_grads();
        }
        accumulate_regularizer_grad(params, 1.0);
        auto f = [&] { return regularizer_value(params); };
        for (auto& p : params) {
            check_coordinates(f, p.weights.values(), p.weight_grads.values(),
                              pick_indices(p.weights.size(), opts.term_coordinates, rng), opts, entry);
            check_coordinates(f, p.biases.values(), p.bias_grads.values(),
                              pick_indices(p.biases.size(), opts.term_coordinates, rng), opts, entry);
        }
    }
    return report;
}

GradcheckReport check_network(const NetworkConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts) {
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    Network net = Network::build(cfg, seed);
    // Zero biases put every unit fed only by dead inputs exactly on its relu
    // kink, where central differences average the two one-sided slopes.
    std::normal_distribution<double> jitter(0.0, 0.01);
    for (auto& p : net.params()) {
        for (auto& b : p.biases.values()) b = jitter(rng);
    }

    const std::size_t n = std::max<std::size_t>(1, opts.network_triplets);
    std::vector<Sample> data(3 * n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i].image = Tensor(cfg.input_shape());
        for (auto& v : data[i].image.values()) v = unit(rng);
        data[i].mask = Tensor(Shape{1, cfg.input_height, cfg.input_width});
        for (auto& v : data[i].mask.values()) v = unit(rng) < 0.4 ? 1.0 : 0.0;
        data[i].identity = static_cast<int>(i % 3 == 2 ? 1000 + i : i / 3);
    }
    TripletBatch batch;
    std::vector<AdaptiveWeightState> weights;
    for (std::size_t i = 0; i < n; ++i) {
        batch.triplets.push_back({3 * i, 3 * i + 1, 3 * i + 2});
        const double u = unit(rng);
        weights.push_back(AdaptiveWeightState::from_weights(u, 1.0 - u, cfg.gamma, cfg.sign_mode));
    }

    // Fresh networks embed everything close together, so every hinge starts active.
    objective_gradient(net, data, batch, weights);
    std::vector<ParamSet> analytic = net.params();

    GradcheckOptions net_opts = opts;
    net_opts.step = opts.network_step;
    GradcheckReport report;
    auto& entry = add_entry(report, "network E", kNetworkTolerance);
    auto f = [&] { return batch_objective(net, data, batch, weights).objective; };
    auto& params = net.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
        check_coordinates(f, params[p].weights.values(), analytic[p].weight_grads.values(),
                          pick_indices(params[p].weights.size(), net_opts.network_coordinates, rng), net_opts, entry);
        check_coordinates(f, params[p].biases.values(), analytic[p].bias_grads.values(),
                          pick_indices(params[p].biases.size(), net_opts.network_coordinates, rng), net_opts, entry);
    }
    return report;
}

GradcheckReport run_gradcheck(const NetworkConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts) {
    auto report = check_terms(cfg, seed, opts);
    report.merge(check_network(cfg, seed, opts));
    return report;
}

void print_report(std::ostream& out, const GradcheckReport& report) {
    char line[256];
    for (const auto& e : report.entries) {
        std::snprintf(line, sizeof line, "%-36s max_rel_error=%.3e tol=%.0e checked=%zu kinks=%zu %s\n",
                      e.term.c_str(), e.max_rel_error, e.tolerance, e.checked, e.kinks, e.passed() ? "ok" : "FAIL");
        out << line;
    }
}

}  // namespace fann
