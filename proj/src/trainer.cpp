#include "fann/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <ostream>

#include "fann/checkpoint.hpp"
#include "fann/error.hpp"
#include "fann/parallel.hpp"

namespace fann {

namespace fs = std::filesystem;

// ---- sampling ----

TripletSampler::TripletSampler(std::span<const ManifestEntry> entries) : total_(entries.size()) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        images_[entries[i].identity].push_back(i);
        cameras_.push_back(entries[i].camera);
    }
    for (const auto& [id, imgs] : images_) {
        if (imgs.size() >= 2) {
            identities_.push_back(id);
        } else {
            skipped_.push_back(id);
        }
    }
    if (identities_.empty() || images_.size() < 2) {
        throw FormatError("triplet sampler: need an identity with two images and a second identity");
    }
}

TripletBatch TripletSampler::sample(std::size_t batch_size, std::mt19937_64& rng) const {
    auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    TripletBatch batch;
    batch.triplets.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const int id = identities_[pick(identities_.size())];
        const auto& imgs = images_.at(id);
        const std::size_t anchor = imgs[pick(imgs.size())];

        std::vector<std::size_t> cross, same;
        for (auto i : imgs) {
            if (i == anchor) continue;
            (cameras_[i] != cameras_[anchor] ? cross : same).push_back(i);
        }
        const auto& pool = cross.empty() ? same : cross;
        const std::size_t positive = pool[pick(pool.size())];

        const std::size_t others = total_ - imgs.size();
        std::size_t k = pick(others);
        std::size_t negative = 0;
        for (const auto& [other, other_imgs] : images_) {
            if (other == id) continue;
            if (k < other_imgs.size()) {
                negative = other_imgs[k];
                break;
            }
            k -= other_imgs.size();
        }
        batch.triplets.push_back({anchor, positive, negative});
    }
    return batch;
}

TripletBatch sample_triplets(std::span<const ManifestEntry> entries, std::size_t batch_size, std::mt19937_64& rng) {
    TripletSampler sampler(entries);
    for (int id : sampler.skipped_identities()) {
        std::cerr << "warning: identity " << id << " has fewer than two images; skipped\n";
    }
    return sampler.sample(batch_size, rng);
}

// ---- state ----

TrainState TrainState::initial(const RunConfig& cfg) {
    TrainState s;
    s.learning_rate = scheduled_rate(cfg.trainer, 0);
    s.rng.seed(cfg.net.seed);
    return s;
}

double TrainState::scheduled_rate(const TrainerConfig& cfg, std::size_t iteration) {
    if (cfg.lr_decay_interval == 0) return cfg.learning_rate;
    return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(iteration / cfg.lr_decay_interval));
}

AdaptiveWeightState weight_state_for(const TrainState& state, const Triplet& t, const NetworkConfig& cfg) {
    if (cfg.loss_kind == TripletLossKind::asymmetric) return AdaptiveWeightState::from_weights(1.0, 0.0, 0.0);
    if (const auto it = state.weights.find(t); it != state.weights.end()) return it->second;
    return AdaptiveWeightState::from_weights(cfg.init_u, cfg.init_v, cfg.gamma, cfg.sign_mode);
}

// ---- objective ----

namespace {

Tensor replicate_mask(const Tensor& mask, std::size_t channels) {
    const auto plane = mask.size();
    Tensor out(Shape{channels, mask.shape()[1], mask.shape()[2]});
    for (std::size_t c = 0; c < channels; ++c) std::copy_n(mask.data(), plane, out.data() + c * plane);
    return out;
}

std::vector<ForwardTrace> forward_batch(const Network& net, std::span<const Sample> data, const TripletBatch& batch,
                                        bool with_reconstruction) {
    std::vector<ForwardTrace> traces(3 * batch.batch_size());
    parallel_for(traces.size(), [&](std::size_t k) {
        const auto& t = batch.triplets[k / 3];
        const std::size_t idx = k % 3 == 0 ? t.anchor : (k % 3 == 1 ? t.positive : t.negative);
        traces[k] = net.forward(data[idx].image, with_reconstruction);
    });
    return traces;
}

TripletFeatures features_of(const std::vector<ForwardTrace>& traces, std::size_t i) {
    return {traces[3 * i].ranking_embedding, traces[3 * i + 1].ranking_embedding,
            traces[3 * i + 2].ranking_embedding};
}

std::size_t sample_of(const Triplet& t, std::size_t k) {
    return k == 0 ? t.anchor : (k == 1 ? t.positive : t.negative);
}

void require_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term);
}

// Losses and parameter gradients of the batch objective for fixed weights.
void accumulate_gradient(Network& net, std::span<const Sample> data, const TripletBatch& batch,
                         const std::vector<ForwardTrace>& traces, std::span<const AdaptiveWeightState> weights,
                         StepLosses& out) {
    const auto& cfg = net.config();
    const std::size_t n = batch.batch_size();
    const bool with_rec = cfg.zeta != 0.0;
    const GaussianKernel kernel(cfg.kernel_sigma, cfg.kernel_rho, cfg.kernel_normalized);
    std::vector<std::vector<ParamSet>> buffers(n);
    std::vector<double> l1(n, 0.0), l2(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        buffers[i] = net.gradient_buffers();
        const auto f = features_of(traces, i);
        const double u = weights[i].u(), v = weights[i].v();
        l1[i] = symmetric_triplet_loss(f, u, v, cfg.margin);
        const auto g = symmetric_triplet_grad(f, u, v, cfg.margin);
        const Tensor* grads[3] = {&g.anchor, &g.positive, &g.negative};
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& trace = traces[3 * i + k];
            if (with_rec) {
                const auto target = replicate_mask(data[sample_of(batch.triplets[i], k)].mask,
                                                   trace.reconstruction.shape()[0]);
                l2[i] += local_regression_loss(trace.reconstruction, target, kernel);
                const Tensor g_rec = scale(local_regression_grad(trace.reconstruction, target, kernel), cfg.zeta);
                net.backward(trace, grads[k], &g_rec, buffers[i]);
            } else {
                net.backward(trace, grads[k], nullptr, buffers[i]);
            }
        }
    });

    for (std::size_t i = 0; i < n; ++i) {
        out.triplet += l1[i];
        out.regression += l2[i];
    }
    out.triplet /= static_cast<double>(n);
    out.regression /= static_cast<double>(n);
    out.regularizer = regularizer_value(net.params());
    out.objective = out.triplet + cfg.zeta * out.regression + cfg.eta * out.regularizer / static_cast<double>(n);
    require_finite(out.triplet, "triplet loss");
    require_finite(out.regression, "regression loss");
    require_finite(out.regularizer, "regularizer");

    // Sum over triplets, add 2 eta Omega, then average: the gradient of the batch objective.
    auto& params = net.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
        params[p].zero_grads();
        for (std::size_t i = 0; i < n; ++i) {
            axpy(1.0, buffers[i][p].weight_grads, params[p].weight_grads);
            axpy(1.0, buffers[i][p].bias_grads, params[p].bias_grads);
        }
    }
    accumulate_regularizer_grad(params, cfg.eta);
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& p : params) {
        for (auto& g : p.weight_grads.values()) g *= inv;
        for (auto& g : p.bias_grads.values()) g *= inv;
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!all_finite(params[p].weight_grads) || !all_finite(params[p].bias_grads)) {
            throw NumericError("non-finite gradient in " + net.param_names()[p]);
        }
    }
}

}  // namespace

StepLosses objective_gradient(Network& net, std::span<const Sample> data, const TripletBatch& batch,
                              std::span<const AdaptiveWeightState> weights) {
    if (batch.batch_size() == 0) throw ShapeError("objective_gradient: empty batch");
    if (weights.size() != batch.batch_size()) throw ShapeError("objective_gradient: one weight state per triplet");
    const auto traces = forward_batch(net, data, batch, net.config().zeta != 0.0);
    StepLosses out;
    for (std::size_t i = 0; i < batch.batch_size(); ++i) {
        const auto d = triplet_distances(features_of(traces, i));
        out.mean_abs_d13_d23 += std::abs(d.anchor_negative - d.positive_negative);
    }
    out.mean_abs_d13_d23 /= static_cast<double>(batch.batch_size());
    accumulate_gradient(net, data, batch, traces, weights, out);
    return out;
}

StepLosses batch_objective(const Network& net, std::span<const Sample> data, const TripletBatch& batch,
                           std::span<const AdaptiveWeightState> weights) {
    const auto& cfg = net.config();
    if (weights.size() != batch.batch_size()) throw ShapeError("batch_objective: one weight state per triplet");
    const bool with_rec = cfg.zeta != 0.0;
    const auto traces = forward_batch(net, data, batch, with_rec);
    const GaussianKernel kernel(cfg.kernel_sigma, cfg.kernel_rho, cfg.kernel_normalized);
    StepLosses out;
    for (std::size_t i = 0; i < batch.batch_size(); ++i) {
        const auto f = features_of(traces, i);
        out.triplet += symmetric_triplet_loss(f, weights[i].u(), weights[i].v(), cfg.margin);
        const auto d = triplet_distances(f);
        out.mean_abs_d13_d23 += std::abs(d.anchor_negative - d.positive_negative);
        if (with_rec) {
            for (std::size_t k = 0; k < 3; ++k) {
                const auto& trace = traces[3 * i + k];
                const auto target = replicate_mask(data[sample_of(batch.triplets[i], k)].mask,
                                                   trace.reconstruction.shape()[0]);
                out.regression += local_regression_loss(trace.reconstruction, target, kernel);
            }
        }
    }
    const auto n = static_cast<double>(batch.batch_size());
    out.triplet /= n;
    out.regression /= n;
    out.mean_abs_d13_d23 /= n;
    out.regularizer = regularizer_value(net.params());
    out.objective = out.triplet + cfg.zeta * out.regression + cfg.eta * out.regularizer / n;
    return out;
}

StepLosses train_step(Network& net, std::span<const Sample> data, const TripletBatch& batch, TrainState& state,
                      const RunConfig& run) {
    const auto& cfg = net.config();
    const std::size_t n = batch.batch_size();
    if (n == 0) throw ShapeError("train_step: empty batch");
    const bool with_rec = cfg.zeta != 0.0;
    const auto traces = forward_batch(net, data, batch, with_rec);

    // Weight updates are applied in triplet order so repeated keys see each other.
    StepLosses out;
    std::vector<AdaptiveWeightState> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = batch.triplets[i];
        auto w = weight_state_for(state, t, cfg);
        const auto d = triplet_distances(features_of(traces, i));
        out.mean_abs_d13_d23 += std::abs(d.anchor_negative - d.positive_negative);
        if (cfg.loss_kind == TripletLossKind::symmetric) {
            w.step(d, cfg.margin);
            state.weights[t] = w;
        }
        weights[i] = w;
    }
    out.mean_abs_d13_d23 /= static_cast<double>(n);

    accumulate_gradient(net, data, batch, traces, weights, out);
    auto& params = net.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
        axpy(-state.learning_rate, params[p].weight_grads, params[p].weights);
        axpy(-state.learning_rate, params[p].bias_grads, params[p].biases);
    }

    ++state.iteration;
    state.learning_rate = TrainState::scheduled_rate(run.trainer, state.iteration);
    return out;
}

// ---- outer loop ----

namespace {

MetricsRow monitor(const Network& net, std::span<const Sample> data, const TripletBatch& batch,
                   const TrainState& state) {
    std::vector<AdaptiveWeightState> weights;
    weights.reserve(batch.batch_size());
    for (const auto& t : batch.triplets) weights.push_back(weight_state_for(state, t, net.config()));
    const auto losses = batch_objective(net, data, batch, weights);

    MetricsRow row;
    row.iteration = state.iteration;
    row.objective = losses.objective;
    row.triplet = losses.triplet;
    row.regression = losses.regression;
    row.regularizer = losses.regularizer;
    row.learning_rate = state.learning_rate;
    if (state.weights.empty()) {
        const auto w = weight_state_for(state, Triplet{}, net.config());
        row.mean_u = w.u();
        row.mean_v = w.v();
    } else {
        for (const auto& [key, w] : state.weights) row.mean_u += w.u();
        row.mean_u /= static_cast<double>(state.weights.size());
        // Each u + v is exactly 1, so the means are complementary.
        row.mean_v = 1.0 - row.mean_u;
    }
    return row;
}

void write_state(const fs::path& file, const TrainState& state) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + file.string());
    out.precision(17);
    out << "iteration = " << state.iteration << '\n';
    out << "learning_rate = " << state.learning_rate << '\n';
    out << "weight_states = " << state.weights.size() << '\n';
    out << "rng = " << state.rng << '\n';
    if (!state.log.empty()) {
        const auto& m = state.log.back();
        out << "metrics = " << m.iteration << ',' << m.objective << ',' << m.triplet << ',' << m.regression << ','
            << m.regularizer << ',' << m.mean_u << ',' << m.mean_v << ',' << m.learning_rate << '\n';
    }
}

void write_outputs(const fs::path& dir, const Network& net, const RunConfig& cfg, const TrainState& state) {
    save_checkpoint(dir, net, cfg);
    write_state(dir / "state.txt", state);
}

}  // namespace

TrainState train(Network& net, std::span<const Sample> data, std::span<const ManifestEntry> entries,
                 const RunConfig& cfg, std::size_t iterations, const TrainOptions& options) {
    if (data.size() != entries.size()) throw ShapeError("train: samples and manifest entries differ in count");
    TrainState state = TrainState::initial(cfg);
    TripletSampler sampler(entries);
    for (int id : sampler.skipped_identities()) {
        std::cerr << "warning: identity " << id << " has fewer than two images; skipped\n";
    }
    std::mt19937_64 monitor_rng(cfg.net.seed ^ 0x9e3779b97f4a7c15ULL);
    const auto monitor_batch = sampler.sample(std::max<std::size_t>(1, cfg.trainer.monitor_batch), monitor_rng);
    const std::size_t log_every = std::max<std::size_t>(1, cfg.trainer.log_interval);

    auto log_now = [&] {
        state.log.push_back(monitor(net, data, monitor_batch, state));
        if (options.on_log) options.on_log(state.log.back());
    };

    while (state.iteration < iterations) {
        if (state.iteration % log_every == 0) log_now();
        const auto batch = sampler.sample(cfg.trainer.batch_size, state.rng);
        train_step(net, data, batch, state, cfg);
        if (!options.out_dir.empty() && cfg.trainer.checkpoint_interval > 0 &&
            state.iteration % cfg.trainer.checkpoint_interval == 0 && state.iteration < iterations) {
            write_outputs(options.out_dir / ("checkpoint_" + std::to_string(state.iteration)), net, cfg, state);
        }
    }
    log_now();

    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        std::ofstream metrics(options.out_dir / "metrics.csv", std::ios::trunc);
        if (!metrics) throw FormatError("cannot write metrics.csv");
        write_metrics_csv(metrics, state.log);
        write_outputs(options.out_dir / "checkpoint", net, cfg, state);
    }
    return state;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
    out << "iter,E,L1,L2,R,mean_u,mean_v,lr\n";
    const auto old = out.precision(17);
    for (const auto& r : rows) {
        out << r.iteration << ',' << r.objective << ',' << r.triplet << ',' << r.regression << ',' << r.regularizer
            << ',' << r.mean_u << ',' << r.mean_v << ',' << r.learning_rate << '\n';
    }
    out.precision(old);
}

}  // namespace fann
