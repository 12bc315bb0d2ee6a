#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "fann/config.hpp"
#include "fann/dataio.hpp"
#include "fann/losses.hpp"
#include "fann/network.hpp"

namespace fann {

/// Indices into a sample list: anchor and positive share an identity, the negative does not.
struct Triplet {
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;

    [[nodiscard]] auto key() const { return std::tuple(anchor, positive, negative); }
    friend bool operator==(const Triplet&, const Triplet&) = default;
    friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

struct TripletBatch {
    std::vector<Triplet> triplets;
    [[nodiscard]] std::size_t batch_size() const noexcept { return triplets.size(); }
};

/// Uniform identity, then two distinct images of it (different cameras when
/// the identity has more than one), then a uniformly drawn image of another identity.
class TripletSampler {
public:
    explicit TripletSampler(std::span<const ManifestEntry> entries);

    [[nodiscard]] TripletBatch sample(std::size_t batch_size, std::mt19937_64& rng) const;
    /// Identities dropped for having fewer than two images.
    [[nodiscard]] const std::vector<int>& skipped_identities() const noexcept { return skipped_; }

private:
    std::vector<int> identities_;                    // feasible identities
    std::map<int, std::vector<std::size_t>> images_;  // identity -> entry indices
    std::vector<int> cameras_;                       // camera of each entry
    std::vector<int> skipped_;
    std::size_t total_ = 0;
};

TripletBatch sample_triplets(std::span<const ManifestEntry> entries, std::size_t batch_size, std::mt19937_64& rng);

struct MetricsRow {
    std::size_t iteration = 0;
    double objective = 0.0;   // E = mean(L1 + zeta L2) + eta R / batch size
    double triplet = 0.0;     // mean L1
    double regression = 0.0;  // mean L2
    double regularizer = 0.0; // R
    double mean_u = 0.0;
    double mean_v = 0.0;
    double learning_rate = 0.0;
};

struct TrainState {
    std::size_t iteration = 0;
    double learning_rate = 0.01;
    std::map<Triplet, AdaptiveWeightState> weights;
    std::mt19937_64 rng;
    std::vector<MetricsRow> log;

    static TrainState initial(const RunConfig& cfg);
    /// tau_0 * decay^floor(h / interval).
    [[nodiscard]] static double scheduled_rate(const TrainerConfig& cfg, std::size_t iteration);
};

struct StepLosses {
    double objective = 0.0;
    double triplet = 0.0;
    double regression = 0.0;
    double regularizer = 0.0;
    double mean_abs_d13_d23 = 0.0;  // batch mean |d13 - d23| before the update
};

/// Current weights of a triplet, from the map or the configured initial values.
AdaptiveWeightState weight_state_for(const TrainState& state, const Triplet& t, const NetworkConfig& cfg);

/// E on a batch of n triplets, (sum_i (L1_i + zeta L2_i) + eta R) / n, for fixed
/// per-triplet weights (u, v). Pure: nothing is updated.
StepLosses batch_objective(const Network& net, std::span<const Sample> data, const TripletBatch& batch,
                           std::span<const AdaptiveWeightState> weights);

/// Losses for fixed weights; leaves dE/dOmega in the network's gradient
/// buffers without stepping.
StepLosses objective_gradient(Network& net, std::span<const Sample> data, const TripletBatch& batch,
                              std::span<const AdaptiveWeightState> weights);

/// Forward, adaptive weight updates, gradients of the three terms, and one SGD step.
StepLosses train_step(Network& net, std::span<const Sample> data, const TripletBatch& batch, TrainState& state,
                      const RunConfig& cfg);

struct TrainOptions {
    std::filesystem::path out_dir;  // empty: no files written
    std::function<void(const MetricsRow&)> on_log;
};

/// Runs `iterations` steps; logs at every multiple of log_interval below
/// `iterations` and once at the end.
TrainState train(Network& net, std::span<const Sample> data, std::span<const ManifestEntry> entries,
                 const RunConfig& cfg, std::size_t iterations, const TrainOptions& options = {});

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);

}  // namespace fann
