#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "fann/dataio.hpp"
#include "fann/network.hpp"
#include "fann/tensor.hpp"

namespace fann {

/// Row-major probes x gallery matrix of squared Euclidean distances.
struct DistanceMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
    [[nodiscard]] std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values).subspan(i * cols, cols);
    }
};

DistanceMatrix distance_matrix(std::span<const Tensor> probes, std::span<const Tensor> gallery);

/// Gallery order for one row: ascending distance, ties by gallery index.
std::vector<std::size_t> rank_gallery(std::span<const double> row);

/// cmc[n-1] = fraction of probes whose first correct match is within the top n.
std::vector<double> cmc(const DistanceMatrix& dist, std::span<const int> probe_ids, std::span<const int> gallery_ids,
                        std::size_t max_rank);

double average_precision(std::span<const double> row, int probe_id, std::span<const int> gallery_ids);
double mean_average_precision(const DistanceMatrix& dist, std::span<const int> probe_ids,
                              std::span<const int> gallery_ids);

struct SplitSpec {
    int probe_camera = 0;
    int gallery_camera = 1;
    std::size_t identities = 0;  // identities drawn per trial, 0 = every eligible one
    bool multi_shot = false;     // all gallery-camera images instead of one per identity
    std::size_t max_rank = 20;
};

struct TrialResult {
    DistanceMatrix distances;
    std::vector<int> probe_ids;
    std::vector<int> gallery_ids;
    std::vector<double> cmc;
    double map = 0.0;
};

struct RankingResult {
    std::vector<double> cmc;  // mean over trials
    double map = 0.0;
    std::size_t trials = 0;
    std::vector<TrialResult> per_trial;
};

/// A single trial on an explicit probe/gallery split.
TrialResult evaluate_split(std::span<const Tensor> probes, std::span<const int> probe_ids,
                           std::span<const Tensor> gallery, std::span<const int> gallery_ids, std::size_t max_rank);

/// Random probe/gallery splits over precomputed embeddings, one per manifest entry.
RankingResult evaluate_embeddings(std::span<const Tensor> embeddings, std::span<const ManifestEntry> entries,
                                  const SplitSpec& split, std::size_t trials, std::mt19937_64& rng);

/// Embeds every sample with `net` then calls evaluate_embeddings.
RankingResult evaluate_protocol(const Network& net, std::span<const Sample> data,
                                std::span<const ManifestEntry> entries, const SplitSpec& split, std::size_t trials,
                                std::mt19937_64& rng);

std::vector<Tensor> embed_all(const Network& net, std::span<const Sample> data);

/// `rank,cmc` rows then a `map=<value>` line.
void write_ranking_csv(std::ostream& out, std::span<const double> cmc, double map);
/// trial_NN.csv per trial plus mean.csv.
void write_ranking_results(const std::filesystem::path& dir, const RankingResult& result);

}  // namespace fann
