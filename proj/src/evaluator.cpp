#include "fann/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

#include "fann/error.hpp"
#include "fann/losses.hpp"
#include "fann/parallel.hpp"

namespace fann {

DistanceMatrix distance_matrix(std::span<const Tensor> probes, std::span<const Tensor> gallery) {
    DistanceMatrix d{probes.size(), gallery.size(), std::vector<double>(probes.size() * gallery.size())};
    for (std::size_t i = 0; i < probes.size(); ++i) {
        for (std::size_t j = 0; j < gallery.size(); ++j) {
            if (probes[i].size() != gallery[j].size()) {
                throw ShapeError("distance_matrix: probe " + std::to_string(i) + " has dimension " +
                                 std::to_string(probes[i].size()) + ", gallery " + std::to_string(j) + " has " +
                                 std::to_string(gallery[j].size()));
            }
            d.values[i * d.cols + j] = squared_distance(probes[i].values(), gallery[j].values());
        }
    }
    return d;
}

std::vector<std::size_t> rank_gallery(std::span<const double> row) {
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    return order;
}

namespace {

void check_ids(const DistanceMatrix& dist, std::span<const int> probe_ids, std::span<const int> gallery_ids) {
    if (probe_ids.size() != dist.rows || gallery_ids.size() != dist.cols) {
        throw ShapeError("ranking: identity lists do not match the distance matrix");
    }
    for (std::size_t i = 0; i < probe_ids.size(); ++i) {
        if (std::find(gallery_ids.begin(), gallery_ids.end(), probe_ids[i]) == gallery_ids.end()) {
            throw Error("ranking: probe " + std::to_string(i) + " (identity " + std::to_string(probe_ids[i]) +
                        ") has no gallery match");
        }
    }
}

}  // namespace

std::vector<double> cmc(const DistanceMatrix& dist, std::span<const int> probe_ids, std::span<const int> gallery_ids,
                        std::size_t max_rank) {
    if (max_rank == 0) throw Error("cmc: max_rank must be positive");
    check_ids(dist, probe_ids, gallery_ids);
    std::vector<double> hits(max_rank, 0.0);
    for (std::size_t i = 0; i < dist.rows; ++i) {
        const auto row = dist.row(i);
        // Rank of the best match: entries strictly closer, or equal and earlier.
        std::size_t best = dist.cols;
        for (std::size_t j = 0; j < dist.cols; ++j) {
            if (gallery_ids[j] != probe_ids[i]) continue;
            if (best == dist.cols || row[j] < row[best]) best = j;
        }
        std::size_t rank = 0;
        for (std::size_t j = 0; j < dist.cols; ++j) {
            if (row[j] < row[best] || (row[j] == row[best] && j < best)) ++rank;
        }
        for (std::size_t n = rank; n < max_rank; ++n) hits[n] += 1.0;
    }
    for (auto& h : hits) h /= static_cast<double>(dist.rows);
    return hits;
}

double average_precision(std::span<const double> row, int probe_id, std::span<const int> gallery_ids) {
    const auto order = rank_gallery(row);
    double sum = 0.0;
    std::size_t found = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (gallery_ids[order[k]] != probe_id) continue;
        ++found;
        sum += static_cast<double>(found) / static_cast<double>(k + 1);
    }
    if (found == 0) throw Error("average_precision: identity " + std::to_string(probe_id) + " has no gallery match");
    return sum / static_cast<double>(found);
}

double mean_average_precision(const DistanceMatrix& dist, std::span<const int> probe_ids,
                              std::span<const int> gallery_ids) {
    check_ids(dist, probe_ids, gallery_ids);
    if (dist.rows == 0) throw Error("mean_average_precision: no probes");
    double total = 0.0;
    for (std::size_t i = 0; i < dist.rows; ++i) total += average_precision(dist.row(i), probe_ids[i], gallery_ids);
    return total / static_cast<double>(dist.rows);
}

TrialResult evaluate_split(std::span<const Tensor> probes, std::span<const int> probe_ids,
                           std::span<const Tensor> gallery, std::span<const int> gallery_ids, std::size_t max_rank) {
    TrialResult r;
    r.distances = distance_matrix(probes, gallery);
    r.probe_ids.assign(probe_ids.begin(), probe_ids.end());
    r.gallery_ids.assign(gallery_ids.begin(), gallery_ids.end());
    r.cmc = cmc(r.distances, probe_ids, gallery_ids, max_rank);
    r.map = mean_average_precision(r.distances, probe_ids, gallery_ids);
    return r;
}

RankingResult evaluate_embeddings(std::span<const Tensor> embeddings, std::span<const ManifestEntry> entries,
                                  const SplitSpec& split, std::size_t trials, std::mt19937_64& rng) {
    if (embeddings.size() != entries.size()) throw ShapeError("evaluate: one embedding per manifest entry");
    if (trials == 0) throw Error("evaluate: trials must be positive");
    if (split.probe_camera == split.gallery_camera) throw Error("evaluate: probe and gallery cameras must differ");

    std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_id;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].camera == split.probe_camera) by_id[entries[i].identity].first.push_back(i);
        if (entries[i].camera == split.gallery_camera) by_id[entries[i].identity].second.push_back(i);
    }
    std::vector<int> eligible;
    for (const auto& [id, lists] : by_id) {
        if (!lists.first.empty() && !lists.second.empty()) eligible.push_back(id);
    }
    const std::size_t wanted = split.identities == 0 ? eligible.size() : split.identities;
    if (eligible.size() < 2 || wanted < 2 || wanted > eligible.size()) {
        throw Error("evaluate: " + std::to_string(eligible.size()) + " identities appear in both cameras, " +
                    std::to_string(wanted) + " requested (need at least 2)");
    }

    auto pick = [&rng](const std::vector<std::size_t>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };

    RankingResult result;
    result.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
        std::vector<int> ids = eligible;
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(wanted);
        std::sort(ids.begin(), ids.end());

        std::vector<Tensor> probes, gallery;
        std::vector<int> probe_ids, gallery_ids;
        for (int id : ids) {
            const auto& [probe_list, gallery_list] = by_id.at(id);
            if (split.multi_shot) {
                for (auto i : probe_list) {
                    probes.push_back(embeddings[i]);
                    probe_ids.push_back(id);
                }
                for (auto i : gallery_list) {
                    gallery.push_back(embeddings[i]);
                    gallery_ids.push_back(id);
                }
            } else {
                probes.push_back(embeddings[pick(probe_list)]);
                probe_ids.push_back(id);
                gallery.push_back(embeddings[pick(gallery_list)]);
                gallery_ids.push_back(id);
            }
        }
        result.per_trial.push_back(evaluate_split(probes, probe_ids, gallery, gallery_ids, split.max_rank));
    }

    result.cmc.assign(split.max_rank, 0.0);
    for (const auto& tr : result.per_trial) {
        for (std::size_t n = 0; n < split.max_rank; ++n) result.cmc[n] += tr.cmc[n];
        result.map += tr.map;
    }
    for (auto& c : result.cmc) c /= static_cast<double>(trials);
    result.map /= static_cast<double>(trials);
    return result;
}

std::vector<Tensor> embed_all(const Network& net, std::span<const Sample> data) {
    std::vector<Tensor> out(data.size());
    parallel_for(data.size(), [&](std::size_t i) { out[i] = net.embed(data[i].image); });
    return out;
}

RankingResult evaluate_protocol(const Network& net, std::span<const Sample> data,
                                std::span<const ManifestEntry> entries, const SplitSpec& split, std::size_t trials,
                                std::mt19937_64& rng) {
    const auto embeddings = embed_all(net, data);
    return evaluate_embeddings(embeddings, entries, split, trials, rng);
}

void write_ranking_csv(std::ostream& out, std::span<const double> cmc_values, double map) {
    char buf[64];
    out << "rank,cmc\n";
    for (std::size_t n = 0; n < cmc_values.size(); ++n) {
        std::snprintf(buf, sizeof buf, "%.17g", cmc_values[n]);
        out << n + 1 << ',' << buf << '\n';
    }
    std::snprintf(buf, sizeof buf, "%.17g", map);
    out << "map=" << buf << '\n';
}

void write_ranking_results(const std::filesystem::path& dir, const RankingResult& result) {
    std::filesystem::create_directories(dir);
    auto write = [](const std::filesystem::path& file, std::span<const double> c, double m) {
        std::ofstream out(file, std::ios::trunc);
        if (!out) throw FormatError("cannot write " + file.string());
        write_ranking_csv(out, c, m);
    };
    for (std::size_t t = 0; t < result.per_trial.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "trial_%02zu.csv", t + 1);
        write(dir / name, result.per_trial[t].cmc, result.per_trial[t].map);
    }
    write(dir / "mean.csv", result.cmc, result.map);
}

}  // namespace fann
