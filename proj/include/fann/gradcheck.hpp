#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fann/network.hpp"

namespace fann {

inline constexpr double kTermTolerance = 1e-4;     // single layers and loss terms
inline constexpr double kNetworkTolerance = 1e-3;  // whole objective through the network

struct GradcheckOptions {
    double step = 1e-5;          // layers and loss terms
    double network_step = 1e-4;  // whole objective
    /// Step sizes tried per coordinate: step, step/10, ... Fresh networks embed
    /// everything at a tiny pre-normalization scale, so late biases need very small steps.
    std::size_t refinements = 7;
    /// Gradients smaller than this are compared in absolute terms.
    double floor = 1e-6;
    /// Coordinates sampled per parameter tensor for the whole-network check; 0 checks all.
    std::size_t network_coordinates = 4;
    std::size_t network_triplets = 2;
    /// Coordinates per tensor for the layer and loss checks; 0 checks all.
    std::size_t term_coordinates = 200;
};

struct GradcheckEntry {
    std::string term;
    double max_rel_error = 0.0;
    double tolerance = kTermTolerance;
    std::size_t checked = 0;
    std::size_t kinks = 0;  // coordinates skipped because f is not smooth within the step

    [[nodiscard]] bool passed() const;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;

    [[nodiscard]] bool passed() const;
    [[nodiscard]] const GradcheckEntry& at(const std::string& term) const;
    void merge(const GradcheckReport& other);
};

double relative_error(double analytic, double numeric, double floor);

/// Compares analytic[i] with central differences of f over x[i] for each index.
/// x is restored afterwards.
void check_coordinates(const std::function<double()>& f, std::span<double> x, std::span<const double> analytic,
                       std::span<const std::size_t> indices, const GradcheckOptions& opts, GradcheckEntry& entry);

/// Every distinct layer of `cfg` plus the triplet, regression and regularizer terms.
GradcheckReport check_terms(const NetworkConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts = {});
/// The whole objective on random images, through every parameter tensor of the network.
GradcheckReport check_network(const NetworkConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts = {});
GradcheckReport run_gradcheck(const NetworkConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts = {});

void print_report(std::ostream& out, const GradcheckReport& report);

}  // namespace fann
