#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "fann/layers.hpp"
#include "fann/tensor.hpp"

namespace fann {

/// Unit-norm embeddings of one triplet: anchor and positive share an
/// identity, the negative does not.
struct TripletFeatures {
    Tensor anchor;
    Tensor positive;
    Tensor negative;
};

struct TripletGradients {
    Tensor anchor;
    Tensor positive;
    Tensor negative;
};

/// ||a - b||^2 with no normalization requirement.
double squared_distance(std::span<const double> a, std::span<const double> b);

/// Squared distance between unit vectors; rejects inputs whose norm is off by more than 1e-6.
double pairwise_distance(const Tensor& a, const Tensor& b);

/// The three pairwise distances of a triplet.
struct TripletDistances {
    double anchor_positive = 0.0;  // d12
    double anchor_negative = 0.0;  // d13
    double positive_negative = 0.0;  // d23
};

TripletDistances triplet_distances(const TripletFeatures& t);

/// Hinge argument T = M + d12 - (u d13 + v d23).
double hinge_argument(const TripletDistances& d, double u, double v, double margin);

double symmetric_triplet_loss(const TripletFeatures& t, double u, double v, double margin);
TripletGradients symmetric_triplet_grad(const TripletFeatures& t, double u, double v, double margin);

enum class SignMode {
    textual,  // beta += gamma * (d23 - d13): u shrinks when d13 > d23
    literal,  // beta -= gamma * (d23 - d13), the update exactly as printed
};

/// Direction-control weights u = alpha + beta, v = alpha - beta of one triplet.
///
/// alpha and beta live on a grid of spacing 2^(ilogb(2 alpha) - 52), which
/// makes both sums exact: u + v == 2 alpha holds bitwise after every update.
class AdaptiveWeightState {
public:
    AdaptiveWeightState() = default;
    static AdaptiveWeightState from_weights(double u, double v, double gamma, SignMode mode = SignMode::textual);

    [[nodiscard]] double alpha() const noexcept { return alpha_; }
    [[nodiscard]] double beta() const noexcept { return beta_; }
    [[nodiscard]] double gamma() const noexcept { return gamma_; }
    [[nodiscard]] SignMode sign_mode() const noexcept { return mode_; }
    [[nodiscard]] double u() const noexcept { return alpha_ + beta_; }
    [[nodiscard]] double v() const noexcept { return alpha_ - beta_; }

    /// One hinge-gated step from precomputed distances. Returns whether the
    /// hinge was active (and the state therefore touched).
    bool step(const TripletDistances& d, double margin);

    friend bool operator==(const AdaptiveWeightState&, const AdaptiveWeightState&) = default;

private:
    void set_beta(double beta);

    double alpha_ = 0.5;
    double beta_ = 0.0;
    double gamma_ = 0.0;
    double grid_ = 0.0;
    SignMode mode_ = SignMode::textual;
};

AdaptiveWeightState update_adaptive_weight(AdaptiveWeightState s, const TripletFeatures& t, double margin);

/// Truncated 2-D Gaussian, (2 floor(rho) + 1)^2 taps.
class GaussianKernel {
public:
    GaussianKernel(double sigma, double rho, bool normalized);

    [[nodiscard]] double sigma() const noexcept { return sigma_; }
    [[nodiscard]] double rho() const noexcept { return rho_; }
    [[nodiscard]] bool normalized() const noexcept { return normalized_; }
    [[nodiscard]] std::size_t radius() const noexcept { return radius_; }
    [[nodiscard]] const Tensor& values() const noexcept { return values_; }
    [[nodiscard]] double at(std::ptrdiff_t dy, std::ptrdiff_t dx) const;

    /// Per-channel zero-padded correlation; output has the input's shape.
    [[nodiscard]] Tensor correlate(const Tensor& x) const;

private:
    double sigma_;
    double rho_;
    bool normalized_;
    std::size_t radius_;
    Tensor values_;
};

/// Raw kernel value 1/(sqrt(2 pi) sigma) exp(-r^2 / (2 sigma^2)).
double gaussian_density(double sigma, double squared_radius);

double local_regression_loss(const Tensor& recon, const Tensor& mask, const GaussianKernel& k);
Tensor local_regression_grad(const Tensor& recon, const Tensor& mask, const GaussianKernel& k);

struct RegularizerTerm {
    double value = 0.0;
    std::vector<Tensor> weight_grads;
    std::vector<Tensor> bias_grads;
};

/// sum ||W||_F^2 + ||b||^2 over all parameter sets, with its gradient 2W, 2b.
RegularizerTerm parameter_regularizer(std::span<const ParamSet> params);
double regularizer_value(std::span<const ParamSet> params);
/// Adds weight * 2 * Omega into every set's gradient accumulators.
void accumulate_regularizer_grad(std::span<ParamSet> params, double weight);

// ---- triplet dynamics in the plane ----

enum class TripletLossKind { asymmetric, symmetric };

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct DynamicsConfig {
    std::array<Point2, 3> init{Point2{-0.5, 0.0}, Point2{0.5, 0.0}, Point2{-0.2, 0.4}};
    TripletLossKind kind = TripletLossKind::symmetric;
    std::size_t steps = 200;
    double step_size = 0.02;
    double margin = 0.1;
    double init_u = 0.6;
    double init_v = 0.4;
    double gamma = 0.01;
    SignMode sign_mode = SignMode::textual;
};

struct DynamicsRow {
    std::size_t step = 0;
    std::array<Point2, 3> points{};
    double d12 = 0.0;
    double d13 = 0.0;
    double d23 = 0.0;
    double u = 0.0;
    double v = 0.0;
    bool hinge_active = false;  // whether the step that produced this row moved the points
};

/// Gradient descent on three free points under the chosen triplet loss.
/// Row 0 is the initial state; row k follows the k-th step.
std::vector<DynamicsRow> simulate_triplet_dynamics(const DynamicsConfig& cfg);

/// `step,x1x,x1y,x2x,x2y,x3x,x3y,d12,d13,d23,u,v`
void write_dynamics_csv(std::ostream& out, const std::vector<DynamicsRow>& rows);

}  // namespace fann
