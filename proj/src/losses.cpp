#include "fann/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "fann/error.hpp"

namespace fann {

namespace {

constexpr double kUnitTolerance = 1e-6;

void require_unit(const Tensor& f, const char* name) {
    const double norm = std::sqrt(reduce(ReduceOp::sum_of_squares, f));
    if (std::abs(norm - 1.0) > kUnitTolerance) {
        throw NumericError(std::string("pairwise_distance: ") + name + " has norm " + std::to_string(norm) +
                           ", expected a unit vector");
    }
}

void require_nonnegative_weights(double u, double v, double margin) {
    if (u < 0.0 || v < 0.0) throw NumericError("triplet loss: weights u, v must be nonnegative");
    if (!(margin > 0.0)) throw NumericError("triplet loss: margin must be positive");
}

double snap(double value, double grid) { return std::nearbyint(value / grid) * grid; }

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("squared_distance: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double pairwise_distance(const Tensor& a, const Tensor& b) {
    require_unit(a, "first vector");
    require_unit(b, "second vector");
    return squared_distance(a.values(), b.values());
}

TripletDistances triplet_distances(const TripletFeatures& t) {
    return {pairwise_distance(t.anchor, t.positive), pairwise_distance(t.anchor, t.negative),
            pairwise_distance(t.positive, t.negative)};
}

double hinge_argument(const TripletDistances& d, double u, double v, double margin) {
    return margin + d.anchor_positive - (u * d.anchor_negative + v * d.positive_negative);
}

double symmetric_triplet_loss(const TripletFeatures& t, double u, double v, double margin) {
    require_nonnegative_weights(u, v, margin);
    return std::max(hinge_argument(triplet_distances(t), u, v, margin), 0.0);
}

TripletGradients symmetric_triplet_grad(const TripletFeatures& t, double u, double v, double margin) {
    require_nonnegative_weights(u, v, margin);
    const auto& f1 = t.anchor;
    const auto& f2 = t.positive;
    const auto& f3 = t.negative;
    TripletGradients g{Tensor(f1.shape()), Tensor(f2.shape()), Tensor(f3.shape())};
    if (hinge_argument(triplet_distances(t), u, v, margin) <= 0.0) return g;
    for (std::size_t i = 0; i < f1.size(); ++i) {
        const double d12 = f1[i] - f2[i];
        const double d13 = f1[i] - f3[i];
        const double d23 = f2[i] - f3[i];
        g.anchor[i] = 2.0 * d12 - 2.0 * u * d13;
        g.positive[i] = -2.0 * d12 - 2.0 * v * d23;
        g.negative[i] = 2.0 * u * d13 + 2.0 * v * d23;
    }
    return g;
}

AdaptiveWeightState AdaptiveWeightState::from_weights(double u, double v, double gamma, SignMode mode) {
    if (u < 0.0 || v < 0.0 || u + v <= 0.0) {
        throw NumericError("adaptive weights: need u, v >= 0 with u + v > 0");
    }
    AdaptiveWeightState s;
    s.grid_ = std::ldexp(1.0, std::ilogb(u + v) - 52);
    s.alpha_ = snap(0.5 * (u + v), s.grid_);
    s.gamma_ = gamma;
    s.mode_ = mode;
    s.set_beta(0.5 * (u - v));
    return s;
}

void AdaptiveWeightState::set_beta(double beta) {
    beta_ = std::clamp(snap(beta, grid_), -alpha_, alpha_);
}

bool AdaptiveWeightState::step(const TripletDistances& d, double margin) {
    if (hinge_argument(d, u(), v(), margin) <= 0.0) return false;
    const double raw = d.positive_negative - d.anchor_negative;  // dT/dbeta
    set_beta(mode_ == SignMode::textual ? beta_ + gamma_ * raw : beta_ - gamma_ * raw);
    return true;
}

AdaptiveWeightState update_adaptive_weight(AdaptiveWeightState s, const TripletFeatures& t, double margin) {
    s.step(triplet_distances(t), margin);
    return s;
}

double gaussian_density(double sigma, double squared_radius) {
    return std::exp(-squared_radius / (2.0 * sigma * sigma)) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

GaussianKernel::GaussianKernel(double sigma, double rho, bool normalized)
    : sigma_(sigma), rho_(rho), normalized_(normalized), radius_(0) {
    if (!(sigma > 0.0) || !(rho >= 0.0)) throw NumericError("gaussian kernel: need sigma > 0 and rho >= 0");
    radius_ = static_cast<std::size_t>(std::floor(rho));
    const std::size_t side = 2 * radius_ + 1;
    values_ = Tensor(Shape{side, side});
    const auto r = static_cast<std::ptrdiff_t>(radius_);
    double total = 0.0;
    for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const double r2 = static_cast<double>(dy * dy + dx * dx);
            const double value = std::sqrt(r2) <= rho ? gaussian_density(sigma, r2) : 0.0;
            values_[static_cast<std::size_t>((dy + r) * static_cast<std::ptrdiff_t>(side) + dx + r)] = value;
            total += value;
        }
    }
    if (normalized_) {
        for (auto& v : values_.values()) v /= total;
    }
}

double GaussianKernel::at(std::ptrdiff_t dy, std::ptrdiff_t dx) const {
    const auto r = static_cast<std::ptrdiff_t>(radius_);
    if (std::abs(dy) > r || std::abs(dx) > r) return 0.0;
    const auto side = 2 * r + 1;
    return values_[static_cast<std::size_t>((dy + r) * side + dx + r)];
}

Tensor GaussianKernel::correlate(const Tensor& x) const {
    if (x.shape().rank() != 3) throw ShapeError("kernel correlate: expected (C,H,W), got " + x.shape().str());
    const auto channels = x.shape()[0];
    const auto h = static_cast<std::ptrdiff_t>(x.shape()[1]);
    const auto w = static_cast<std::ptrdiff_t>(x.shape()[2]);
    const auto r = static_cast<std::ptrdiff_t>(radius_);
    Tensor out(x.shape());
    for (std::size_t c = 0; c < channels; ++c) {
        const double* in = x.data() + c * static_cast<std::size_t>(h * w);
        double* dst = out.data() + c * static_cast<std::size_t>(h * w);
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
            for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                const double k = at(dy, dx);
                if (k == 0.0) continue;
                const auto i0 = std::max<std::ptrdiff_t>(0, -dy), i1 = std::min(h, h - dy);
                const auto j0 = std::max<std::ptrdiff_t>(0, -dx), j1 = std::min(w, w - dx);
                for (auto i = i0; i < i1; ++i) {
                    for (auto j = j0; j < j1; ++j) dst[i * w + j] += k * in[(i + dy) * w + j + dx];
                }
            }
        }
    }
    return out;
}

double local_regression_loss(const Tensor& recon, const Tensor& mask, const GaussianKernel& k) {
    return reduce(ReduceOp::sum_of_squares, k.correlate(recon - mask));
}

Tensor local_regression_grad(const Tensor& recon, const Tensor& mask, const GaussianKernel& k) {
    // The kernel is symmetric under 180-degree rotation, so it is its own adjoint.
    return scale(k.correlate(k.correlate(recon - mask)), 2.0);
}

RegularizerTerm parameter_regularizer(std::span<const ParamSet> params) {
    RegularizerTerm term;
    for (const auto& p : params) {
        term.value += reduce(ReduceOp::sum_of_squares, p.weights) + reduce(ReduceOp::sum_of_squares, p.biases);
        term.weight_grads.push_back(scale(p.weights, 2.0));
        term.bias_grads.push_back(scale(p.biases, 2.0));
    }
    return term;
}

double regularizer_value(std::span<const ParamSet> params) {
    double total = 0.0;
    for (const auto& p : params) {
        total += reduce(ReduceOp::sum_of_squares, p.weights) + reduce(ReduceOp::sum_of_squares, p.biases);
    }
    return total;
}

void accumulate_regularizer_grad(std::span<ParamSet> params, double weight) {
    for (auto& p : params) {
        axpy(2.0 * weight, p.weights, p.weight_grads);
        axpy(2.0 * weight, p.biases, p.bias_grads);
    }
}

namespace {

double planar_distance(Point2 a, Point2 b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

TripletDistances planar_distances(const std::array<Point2, 3>& p) {
    return {planar_distance(p[0], p[1]), planar_distance(p[0], p[2]), planar_distance(p[1], p[2])};
}

DynamicsRow make_row(std::size_t step, const std::array<Point2, 3>& p, double u, double v, bool active) {
    const auto d = planar_distances(p);
    return {step, p, d.anchor_positive, d.anchor_negative, d.positive_negative, u, v, active};
}

}  // namespace

std::vector<DynamicsRow> simulate_triplet_dynamics(const DynamicsConfig& cfg) {
    const bool symmetric = cfg.kind == TripletLossKind::symmetric;
    auto state = symmetric ? AdaptiveWeightState::from_weights(cfg.init_u, cfg.init_v, cfg.gamma, cfg.sign_mode)
                           : AdaptiveWeightState::from_weights(1.0, 0.0, 0.0);
    auto p = cfg.init;
    std::vector<DynamicsRow> rows;
    rows.reserve(cfg.steps + 1);
    rows.push_back(make_row(0, p, state.u(), state.v(), false));
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        auto d = planar_distances(p);
        if (symmetric) state.step(d, cfg.margin);
        const double u = state.u(), v = state.v();
        const bool active = hinge_argument(d, u, v, cfg.margin) > 0.0;
        if (active) {
            const Point2 a{p[0].x - p[1].x, p[0].y - p[1].y};  // f1 - f2
            const Point2 b{p[0].x - p[2].x, p[0].y - p[2].y};  // f1 - f3
            const Point2 c{p[1].x - p[2].x, p[1].y - p[2].y};  // f2 - f3
            const std::array<Point2, 3> g{Point2{2 * a.x - 2 * u * b.x, 2 * a.y - 2 * u * b.y},
                                          Point2{-2 * a.x - 2 * v * c.x, -2 * a.y - 2 * v * c.y},
                                          Point2{2 * u * b.x + 2 * v * c.x, 2 * u * b.y + 2 * v * c.y}};
            for (std::size_t k = 0; k < 3; ++k) {
                p[k].x -= cfg.step_size * g[k].x;
                p[k].y -= cfg.step_size * g[k].y;
            }
        }
        rows.push_back(make_row(step, p, u, v, active));
    }
    return rows;
}

void write_dynamics_csv(std::ostream& out, const std::vector<DynamicsRow>& rows) {
    out << "step,x1x,x1y,x2x,x2y,x3x,x3y,d12,d13,d23,u,v\n";
    const auto old_precision = out.precision(17);
    for (const auto& r : rows) {
        out << r.step;
        for (const auto& pt : r.points) out << ',' << pt.x << ',' << pt.y;
        out << ',' << r.d12 << ',' << r.d13 << ',' << r.d23 << ',' << r.u << ',' << r.v << '\n';
    }
    out.precision(old_precision);
}

}  // namespace fann
