#include "fann/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fann/error.hpp"

namespace fann {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::deconv: return "deconv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::fully_connected: return "fully_connected";
        case LayerKind::l2_normalize: return "l2_normalize";
    }
    return "unknown";
}

LayerSpec LayerSpec::conv(std::size_t in, std::size_t out, Extent2 kernel, Extent2 stride, Extent2 padding) {
    return {LayerKind::conv, in, out, kernel, stride, padding, 0};
}

LayerSpec LayerSpec::deconv(std::size_t in, std::size_t out, Extent2 kernel, Extent2 stride, Extent2 padding) {
    return {LayerKind::deconv, in, out, kernel, stride, padding, 0};
}

LayerSpec LayerSpec::maxpool(Extent2 kernel, Extent2 stride, Extent2 padding) {
    return {LayerKind::maxpool, 0, 0, kernel, stride, padding, 0};
}

LayerSpec LayerSpec::fully_connected(std::size_t in, std::size_t out) {
    return {LayerKind::fully_connected, in, 0, {1, 1}, {1, 1}, {0, 0}, out};
}

LayerSpec LayerSpec::relu() { return {LayerKind::relu}; }
LayerSpec LayerSpec::l2_normalize() { return {LayerKind::l2_normalize}; }

bool LayerSpec::has_params() const noexcept {
    return kind == LayerKind::conv || kind == LayerKind::deconv || kind == LayerKind::fully_connected;
}

namespace {

std::string dim_name(int axis) { return axis == 0 ? "height" : "width"; }

void check_window(const LayerSpec& spec) {
    if (spec.kernel.h == 0 || spec.kernel.w == 0 || spec.stride.h == 0 || spec.stride.w == 0) {
        throw ShapeError(to_string(spec.kind) + ": kernel and stride must be positive");
    }
}

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, int axis, bool exact,
                        const LayerSpec& spec) {
    const std::size_t padded = in + 2 * p;
    if (padded < k) {
        throw ShapeError(to_string(spec.kind) + ": " + dim_name(axis) + " window " + std::to_string(k) +
                         " larger than padded input " + std::to_string(padded));
    }
    if (exact && (padded - k) % s != 0) {
        throw ShapeError(to_string(spec.kind) + ": non-integral output " + dim_name(axis) + " (" +
                         std::to_string(in) + " + 2*" + std::to_string(p) + " - " + std::to_string(k) + ") / " +
                         std::to_string(s) + " + 1");
    }
    return (padded - k) / s + 1;
}

void require_chw(const Shape& s, const LayerSpec& spec) {
    if (s.rank() != 3) throw ShapeError(to_string(spec.kind) + ": expected (C,H,W) input, got " + s.str());
}

}  // namespace

Shape output_shape(const LayerSpec& spec, const Shape& input) {
    switch (spec.kind) {
        case LayerKind::conv: {
            check_window(spec);
            require_chw(input, spec);
            if (input[0] != spec.in_channels) {
                throw ShapeError("conv: input has " + std::to_string(input[0]) + " channels, layer expects " +
                                 std::to_string(spec.in_channels));
            }
            return Shape{spec.out_channels,
                         conv_extent(input[1], spec.kernel.h, spec.stride.h, spec.padding.h, 0, true, spec),
                         conv_extent(input[2], spec.kernel.w, spec.stride.w, spec.padding.w, 1, true, spec)};
        }
        case LayerKind::deconv: {
            check_window(spec);
            require_chw(input, spec);
            if (input[0] != spec.in_channels) {
                throw ShapeError("deconv: input has " + std::to_string(input[0]) + " channels, layer expects " +
                                 std::to_string(spec.in_channels));
            }
            auto extent = [&](std::size_t in, std::size_t k, std::size_t s, std::size_t p, int axis) {
                const std::size_t full = (in - 1) * s + k;
                if (full <= 2 * p) {
                    throw ShapeError("deconv: padding " + std::to_string(p) + " leaves no output " + dim_name(axis));
                }
                return full - 2 * p;
            };
            return Shape{spec.out_channels, extent(input[1], spec.kernel.h, spec.stride.h, spec.padding.h, 0),
                         extent(input[2], spec.kernel.w, spec.stride.w, spec.padding.w, 1)};
        }
        case LayerKind::maxpool: {
            check_window(spec);
            require_chw(input, spec);
            if (spec.padding.h >= spec.kernel.h || spec.padding.w >= spec.kernel.w) {
                throw ShapeError("maxpool: padding must be smaller than the window");
            }
            return Shape{input[0], conv_extent(input[1], spec.kernel.h, spec.stride.h, spec.padding.h, 0, false, spec),
                         conv_extent(input[2], spec.kernel.w, spec.stride.w, spec.padding.w, 1, false, spec)};
        }
        case LayerKind::fully_connected:
            if (input.numel() != spec.in_channels) {
                throw ShapeError("fully_connected: input length " + std::to_string(input.numel()) +
                                 " does not match weight columns " + std::to_string(spec.in_channels));
            }
            return Shape{spec.out_dim};
        case LayerKind::relu:
        case LayerKind::l2_normalize:
            return input;
    }
    return input;
}

ParamSet ParamSet::for_layer(const LayerSpec& spec) {
    ParamSet p;
    switch (spec.kind) {
        case LayerKind::conv:
            p.weights = Tensor(Shape{spec.out_channels, spec.in_channels, spec.kernel.h, spec.kernel.w});
            p.biases = Tensor(Shape{spec.out_channels});
            break;
        case LayerKind::deconv:
            p.weights = Tensor(Shape{spec.in_channels, spec.out_channels, spec.kernel.h, spec.kernel.w});
            p.biases = Tensor(Shape{spec.out_channels});
            break;
        case LayerKind::fully_connected:
            p.weights = Tensor(Shape{spec.out_dim, spec.in_channels});
            p.biases = Tensor(Shape{spec.out_dim});
            break;
        default:
            throw ShapeError(to_string(spec.kind) + " has no parameters");
    }
    p.weight_grads = Tensor(p.weights.shape());
    p.bias_grads = Tensor(p.biases.shape());
    return p;
}

void ParamSet::zero_grads() {
    weight_grads.fill(0.0);
    bias_grads.fill(0.0);
}

void init_gaussian(ParamSet& p, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& w : p.weights.values()) w = normal(rng);
    p.biases.fill(0.0);
}

namespace {

// Index range [lo, hi) of small-grid positions i with 0 <= i*stride + tap - pad < big.
struct TapRange {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

TapRange tap_range(std::size_t small, std::size_t big, std::size_t stride, std::size_t tap, std::size_t pad) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const auto offset = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(pad);
    std::ptrdiff_t lo = 0;
    if (offset < 0) lo = (-offset + s - 1) / s;
    std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(big) - offset;  // i*s < hi
    hi = hi <= 0 ? 0 : (hi + s - 1) / s;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(small));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// The strided correlation shared by conv and deconv. "small" is the conv output
// grid, "big" the conv input grid.
struct Geometry {
    std::size_t small_channels, small_h, small_w;
    std::size_t big_channels, big_h, big_w;
    Extent2 kernel, stride, padding;
};

// Column matrix of the big grid: row k = (c, a, b) holds, for every small
// position n, the big-grid value under tap (a, b) of channel c (zero in the padding).
std::vector<double> im2col(const Geometry& g, const double* big) {
    const std::size_t n_small = g.small_h * g.small_w;
    std::vector<double> cols(g.big_channels * g.kernel.h * g.kernel.w * n_small, 0.0);
    double* row = cols.data();
    for (std::size_t c = 0; c < g.big_channels; ++c) {
        const double* in = big + c * g.big_h * g.big_w;
        for (std::size_t a = 0; a < g.kernel.h; ++a) {
            const auto rows = tap_range(g.small_h, g.big_h, g.stride.h, a, g.padding.h);
            for (std::size_t b = 0; b < g.kernel.w; ++b, row += n_small) {
                const auto cs = tap_range(g.small_w, g.big_w, g.stride.w, b, g.padding.w);
                for (std::size_t i = rows.lo; i < rows.hi; ++i) {
                    const double* src = in + (i * g.stride.h + a - g.padding.h) * g.big_w;
                    double* dst = row + i * g.small_w;
                    for (std::size_t j = cs.lo; j < cs.hi; ++j) dst[j] = src[j * g.stride.w + b - g.padding.w];
                }
            }
        }
    }
    return cols;
}

// Adjoint of im2col: adds every column entry back onto its big-grid position.
void col2im(const Geometry& g, const std::vector<double>& cols, double* big) {
    const std::size_t n_small = g.small_h * g.small_w;
    const double* row = cols.data();
    for (std::size_t c = 0; c < g.big_channels; ++c) {
        double* out = big + c * g.big_h * g.big_w;
        for (std::size_t a = 0; a < g.kernel.h; ++a) {
            const auto rows = tap_range(g.small_h, g.big_h, g.stride.h, a, g.padding.h);
            for (std::size_t b = 0; b < g.kernel.w; ++b, row += n_small) {
                const auto cs = tap_range(g.small_w, g.big_w, g.stride.w, b, g.padding.w);
                for (std::size_t i = rows.lo; i < rows.hi; ++i) {
                    double* dst = out + (i * g.stride.h + a - g.padding.h) * g.big_w;
                    const double* src = row + i * g.small_w;
                    for (std::size_t j = cs.lo; j < cs.hi; ++j) dst[j * g.stride.w + b - g.padding.w] += src[j];
                }
            }
        }
    }
}

// Both conv (Cout, Cin, kh, kw) and deconv (Cin, Cout, kh, kw) weights are a
// (small channels) x (big channels * kh * kw) matrix W.

// small += W * im2col(big)
void gather(const Geometry& g, const double* big, double* small, const double* w) {
    const std::size_t n = g.small_h * g.small_w;
    const std::size_t k_dim = g.big_channels * g.kernel.h * g.kernel.w;
    const auto cols = im2col(g, big);
    for (std::size_t o = 0; o < g.small_channels; ++o) {
        double* out = small + o * n;
        const double* wr = w + o * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double wk = wr[k];
            const double* cr = cols.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += wk * cr[j];
        }
    }
}

// big += col2im(W^T * small)
void scatter(const Geometry& g, const double* small, double* big, const double* w) {
    const std::size_t n = g.small_h * g.small_w;
    const std::size_t k_dim = g.big_channels * g.kernel.h * g.kernel.w;
    std::vector<double> cols(k_dim * n, 0.0);
    for (std::size_t o = 0; o < g.small_channels; ++o) {
        const double* in = small + o * n;
        const double* wr = w + o * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double wk = wr[k];
            double* cr = cols.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += wk * in[j];
        }
    }
    col2im(g, cols, big);
}

// grad_W += small * im2col(big)^T
void correlate_weights(const Geometry& g, const double* small, const double* big, double* grad_w) {
    const std::size_t n = g.small_h * g.small_w;
    const std::size_t k_dim = g.big_channels * g.kernel.h * g.kernel.w;
    const auto cols = im2col(g, big);
    for (std::size_t o = 0; o < g.small_channels; ++o) {
        const double* sr = small + o * n;
        double* gr = grad_w + o * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double* cr = cols.data() + k * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += sr[j] * cr[j];
            gr[k] += acc;
        }
    }
}

void require_kind(const LayerSpec& spec, LayerKind kind) {
    if (spec.kind != kind) {
        throw ShapeError("expected a " + to_string(kind) + " layer, got " + to_string(spec.kind));
    }
}

void require_grad_shape(const Tensor& grad, const Shape& expected, const LayerSpec& spec) {
    if (grad.shape() != expected) {
        throw ShapeError(to_string(spec.kind) + " backward: upstream gradient " + grad.shape().str() +
                         " does not match forward output " + expected.str());
    }
}

void add_channel_bias(Tensor& y, const Tensor& bias) {
    const auto plane = y.shape()[1] * y.shape()[2];
    for (std::size_t c = 0; c < y.shape()[0]; ++c) {
        double* row = y.data() + c * plane;
        for (std::size_t k = 0; k < plane; ++k) row[k] += bias[c];
    }
}

void accumulate_channel_bias(const Tensor& grad, Tensor& bias_grads) {
    const auto plane = grad.shape()[1] * grad.shape()[2];
    for (std::size_t c = 0; c < grad.shape()[0]; ++c) {
        const double* row = grad.data() + c * plane;
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k) s += row[k];
        bias_grads[c] += s;
    }
}

}  // namespace

Tensor conv_forward(const Tensor& x, const ParamSet& p, const LayerSpec& spec) {
    require_kind(spec, LayerKind::conv);
    const Shape out_shape = output_shape(spec, x.shape());
    Tensor y(out_shape);
    const Geometry g{out_shape[0], out_shape[1], out_shape[2], x.shape()[0], x.shape()[1], x.shape()[2],
                     spec.kernel, spec.stride, spec.padding};
    gather(g, x.data(), y.data(), p.weights.data());
    add_channel_bias(y, p.biases);
    return y;
}

Tensor conv_backward(const Tensor& x, const ParamSet& p, const LayerSpec& spec, const Tensor& grad_out,
                     ParamSet& acc) {
    require_kind(spec, LayerKind::conv);
    const Shape out_shape = output_shape(spec, x.shape());
    require_grad_shape(grad_out, out_shape, spec);
    const Geometry g{out_shape[0], out_shape[1], out_shape[2], x.shape()[0], x.shape()[1], x.shape()[2],
                     spec.kernel, spec.stride, spec.padding};
    Tensor gx(x.shape());
    scatter(g, grad_out.data(), gx.data(), p.weights.data());
    correlate_weights(g, grad_out.data(), x.data(), acc.weight_grads.data());
    accumulate_channel_bias(grad_out, acc.bias_grads);
    return gx;
}

Tensor deconv_forward(const Tensor& x, const ParamSet& p, const LayerSpec& spec) {
    require_kind(spec, LayerKind::deconv);
    const Shape out_shape = output_shape(spec, x.shape());
    Tensor y(out_shape);
    // Deconv input is the conv output grid; its output is the conv input grid.
    const Geometry g{x.shape()[0], x.shape()[1], x.shape()[2], out_shape[0], out_shape[1], out_shape[2],
                     spec.kernel, spec.stride, spec.padding};
    scatter(g, x.data(), y.data(), p.weights.data());
    add_channel_bias(y, p.biases);
    return y;
}

Tensor deconv_backward(const Tensor& x, const ParamSet& p, const LayerSpec& spec, const Tensor& grad_out,
                       ParamSet& acc) {
    require_kind(spec, LayerKind::deconv);
    const Shape out_shape = output_shape(spec, x.shape());
    require_grad_shape(grad_out, out_shape, spec);
    const Geometry g{x.shape()[0], x.shape()[1], x.shape()[2], out_shape[0], out_shape[1], out_shape[2],
                     spec.kernel, spec.stride, spec.padding};
    Tensor gx(x.shape());
    gather(g, grad_out.data(), gx.data(), p.weights.data());
    correlate_weights(g, x.data(), grad_out.data(), acc.weight_grads.data());
    accumulate_channel_bias(grad_out, acc.bias_grads);
    return gx;
}

Tensor relu(const Tensor& x) { return max_with_zero(x); }

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    if (grad_out.shape() != x.shape()) {
        throw ShapeError("relu backward: upstream gradient " + grad_out.shape().str() + " does not match " +
                         x.shape().str());
    }
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
    return gx;
}

PoolOutput maxpool_forward(const Tensor& x, const LayerSpec& spec) {
    require_kind(spec, LayerKind::maxpool);
    const Shape out_shape = output_shape(spec, x.shape());
    const auto channels = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const auto oh = out_shape[1], ow = out_shape[2];
    PoolOutput out{Tensor(out_shape), std::vector<std::size_t>(out_shape.numel())};
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t arg = 0;
                bool found = false;
                for (std::size_t a = 0; a < spec.kernel.h; ++a) {
                    const auto r = static_cast<std::ptrdiff_t>(i * spec.stride.h + a) -
                                   static_cast<std::ptrdiff_t>(spec.padding.h);
                    if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t b = 0; b < spec.kernel.w; ++b) {
                        const auto q = static_cast<std::ptrdiff_t>(j * spec.stride.w + b) -
                                       static_cast<std::ptrdiff_t>(spec.padding.w);
                        if (q < 0 || q >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t idx = (c * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(q);
                        if (!found || x[idx] > best) {
                            best = x[idx];
                            arg = idx;
                            found = true;
                        }
                    }
                }
                const std::size_t o = (c * oh + i) * ow + j;
                out.output[o] = best;
                out.argmax[o] = arg;
            }
        }
    }
    return out;
}

Tensor maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor& grad_out) {
    if (argmax.size() != grad_out.size()) {
        throw ShapeError("maxpool backward: upstream gradient " + grad_out.shape().str() +
                         " does not match the cached index map");
    }
    Tensor gx(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += grad_out[o];
    return gx;
}

Tensor fully_connected_forward(const Tensor& x, const ParamSet& p, const LayerSpec& spec) {
    require_kind(spec, LayerKind::fully_connected);
    const Shape out_shape = output_shape(spec, x.shape());
    if (p.weights.shape() != Shape{spec.out_dim, spec.in_channels}) {
        throw ShapeError("fully_connected: weight matrix " + p.weights.shape().str() + " does not match (" +
                         std::to_string(spec.out_dim) + ", " + std::to_string(spec.in_channels) + ")");
    }
    Tensor y(out_shape);
    const auto n = spec.in_channels;
    for (std::size_t r = 0; r < spec.out_dim; ++r) {
        const double* row = p.weights.data() + r * n;
        double s = p.biases[r];
        for (std::size_t k = 0; k < n; ++k) s += row[k] * x[k];
        y[r] = s;
    }
    return y;
}

Tensor fully_connected_backward(const Tensor& x, const ParamSet& p, const LayerSpec& spec, const Tensor& grad_out,
                                ParamSet& acc) {
    require_kind(spec, LayerKind::fully_connected);
    require_grad_shape(grad_out, output_shape(spec, x.shape()), spec);
    const auto n = spec.in_channels;
    Tensor gx(x.shape());
    for (std::size_t r = 0; r < spec.out_dim; ++r) {
        const double g = grad_out[r];
        if (g == 0.0) continue;
        const double* row = p.weights.data() + r * n;
        double* grow = acc.weight_grads.data() + r * n;
        for (std::size_t k = 0; k < n; ++k) {
            gx[k] += row[k] * g;
            grow[k] += g * x[k];
        }
        acc.bias_grads[r] += g;
    }
    return gx;
}

Tensor l2_normalize_forward(const Tensor& x) {
    const double norm = std::sqrt(reduce(ReduceOp::sum_of_squares, x));
    if (!(norm > kNormEpsilon)) {
        throw NumericError("l2_normalize: input norm " + std::to_string(norm) + " is degenerate");
    }
    return scale(x, 1.0 / norm);
}

Tensor l2_normalize_backward(const Tensor& x, const Tensor& y, const Tensor& grad_out) {
    if (grad_out.shape() != y.shape()) {
        throw ShapeError("l2_normalize backward: upstream gradient " + grad_out.shape().str() +
                         " does not match " + y.shape().str());
    }
    const double norm = std::sqrt(reduce(ReduceOp::sum_of_squares, x));
    const double proj = dot(y.values(), grad_out.values());
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = (grad_out[i] - y[i] * proj) / norm;
    return gx;
}

LayerContext layer_forward(const LayerSpec& spec, const Tensor& x, const ParamSet* p) {
    if (spec.has_params() && p == nullptr) throw ShapeError(to_string(spec.kind) + ": missing parameters");
    LayerContext ctx;
    ctx.input = x;
    switch (spec.kind) {
        case LayerKind::conv: ctx.output = conv_forward(x, *p, spec); break;
        case LayerKind::deconv: ctx.output = deconv_forward(x, *p, spec); break;
        case LayerKind::relu: ctx.output = relu(x); break;
        case LayerKind::maxpool: {
            auto pooled = maxpool_forward(x, spec);
            ctx.output = std::move(pooled.output);
            ctx.argmax = std::move(pooled.argmax);
            break;
        }
        case LayerKind::fully_connected: ctx.output = fully_connected_forward(x, *p, spec); break;
        case LayerKind::l2_normalize: ctx.output = l2_normalize_forward(x); break;
    }
    return ctx;
}

Tensor layer_backward(const LayerSpec& spec, const LayerContext& ctx, const Tensor& grad_out, const ParamSet* p,
                      ParamSet* acc) {
    if (spec.has_params() && (p == nullptr || acc == nullptr)) {
        throw ShapeError(to_string(spec.kind) + " backward: missing parameters or accumulator");
    }
    if (grad_out.shape() != ctx.output.shape()) {
        throw ShapeError(to_string(spec.kind) + " backward: upstream gradient " + grad_out.shape().str() +
                         " does not match forward output " + ctx.output.shape().str());
    }
    switch (spec.kind) {
        case LayerKind::conv: return conv_backward(ctx.input, *p, spec, grad_out, *acc);
        case LayerKind::deconv: return deconv_backward(ctx.input, *p, spec, grad_out, *acc);
        case LayerKind::relu: return relu_backward(ctx.input, grad_out);
        case LayerKind::maxpool: return maxpool_backward(ctx.input.shape(), ctx.argmax, grad_out);
        case LayerKind::fully_connected: return fully_connected_backward(ctx.input, *p, spec, grad_out, *acc);
        case LayerKind::l2_normalize: return l2_normalize_backward(ctx.input, ctx.output, grad_out);
    }
    return {};
}

}  // namespace fann
