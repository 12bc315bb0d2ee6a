#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "fann/tensor.hpp"

namespace fann {

enum class LayerKind { conv, deconv, relu, maxpool, fully_connected, l2_normalize };

std::string to_string(LayerKind kind);

struct Extent2 {
    std::size_t h = 1;
    std::size_t w = 1;
    friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// Declarative layer description.
///
/// For fully_connected layers `in_channels` holds the flattened input length
/// and `out_dim` the output length; the spatial fields are unused.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    Extent2 kernel{1, 1};
    Extent2 stride{1, 1};
    Extent2 padding{0, 0};
    std::size_t out_dim = 0;

    static LayerSpec conv(std::size_t in, std::size_t out, Extent2 kernel, Extent2 stride, Extent2 padding = {0, 0});
    static LayerSpec deconv(std::size_t in, std::size_t out, Extent2 kernel, Extent2 stride, Extent2 padding = {0, 0});
    static LayerSpec maxpool(Extent2 kernel, Extent2 stride, Extent2 padding = {0, 0});
    static LayerSpec fully_connected(std::size_t in, std::size_t out);
    static LayerSpec relu();
    static LayerSpec l2_normalize();

    [[nodiscard]] bool has_params() const noexcept;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Output shape of `spec` applied to `input`; throws ShapeError naming the
/// offending dimension when the geometry does not work out.
Shape output_shape(const LayerSpec& spec, const Shape& input);

/// Learnable weights and biases with gradient accumulators of the same shapes.
///
/// Weight layouts: conv (Cout, Cin, kh, kw); deconv (Cin, Cout, kh, kw), which
/// is the layout of the conv it is the adjoint of; fully_connected (out, in).
struct ParamSet {
    Tensor weights;
    Tensor biases;
    Tensor weight_grads;
    Tensor bias_grads;

    /// Zero-valued parameters sized for `spec`.
    static ParamSet for_layer(const LayerSpec& spec);

    void zero_grads();
    [[nodiscard]] std::size_t count() const noexcept { return weights.size() + biases.size(); }
};

/// Gaussian weights with the given standard deviation, zero biases.
void init_gaussian(ParamSet& p, double stddev, std::mt19937_64& rng);

Tensor conv_forward(const Tensor& x, const ParamSet& p, const LayerSpec& spec);
/// Returns dL/dx; adds dL/dW, dL/db into `acc` (which may alias `p`).
Tensor conv_backward(const Tensor& x, const ParamSet& p, const LayerSpec& spec, const Tensor& grad_out,
                     ParamSet& acc);

Tensor deconv_forward(const Tensor& x, const ParamSet& p, const LayerSpec& spec);
Tensor deconv_backward(const Tensor& x, const ParamSet& p, const LayerSpec& spec, const Tensor& grad_out,
                       ParamSet& acc);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

struct PoolOutput {
    Tensor output;
    std::vector<std::size_t> argmax;  // flat input index of each output's winner
};

PoolOutput maxpool_forward(const Tensor& x, const LayerSpec& spec);
Tensor maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor& grad_out);

Tensor fully_connected_forward(const Tensor& x, const ParamSet& p, const LayerSpec& spec);
Tensor fully_connected_backward(const Tensor& x, const ParamSet& p, const LayerSpec& spec, const Tensor& grad_out,
                                ParamSet& acc);

inline constexpr double kNormEpsilon = 1e-12;

Tensor l2_normalize_forward(const Tensor& x);
Tensor l2_normalize_backward(const Tensor& x, const Tensor& y, const Tensor& grad_out);

/// Cached forward state of one layer application.
struct LayerContext {
    Tensor input;
    Tensor output;
    std::vector<std::size_t> argmax;
};

/// Runs any layer kind. `p` may be null for parameter-free kinds.
LayerContext layer_forward(const LayerSpec& spec, const Tensor& x, const ParamSet* p);

/// Backward through any layer kind. Parameter gradients are accumulated into
/// `acc` (required for parameterized kinds).
Tensor layer_backward(const LayerSpec& spec, const LayerContext& ctx, const Tensor& grad_out, const ParamSet* p,
                      ParamSet* acc);

}  // namespace fann
