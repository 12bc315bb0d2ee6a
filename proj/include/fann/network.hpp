#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fann/layers.hpp"
#include "fann/losses.hpp"
#include "fann/tensor.hpp"

namespace fann {

/// Architecture plus every loss and optimization constant of a run.
struct NetworkConfig {
    std::size_t input_channels = 3;
    std::size_t input_height = 229;
    std::size_t input_width = 79;

    /// conv/relu stack up to the decoder tap.
    std::vector<LayerSpec> encoder;
    /// Pool applied to the tap before slicing into parts.
    LayerSpec encoder_pool = LayerSpec::maxpool({3, 3}, {1, 1}, {1, 1});
    /// Maps the tap back to the input geometry.
    std::vector<LayerSpec> decoder;

    std::size_t parts = 4;
    std::size_t residual_blocks_per_part = 2;
    std::size_t part_channels = 32;
    std::size_t fc_small_dim = 150;
    std::size_t fc_large_dim = 600;

    double margin = 0.1;
    double zeta = 0.02;
    double eta = 0.05;
    double kernel_sigma = 0.01;
    double kernel_rho = 3.0;
    bool kernel_normalized = true;
    double init_u = 0.6;
    double init_v = 0.4;
    double gamma = 0.01;
    SignMode sign_mode = SignMode::textual;
    TripletLossKind loss_kind = TripletLossKind::symmetric;

    double init_std_min = 0.001;
    double init_std_max = 0.01;
    /// Decoder weights are drawn as above, then multiplied by this.
    double decoder_init_scale = 1.0;
    std::uint64_t seed = 1;

    /// 3x229x79 input, 64-channel encoder, 4 parts x 2 residual blocks, 1200-d embedding.
    static NetworkConfig paper();
    /// 3x37x13 input, 8-channel encoder, 4 parts x 1 block, fc dims 16/64.
    static NetworkConfig desk();

    [[nodiscard]] Shape input_shape() const { return Shape{input_channels, input_height, input_width}; }
    [[nodiscard]] std::size_t embedding_dim() const noexcept { return fc_large_dim + parts * fc_small_dim; }
};

/// Shapes at every junction, resolved at build time.
struct ShapeReport {
    Shape input;
    Shape tap;
    Shape pooled;
    std::vector<Shape> slices;
    std::vector<Shape> part_outputs;
    Shape reconstruction;
    std::size_t embedding_dim = 0;
};

struct ResidualBlockTrace {
    LayerContext conv1;
    LayerContext conv2;
    LayerContext relu;  // input is conv1 + conv2
    LayerContext pool;
};

struct PartTrace {
    std::vector<ResidualBlockTrace> blocks;
    LayerContext fc_a;
    LayerContext relu;
    LayerContext fc_b;
};

/// Everything a backward pass needs, plus the two network outputs.
struct ForwardTrace {
    std::uint64_t network_id = 0;
    std::vector<LayerContext> encoder;
    Tensor encoder_features;
    LayerContext pool;
    std::vector<PartTrace> parts;
    LayerContext fc_large;
    LayerContext normalize;
    Tensor ranking_embedding;
    std::vector<LayerContext> decoder;
    Tensor reconstruction;
    bool has_reconstruction = false;
};

class Network {
public:
    /// Instantiates all subnetworks and draws initial weights from `seed`.
    static Network build(const NetworkConfig& cfg, std::uint64_t seed);
    static Network build(const NetworkConfig& cfg) { return build(cfg, cfg.seed); }

    [[nodiscard]] const NetworkConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const ShapeReport& shapes() const noexcept { return shapes_; }

    [[nodiscard]] std::vector<ParamSet>& params() noexcept { return params_; }
    [[nodiscard]] const std::vector<ParamSet>& params() const noexcept { return params_; }
    [[nodiscard]] const std::vector<std::string>& param_names() const noexcept { return names_; }
    [[nodiscard]] std::size_t param_index(const std::string& name) const;
    [[nodiscard]] std::size_t param_count() const noexcept;

    /// Parameter sets reachable from the reconstruction output only.
    [[nodiscard]] std::vector<std::size_t> decoder_param_indices() const;
    /// Parameter sets reachable from the embedding only.
    [[nodiscard]] std::vector<std::size_t> ranking_param_indices() const;

    [[nodiscard]] ForwardTrace forward(const Tensor& image, bool with_reconstruction = true) const;
    /// Ranking embedding only; the decoder is not evaluated.
    [[nodiscard]] Tensor embed(const Tensor& image) const;

    /// Chains the two output gradients back through the network, summing them at
    /// the encoder tap, and accumulates parameter gradients into `acc` (one
    /// entry per parameter set, same order as params()). Either gradient may be null.
    void backward(const ForwardTrace& trace, const Tensor* grad_embedding, const Tensor* grad_reconstruction,
                  std::span<ParamSet> acc) const;
    void backward(const ForwardTrace& trace, const Tensor* grad_embedding, const Tensor* grad_reconstruction);

    void zero_grads();
    /// Zero-gradient copies of the parameter sets, for per-sample accumulation.
    [[nodiscard]] std::vector<ParamSet> gradient_buffers() const;

private:
    struct Node {
        LayerSpec spec;
        std::ptrdiff_t param = -1;
    };
    struct Block {
        Node conv1, conv2, pool;
    };
    struct Part {
        std::vector<Block> blocks;
        Node fc_a, fc_b;
    };

    Network() = default;
    std::ptrdiff_t add_params(const std::string& name, const LayerSpec& spec);
    const ParamSet* param_ptr(const Node& n) const;
    ParamSet* acc_ptr(const Node& n, std::span<ParamSet> acc) const;
    LayerContext run(const Node& n, const Tensor& x) const;
    Tensor run_backward(const Node& n, const LayerContext& ctx, const Tensor& g, std::span<ParamSet> acc) const;
    void check_trace(const ForwardTrace& trace) const;

    NetworkConfig cfg_;
    ShapeReport shapes_;
    std::uint64_t id_ = 0;
    std::vector<ParamSet> params_;
    std::vector<std::string> names_;
    std::vector<Node> encoder_;
    Node pool_;
    std::vector<Node> decoder_;
    std::vector<Part> parts_;
    Node fc_large_;
};

inline Network build_network(const NetworkConfig& cfg, std::uint64_t seed) { return Network::build(cfg, seed); }

}  // namespace fann
