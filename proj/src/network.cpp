#include "fann/network.hpp"

#include <algorithm>
#include <atomic>
#include <random>

#include "fann/error.hpp"

namespace fann {

NetworkConfig NetworkConfig::paper() {
    NetworkConfig cfg;
    cfg.encoder = {LayerSpec::conv(3, 64, {7, 7}, {3, 3}), LayerSpec::relu(),
                   LayerSpec::conv(64, 64, {5, 5}, {2, 2}), LayerSpec::relu()};
    cfg.encoder_pool = LayerSpec::maxpool({3, 3}, {1, 1}, {1, 1});
    cfg.decoder = {LayerSpec::deconv(64, 64, {5, 5}, {2, 2}), LayerSpec::relu(),
                   LayerSpec::deconv(64, 3, {7, 7}, {3, 3})};
    return cfg;
}

NetworkConfig NetworkConfig::desk() {
    NetworkConfig cfg;
    cfg.input_height = 37;
    cfg.input_width = 13;
    cfg.encoder = {LayerSpec::conv(3, 8, {5, 5}, {2, 2}), LayerSpec::relu(),
                   LayerSpec::conv(8, 8, {3, 3}, {1, 1}), LayerSpec::relu()};
    cfg.decoder = {LayerSpec::deconv(8, 8, {3, 3}, {1, 1}), LayerSpec::relu(),
                   LayerSpec::deconv(8, 3, {5, 5}, {2, 2})};
    cfg.residual_blocks_per_part = 1;
    cfg.part_channels = 8;
    cfg.fc_small_dim = 16;
    cfg.fc_large_dim = 64;
    // At the full-size init scale the small net's pre-norm features are ~1e-8 and steps blow up.
    cfg.init_std_min = 0.1;
    cfg.init_std_max = 0.2;
    return cfg;
}

namespace {

std::atomic<std::uint64_t> next_network_id{1};

Shape propagate(const std::vector<LayerSpec>& layers, Shape shape, const std::string& where) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        try {
            shape = output_shape(layers[i], shape);
        } catch (const ShapeError& e) {
            throw ShapeError(where + " layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return shape;
}

}  // namespace

std::ptrdiff_t Network::add_params(const std::string& name, const LayerSpec& spec) {
    params_.push_back(ParamSet::for_layer(spec));
    names_.push_back(name);
    return static_cast<std::ptrdiff_t>(params_.size() - 1);
}

Network Network::build(const NetworkConfig& cfg, std::uint64_t seed) {
    if (cfg.parts == 0 || cfg.residual_blocks_per_part == 0 || cfg.part_channels == 0 || cfg.fc_small_dim == 0 ||
        cfg.fc_large_dim == 0) {
        throw ShapeError("build_network: part, block, channel and fc counts must be positive");
    }
    if (cfg.encoder.empty() || cfg.decoder.empty()) throw ShapeError("build_network: encoder and decoder required");
    if (!(cfg.decoder_init_scale > 0.0)) throw NumericError("build_network: decoder_init_scale must be positive");
    if (!(cfg.init_std_min > 0.0) || cfg.init_std_max < cfg.init_std_min) {
        throw NumericError("build_network: need 0 < init_std_min <= init_std_max");
    }

    Network net;
    net.cfg_ = cfg;
    net.id_ = next_network_id.fetch_add(1);
    auto& shapes = net.shapes_;
    shapes.input = cfg.input_shape();

    shapes.tap = propagate(cfg.encoder, shapes.input, "encoder");
    if (cfg.encoder_pool.kind != LayerKind::maxpool) throw ShapeError("encoder pool must be a maxpool layer");
    try {
        shapes.pooled = output_shape(cfg.encoder_pool, shapes.tap);
    } catch (const ShapeError& e) {
        throw ShapeError(std::string("encoder pool: ") + e.what());
    }
    shapes.reconstruction = propagate(cfg.decoder, shapes.tap, "decoder");
    if (shapes.reconstruction != shapes.input) {
        throw ShapeError("decoder output " + shapes.reconstruction.str() + " does not reconstruct input " +
                         shapes.input.str());
    }
    if (cfg.parts > shapes.pooled[1]) {
        throw ShapeError("part slicing: cannot cut pooled height " + std::to_string(shapes.pooled[1]) + " into " +
                         std::to_string(cfg.parts) + " parts");
    }

    std::size_t conv_index = 0;
    for (const auto& spec : cfg.encoder) {
        Node node{spec};
        if (spec.has_params()) node.param = net.add_params("encoder.conv" + std::to_string(++conv_index), spec);
        net.encoder_.push_back(node);
    }
    net.pool_ = Node{cfg.encoder_pool};
    std::size_t deconv_index = 0;
    for (const auto& spec : cfg.decoder) {
        Node node{spec};
        if (spec.has_params()) node.param = net.add_params("decoder.deconv" + std::to_string(++deconv_index), spec);
        net.decoder_.push_back(node);
    }

    const std::size_t tap_channels = shapes.tap[0];
    const auto pooled_height = shapes.pooled[1];
    const auto width = shapes.pooled[2];
    const auto block_pool = LayerSpec::maxpool({3, 3}, {1, 1}, {1, 1});
    for (std::size_t p = 0; p < cfg.parts; ++p) {
        const std::size_t rows = pooled_height / cfg.parts + (p < pooled_height % cfg.parts ? 1 : 0);
        shapes.slices.push_back(Shape{tap_channels, rows, width});
        Part part;
        Shape shape = shapes.slices.back();
        for (std::size_t b = 0; b < cfg.residual_blocks_per_part; ++b) {
            const std::string prefix = "part" + std::to_string(p) + ".block" + std::to_string(b);
            const auto c1 = LayerSpec::conv(shape[0], cfg.part_channels, {3, 3}, {1, 1}, {1, 1});
            const auto c2 = LayerSpec::conv(cfg.part_channels, cfg.part_channels, {3, 3}, {1, 1}, {1, 1});
            Block block{Node{c1, net.add_params(prefix + ".conv1", c1)}, Node{c2, net.add_params(prefix + ".conv2", c2)},
                        Node{block_pool}};
            shape = propagate({c1, c2, block_pool}, shape, prefix);
            part.blocks.push_back(block);
        }
        shapes.part_outputs.push_back(shape);
        const auto fa = LayerSpec::fully_connected(shape.numel(), cfg.fc_small_dim);
        const auto fb = LayerSpec::fully_connected(cfg.fc_small_dim, cfg.fc_small_dim);
        part.fc_a = Node{fa, net.add_params("part" + std::to_string(p) + ".fc_a", fa)};
        part.fc_b = Node{fb, net.add_params("part" + std::to_string(p) + ".fc_b", fb)};
        net.parts_.push_back(std::move(part));
    }
    const auto fl = LayerSpec::fully_connected(cfg.parts * cfg.fc_small_dim, cfg.fc_large_dim);
    net.fc_large_ = Node{fl, net.add_params("fusion.fc_large", fl)};
    shapes.embedding_dim = cfg.embedding_dim();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pick_std(cfg.init_std_min, cfg.init_std_max);
    for (auto& p : net.params_) init_gaussian(p, pick_std(rng), rng);
    for (auto i : net.decoder_param_indices()) net.params_[i].weights = scale(net.params_[i].weights, cfg.decoder_init_scale);
    return net;
}

std::size_t Network::param_index(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ShapeError("no parameter set named " + name);
    return static_cast<std::size_t>(it - names_.begin());
}

std::size_t Network::param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
}

std::vector<std::size_t> Network::decoder_param_indices() const {
    std::vector<std::size_t> out;
    for (const auto& n : decoder_) {
        if (n.param >= 0) out.push_back(static_cast<std::size_t>(n.param));
    }
    return out;
}

std::vector<std::size_t> Network::ranking_param_indices() const {
    std::vector<std::size_t> out;
    for (const auto& part : parts_) {
        for (const auto& b : part.blocks) {
            out.push_back(static_cast<std::size_t>(b.conv1.param));
            out.push_back(static_cast<std::size_t>(b.conv2.param));
        }
        out.push_back(static_cast<std::size_t>(part.fc_a.param));
        out.push_back(static_cast<std::size_t>(part.fc_b.param));
    }
    out.push_back(static_cast<std::size_t>(fc_large_.param));
    return out;
}

const ParamSet* Network::param_ptr(const Node& n) const {
    return n.param >= 0 ? &params_[static_cast<std::size_t>(n.param)] : nullptr;
}

ParamSet* Network::acc_ptr(const Node& n, std::span<ParamSet> acc) const {
    return n.param >= 0 ? &acc[static_cast<std::size_t>(n.param)] : nullptr;
}

LayerContext Network::run(const Node& n, const Tensor& x) const { return layer_forward(n.spec, x, param_ptr(n)); }

Tensor Network::run_backward(const Node& n, const LayerContext& ctx, const Tensor& g, std::span<ParamSet> acc) const {
    return layer_backward(n.spec, ctx, g, param_ptr(n), acc_ptr(n, acc));
}

ForwardTrace Network::forward(const Tensor& image, bool with_reconstruction) const {
    if (image.shape() != shapes_.input) {
        throw ShapeError("forward: image " + image.shape().str() + " does not match input " + shapes_.input.str());
    }
    ForwardTrace t;
    t.network_id = id_;
    const Tensor* x = &image;
    for (const auto& n : encoder_) {
        t.encoder.push_back(run(n, *x));
        x = &t.encoder.back().output;
    }
    t.encoder_features = *x;
    t.pool = run(pool_, t.encoder_features);

    const auto slices = slice_height(t.pool.output, cfg_.parts);
    std::vector<Tensor> fc_a_acts;
    std::vector<Tensor> fused;
    fused.reserve(cfg_.parts + 1);
    fused.emplace_back();  // fc_large output goes first
    for (std::size_t p = 0; p < cfg_.parts; ++p) {
        const auto& part = parts_[p];
        PartTrace pt;
        Tensor h = slices[p];
        for (const auto& block : part.blocks) {
            ResidualBlockTrace bt;
            bt.conv1 = run(block.conv1, h);
            bt.conv2 = run(block.conv2, bt.conv1.output);
            bt.relu = layer_forward(LayerSpec::relu(), bt.conv1.output + bt.conv2.output, nullptr);
            bt.pool = run(block.pool, bt.relu.output);
            h = bt.pool.output;
            pt.blocks.push_back(std::move(bt));
        }
        pt.fc_a = run(part.fc_a, h.reshaped(Shape{h.size()}));
        pt.relu = layer_forward(LayerSpec::relu(), pt.fc_a.output, nullptr);
        pt.fc_b = run(part.fc_b, pt.relu.output);
        fc_a_acts.push_back(pt.relu.output);
        fused.push_back(pt.fc_b.output);
        t.parts.push_back(std::move(pt));
    }
    t.fc_large = run(fc_large_, concat_flat(fc_a_acts));
    fused.front() = t.fc_large.output;
    t.normalize = layer_forward(LayerSpec::l2_normalize(), concat_flat(fused), nullptr);
    t.ranking_embedding = t.normalize.output;

    if (with_reconstruction) {
        const Tensor* d = &t.encoder_features;
        for (const auto& n : decoder_) {
            t.decoder.push_back(run(n, *d));
            d = &t.decoder.back().output;
        }
        t.reconstruction = *d;
        t.has_reconstruction = true;
    }
    return t;
}

Tensor Network::embed(const Tensor& image) const { return forward(image, false).ranking_embedding; }

void Network::check_trace(const ForwardTrace& trace) const {
    if (trace.network_id != id_ || trace.parts.size() != parts_.size() || trace.encoder.size() != encoder_.size()) {
        throw ShapeError("backward: trace was not produced by this network's forward pass");
    }
}

void Network::backward(const ForwardTrace& trace, const Tensor* grad_embedding, const Tensor* grad_reconstruction,
                       std::span<ParamSet> acc) const {
    check_trace(trace);
    if (acc.size() != params_.size()) {
        throw ShapeError("backward: accumulator has " + std::to_string(acc.size()) + " parameter sets, network has " +
                         std::to_string(params_.size()));
    }
    Tensor grad_tap(shapes_.tap);

    if (grad_embedding != nullptr) {
        const Tensor g_fused = layer_backward(LayerSpec::l2_normalize(), trace.normalize, *grad_embedding, nullptr,
                                              nullptr);
        const std::size_t large = cfg_.fc_large_dim, small = cfg_.fc_small_dim;
        Tensor g_large(Shape{large});
        std::copy_n(g_fused.data(), large, g_large.data());
        const Tensor g_concat_a = run_backward(fc_large_, trace.fc_large, g_large, acc);

        std::vector<Tensor> g_slices;
        for (std::size_t p = 0; p < cfg_.parts; ++p) {
            const auto& part = parts_[p];
            const auto& pt = trace.parts[p];
            Tensor g_b(Shape{small});
            std::copy_n(g_fused.data() + large + p * small, small, g_b.data());
            Tensor g_act = run_backward(part.fc_b, pt.fc_b, g_b, acc);
            for (std::size_t k = 0; k < small; ++k) g_act[k] += g_concat_a[p * small + k];
            const Tensor g_a = layer_backward(LayerSpec::relu(), pt.relu, g_act, nullptr, nullptr);
            Tensor g = run_backward(part.fc_a, pt.fc_a, g_a, acc);
            g = g.reshaped(pt.blocks.back().pool.output.shape());
            for (std::size_t b = part.blocks.size(); b-- > 0;) {
                const auto& block = part.blocks[b];
                const auto& bt = pt.blocks[b];
                g = run_backward(block.pool, bt.pool, g, acc);
                const Tensor g_sum = layer_backward(LayerSpec::relu(), bt.relu, g, nullptr, nullptr);
                Tensor g_c1 = run_backward(block.conv2, bt.conv2, g_sum, acc);
                axpy(1.0, g_sum, g_c1);
                g = run_backward(block.conv1, bt.conv1, g_c1, acc);
            }
            g_slices.push_back(std::move(g));
        }
        const Tensor g_pooled = concat_height(g_slices);
        axpy(1.0, run_backward(pool_, trace.pool, g_pooled, acc), grad_tap);
    }

    if (grad_reconstruction != nullptr) {
        if (!trace.has_reconstruction) throw ShapeError("backward: trace has no reconstruction");
        Tensor g = *grad_reconstruction;
        for (std::size_t i = decoder_.size(); i-- > 0;) g = run_backward(decoder_[i], trace.decoder[i], g, acc);
        axpy(1.0, g, grad_tap);
    }

    if (grad_embedding == nullptr && grad_reconstruction == nullptr) return;
    Tensor g = std::move(grad_tap);
    for (std::size_t i = encoder_.size(); i-- > 0;) g = run_backward(encoder_[i], trace.encoder[i], g, acc);
}

void Network::backward(const ForwardTrace& trace, const Tensor* grad_embedding, const Tensor* grad_reconstruction) {
    backward(trace, grad_embedding, grad_reconstruction, std::span<ParamSet>(params_));
}

void Network::zero_grads() {
    for (auto& p : params_) p.zero_grads();
}

std::vector<ParamSet> Network::gradient_buffers() const {
    std::vector<ParamSet> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        ParamSet g;
        g.weight_grads = Tensor(p.weights.shape());
        g.bias_grads = Tensor(p.biases.shape());
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace fann
