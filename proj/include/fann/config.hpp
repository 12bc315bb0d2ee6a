#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fann/network.hpp"

namespace fann {

struct TrainerConfig {
    double learning_rate = 0.01;
    double lr_decay = 0.1;
    std::size_t lr_decay_interval = 10000;
    std::size_t batch_size = 16;
    std::size_t log_interval = 100;
    std::size_t checkpoint_interval = 0;  // 0 keeps only the final checkpoint
    std::size_t monitor_batch = 64;       // fixed triplets the metrics log is evaluated on
};

struct EvalConfig {
    int probe_camera = 0;
    int gallery_camera = 1;
    std::size_t trials = 10;
    std::size_t identities = 0;  // identities per trial, 0 = all eligible
    bool multi_shot = false;
    std::size_t max_rank = 20;
};

/// Encoder/decoder geometry behind NetworkConfig's layer lists:
/// conv1 -> relu -> conv2 -> relu -> [tap], tap -> deconv1 -> relu -> deconv2.
struct Architecture {
    std::size_t enc1_channels = 64;
    Extent2 enc1_kernel{7, 7}, enc1_stride{3, 3}, enc1_padding{0, 0};
    std::size_t enc2_channels = 64;
    Extent2 enc2_kernel{5, 5}, enc2_stride{2, 2}, enc2_padding{0, 0};
    Extent2 pool_kernel{3, 3}, pool_stride{1, 1}, pool_padding{1, 1};
    std::size_t dec1_channels = 64;
    Extent2 dec1_kernel{5, 5}, dec1_stride{2, 2}, dec1_padding{0, 0};
    Extent2 dec2_kernel{7, 7}, dec2_stride{3, 3}, dec2_padding{0, 0};
};

/// Flat key=value run configuration (`#` comments, one key per line).
///
/// A `preset = paper|desk` line resets every key to that preset; the paper
/// preset is the starting point. Unknown keys and malformed values are rejected.
class RunConfig {
public:
    RunConfig();
    static RunConfig paper();
    static RunConfig desk();

    static RunConfig parse(std::istream& in, const std::string& source = "<config>");
    static RunConfig load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;
    [[nodiscard]] std::string serialize() const;

    void set(const std::string& key, const std::string& value);
    [[nodiscard]] std::string get(const std::string& key) const;
    [[nodiscard]] static const std::vector<std::string>& keys();

    /// Full network description with layer lists rebuilt from the architecture.
    [[nodiscard]] NetworkConfig network() const;

    Architecture arch;
    NetworkConfig net;  // scalar fields; its layer lists are ignored
    TrainerConfig trainer;
    EvalConfig eval;
    std::string preset = "paper";
};

}  // namespace fann
