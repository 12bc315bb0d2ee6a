#pragma once

#include <filesystem>

#include "fann/config.hpp"
#include "fann/network.hpp"

namespace fann {

/// Directory layout:
///   config.txt   run configuration the network was built from
///   layers.txt   `name<TAB>file<TAB>weight dims<TAB>bias dims`, build order
///   <name>.fant  1-D tensor: weights (row-major) followed by biases
void save_checkpoint(const std::filesystem::path& dir, const Network& net, const RunConfig& cfg);

struct Checkpoint {
    RunConfig config;
    Network network;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace fann
