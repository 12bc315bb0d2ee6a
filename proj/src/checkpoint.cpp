#include "fann/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fann/dataio.hpp"
#include "fann/error.hpp"

namespace fann {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& dir, const Network& net, const RunConfig& cfg) {
    fs::create_directories(dir);
    cfg.save(dir / "config.txt");
    std::ostringstream layers;
    const auto& names = net.param_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& p = net.params()[i];
        std::vector<double> flat(p.weights.values().begin(), p.weights.values().end());
        flat.insert(flat.end(), p.biases.values().begin(), p.biases.values().end());
        const std::string file = names[i] + ".fant";
        write_fant(dir / file, Tensor::vector(std::move(flat)));
        layers << names[i] << '\t' << file << '\t' << p.weights.shape().str() << '\t' << p.biases.shape().str()
               << '\n';
    }
    std::ofstream out(dir / "layers.txt", std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (dir / "layers.txt").string());
    out << layers.str();
}

Checkpoint load_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError("checkpoint directory " + dir.string() + " does not exist");
    auto cfg = RunConfig::load(dir / "config.txt");
    auto net = Network::build(cfg.network());

    std::ifstream in(dir / "layers.txt");
    if (!in) throw FormatError("checkpoint " + dir.string() + " has no layers.txt");
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string name, file, wdims, bdims;
        if (!std::getline(fields, name, '\t') || !std::getline(fields, file, '\t') ||
            !std::getline(fields, wdims, '\t') || !std::getline(fields, bdims)) {
            throw FormatError("layers.txt: malformed line '" + line + "'");
        }
        if (index >= net.params().size() || net.param_names()[index] != name) {
            throw FormatError("layers.txt: entry '" + name + "' does not match the configured network");
        }
        auto& p = net.params()[index];
        if (wdims != p.weights.shape().str() || bdims != p.biases.shape().str()) {
            throw FormatError("layers.txt: " + name + " has shapes " + wdims + "/" + bdims + ", network expects " +
                              p.weights.shape().str() + "/" + p.biases.shape().str());
        }
        const Tensor flat = read_fant(dir / file);
        if (flat.size() != p.count()) {
            throw FormatError(file + ": holds " + std::to_string(flat.size()) + " values, expected " +
                              std::to_string(p.count()));
        }
        std::copy_n(flat.data(), p.weights.size(), p.weights.data());
        std::copy_n(flat.data() + p.weights.size(), p.biases.size(), p.biases.data());
        ++index;
    }
    if (index != net.params().size()) {
        throw FormatError("layers.txt lists " + std::to_string(index) + " parameter sets, network has " +
                          std::to_string(net.params().size()));
    }
    return {std::move(cfg), std::move(net)};
}

}  // namespace fann
