#include "fann/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fann/error.hpp"

namespace fann {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw FormatError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

int parse_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw FormatError("config: " + key + " expects an integer, got '" + v + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw FormatError("config: " + key + " expects a real number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw FormatError("config: " + key + " expects 0/1/true/false, got '" + v + "'");
}

Extent2 parse_extent(const std::string& key, const std::string& v) {
    const auto x = v.find('x');
    if (x == std::string::npos) {
        const auto n = parse_size(key, v);
        return {n, n};
    }
    return {parse_size(key, v.substr(0, x)), parse_size(key, v.substr(x + 1))};
}

std::string real_str(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string extent_str(Extent2 e) { return std::to_string(e.h) + "x" + std::to_string(e.w); }

struct Key {
    std::string name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class Access>
Key size_key(std::string name, Access access) {
    return {name, [access](const RunConfig& c) { return std::to_string(access(c)); },
            [access, name](RunConfig& c, const std::string& v) { access(c) = parse_size(name, v); }};
}

template <class Access>
Key int_key(std::string name, Access access) {
    return {name, [access](const RunConfig& c) { return std::to_string(access(c)); },
            [access, name](RunConfig& c, const std::string& v) { access(c) = parse_int(name, v); }};
}

template <class Access>
Key real_key(std::string name, Access access) {
    return {name, [access](const RunConfig& c) { return real_str(access(c)); },
            [access, name](RunConfig& c, const std::string& v) { access(c) = parse_real(name, v); }};
}

template <class Access>
Key bool_key(std::string name, Access access) {
    return {name, [access](const RunConfig& c) { return std::string(access(c) ? "1" : "0"); },
            [access, name](RunConfig& c, const std::string& v) { access(c) = parse_bool(name, v); }};
}

template <class Access>
Key extent_key(std::string name, Access access) {
    return {name, [access](const RunConfig& c) { return extent_str(access(c)); },
            [access, name](RunConfig& c, const std::string& v) { access(c) = parse_extent(name, v); }};
}

#define FANN_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Key>& registry() {
    static const std::vector<Key> keys = {
        {"preset", [](const RunConfig& c) { return c.preset; },
         [](RunConfig& c, const std::string& v) {
             if (v == "paper") c = RunConfig::paper();
             else if (v == "desk") c = RunConfig::desk();
             else throw FormatError("config: preset must be paper or desk, got '" + v + "'");
         }},
        size_key("input_height", FANN_FIELD(net.input_height)),
        size_key("input_width", FANN_FIELD(net.input_width)),
        size_key("enc1_channels", FANN_FIELD(arch.enc1_channels)),
        extent_key("enc1_kernel", FANN_FIELD(arch.enc1_kernel)),
        extent_key("enc1_stride", FANN_FIELD(arch.enc1_stride)),
        extent_key("enc1_padding", FANN_FIELD(arch.enc1_padding)),
        size_key("enc2_channels", FANN_FIELD(arch.enc2_channels)),
        extent_key("enc2_kernel", FANN_FIELD(arch.enc2_kernel)),
        extent_key("enc2_stride", FANN_FIELD(arch.enc2_stride)),
        extent_key("enc2_padding", FANN_FIELD(arch.enc2_padding)),
        extent_key("pool_kernel", FANN_FIELD(arch.pool_kernel)),
        extent_key("pool_stride", FANN_FIELD(arch.pool_stride)),
        extent_key("pool_padding", FANN_FIELD(arch.pool_padding)),
        size_key("dec1_channels", FANN_FIELD(arch.dec1_channels)),
        extent_key("dec1_kernel", FANN_FIELD(arch.dec1_kernel)),
        extent_key("dec1_stride", FANN_FIELD(arch.dec1_stride)),
        extent_key("dec1_padding", FANN_FIELD(arch.dec1_padding)),
        extent_key("dec2_kernel", FANN_FIELD(arch.dec2_kernel)),
        extent_key("dec2_stride", FANN_FIELD(arch.dec2_stride)),
        extent_key("dec2_padding", FANN_FIELD(arch.dec2_padding)),
        size_key("parts", FANN_FIELD(net.parts)),
        size_key("residual_blocks", FANN_FIELD(net.residual_blocks_per_part)),
        size_key("part_channels", FANN_FIELD(net.part_channels)),
        size_key("fc_small_dim", FANN_FIELD(net.fc_small_dim)),
        size_key("fc_large_dim", FANN_FIELD(net.fc_large_dim)),
        real_key("margin", FANN_FIELD(net.margin)),
        real_key("zeta", FANN_FIELD(net.zeta)),
        real_key("eta", FANN_FIELD(net.eta)),
        real_key("kernel_sigma", FANN_FIELD(net.kernel_sigma)),
        real_key("kernel_rho", FANN_FIELD(net.kernel_rho)),
        bool_key("kernel_normalized", FANN_FIELD(net.kernel_normalized)),
        real_key("init_u", FANN_FIELD(net.init_u)),
        real_key("init_v", FANN_FIELD(net.init_v)),
        real_key("gamma", FANN_FIELD(net.gamma)),
        {"sign_mode", [](const RunConfig& c) { return std::string(c.net.sign_mode == SignMode::textual ? "textual" : "literal"); },
         [](RunConfig& c, const std::string& v) {
             if (v == "textual") c.net.sign_mode = SignMode::textual;
             else if (v == "literal") c.net.sign_mode = SignMode::literal;
             else throw FormatError("config: sign_mode must be textual or literal, got '" + v + "'");
         }},
        {"loss_kind",
         [](const RunConfig& c) {
             return std::string(c.net.loss_kind == TripletLossKind::symmetric ? "symmetric" : "asymmetric");
         },
         [](RunConfig& c, const std::string& v) {
             if (v == "symmetric") c.net.loss_kind = TripletLossKind::symmetric;
             else if (v == "asymmetric") c.net.loss_kind = TripletLossKind::asymmetric;
             else throw FormatError("config: loss_kind must be symmetric or asymmetric, got '" + v + "'");
         }},
        real_key("init_std_min", FANN_FIELD(net.init_std_min)),
        real_key("init_std_max", FANN_FIELD(net.init_std_max)),
        real_key("decoder_init_scale", FANN_FIELD(net.decoder_init_scale)),
        {"seed", [](const RunConfig& c) { return std::to_string(c.net.seed); },
         [](RunConfig& c, const std::string& v) { c.net.seed = parse_size("seed", v); }},
        real_key("learning_rate", FANN_FIELD(trainer.learning_rate)),
        real_key("lr_decay", FANN_FIELD(trainer.lr_decay)),
        size_key("lr_decay_interval", FANN_FIELD(trainer.lr_decay_interval)),
        size_key("batch_size", FANN_FIELD(trainer.batch_size)),
        size_key("log_interval", FANN_FIELD(trainer.log_interval)),
        size_key("checkpoint_interval", FANN_FIELD(trainer.checkpoint_interval)),
        size_key("monitor_batch", FANN_FIELD(trainer.monitor_batch)),
        int_key("probe_camera", FANN_FIELD(eval.probe_camera)),
        int_key("gallery_camera", FANN_FIELD(eval.gallery_camera)),
        size_key("trials", FANN_FIELD(eval.trials)),
        size_key("eval_identities", FANN_FIELD(eval.identities)),
        bool_key("multi_shot", FANN_FIELD(eval.multi_shot)),
        size_key("max_rank", FANN_FIELD(eval.max_rank)),
    };
    return keys;
}

#undef FANN_FIELD

const Key& find_key(const std::string& name) {
    for (const auto& k : registry()) {
        if (k.name == name) return k;
    }
    throw FormatError("config: unknown key '" + name + "'");
}

}  // namespace

RunConfig::RunConfig() : net(NetworkConfig::paper()) {}

RunConfig RunConfig::paper() { return RunConfig(); }

RunConfig RunConfig::desk() {
    RunConfig c;
    c.preset = "desk";
    c.net = NetworkConfig::desk();
    c.arch.enc1_channels = 8;
    c.arch.enc1_kernel = {5, 5};
    c.arch.enc1_stride = {2, 2};
    c.arch.enc2_channels = 8;
    c.arch.enc2_kernel = {3, 3};
    c.arch.enc2_stride = {1, 1};
    c.arch.dec1_channels = 8;
    c.arch.dec1_kernel = {3, 3};
    c.arch.dec1_stride = {1, 1};
    c.arch.dec2_kernel = {5, 5};
    c.arch.dec2_stride = {2, 2};
    c.trainer.log_interval = 50;
    c.eval.max_rank = 10;
    return c;
}

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& k : registry()) out.push_back(k.name);
        return out;
    }();
    return names;
}

void RunConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return find_key(key).get(*this); }

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
    RunConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError(source + ":" + std::to_string(line_no) + ": expected key = value");
        }
        try {
            c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const FormatError& e) {
            throw FormatError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError("cannot open config " + file.string());
    return parse(in, file.string());
}

std::string RunConfig::serialize() const {
    std::ostringstream out;
    for (const auto& k : registry()) out << k.name << " = " << k.get(*this) << '\n';
    return out.str();
}

void RunConfig::save(const std::filesystem::path& file) const {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + file.string());
    out << serialize();
}

NetworkConfig RunConfig::network() const {
    NetworkConfig cfg = net;
    const auto c = cfg.input_channels;
    cfg.encoder = {LayerSpec::conv(c, arch.enc1_channels, arch.enc1_kernel, arch.enc1_stride, arch.enc1_padding),
                   LayerSpec::relu(),
                   LayerSpec::conv(arch.enc1_channels, arch.enc2_channels, arch.enc2_kernel, arch.enc2_stride,
                                   arch.enc2_padding),
                   LayerSpec::relu()};
    cfg.encoder_pool = LayerSpec::maxpool(arch.pool_kernel, arch.pool_stride, arch.pool_padding);
    cfg.decoder = {LayerSpec::deconv(arch.enc2_channels, arch.dec1_channels, arch.dec1_kernel, arch.dec1_stride,
                                     arch.dec1_padding),
                   LayerSpec::relu(),
                   LayerSpec::deconv(arch.dec1_channels, c, arch.dec2_kernel, arch.dec2_stride, arch.dec2_padding)};
    return cfg;
}

}  // namespace fann
