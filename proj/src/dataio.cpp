#include "fann/dataio.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fann/error.hpp"

namespace fann {

namespace fs = std::filesystem;

// ---- netpbm ----

namespace {

struct PnmHeader {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t payload_offset = 0;
};

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > (1u << 24)) throw FormatError(std::string("netpbm: ") + what + " too large at byte " + std::to_string(start));
            ++pos_;
        }
        if (pos_ == start) {
            throw FormatError(std::string("netpbm: expected ") + what + " at byte offset " + std::to_string(start));
        }
        return value;
    }

    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }
    bool at_end() const { return pos_ >= bytes_.size(); }
    std::uint8_t peek() const { return bytes_[pos_]; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

PnmHeader parse_pnm(std::span<const std::uint8_t> bytes, char kind, std::size_t channels) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(kind)) {
        throw FormatError(std::string("netpbm: bad magic at byte offset 0, expected P") + kind);
    }
    HeaderReader r(bytes.subspan(0));
    r.advance();
    r.advance();
    PnmHeader h;
    h.width = r.number("width");
    h.height = r.number("height");
    const std::size_t maxval_offset = r.pos();
    const std::size_t maxval = r.number("maxval");
    if (maxval != 255) {
        throw FormatError("netpbm: maxval " + std::to_string(maxval) + " at byte offset " +
                          std::to_string(maxval_offset) + " is not 255");
    }
    if (h.width == 0 || h.height == 0) throw FormatError("netpbm: zero image dimension");
    if (r.at_end() || !std::isspace(r.peek())) {
        throw FormatError("netpbm: missing whitespace before payload at byte offset " + std::to_string(r.pos()));
    }
    r.advance();
    h.payload_offset = r.pos();
    const std::size_t expected = h.width * h.height * channels;
    const std::size_t actual = bytes.size() - h.payload_offset;
    if (actual < expected) {
        throw FormatError("netpbm: truncated payload at byte offset " + std::to_string(h.payload_offset) +
                          ": expected " + std::to_string(expected) + " bytes, got " + std::to_string(actual));
    }
    return h;
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> encode_pnm(const Tensor& t, char kind, std::size_t channels) {
    if (t.shape().rank() != 3 || t.shape()[0] != channels) {
        throw ShapeError(std::string("netpbm P") + kind + ": expected (" + std::to_string(channels) +
                         ",H,W), got " + t.shape().str());
    }
    const auto h = t.shape()[1], w = t.shape()[2];
    const std::string header = std::string("P") + kind + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + channels * h * w);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t c = 0; c < channels; ++c) out.push_back(quantize(t.at(c, i, j)));
        }
    }
    return out;
}

}  // namespace

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
    const auto h = parse_pnm(bytes, '6', 3);
    Tensor t(Shape{3, h.height, h.width});
    const std::uint8_t* p = bytes.data() + h.payload_offset;
    for (std::size_t i = 0; i < h.height; ++i) {
        for (std::size_t j = 0; j < h.width; ++j) {
            for (std::size_t c = 0; c < 3; ++c) t.at(c, i, j) = *p++ / 255.0;
        }
    }
    return t;
}

Tensor decode_pgm(std::span<const std::uint8_t> bytes) {
    const auto h = parse_pnm(bytes, '5', 1);
    Tensor t(Shape{1, h.height, h.width});
    const std::uint8_t* p = bytes.data() + h.payload_offset;
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = p[k] / 255.0;
    return t;
}

Tensor decode_pgm_mask(std::span<const std::uint8_t> bytes) {
    Tensor t = decode_pgm(bytes);
    for (auto& v : t.values()) v = v >= 0.5 ? 1.0 : 0.0;
    return t;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) { return encode_pnm(image, '6', 3); }
std::vector<std::uint8_t> encode_pgm(const Tensor& gray) { return encode_pnm(gray, '5', 1); }

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + path.string());
}

namespace {

template <class F>
auto with_path(const fs::path& path, F&& f) {
    try {
        return f();
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace

Tensor read_image_ppm(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return with_path(path, [&] { return decode_ppm(bytes); });
}

Tensor read_mask_pgm(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return with_path(path, [&] { return decode_pgm_mask(bytes); });
}

void write_image_ppm(const fs::path& path, const Tensor& image) { write_bytes(path, encode_ppm(image)); }
void write_mask_pgm(const fs::path& path, const Tensor& mask) { write_bytes(path, encode_pgm(mask)); }

// ---- FANT ----

namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <class T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[offset + i]) << (8 * i);
    return value;
}

}  // namespace

std::vector<std::uint8_t> encode_fant(const Tensor& t) {
    if (t.shape().rank() == 0 || t.shape().rank() > 255) throw FormatError("fant: tensor rank must be 1..255");
    std::vector<std::uint8_t> out = {'F', 'A', 'N', 'T'};
    put_le<std::uint32_t>(out, kFantVersion);
    out.push_back(kFantFloat64);
    out.push_back(static_cast<std::uint8_t>(t.shape().rank()));
    for (auto d : t.shape().dims()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        put_le<std::uint64_t>(out, bits);
    }
    return out;
}

Tensor decode_fant(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 10 || std::memcmp(bytes.data(), "FANT", 4) != 0) {
        throw FormatError("fant: bad magic at byte offset 0");
    }
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kFantVersion) {
        throw FormatError("fant: unsupported version " + std::to_string(version) + " at byte offset 4");
    }
    if (bytes[8] != kFantFloat64) {
        throw FormatError("fant: unsupported dtype " + std::to_string(bytes[8]) + " at byte offset 8");
    }
    const std::size_t ndim = bytes[9];
    if (ndim == 0) throw FormatError("fant: empty shape (ndim 0) at byte offset 9");
    const std::size_t header = 10 + 8 * ndim;
    if (bytes.size() < header) {
        throw FormatError("fant: truncated extents: expected " + std::to_string(header) + " header bytes, got " +
                          std::to_string(bytes.size()));
    }
    std::vector<std::size_t> dims(ndim);
    std::size_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        const auto d = get_le<std::uint64_t>(bytes, 10 + 8 * i);
        if (d == 0 || d > (std::uint64_t{1} << 40) / count) {
            throw FormatError("fant: invalid extent " + std::to_string(d) + " at byte offset " +
                              std::to_string(10 + 8 * i));
        }
        dims[i] = static_cast<std::size_t>(d);
        count *= dims[i];
    }
    const std::size_t expected = header + 8 * count;
    if (bytes.size() != expected) {
        throw FormatError("fant: payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto bits = get_le<std::uint64_t>(bytes, header + 8 * i);
        std::memcpy(&values[i], &bits, sizeof bits);
    }
    return Tensor(Shape(std::move(dims)), std::move(values));
}

void write_fant(const fs::path& path, const Tensor& t) { write_bytes(path, encode_fant(t)); }

Tensor read_fant(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return with_path(path, [&] { return decode_fant(bytes); });
}

// ---- manifests ----

DatasetManifest DatasetManifest::load(const fs::path& path) {
    const fs::path file = fs::is_directory(path) ? path / "manifest.txt" : path;
    std::ifstream in(file);
    if (!in) throw FormatError("cannot open manifest " + file.string());
    DatasetManifest m;
    m.root = file.parent_path();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 4) {
            throw FormatError(file.string() + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                              std::to_string(fields.size()));
        }
        ManifestEntry e;
        e.image_path = fields[0];
        e.mask_path = fields[1];
        try {
            std::size_t used = 0;
            e.identity = std::stoi(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing");
            e.camera = std::stoi(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw FormatError(file.string() + ":" + std::to_string(line_no) + ": identity/camera must be integers");
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void DatasetManifest::save(const fs::path& file) const {
    std::ostringstream out;
    for (const auto& e : entries) {
        out << e.image_path << '\t' << e.mask_path << '\t' << e.identity << '\t' << e.camera << '\n';
    }
    const std::string text = out.str();
    write_bytes(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Sample DatasetManifest::load_sample(std::size_t i, std::size_t height, std::size_t width) const {
    const auto& e = entries.at(i);
    Sample s;
    s.image = read_image_ppm(root / e.image_path);
    s.mask = read_mask_pgm(root / e.mask_path);
    if (s.image.shape()[1] != s.mask.shape()[1] || s.image.shape()[2] != s.mask.shape()[2]) {
        throw FormatError("image " + e.image_path + " and mask " + e.mask_path + " differ in size");
    }
    if (s.image.shape()[1] != height || s.image.shape()[2] != width) {
        s.image = resize_bilinear(s.image, height, width);
        s.mask = resize_mask(s.mask, height, width);
    }
    s.identity = e.identity;
    s.camera = e.camera;
    return s;
}

std::vector<Sample> DatasetManifest::load_all(std::size_t height, std::size_t width) const {
    std::vector<Sample> out;
    out.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) out.push_back(load_sample(i, height, width));
    return out;
}

// ---- resizing ----

Tensor resize_bilinear(const Tensor& t, std::size_t height, std::size_t width) {
    if (t.shape().rank() != 3) throw ShapeError("resize_bilinear: expected (C,H,W), got " + t.shape().str());
    if (height == 0 || width == 0) throw ShapeError("resize_bilinear: target dims must be positive");
    const auto c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
    if (h == height && w == width) return t;
    Tensor out(Shape{c, height, width});
    auto source = [](std::size_t i, std::size_t dst, std::size_t src) {
        return dst > 1 ? static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1) : 0.0;
    };
    for (std::size_t i = 0; i < height; ++i) {
        const double y = source(i, height, h);
        const auto y0 = static_cast<std::size_t>(std::floor(y));
        const auto y1 = std::min(y0 + 1, h - 1);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t j = 0; j < width; ++j) {
            const double x = source(j, width, w);
            const auto x0 = static_cast<std::size_t>(std::floor(x));
            const auto x1 = std::min(x0 + 1, w - 1);
            const double fx = x - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double top = t.at(ch, y0, x0) * (1 - fx) + t.at(ch, y0, x1) * fx;
                const double bottom = t.at(ch, y1, x0) * (1 - fx) + t.at(ch, y1, x1) * fx;
                out.at(ch, i, j) = top * (1 - fy) + bottom * fy;
            }
        }
    }
    return out;
}

Tensor resize_mask(const Tensor& mask, std::size_t height, std::size_t width) {
    Tensor out = resize_bilinear(mask, height, width);
    for (auto& v : out.values()) v = v >= 0.5 ? 1.0 : 0.0;
    return out;
}

// ---- synthetic data ----

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Rgb rgb{};
    switch (static_cast<int>(hp) % 6) {
        case 0: rgb = {c, x, 0}; break;
        case 1: rgb = {x, c, 0}; break;
        case 2: rgb = {0, c, x}; break;
        case 3: rgb = {0, x, c}; break;
        case 4: rgb = {x, 0, c}; break;
        default: rgb = {c, 0, x}; break;
    }
    const double m = v - c;
    for (auto& ch : rgb) ch += m;
    return rgb;
}

struct Appearance {
    Rgb top;
    Rgb bottom;
    double split = 0.5;  // fraction of the rectangle height covered by `top`
    int pattern = 0;     // 0 solid, 1 horizontal stripes, 2 vertical stripes
};

struct CameraLook {
    Rgb background;
    Rgb gain;
    double noise = 0.03;
};

void paint(Tensor& img, const Box& b, const Rgb& color) {
    for (std::size_t i = b.top; i < b.top + b.height; ++i) {
        for (std::size_t j = b.left; j < b.left + b.width; ++j) {
            for (std::size_t c = 0; c < 3; ++c) img.at(c, i, j) = color[c];
        }
    }
}

void paint_person(Tensor& img, const Box& b, const Appearance& a, double brightness) {
    const auto split_row = b.top + static_cast<std::size_t>(std::lround(a.split * static_cast<double>(b.height)));
    for (std::size_t i = b.top; i < b.top + b.height; ++i) {
        const bool upper = i < split_row;
        for (std::size_t j = b.left; j < b.left + b.width; ++j) {
            Rgb color = upper ? a.top : a.bottom;
            const bool stripe = upper && ((a.pattern == 1 && (i - b.top) % 2 == 1) ||
                                          (a.pattern == 2 && (j - b.left) % 2 == 1));
            const double shade = (stripe ? 0.6 : 1.0) * brightness;
            for (std::size_t c = 0; c < 3; ++c) img.at(c, i, j) = color[c] * shade;
        }
    }
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
    if (spec.identities < 2) throw FormatError("synthetic: need at least 2 identities");
    if (spec.cameras < 2) throw FormatError("synthetic: need at least 2 cameras");
    if (spec.images_per_camera == 0) throw FormatError("synthetic: need at least 1 image per camera");
    if (spec.height < 4 || spec.width < 2) {
        throw ShapeError("synthetic: frame " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                         " is too small for a person rectangle");
    }
    if (spec.person_height > spec.height || spec.person_width > spec.width) {
        throw ShapeError("synthetic: person rectangle " + std::to_string(spec.person_height) + "x" +
                         std::to_string(spec.person_width) + " larger than frame " + std::to_string(spec.height) +
                         "x" + std::to_string(spec.width));
    }
    const auto H = spec.height, W = spec.width;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto below = [&](std::size_t n) { return static_cast<std::size_t>(unit(rng) * static_cast<double>(n)) % n; };

    // Hues spread evenly over the identities, then shuffled, so every
    // identity keeps a distinct (top, bottom) colour pair.
    std::vector<std::size_t> top_order(spec.identities), bottom_order(spec.identities);
    std::iota(top_order.begin(), top_order.end(), 0);
    std::iota(bottom_order.begin(), bottom_order.end(), 0);
    std::shuffle(top_order.begin(), top_order.end(), rng);
    std::shuffle(bottom_order.begin(), bottom_order.end(), rng);
    const auto n = static_cast<double>(spec.identities);
    std::vector<Appearance> people(spec.identities);
    for (std::size_t id = 0; id < spec.identities; ++id) {
        auto& a = people[id];
        a.top = hsv((static_cast<double>(top_order[id]) + uniform(-0.2, 0.2)) / n, uniform(0.6, 1.0), uniform(0.7, 1.0));
        a.bottom = hsv((static_cast<double>(bottom_order[id]) + 0.5 + uniform(-0.2, 0.2)) / n, uniform(0.4, 0.9),
                       uniform(0.35, 0.75));
        a.split = uniform(0.4, 0.6);
        a.pattern = static_cast<int>(below(3));
    }
    std::vector<CameraLook> cameras(spec.cameras);
    for (auto& cam : cameras) {
        cam.background = hsv(unit(rng), uniform(0.0, 0.3), uniform(0.3, 0.7));
        cam.gain = {uniform(0.8, 1.1), uniform(0.8, 1.1), uniform(0.8, 1.1)};
        cam.noise = uniform(0.02, 0.05);
    }

    SyntheticDataset out;
    out.manifest.root = out_dir;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t id = 0; id < spec.identities; ++id) {
        for (std::size_t c = 0; c < spec.cameras; ++c) {
            const auto& cam = cameras[c];
            for (std::size_t k = 0; k < spec.images_per_camera; ++k) {
                Tensor img(Shape{3, H, W});
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                        for (std::size_t ch = 0; ch < 3; ++ch) {
                            img.at(ch, i, j) = cam.background[ch] + cam.noise * gauss(rng);
                        }
                    }
                }
                for (std::size_t d = 0; d < spec.clutter; ++d) {
                    Box b;
                    b.height = 1 + below(std::max<std::size_t>(1, H / 2));
                    b.width = 1 + below(std::max<std::size_t>(1, W / 2));
                    b.top = below(H - b.height + 1);
                    b.left = below(W - b.width + 1);
                    paint(img, b, hsv(unit(rng), uniform(0.5, 1.0), uniform(0.4, 1.0)));
                }

                Box person;
                if (spec.person_height > 0 && spec.person_width > 0) {
                    person.height = spec.person_height;
                    person.width = spec.person_width;
                } else {
                    const double frame = static_cast<double>(H * W);
                    for (;;) {
                        const double area = uniform(0.3, 0.55) * frame;
                        person.height = std::clamp<std::size_t>(
                            static_cast<std::size_t>(std::lround(uniform(0.75, 0.95) * static_cast<double>(H))), 1, H);
                        person.width = std::clamp<std::size_t>(
                            static_cast<std::size_t>(std::lround(area / static_cast<double>(person.height))), 1, W);
                        const double fraction = static_cast<double>(person.height * person.width) / frame;
                        if (fraction >= 0.1 && fraction <= 0.6) break;
                    }
                }
                person.top = below(H - person.height + 1);
                person.left = below(W - person.width + 1);
                paint_person(img, person, people[id], uniform(0.9, 1.1));

                Tensor mask(Shape{1, H, W});
                for (std::size_t i = person.top; i < person.top + person.height; ++i) {
                    for (std::size_t j = person.left; j < person.left + person.width; ++j) mask.at(0, i, j) = 1.0;
                }
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                        for (std::size_t ch = 0; ch < 3; ++ch) {
                            img.at(ch, i, j) = std::clamp(img.at(ch, i, j) * cam.gain[ch], 0.0, 1.0);
                        }
                    }
                }

                char stem[64];
                std::snprintf(stem, sizeof stem, "id%04zu_c%zu_%02zu", id, c, k);
                ManifestEntry e{std::string("images/") + stem + ".ppm", std::string("masks/") + stem + ".pgm",
                                static_cast<int>(id), static_cast<int>(c)};
                write_image_ppm(out_dir / e.image_path, img);
                write_mask_pgm(out_dir / e.mask_path, mask);
                out.manifest.entries.push_back(std::move(e));
                out.boxes.push_back(person);
            }
        }
    }
    out.manifest.save(out_dir / "manifest.txt");
    return out;
}

}  // namespace fann
