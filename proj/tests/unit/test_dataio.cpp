#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <random>

#include "fann/dataio.hpp"
#include "fann/error.hpp"
#include "test_util.hpp"

using namespace fann;
using fann::testing::random_tensor;
using fann::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Ppm, WhitePixel) {
    auto b = bytes_of("P6\n1 1\n255\n");
    b.insert(b.end(), {255, 255, 255});
    auto t = decode_ppm(b);
    EXPECT_EQ(t, Tensor(Shape{3, 1, 1}, 1.0));
}

TEST(Ppm, CommentsAndScanOrder) {
    auto b = bytes_of("P6 # comment\n2 1\n255\n");
    b.insert(b.end(), {0, 51, 102, 153, 204, 255});
    auto t = decode_ppm(b);
    EXPECT_EQ(t.shape(), Shape({3, 1, 2}));
    EXPECT_DOUBLE_EQ(t.at(1, 0, 0), 0.2);
    EXPECT_DOUBLE_EQ(t.at(0, 0, 1), 0.6);
    EXPECT_DOUBLE_EQ(t.at(2, 0, 1), 1.0);
}

TEST(Pgm, MaskThreshold) {
    auto b = bytes_of("P5\n3 1\n255\n");
    b.insert(b.end(), {128, 127, 0});
    auto m = decode_pgm_mask(b);
    EXPECT_EQ(m, Tensor(Shape{1, 1, 3}, {1, 0, 0}));
    EXPECT_DOUBLE_EQ(decode_pgm(b)[1], 127.0 / 255.0);
}

TEST(Netpbm, MalformedInputsRejectedWithOffsets) {
    auto truncated = bytes_of("P6\n2 2\n255\n");
    truncated.insert(truncated.end(), 5, 7);
    auto msg = error_of([&] { decode_ppm(truncated); });
    EXPECT_NE(msg.find("expected 12"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got 5"), std::string::npos) << msg;

    msg = error_of([&] { decode_ppm(bytes_of("P5\n1 1\n255\n\x01")); });
    EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
    msg = error_of([&] { decode_ppm(bytes_of("P6\n1 1\n65535\n\x01\x01\x01")); });
    EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
    EXPECT_THROW(decode_pgm_mask(bytes_of("P5\n1 x\n255\n\x01")), FormatError);
    EXPECT_THROW(decode_pgm_mask(bytes_of("P5\n0 1\n255\n")), FormatError);
    EXPECT_THROW(decode_pgm_mask(bytes_of("")), FormatError);
}

TEST(Netpbm, RoundTripProperty) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> byte(0, 255), dim(1, 12);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor img(Shape{3, static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))});
        for (auto& v : img.values()) v = byte(rng) / 255.0;
        auto enc = encode_ppm(img);
        EXPECT_EQ(decode_ppm(enc), img);
        EXPECT_EQ(encode_ppm(decode_ppm(enc)), enc);

        Tensor mask(Shape{1, img.shape()[1], img.shape()[2]});
        for (auto& v : mask.values()) v = byte(rng) & 1;
        EXPECT_EQ(decode_pgm_mask(encode_pgm(mask)), mask);
    }
}

TEST(Netpbm, FileRoundTrip) {
    auto dir = scratch_dir("netpbm");
    std::mt19937_64 rng(2);
    Tensor img(Shape{3, 4, 5});
    for (auto& v : img.values()) v = static_cast<double>(rng() % 256) / 255.0;
    write_image_ppm(dir / "sub" / "a.ppm", img);
    EXPECT_EQ(read_image_ppm(dir / "sub" / "a.ppm"), img);
    EXPECT_THROW(read_image_ppm(dir / "missing.ppm"), FormatError);
}

TEST(Fant, SizeOfSmallVector) {
    auto enc = encode_fant(Tensor::vector({1.0, 2.0, 3.0}));
    EXPECT_EQ(enc.size(), 42u);
    EXPECT_EQ(std::memcmp(enc.data(), "FANT", 4), 0);
    EXPECT_EQ(enc[4], 1);  // version, little-endian
    EXPECT_EQ(enc[8], kFantFloat64);
    EXPECT_EQ(enc[9], 1);  // ndim
    EXPECT_EQ(enc[10], 3);
    double first;
    std::memcpy(&first, enc.data() + 18, 8);
    EXPECT_EQ(first, 1.0);
}

TEST(Fant, BitExactRoundTripProperty) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<std::size_t> dim(1, 5), rank(1, 4);
        std::vector<std::size_t> dims(rank(rng));
        for (auto& d : dims) d = dim(rng);
        Tensor t{Shape(dims)};
        for (auto& v : t.values()) {
            std::uint64_t bits = rng();
            std::memcpy(&v, &bits, 8);
            if (!std::isfinite(v)) v = -0.0;
        }
        auto back = decode_fant(encode_fant(t));
        ASSERT_EQ(back.shape(), t.shape());
        EXPECT_EQ(std::memcmp(back.data(), t.data(), t.size() * 8), 0);
    }
    Tensor extremes = Tensor::vector({std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
                                      -0.0, 1e-300});
    auto back = decode_fant(encode_fant(extremes));
    EXPECT_EQ(std::memcmp(back.data(), extremes.data(), 32), 0);
}

TEST(Fant, FileRoundTrip) {
    auto dir = scratch_dir("fant");
    std::mt19937_64 rng(4);
    auto t = random_tensor(Shape{2, 3, 4}, rng);
    write_fant(dir / "t.fant", t);
    EXPECT_EQ(read_fant(dir / "t.fant"), t);
}

TEST(Fant, MalformedRejected) {
    auto good = encode_fant(Tensor::vector({1.0, 2.0, 3.0}));
    auto bad = good;
    bad[0] = 'X';
    EXPECT_NE(error_of([&] { decode_fant(bad); }).find("magic"), std::string::npos);
    bad = good;
    bad[4] = 2;
    EXPECT_NE(error_of([&] { decode_fant(bad); }).find("version"), std::string::npos);
    bad = good;
    bad[8] = 4;
    EXPECT_NE(error_of([&] { decode_fant(bad); }).find("dtype"), std::string::npos);
    bad = good;
    bad[9] = 0;
    EXPECT_THROW(decode_fant(bad), FormatError);  // empty shape
    bad = good;
    bad.pop_back();
    EXPECT_THROW(decode_fant(bad), FormatError);
    bad = good;
    bad.push_back(0);
    EXPECT_THROW(decode_fant(bad), FormatError);
    bad = good;
    bad[10] = 0;
    EXPECT_THROW(decode_fant(bad), FormatError);  // zero extent
    EXPECT_THROW(decode_fant(std::vector<std::uint8_t>(5, 0)), FormatError);
}

TEST(Manifest, RoundTripAndLoad) {
    auto dir = scratch_dir("manifest");
    DatasetManifest m;
    m.root = dir;
    m.entries = {{"images/a.ppm", "masks/a.pgm", 3, 0}, {"images/b.ppm", "masks/b.pgm", 3, 1}};
    m.save(dir / "manifest.txt");
    auto back = DatasetManifest::load(dir / "manifest.txt");
    EXPECT_EQ(back.entries, m.entries);
    EXPECT_EQ(back.root, dir);
}

TEST(Manifest, MalformedLinesRejected) {
    auto dir = scratch_dir("manifest_bad");
    {
        std::ofstream(dir / "m1.txt") << "a.ppm\ta.pgm\t3\n";
        std::ofstream(dir / "m2.txt") << "a.ppm\ta.pgm\tx\t0\n";
        std::ofstream(dir / "m3.txt") << "a.ppm\ta.pgm\t1\t0\n\nb.ppm\tb.pgm\t1\n";
    }
    for (const char* name : {"m1.txt", "m2.txt"}) {
        auto msg = error_of([&] { DatasetManifest::load(dir / name); });
        EXPECT_NE(msg.find(std::string(name) + ":1:"), std::string::npos) << msg;
    }
    auto msg = error_of([&] { DatasetManifest::load(dir / "m3.txt"); });
    EXPECT_NE(msg.find("m3.txt:3:"), std::string::npos) << msg;
    EXPECT_THROW(DatasetManifest::load(dir / "none.txt"), FormatError);
}

TEST(Resize, Examples) {
    std::mt19937_64 rng(5);
    auto t = random_tensor(Shape{3, 4, 5}, rng);
    EXPECT_EQ(resize_bilinear(t, 4, 5), t);
    EXPECT_EQ(resize_bilinear(Tensor(Shape{2, 3, 3}, 0.25), 7, 2), Tensor(Shape{2, 7, 2}, 0.25));

    auto m = Tensor(Shape{1, 2, 2}, {0, 1, 0, 1});
    auto r = resize_bilinear(m, 2, 3);
    EXPECT_EQ(r, Tensor(Shape{1, 2, 3}, {0, 0.5, 1, 0, 0.5, 1}));
    EXPECT_EQ(resize_mask(m, 2, 3), Tensor(Shape{1, 2, 3}, {0, 1, 1, 0, 1, 1}));
    EXPECT_THROW(resize_bilinear(t, 0, 3), ShapeError);
}

TEST(Resize, SingleRowOrColumn) {
    auto t = Tensor(Shape{1, 1, 2}, {2, 4});
    EXPECT_EQ(resize_bilinear(t, 3, 3), Tensor(Shape{1, 3, 3}, {2, 3, 4, 2, 3, 4, 2, 3, 4}));
    EXPECT_EQ(resize_bilinear(t, 1, 1), Tensor(Shape{1, 1, 1}, 2.0));
}

TEST(Synthetic, ManifestSizeAndDeterminism) {
    auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
    SyntheticSpec spec;
    auto da = generate_synthetic_dataset(spec, a);
    auto db = generate_synthetic_dataset(spec, b);
    ASSERT_EQ(da.manifest.entries.size(), 160u);
    EXPECT_EQ(da.boxes, db.boxes);
    for (const auto& e : da.manifest.entries) {
        EXPECT_EQ(read_bytes(a / e.image_path), read_bytes(b / e.image_path));
        EXPECT_EQ(read_bytes(a / e.mask_path), read_bytes(b / e.mask_path));
    }
    EXPECT_EQ(read_bytes(a / "manifest.txt"), read_bytes(b / "manifest.txt"));
}

TEST(Synthetic, MasksMatchBoxesExactly) {
    auto dir = scratch_dir("synth_masks");
    SyntheticSpec spec;
    spec.seed = 9;
    spec.clutter = 8;
    auto ds = generate_synthetic_dataset(spec, dir);
    for (std::size_t i = 0; i < ds.boxes.size(); ++i) {
        auto s = ds.manifest.load_sample(i, spec.height, spec.width);
        const auto& b = ds.boxes[i];
        std::size_t inter = 0, uni = 0;
        for (std::size_t y = 0; y < spec.height; ++y) {
            for (std::size_t x = 0; x < spec.width; ++x) {
                bool in_box = y >= b.top && y < b.top + b.height && x >= b.left && x < b.left + b.width;
                bool in_mask = s.mask.at(0, y, x) == 1.0;
                inter += in_box && in_mask;
                uni += in_box || in_mask;
            }
        }
        EXPECT_EQ(inter, uni) << "entry " << i;
        double fraction = static_cast<double>(b.height * b.width) / static_cast<double>(spec.height * spec.width);
        EXPECT_GE(fraction, 0.1);
        EXPECT_LE(fraction, 0.6);
    }
}

TEST(Synthetic, Validation) {
    auto dir = scratch_dir("synth_bad");
    SyntheticSpec spec;
    spec.identities = 1;
    EXPECT_THROW(generate_synthetic_dataset(spec, dir), FormatError);
    spec = {};
    spec.cameras = 1;
    EXPECT_THROW(generate_synthetic_dataset(spec, dir), FormatError);
    spec = {};
    spec.person_height = 40;
    spec.person_width = 5;
    EXPECT_THROW(generate_synthetic_dataset(spec, dir), ShapeError);
}

TEST(Dataset, LoadSampleResizes) {
    auto dir = scratch_dir("synth_resize");
    SyntheticSpec spec;
    spec.identities = 2;
    spec.images_per_camera = 1;
    auto ds = generate_synthetic_dataset(spec, dir);
    auto s = ds.manifest.load_sample(0, 20, 7);
    EXPECT_EQ(s.image.shape(), Shape({3, 20, 7}));
    EXPECT_EQ(s.mask.shape(), Shape({1, 20, 7}));
    for (double v : s.mask.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_EQ(ds.manifest.load_all(37, 13).size(), 4u);
}
