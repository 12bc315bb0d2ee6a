#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fann/tensor.hpp"

namespace fann {

// ---- netpbm ----

/// Binary PPM (P6, maxval 255) to a (3,H,W) tensor in [0,1].
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
/// Binary PGM (P5, maxval 255) to a (1,H,W) mask thresholded at 0.5.
Tensor decode_pgm_mask(std::span<const std::uint8_t> bytes);
/// Binary PGM to (1,H,W) gray values in [0,1] without thresholding.
Tensor decode_pgm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_ppm(const Tensor& image);
std::vector<std::uint8_t> encode_pgm(const Tensor& gray);

Tensor read_image_ppm(const std::filesystem::path& path);
Tensor read_mask_pgm(const std::filesystem::path& path);
void write_image_ppm(const std::filesystem::path& path, const Tensor& image);
void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask);

// ---- FANT tensor files ----
//
// Little-endian: "FANT", u32 version (1), u8 dtype (1 = float64), u8 ndim,
// ndim x u64 extents, row-major float64 payload.

inline constexpr std::uint32_t kFantVersion = 1;
inline constexpr std::uint8_t kFantFloat64 = 1;

std::vector<std::uint8_t> encode_fant(const Tensor& t);
Tensor decode_fant(std::span<const std::uint8_t> bytes);
void write_fant(const std::filesystem::path& path, const Tensor& t);
Tensor read_fant(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// ---- datasets ----

struct Sample {
    Tensor image;  // (3,H,W) in [0,1]
    Tensor mask;   // (1,H,W) in {0,1}
    int identity = 0;
    int camera = 0;
};

struct ManifestEntry {
    std::string image_path;
    std::string mask_path;
    int identity = 0;
    int camera = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// `image<TAB>mask<TAB>identity<TAB>camera` per line, paths relative to the
/// manifest's directory.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    /// A directory means its manifest.txt.
    static DatasetManifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& file) const;

    /// Reads entry `i`, resized to (height, width) when it differs.
    [[nodiscard]] Sample load_sample(std::size_t i, std::size_t height, std::size_t width) const;
    [[nodiscard]] std::vector<Sample> load_all(std::size_t height, std::size_t width) const;
};

/// Corner-aligned bilinear resampling of every channel.
Tensor resize_bilinear(const Tensor& t, std::size_t height, std::size_t width);
/// Bilinear resize followed by re-thresholding at 0.5.
Tensor resize_mask(const Tensor& mask, std::size_t height, std::size_t width);

// ---- synthetic data ----

struct SyntheticSpec {
    std::size_t identities = 20;
    std::size_t cameras = 2;
    std::size_t images_per_camera = 4;
    std::size_t height = 37;
    std::size_t width = 13;
    std::uint64_t seed = 1;
    /// Distractor shapes painted behind each person.
    std::size_t clutter = 3;
    /// Fixed person rectangle; 0 draws a random size per image.
    std::size_t person_height = 0;
    std::size_t person_width = 0;
};

struct Box {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    friend bool operator==(const Box&, const Box&) = default;
};

struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<Box> boxes;  // person rectangle of each manifest entry
};

/// Writes images/, masks/ and manifest.txt under `out_dir`. Deterministic in the seed.
SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace fann
