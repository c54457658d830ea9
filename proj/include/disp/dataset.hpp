#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace disp {

/// Raw MNIST-style images + digit labels.
struct RawMnistSet {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> images;  // count * rows * cols
  std::vector<std::uint8_t> labels;  // count, values 0-9
};

struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> data;
};

/// Decode an IDX byte stream (big-endian magic 0x00000803 for images,
/// 0x00000801 for labels). Wrong magic and short payloads are rejected.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);

/// Read an IDX file, transparently gunzipping when compressed.
IdxArray read_idx_file(const std::filesystem::path& path);

void write_idx_images(const std::filesystem::path& path, const RawMnistSet& set);
void write_idx_labels(const std::filesystem::path& path, const RawMnistSet& set);

/// Load <prefix>-images-idx3-ubyte[.gz] and <prefix>-labels-idx1-ubyte[.gz].
RawMnistSet load_mnist(const std::filesystem::path& dir, const std::string& prefix);

/// Ten RGB anchors in [0,1]^3; any valid palette keeps a minimum pairwise
/// distance of 0.3 so private classes stay separable.
struct Palette {
  std::array<std::array<double, 3>, 10> colors;

  double min_pairwise_distance() const;
  void validate() const;

  /// red, green, blue, yellow, magenta, cyan, orange, purple, brown, pink at
  /// fixed documented triples (multiples of 1/255).
  static Palette standard();
};

enum class SplitTag : std::uint8_t { train = 0, validation = 1, test = 2 };

/// One biased sample: colorized image (channels-first, [0,1]) plus the
/// target digit and the private color index.
struct SampleRecord {
  std::vector<double> image;  // 3 * height * width
  std::size_t height = 0;
  std::size_t width = 0;
  int target = 0;
  int priv = 0;
  SplitTag split = SplitTag::train;
};

struct BiasConfig {
  double rho = 0.1;                    // P(color == digit's own color)
  std::uint64_t seed = 0;
  std::uint8_t background_threshold = 25;
  std::size_t downscale_factor = 1;    // 1 = none, 2 = 28 -> 14
  std::size_t subset_size = 0;         // 0 = use everything
  std::array<double, 3> fractions = {0.8, 0.1, 0.1};

  void validate() const;
};

/// Test partitions are always re-colorized at this correlation level, where
/// color carries no usable target information.
inline constexpr double kUnbiasedRho = 0.1;

/// Color draw per sample in file order: own color with probability rho, else
/// uniform over the other nine. Pure function of (seed, stream, index).
std::vector<int> assign_colors(std::span<const std::uint8_t> digit_labels, double rho,
                               std::uint64_t seed, std::uint64_t stream);

/// Background pixels (grayscale <= threshold) become the palette color;
/// foreground keeps its grayscale value in all three channels.
std::vector<double> colorize_image(std::span<const std::uint8_t> gray, std::size_t rows,
                                   std::size_t cols, int color, const Palette& palette,
                                   std::uint8_t threshold);

/// Full-set colorization at cfg.rho (no split, no downscale).
std::vector<SampleRecord> colorize(const RawMnistSet& raw, const BiasConfig& cfg,
                                   const Palette& palette);

struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};

/// Disjoint covering partition of {0..count-1}; sizes are the rounded
/// fractions with the remainder folded into the test slice.
SplitIndices split(std::size_t count, std::array<double, 3> fractions, std::uint64_t seed);

/// 2x2 (or fxf) block averaging of a channels-first image.
std::vector<double> downscale_image(std::span<const double> image, std::size_t channels,
                                    std::size_t rows, std::size_t cols, std::size_t factor);

struct DatasetManifest {
  std::uint64_t seed = 0;
  double rho = 0.1;
  double rho_test = kUnbiasedRho;
  std::uint8_t background_threshold = 25;
  std::size_t downscale_factor = 1;
  std::size_t subset_size = 0;
  std::array<double, 3> fractions{};
  Palette palette = Palette::standard();
  SplitIndices indices;  // into the raw source set
};

struct BiasedDataset {
  DatasetManifest manifest;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<SampleRecord> records;  // train, then validation, then test

  std::vector<const SampleRecord*> split_view(SplitTag tag) const;
};

/// The whole construction: seeded subset, three-way split, per-split color
/// assignment (test at the unbiased level), pixels, optional downscale.
BiasedDataset build_biased_dataset(const RawMnistSet& raw, const BiasConfig& cfg,
                                   const Palette& palette);

/// Manifest as JSON plus a per-sample binary blob (grayscale + labels); the
/// manifest alone regenerates the dataset bit-exactly from the raw files.
void save_dataset(const BiasedDataset& dataset, const RawMnistSet& raw,
                  const std::filesystem::path& dir);
BiasedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace disp
