#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgmf/common.hpp"

namespace mgmf {

inline constexpr std::array<const char*, 4> kTaskNames{"mr", "sa", "id", "od"};

struct Box {
  double x = 0, y = 0, w = 0, h = 0;  // pixels, origin top-left
};

// Dense pixel grid, row-major [height][width][channels], values in [0,1].
struct ImageGrid {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<double> pixels;

  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return pixels[(r * width + c) * channels + ch];
  }
  double& at(std::size_t r, std::size_t c, std::size_t ch) {
    return pixels[(r * width + c) * channels + ch];
  }
};

// Painted rectangle of a synthetic image. Patterns: "solid" paints `value`;
// "h2"/"v2"/"d2" alternate value +/- amplitude by row/column/diagonal parity;
// "h4" uses period-4 row stripes. The non-solid patterns share one mean, so
// they survive region-scale encoding but wash out under coarse downsampling.
struct PatternBlock {
  double x = 0, y = 0, w = 0, h = 0;
  std::string pattern = "solid";
  double value = 0.5;
  double amplitude = 0.0;
};

struct SyntheticImage {
  std::size_t height = 0, width = 0, channels = 1;
  double background = 0.0;
  std::vector<PatternBlock> blocks;
};

// Where a sample's image payload comes from.
struct ImageSource {
  enum class Kind { BlobPath, Synthetic, Features };
  Kind kind = Kind::Synthetic;
  std::string path;          // BlobPath / Features, relative to the manifest
  SyntheticImage synthetic;  // Synthetic
};

struct MemeSample {
  std::string id;
  std::vector<int> text_tokens;
  std::vector<int> source_tokens;
  std::vector<int> target_tokens;
  ImageSource image;
  std::vector<Box> regions;
  std::array<int, 4> labels{};  // task order mr, sa, id, od
};

// Manifest-side validation bounds, fixed by the run config.
struct DataLimits {
  std::size_t vocab = 0;
  std::size_t max_text = 0;
  std::size_t max_source = 0;
  std::size_t max_target = 0;
  std::array<int, 4> class_counts{};
};

// One sample per line. Loading validates every invariant and fails with the
// line number and sample id on the first violation; blob-backed images have
// their header read so box bounds are checked up front.
std::vector<MemeSample> load_manifest(const std::filesystem::path& path,
                                      const DataLimits& limits);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<MemeSample>& samples);

// Pixels for a blob-backed or synthetic sample; Features sources have no
// pixel form and are a contract error here.
ImageGrid materialize_image(const MemeSample& sample,
                            const std::filesystem::path& base_dir);

// Crop-and-resample of `box` to side x side pixels in one pass. Output pixel
// centers map affinely into the box; bilinear interpolation by default,
// nearest-neighbor for exactness tests. A 1:1 integer-aligned box is the
// identity under both filters.
ImageGrid resample_box(const ImageGrid& img, const Box& box, std::size_t side,
                       bool bilinear = true);

ImageGrid paint_synthetic(const SyntheticImage& spec);

// ---- synthetic dataset generator -------------------------------------------

// Latent-class-driven generator. Four independent latents map one-to-one onto
// the four task labels. In aligned mode both modalities carry all four; in
// weak mode the text carries mr/id only and the image regions carry sa/od
// only (as equal-mean stripe orientations, unreadable after coarse whole-image
// downsampling). A shared style latent shifts text style tokens and image
// background so the two modalities always have something honestly alignable.
struct SynthConfig {
  std::size_t count = 0;
  std::array<int, 4> class_counts{2, 3, 2, 3};
  bool weak_correlation = false;
  std::size_t vocab = 64;
  std::size_t text_len = 6;
  std::size_t source_len = 3;
  std::size_t target_len = 3;
  std::size_t image_side = 32;
};

std::vector<MemeSample> synth_generate(const SynthConfig& cfg, std::uint64_t seed);

DataLimits synth_limits(const SynthConfig& cfg);

}  // namespace mgmf
