#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mgmf/data.hpp"

namespace mgmf {

namespace {

// Vocabulary layout: style tokens, one 8-wide band per task latent, then
// filler. Bands keep the latents linearly separable from token counts,
// which the probe oracle in the tests relies on. Style is the one latent
// both modalities express, so it is what the contrastive term aligns on.
constexpr int kStyleBase = 2;
constexpr int kStyleCount = 2;
constexpr int kMrBase = 8;
constexpr int kIdBase = 16;
constexpr int kSaBase = 24;
constexpr int kOdBase = 32;
constexpr int kFillerBase = 40;
constexpr int kFillerCount = 8;
constexpr std::size_t kMinVocab = kFillerBase + kFillerCount;

const char* kStripePatterns[4] = {"h2", "v2", "d2", "h4"};

double solid_level(int k, int count) {
  if (count <= 1) return 0.6;
  return 0.30 + 0.55 * static_cast<double>(k) / static_cast<double>(count - 1);
}

}  // namespace

DataLimits synth_limits(const SynthConfig& cfg) {
  DataLimits lim;
  lim.vocab = cfg.vocab;
  lim.max_text = cfg.text_len;
  lim.max_source = cfg.source_len;
  lim.max_target = cfg.target_len;
  lim.class_counts = cfg.class_counts;
  return lim;
}

std::vector<MemeSample> synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  for (int c : cfg.class_counts) {
    if (c < 1 || c > 8)
      throw ConfigError("synthetic generator supports 1 to 8 classes per task");
  }
  if (cfg.class_counts[1] > 4 || cfg.class_counts[3] > 4)
    throw ConfigError(
        "synthetic generator encodes sa/od as stripe orientations and supports at "
        "most 4 classes for those tasks");
  if (cfg.vocab < kMinVocab)
    throw ConfigError("synthetic generator needs a vocabulary of at least " +
                      std::to_string(kMinVocab));
  const std::size_t text_need = cfg.weak_correlation ? 3 : 5;
  if (cfg.text_len < text_need)
    throw ConfigError("text length " + std::to_string(cfg.text_len) +
                      " too short for the generated signal tokens");
  if (cfg.source_len < 2 || cfg.target_len < 2)
    throw ConfigError("source/target length must be at least 2");
  if (cfg.image_side < 32)
    throw ConfigError("image side must be at least 32 to fit the painted blocks");

  SplitMix64 rng = seeded_stream(seed, cfg.weak_correlation ? "synth.weak" : "synth.aligned");
  std::vector<MemeSample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.class_counts[0])));
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.class_counts[1])));
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.class_counts[2])));
    const int e = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.class_counts[3])));
    const int style = static_cast<int>(rng.below(kStyleCount));

    MemeSample s;
    {
      char idbuf[16];
      std::snprintf(idbuf, sizeof idbuf, "s%05zu", i);
      s.id = idbuf;
    }
    s.labels = {a, c, b, e};

    auto filler = [&]() {
      return kFillerBase + static_cast<int>(rng.below(kFillerCount));
    };

    s.text_tokens = {kStyleBase + style, kMrBase + a, kIdBase + b};
    if (!cfg.weak_correlation) {
      s.text_tokens.push_back(kSaBase + c);
      s.text_tokens.push_back(kOdBase + e);
    }
    while (s.text_tokens.size() < cfg.text_len) s.text_tokens.push_back(filler());
    // Fisher-Yates so the signal is in content, not position
    for (std::size_t k = s.text_tokens.size(); k > 1; --k)
      std::swap(s.text_tokens[k - 1], s.text_tokens[rng.below(k)]);

    s.source_tokens = {kStyleBase + style, kMrBase + a};
    while (s.source_tokens.size() < cfg.source_len) s.source_tokens.push_back(filler());
    s.target_tokens = {kStyleBase + style, kIdBase + b};
    while (s.target_tokens.size() < cfg.target_len) s.target_tokens.push_back(filler());

    SyntheticImage img;
    img.height = cfg.image_side;
    img.width = cfg.image_side;
    img.channels = 1;
    img.background = 0.10 + 0.10 * style;

    // sa and od live in stripe orientation: equal means, so only the
    // region-cropped path can read them once the whole image is downsampled.
    // The two blocks use distinct amplitudes; otherwise samples with swapped
    // orientations pool to the same region-vector multiset and order-blind
    // heads hit a 2/3 accuracy ceiling on these tasks.
    PatternBlock sa_block{4, 4, 8, 8, kStripePatterns[c], 0.5, 0.38};
    PatternBlock od_block{20, 20, 8, 8, kStripePatterns[e], 0.5, 0.50};
    img.blocks.push_back(sa_block);
    img.blocks.push_back(od_block);
    if (!cfg.weak_correlation) {
      // aligned mode: mr and id also painted as solid levels readable at
      // image scale
      img.blocks.push_back(PatternBlock{20, 4, 8, 8, "solid",
                                        solid_level(a, cfg.class_counts[0]), 0.0});
      img.blocks.push_back(PatternBlock{4, 20, 8, 8, "solid",
                                        solid_level(b, cfg.class_counts[2]), 0.0});
    }
    s.image.kind = ImageSource::Kind::Synthetic;
    s.image.synthetic = std::move(img);
    s.regions = {Box{4, 4, 8, 8}, Box{20, 20, 8, 8}};
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mgmf
