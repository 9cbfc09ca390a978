#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dualattn/pyramid.hpp"
#include "dualattn/raster.hpp"
#include "dualattn/rng.hpp"
#include "dualattn/sampler.hpp"

namespace dualattn {

// Uniform without-replacement tile locations over the tissue mask, via the
// Gumbel-max trick: top-N of per-cell Gumbel noise over a constant score
// field. Produces the same TileSet the attention sampler does, so the RL
// classifier consumes both through one code path.
inline std::vector<GridPoint> gumbel_random_tiles(const BinaryMask& mask, int n, uint64_t seed) {
  require(mask.count() > 0, "gumbel_random_tiles needs a non-empty mask");
  Rng rng(seed);
  std::vector<std::pair<double, size_t>> scored;
  scored.reserve(mask.count());
  for (size_t i = 0; i < mask.v.size(); ++i) {
    double gumbel = rng.gumbel();  // one draw per cell keeps the stream stable
    if (mask.v[i]) scored.emplace_back(gumbel, i);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (static_cast<int>(scored.size()) > n) scored.resize(n);
  std::vector<GridPoint> pts;
  for (const auto& [g, i] : scored)
    pts.push_back({static_cast<int>(i % mask.w), static_cast<int>(i / mask.w)});
  return pts;
}

// TileSet from uniformly drawn tissue locations; the random-sampling
// comparison system's tile source.
inline TileSet gumbel_tile_set(const SlidePyramid& slide, const BinaryMask& tissue,
                               const SamplerConfig& cfg, uint64_t seed, int threads = 1) {
  TileSet ts;
  ts.tile_size_base = cfg.tile_size_base;
  ts.tile_size_model = cfg.tile_size_model;
  ts.locations_lowres = gumbel_random_tiles(tissue, cfg.n_tiles, seed);
  for (const auto& p : ts.locations_lowres) {
    ts.locations_base.push_back(map_to_slide(p, cfg.scale_factor, cfg.pool));
    ts.attention_values.push_back(1.0);
  }
  extract_tiles(slide, ts, threads);
  return ts;
}

// DAB mask: pixels whose grayscale (luminance in [0,1]) falls below the
// threshold, intersected with the tissue mask. Stained tissue is darker.
inline BinaryMask dab_mask(const Raster& image, const BinaryMask& tissue,
                           double threshold = 0.85) {
  require(image.c == 3, "dab_mask expects an RGB raster");
  require(image.h == tissue.h && image.w == tissue.w, "dab_mask shape mismatch");
  Raster gray = to_gray(image);
  BinaryMask m(image.h, image.w, 0);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x)
      m.at(y, x) = (gray.at(y, x) / 255.0 < threshold && tissue.at(y, x)) ? 1 : 0;
  return m;
}

struct SlidingWindowConfig {
  int patch_size = 224;
  std::string magnification = "20x";
  double tissue_fraction_min = 0.35;
  double dab_threshold = 0.85;
  int overlap = 0;  // the sliding pass is non-overlapping
  int top_k_probs = 15;
  int mask_factor = 32;  // resolution the masks were computed at
};

struct PatchRef {
  long x = 0, y = 0;  // base-level coords of the patch's top-left corner
};

// Non-overlapping patch grid at the configured magnification; a patch is kept
// iff the in-patch fraction of tissue-and-DAB mask cells exceeds the
// threshold. Deterministic row-major order.
inline std::vector<PatchRef> sliding_window_patches(const SlidePyramid& slide,
                                                    const BinaryMask& keep_mask,
                                                    const SlidingWindowConfig& cfg) {
  int level = slide.level_for_tag(cfg.magnification);
  int scale = slide.level_info(level).scale;
  long lh = slide.level_info(level).h, lw = slide.level_info(level).w;
  long step = cfg.patch_size;
  std::vector<PatchRef> out;
  for (long py = 0; py + step <= lh; py += step)
    for (long px = 0; px + step <= lw; px += step) {
      // patch footprint on the mask grid
      long bx0 = px * scale, by0 = py * scale;
      long bx1 = bx0 + step * scale, by1 = by0 + step * scale;
      long gx0 = bx0 / cfg.mask_factor, gy0 = by0 / cfg.mask_factor;
      long gx1 = ceil_div(bx1, cfg.mask_factor), gy1 = ceil_div(by1, cfg.mask_factor);
      gx1 = std::min<long>(gx1, keep_mask.w);
      gy1 = std::min<long>(gy1, keep_mask.h);
      long inside = 0, total = 0;
      for (long gy = gy0; gy < gy1; ++gy)
        for (long gx = gx0; gx < gx1; ++gx) {
          ++total;
          inside += keep_mask.at(static_cast<int>(gy), static_cast<int>(gx));
        }
      if (total > 0 && static_cast<double>(inside) / total > cfg.tissue_fraction_min)
        out.push_back({bx0, by0});
    }
  return out;
}

struct SlidingWindowScore {
  double slide_prob = 0.0;
  bool shortfall = false;  // fewer patches than top_k
};

// Slide probability: mean of the top-k per-patch positive-class
// probabilities; with fewer than k patches, mean of all (flagged).
inline SlidingWindowScore sliding_window_score(std::vector<double> patch_probs, int top_k) {
  SlidingWindowScore s;
  if (patch_probs.empty()) return s;
  std::sort(patch_probs.begin(), patch_probs.end(), std::greater<double>());
  size_t k = static_cast<size_t>(top_k);
  if (patch_probs.size() < k) {
    s.shortfall = true;
    k = patch_probs.size();
  }
  double acc = 0;
  for (size_t i = 0; i < k; ++i) acc += patch_probs[i];
  s.slide_prob = acc / static_cast<double>(k);
  return s;
}

}  // namespace dualattn
