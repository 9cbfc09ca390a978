#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualattn/pyramid.hpp"
#include "dualattn/raster.hpp"
#include "dualattn/rng.hpp"
#include "dualattn/soft_attention.hpp"

namespace dualattn {

struct NoiseConfig {
  double low = 0.0;
  double high = 1.0;
  uint64_t seed = 0;
};

struct GridPoint {
  int x = 0, y = 0;
};

// i.i.d. uniform over (low, high]; deterministic under the seed.
inline std::vector<double> make_noise(int h, int w, const NoiseConfig& cfg) {
  require(cfg.high > cfg.low, "noise range requires high > low");
  Rng rng(cfg.seed);
  std::vector<double> n(static_cast<size_t>(h) * w);
  for (auto& v : n) v = rng.uniform_half_open(cfg.low, cfg.high);
  return n;
}

// Adaptive threshold on the normalized map: a cell is kept when it exceeds
// the mean of its window by more than `offset` (window clipped at borders).
inline BinaryMask positive_mask(const std::vector<double>& normalized, int h, int w,
                                int window = 31, double offset = 0.02) {
  require(static_cast<size_t>(h) * w == normalized.size(), "positive_mask shape mismatch");
  IntegralImage integral(normalized, h, w);
  int r = window / 2;
  BinaryMask m(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double mean = integral.window_mean(y - r, x - r, y + r, x + r);
      if (normalized[static_cast<size_t>(y) * w + x] > mean + offset) m.at(y, x) = 1;
    }
  return m;
}

struct KMeans1dResult {
  std::vector<double> centroids;     // ascending
  std::vector<int> assignment;       // cluster index per value
  bool fallback = false;             // fewer distinct values than k
  int iterations = 0;
};

// Lloyd iterations on scalar values, k clusters. Deterministic: centroids
// start at evenly spaced quantiles of the sorted values; assignment ties go
// to the lower cluster index.
inline KMeans1dResult kmeans_1d(const std::vector<double>& values, int k, int max_iter = 100) {
  KMeans1dResult res;
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (static_cast<int>(sorted.size()) < k) {
    res.fallback = true;
    return res;
  }
  res.centroids.resize(k);
  for (int c = 0; c < k; ++c) {
    size_t idx = (sorted.size() - 1) * (2 * c + 1) / (2 * k);
    res.centroids[c] = sorted[idx];
  }
  std::sort(res.centroids.begin(), res.centroids.end());
  res.assignment.assign(values.size(), 0);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (size_t i = 0; i < values.size(); ++i) {
      int best = 0;
      double bd = std::abs(values[i] - res.centroids[0]);
      for (int c = 1; c < k; ++c) {
        double d = std::abs(values[i] - res.centroids[c]);
        if (d < bd) {  // strict: ties stay with the lower index
          bd = d;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    res.iterations = it + 1;
    std::vector<double> sum(k, 0.0);
    std::vector<long> cnt(k, 0);
    for (size_t i = 0; i < values.size(); ++i) {
      sum[res.assignment[i]] += values[i];
      ++cnt[res.assignment[i]];
    }
    for (int c = 0; c < k; ++c)
      if (cnt[c] > 0) res.centroids[c] = sum[c] / cnt[c];
    if (!changed && it > 0) break;
  }
  return res;
}

struct TumorMaskResult {
  BinaryMask mask;
  bool fallback = false;
};

// k-means (k=3 by default) on the normalized attention values; the mask is
// membership of the highest-centroid cluster. Degenerate maps fall back to a
// midpoint threshold, flagged.
inline TumorMaskResult tumor_mask(const std::vector<double>& normalized, int h, int w, int k = 3) {
  require(static_cast<size_t>(h) * w == normalized.size(), "tumor_mask shape mismatch");
  TumorMaskResult out;
  out.mask = BinaryMask(h, w, 0);
  KMeans1dResult km = kmeans_1d(normalized, k);
  if (km.fallback) {
    out.fallback = true;
    double lo = *std::min_element(normalized.begin(), normalized.end());
    double hi = *std::max_element(normalized.begin(), normalized.end());
    double mid = (lo + hi) / 2;
    for (size_t i = 0; i < normalized.size(); ++i)
      if (normalized[i] > mid) out.mask.v[i] = 1;
    return out;
  }
  int top = 0;
  for (int c = 1; c < k; ++c)
    if (km.centroids[c] > km.centroids[top]) top = c;
  for (size_t i = 0; i < normalized.size(); ++i)
    if (km.assignment[i] == top) out.mask.v[i] = 1;
  return out;
}

// F_a = m*n + m*Abar, elementwise; zero outside the mask support.
inline std::vector<double> final_attention(const BinaryMask& m, const std::vector<double>& noise,
                                           const std::vector<double>& normalized) {
  require(m.v.size() == noise.size() && noise.size() == normalized.size(),
          "final_attention shape mismatch");
  std::vector<double> fa(noise.size(), 0.0);
  for (size_t i = 0; i < fa.size(); ++i)
    if (m.v[i]) fa[i] = noise[i] + normalized[i];
  return fa;
}

// Top-count cells of F_a by value, descending; ties broken by row-major
// index. Only strictly positive cells participate; if fewer than `count`
// exist, all of them are returned. Without-replacement by construction.
inline std::vector<GridPoint> sample_locations(const std::vector<double>& fa, int h, int w,
                                               int count) {
  require(static_cast<size_t>(h) * w == fa.size(), "sample_locations shape mismatch");
  std::vector<size_t> idx;
  idx.reserve(fa.size());
  for (size_t i = 0; i < fa.size(); ++i)
    if (fa[i] > 0.0) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (fa[a] != fa[b]) return fa[a] > fa[b];
    return a < b;
  });
  if (static_cast<int>(idx.size()) > count) idx.resize(count);
  std::vector<GridPoint> pts;
  pts.reserve(idx.size());
  for (size_t i : idx)
    pts.push_back({static_cast<int>(i % w), static_cast<int>(i / w)});
  return pts;
}

struct SpatialFilterResult {
  std::vector<GridPoint> accepted;
  bool relaxed = false;  // d_t was halved once to reach N
};

// Greedy scan in attention order: accept a point iff its distance to every
// accepted point exceeds d_t; stop at N. If the list runs out first, halve
// d_t once and continue over the remaining points, flagged.
inline SpatialFilterResult spatial_filter(const std::vector<GridPoint>& ordered, double d_t,
                                          int n) {
  SpatialFilterResult res;
  auto far_enough = [&](const GridPoint& p, double thresh) {
    for (const auto& q : res.accepted) {
      double dx = p.x - q.x, dy = p.y - q.y;
      if (std::sqrt(dx * dx + dy * dy) <= thresh) return false;
    }
    return true;
  };
  std::vector<GridPoint> rejected;
  for (const auto& p : ordered) {
    if (static_cast<int>(res.accepted.size()) >= n) break;
    if (far_enough(p, d_t))
      res.accepted.push_back(p);
    else
      rejected.push_back(p);
  }
  if (static_cast<int>(res.accepted.size()) < n && !rejected.empty()) {
    res.relaxed = true;
    double relaxed_dt = d_t / 2;
    for (const auto& p : rejected) {
      if (static_cast<int>(res.accepted.size()) >= n) break;
      if (far_enough(p, relaxed_dt)) res.accepted.push_back(p);
    }
  }
  return res;
}

// Grid cell -> base-level coordinates of the tile center:
// (X, Y) = (x * s * pool, y * s * pool).
inline std::pair<long, long> map_to_slide(const GridPoint& p, int s, int pool) {
  require(s >= 1, "scale factor must be >= 1");
  return {static_cast<long>(p.x) * s * pool, static_cast<long>(p.y) * s * pool};
}

// The N selected tiles: grid cells, mapped base centers, extracted rasters
// (resized to the model input), and the attention value of each source cell.
struct TileSet {
  std::vector<GridPoint> locations_lowres;
  std::vector<std::pair<long, long>> locations_base;  // tile centers
  std::vector<Raster> tiles;                          // resized to tile_size_model
  std::vector<Raster> tiles_fullres;                  // tile_size_base crops
  std::vector<double> attention_values;
  int tile_size_base = 2048;
  int tile_size_model = 128;
  bool mask_fallback = false;    // refinement mask was too small; tissue used
  bool distance_relaxed = false;

  size_t size() const { return locations_lowres.size(); }
};

struct SamplerConfig {
  int n_tiles = 10;             // N; 2N candidates are pooled first
  double d_t = 0.0;             // 0 -> default: 2 * tile_size_base / (s * pool)
  int tile_size_base = 2048;
  int tile_size_model = 128;
  int scale_factor = 32;        // s between grid and base (downsample factor)
  int pool = 8;                 // soft attention pool size
  NoiseConfig noise;
  enum MaskKind { Positive, Tumor } mask_kind = Positive;
  int positive_window = 31;
  double positive_offset = 0.02;
  int kmeans_k = 3;

  double effective_dt() const {
    if (d_t > 0) return d_t;
    return 2.0 * tile_size_base / (static_cast<double>(scale_factor) * pool);
  }
};

// Reads the full-resolution tile around each center (zero-padded at slide
// edges) and the resized model input. Parallel reads return in coordinate
// order regardless of scheduling.
inline void extract_tiles(const SlidePyramid& slide, TileSet& ts, int threads = 1) {
  int n = static_cast<int>(ts.locations_base.size());
  ts.tiles.resize(n);
  ts.tiles_fullres.resize(n);
  int tb = ts.tile_size_base;
  parallel_for(n, threads, [&](int i) {
    auto [cx, cy] = ts.locations_base[i];
    Raster full = slide.read_region_scale(1, cx - tb / 2, cy - tb / 2, tb, tb);
    ts.tiles[i] = block_downsample(full, tb / ts.tile_size_model);
    ts.tiles_fullres[i] = std::move(full);
  });
}

// Full sampling pipeline for one slide view.
inline TileSet sample_tiles(const SlidePyramid& slide, const AttentionMap& attention,
                            const BinaryMask& tissue, const SamplerConfig& cfg,
                            int threads = 1) {
  require(tissue.h == attention.h && tissue.w == attention.w,
          "tissue mask and attention grid must agree");
  std::vector<double> abar = minmax_normalize(attention);

  BinaryMask refine;
  if (cfg.mask_kind == SamplerConfig::Positive)
    refine = positive_mask(abar, attention.h, attention.w, cfg.positive_window,
                           cfg.positive_offset);
  else
    refine = tumor_mask(abar, attention.h, attention.w, cfg.kmeans_k).mask;

  TileSet ts;
  ts.tile_size_base = cfg.tile_size_base;
  ts.tile_size_model = cfg.tile_size_model;

  BinaryMask m = mask_and(refine, tissue);
  if (static_cast<int>(m.count()) < 2 * cfg.n_tiles) {
    m = tissue;  // bootstrap: an uninformative refinement falls back to tissue
    ts.mask_fallback = true;
  }

  std::vector<double> noise = make_noise(attention.h, attention.w, cfg.noise);
  std::vector<double> fa = final_attention(m, noise, abar);
  std::vector<GridPoint> candidates =
      sample_locations(fa, attention.h, attention.w, 2 * cfg.n_tiles);
  SpatialFilterResult filt = spatial_filter(candidates, cfg.effective_dt(), cfg.n_tiles);
  ts.distance_relaxed = filt.relaxed;
  ts.locations_lowres = filt.accepted;

  for (const auto& p : ts.locations_lowres) {
    ts.locations_base.push_back(map_to_slide(p, cfg.scale_factor, cfg.pool));
    ts.attention_values.push_back(attention.at(p.y, p.x));
  }
  extract_tiles(slide, ts, threads);
  return ts;
}

// Debug dump of a sampling decision: candidates, accepted set, coordinates
// and attention values.
inline nlohmann::json sampler_debug_json(const std::vector<GridPoint>& candidates,
                                         const TileSet& ts) {
  nlohmann::json j;
  j["candidates"] = nlohmann::json::array();
  for (const auto& p : candidates) j["candidates"].push_back({p.x, p.y});
  j["selected_lowres"] = nlohmann::json::array();
  for (const auto& p : ts.locations_lowres) j["selected_lowres"].push_back({p.x, p.y});
  j["selected_base"] = nlohmann::json::array();
  for (const auto& [x, y] : ts.locations_base) j["selected_base"].push_back({x, y});
  j["attention_values"] = ts.attention_values;
  j["tile_size_base"] = ts.tile_size_base;
  j["mask_fallback"] = ts.mask_fallback;
  j["distance_relaxed"] = ts.distance_relaxed;
  return j;
}

// Overlay marking the selected tile footprints on the downsampled view.
inline Raster tile_overlay(const Raster& I0, const TileSet& ts, int factor) {
  Raster out = I0;
  for (const auto& [cx, cy] : ts.locations_base) {
    int half = ts.tile_size_base / (2 * factor);
    draw_rect_outline(out, static_cast<int>(cy / factor) - half,
                      static_cast<int>(cx / factor) - half, 2 * half, 2 * half, 255, 32, 32, 1);
  }
  return out;
}

}  // namespace dualattn
