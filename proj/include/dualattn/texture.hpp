#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualattn/common.hpp"
#include "dualattn/raster.hpp"
#include "dualattn/rng.hpp"

namespace dualattn {

// Procedural slide texture. Every pixel is a pure function of the program
// parameters and (x, y) in base coordinates, so a gigapixel base level can be
// re-rendered window by window, bit-identically, without ever being stored.
//
// Composition per pixel: white slide background, an elliptical tissue region
// with low-frequency tonal variation, smooth stained blobs whose intensity and
// count carry the class signal, and dark fold-like strokes that carry none.
struct TextureProgram {
  uint64_t seed = 0;
  long height = 0, width = 0;

  // tissue ellipse
  double tissue_cx = 0, tissue_cy = 0, tissue_rx = 0, tissue_ry = 0;
  double boundary_amp = 0.18;     // low-frequency wobble of the boundary
  double boundary_cell = 1024.0;  // wobble grid cell in base px
  double edge_width = 0.08;       // soft edge width in implicit units

  // background tone grids; coarse variation is mostly shared luminance so the
  // red-blue separation of unstained tissue stays narrow
  double coarse_cell = 512.0, fine_cell = 96.0;
  double coarse_amp = 14.0, channel_amp = 4.0, fine_amp = 7.0;
  double tissue_rgb[3] = {213, 185, 197};
  double backdrop_rgb[3] = {249, 248, 247};

  // stained blobs
  struct Blob {
    double cx, cy, r, strength;
  };
  std::vector<Blob> blobs;
  double stain_rgb[3] = {104, 71, 46};
  double blob_edge = 0.45;  // fraction of r^2 over which alpha ramps

  // fold artifacts
  struct Fold {
    double x0, y0, x1, y1, halfwidth, darkness;
  };
  std::vector<Fold> folds;
  double fold_rgb[3] = {72, 62, 78};

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["height"] = height;
    j["width"] = width;
    j["tissue"] = {tissue_cx, tissue_cy, tissue_rx, tissue_ry};
    j["boundary_amp"] = boundary_amp;
    j["boundary_cell"] = boundary_cell;
    j["edge_width"] = edge_width;
    j["coarse_cell"] = coarse_cell;
    j["fine_cell"] = fine_cell;
    j["coarse_amp"] = coarse_amp;
    j["channel_amp"] = channel_amp;
    j["fine_amp"] = fine_amp;
    j["tissue_rgb"] = {tissue_rgb[0], tissue_rgb[1], tissue_rgb[2]};
    j["backdrop_rgb"] = {backdrop_rgb[0], backdrop_rgb[1], backdrop_rgb[2]};
    j["stain_rgb"] = {stain_rgb[0], stain_rgb[1], stain_rgb[2]};
    j["fold_rgb"] = {fold_rgb[0], fold_rgb[1], fold_rgb[2]};
    j["blob_edge"] = blob_edge;
    j["blobs"] = nlohmann::json::array();
    for (const auto& b : blobs) j["blobs"].push_back({b.cx, b.cy, b.r, b.strength});
    j["folds"] = nlohmann::json::array();
    for (const auto& f : folds)
      j["folds"].push_back({f.x0, f.y0, f.x1, f.y1, f.halfwidth, f.darkness});
    return j;
  }

  static TextureProgram from_json(const nlohmann::json& j) {
    TextureProgram p;
    p.seed = j.at("seed").get<uint64_t>();
    p.height = j.at("height").get<long>();
    p.width = j.at("width").get<long>();
    auto t = j.at("tissue");
    p.tissue_cx = t[0];
    p.tissue_cy = t[1];
    p.tissue_rx = t[2];
    p.tissue_ry = t[3];
    p.boundary_amp = j.at("boundary_amp");
    p.boundary_cell = j.at("boundary_cell");
    p.edge_width = j.at("edge_width");
    p.coarse_cell = j.at("coarse_cell");
    p.fine_cell = j.at("fine_cell");
    p.coarse_amp = j.at("coarse_amp");
    p.channel_amp = j.at("channel_amp");
    p.fine_amp = j.at("fine_amp");
    for (int c = 0; c < 3; ++c) {
      p.tissue_rgb[c] = j.at("tissue_rgb")[c];
      p.backdrop_rgb[c] = j.at("backdrop_rgb")[c];
      p.stain_rgb[c] = j.at("stain_rgb")[c];
      p.fold_rgb[c] = j.at("fold_rgb")[c];
    }
    p.blob_edge = j.at("blob_edge");
    for (const auto& b : j.at("blobs"))
      p.blobs.push_back({b[0], b[1], b[2], b[3]});
    for (const auto& f : j.at("folds"))
      p.folds.push_back({f[0], f[1], f[2], f[3], f[4], f[5]});
    return p;
  }
};

namespace texdetail {

inline double hash_unit(uint64_t seed, long ix, long iy) {
  uint64_t h = splitmix64(seed ^ (static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ULL) ^
                          (static_cast<uint64_t>(iy) * 0xc2b2ae3d27d4eb4fULL + 0x165667b19e3779f9ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double smoothstep01(double u) {
  u = clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Bilinear value noise; row-sliced so the y interpolation is hoisted out of
// the per-pixel loop.
struct GridRow {
  long ix0 = 0;
  double fx0 = 0, inv_cell = 0;
  std::vector<double> vals;  // interpolated along y at consecutive x nodes

  void prepare(uint64_t seed, double cell, double y, long x0, long x1) {
    inv_cell = 1.0 / cell;
    double gy = y * inv_cell;
    long iy = static_cast<long>(std::floor(gy));
    double fy = texdetail::smoothstep01(gy - iy);
    long gx0 = static_cast<long>(std::floor(x0 * inv_cell));
    long gx1 = static_cast<long>(std::floor(x1 * inv_cell)) + 1;
    ix0 = gx0;
    fx0 = 0;
    vals.resize(static_cast<size_t>(gx1 - gx0 + 1));
    for (long ix = gx0; ix <= gx1; ++ix) {
      double a = hash_unit(seed, ix, iy);
      double b = hash_unit(seed, ix, iy + 1);
      vals[static_cast<size_t>(ix - gx0)] = a + (b - a) * fy;
    }
  }

  double sample(double x) const {
    double gx = x * inv_cell;
    long ix = static_cast<long>(std::floor(gx));
    double fx = texdetail::smoothstep01(gx - ix);
    size_t k = static_cast<size_t>(ix - ix0);
    return vals[k] + (vals[k + 1] - vals[k]) * fx;
  }
};

}  // namespace texdetail

// Stain coverage (before intensity mixing) at a point; used both by the
// renderer and by the ground-truth ROI mask so the two can never disagree.
inline double stain_alpha_at(const TextureProgram& p, double x, double y) {
  double a = 0.0;
  for (const auto& b : p.blobs) {
    double dx = x - b.cx, dy = y - b.cy;
    double q = (dx * dx + dy * dy) / (b.r * b.r);
    if (q >= 1.0) continue;
    a += b.strength * texdetail::smoothstep01((1.0 - q) / p.blob_edge);
  }
  return clamp(a, 0.0, 1.0);
}

// Renders the window [x0, x0+w) x [y0, y0+h) of the base level into `out`
// (RGB8, h*w*3). Pure: identical calls give identical bytes.
inline void render_texture_window(const TextureProgram& p, long x0, long y0, int w, int h,
                                  uint8_t* out) {
  const uint64_t seed_b = derive_seed(p.seed, 1);
  const uint64_t seed_c = derive_seed(p.seed, 2);
  const uint64_t seed_f = derive_seed(p.seed, 3);
  const uint64_t seed_l = derive_seed(p.seed, 4);

  texdetail::GridRow rows_b, rows_f, rows_lum;
  texdetail::GridRow rows_c[3];

  std::vector<const TextureProgram::Blob*> row_blobs;
  std::vector<const TextureProgram::Fold*> row_folds;

  for (int ry = 0; ry < h; ++ry) {
    double y = static_cast<double>(y0 + ry) + 0.5;
    rows_b.prepare(seed_b, p.boundary_cell, y, x0, x0 + w);
    rows_f.prepare(seed_f, p.fine_cell, y, x0, x0 + w);
    rows_lum.prepare(seed_l, p.coarse_cell, y, x0, x0 + w);
    for (int c = 0; c < 3; ++c)
      rows_c[c].prepare(derive_seed(seed_c, static_cast<uint64_t>(c)), p.coarse_cell, y, x0, x0 + w);

    row_blobs.clear();
    for (const auto& b : p.blobs)
      if (std::abs(y - b.cy) < b.r && b.cx + b.r > x0 && b.cx - b.r < x0 + w)
        row_blobs.push_back(&b);
    row_folds.clear();
    for (const auto& f : p.folds) {
      double fy0 = std::min(f.y0, f.y1) - f.halfwidth, fy1 = std::max(f.y0, f.y1) + f.halfwidth;
      double fx0 = std::min(f.x0, f.x1) - f.halfwidth, fx1 = std::max(f.x0, f.x1) + f.halfwidth;
      if (y >= fy0 && y <= fy1 && fx1 > x0 && fx0 < x0 + w) row_folds.push_back(&f);
    }

    double dy = (y - p.tissue_cy) / p.tissue_ry;
    double dy2 = dy * dy;
    uint8_t* dst = out + static_cast<size_t>(ry) * w * 3;

    for (int rx = 0; rx < w; ++rx) {
      double x = static_cast<double>(x0 + rx) + 0.5;

      double dxn = (x - p.tissue_cx) / p.tissue_rx;
      double implicit = 1.0 + p.boundary_amp * (rows_b.sample(x) - 0.5) - (dxn * dxn + dy2);
      double tiss = texdetail::smoothstep01(implicit / p.edge_width + 0.5);

      double fine = (rows_f.sample(x) - 0.5) * 2.0 * p.fine_amp;
      double r = p.backdrop_rgb[0], g = p.backdrop_rgb[1], b = p.backdrop_rgb[2];
      if (tiss > 0.0) {
        double lum = (rows_lum.sample(x) - 0.5) * 2.0 * p.coarse_amp + fine;
        double tr = p.tissue_rgb[0] + (rows_c[0].sample(x) - 0.5) * 2.0 * p.channel_amp + lum;
        double tg = p.tissue_rgb[1] + (rows_c[1].sample(x) - 0.5) * 2.0 * p.channel_amp + lum;
        double tb = p.tissue_rgb[2] + (rows_c[2].sample(x) - 0.5) * 2.0 * p.channel_amp + lum;

        double stain = 0.0;
        for (const auto* bl : row_blobs) {
          double ddx = x - bl->cx, ddy = y - bl->cy;
          double q = (ddx * ddx + ddy * ddy) / (bl->r * bl->r);
          if (q < 1.0) stain += bl->strength * texdetail::smoothstep01((1.0 - q) / p.blob_edge);
        }
        stain = clamp(stain, 0.0, 1.0);
        if (stain > 0.0) {
          tr += (p.stain_rgb[0] - tr) * stain;
          tg += (p.stain_rgb[1] - tg) * stain;
          tb += (p.stain_rgb[2] - tb) * stain;
        }

        double fold = 0.0;
        for (const auto* fl : row_folds) {
          double vx = fl->x1 - fl->x0, vy = fl->y1 - fl->y0;
          double len2 = vx * vx + vy * vy;
          double t = len2 > 0 ? clamp(((x - fl->x0) * vx + (y - fl->y0) * vy) / len2, 0.0, 1.0) : 0.0;
          double px = fl->x0 + t * vx - x, py = fl->y0 + t * vy - y;
          double d2 = px * px + py * py;
          double hw2 = fl->halfwidth * fl->halfwidth;
          if (d2 < hw2) fold += fl->darkness * texdetail::smoothstep01((1.0 - d2 / hw2) / 0.6);
        }
        fold = clamp(fold, 0.0, 1.0);
        if (fold > 0.0) {
          tr += (p.fold_rgb[0] - tr) * fold;
          tg += (p.fold_rgb[1] - tg) * fold;
          tb += (p.fold_rgb[2] - tb) * fold;
        }

        r += (tr - r) * tiss;
        g += (tg - g) * tiss;
        b += (tb - b) * tiss;
      }
      dst[3 * rx + 0] = static_cast<uint8_t>(clamp(std::lround(r), 0L, 255L));
      dst[3 * rx + 1] = static_cast<uint8_t>(clamp(std::lround(g), 0L, 255L));
      dst[3 * rx + 2] = static_cast<uint8_t>(clamp(std::lround(b), 0L, 255L));
    }
  }
}

inline Raster render_texture(const TextureProgram& p, long x0, long y0, int w, int h) {
  Raster out(h, w, 3);
  render_texture_window(p, x0, y0, w, h, out.px.data());
  return out;
}

inline double tissue_field_at(const TextureProgram& p, double x, double y) {
  texdetail::GridRow row;
  row.prepare(derive_seed(p.seed, 1), p.boundary_cell, y, static_cast<long>(x), static_cast<long>(x) + 1);
  double dxn = (x - p.tissue_cx) / p.tissue_rx;
  double dyn = (y - p.tissue_cy) / p.tissue_ry;
  double implicit = 1.0 + p.boundary_amp * (row.sample(x) - 0.5) - (dxn * dxn + dyn * dyn);
  return texdetail::smoothstep01(implicit / p.edge_width + 0.5);
}

}  // namespace dualattn
