#pragma once

#include <cstdint>
#include <cstring>
#include <vector>
#include <algorithm>
#include <cmath>

#include "dualattn/common.hpp"

namespace dualattn {

// 8-bit interleaved raster, c = 1 (gray) or 3 (RGB). Row-major, y down.
struct Raster {
  int h = 0, w = 0, c = 0;
  std::vector<uint8_t> px;

  Raster() = default;
  Raster(int h_, int w_, int c_, uint8_t fill = 0)
      : h(h_), w(w_), c(c_), px(static_cast<size_t>(h_) * w_ * c_, fill) {}

  bool empty() const { return px.empty(); }
  size_t size() const { return px.size(); }
  uint8_t& at(int y, int x, int ch = 0) {
    return px[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  uint8_t at(int y, int x, int ch = 0) const {
    return px[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  bool same_shape(const Raster& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Binary raster, values strictly 0/1.
struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  BinaryMask() = default;
  BinaryMask(int h_, int w_, uint8_t fill = 0)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
  double coverage() const { return v.empty() ? 0.0 : double(count()) / double(v.size()); }
  bool operator==(const BinaryMask& o) const { return h == o.h && w == o.w && v == o.v; }
};

// Exact block-mean downsample by an integer factor. Ragged edge blocks (when
// factor does not divide the size) average only the pixels present.
inline Raster block_downsample(const Raster& in, int factor) {
  require(factor >= 1, "downsample factor must be >= 1");
  if (factor == 1) return in;
  Raster out(ceil_div(in.h, factor), ceil_div(in.w, factor), in.c);
  for (int oy = 0; oy < out.h; ++oy) {
    int y0 = oy * factor, y1 = std::min(in.h, y0 + factor);
    for (int ox = 0; ox < out.w; ++ox) {
      int x0 = ox * factor, x1 = std::min(in.w, x0 + factor);
      int area = (y1 - y0) * (x1 - x0);
      for (int ch = 0; ch < in.c; ++ch) {
        uint32_t acc = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) acc += in.at(y, x, ch);
        out.at(oy, ox, ch) = static_cast<uint8_t>((acc + area / 2) / area);
      }
    }
  }
  return out;
}

inline Raster to_gray(const Raster& in) {
  if (in.c == 1) return in;
  Raster out(in.h, in.w, 1);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double g = 0.299 * in.at(y, x, 0) + 0.587 * in.at(y, x, 1) + 0.114 * in.at(y, x, 2);
      out.at(y, x) = static_cast<uint8_t>(std::lround(clamp(g, 0.0, 255.0)));
    }
  return out;
}

// The 8 dihedral transforms of a square raster: index = rot + 4 * flip,
// rot in quarter turns (CCW), flip = horizontal mirror applied first.
inline Raster dihedral(const Raster& in, int idx) {
  require(in.h == in.w, "dihedral transforms need a square raster");
  require(idx >= 0 && idx < 8, "dihedral index must be in [0,8)");
  int n = in.h;
  int rot = idx & 3;
  bool flip = idx >= 4;
  Raster out(n, n, in.c);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int sx = flip ? n - 1 - x : x;
      int sy = y;
      for (int r = 0; r < rot; ++r) {
        int tx = sy;
        int ty = n - 1 - sx;
        sx = tx;
        sy = ty;
      }
      for (int ch = 0; ch < in.c; ++ch) out.at(y, x, ch) = in.at(sy, sx, ch);
    }
  return out;
}

// Crop with zero padding outside the source bounds.
inline Raster crop_padded(const Raster& src, int y0, int x0, int h, int w) {
  Raster out(h, w, src.c);
  int cy0 = std::max(0, y0), cx0 = std::max(0, x0);
  int cy1 = std::min(src.h, y0 + h), cx1 = std::min(src.w, x0 + w);
  for (int y = cy0; y < cy1; ++y) {
    if (cx1 <= cx0) break;
    std::memcpy(&out.px[((static_cast<size_t>(y - y0)) * w + (cx0 - x0)) * src.c],
                &src.px[(static_cast<size_t>(y) * src.w + cx0) * src.c],
                static_cast<size_t>(cx1 - cx0) * src.c);
  }
  return out;
}

// Copies src into dst at (dy, dx), clipping to dst bounds.
inline void blit(Raster& dst, const Raster& src, int dy, int dx) {
  require(dst.c == src.c, "blit channel mismatch");
  for (int y = 0; y < src.h; ++y) {
    int ty = dy + y;
    if (ty < 0 || ty >= dst.h) continue;
    int x0 = std::max(0, -dx), x1 = std::min(src.w, dst.w - dx);
    if (x1 <= x0) continue;
    std::memcpy(&dst.px[(static_cast<size_t>(ty) * dst.w + dx + x0) * dst.c],
                &src.px[(static_cast<size_t>(y) * src.w + x0) * src.c],
                static_cast<size_t>(x1 - x0) * src.c);
  }
}

inline void draw_rect_outline(Raster& img, int y0, int x0, int hh, int ww,
                              uint8_t r, uint8_t g, uint8_t b, int thick = 1) {
  auto put = [&](int y, int x) {
    if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
    img.at(y, x, 0) = r;
    if (img.c == 3) {
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  };
  for (int t = 0; t < thick; ++t) {
    for (int x = x0; x < x0 + ww; ++x) {
      put(y0 + t, x);
      put(y0 + hh - 1 - t, x);
    }
    for (int y = y0; y < y0 + hh; ++y) {
      put(y, x0 + t);
      put(y, x0 + ww - 1 - t);
    }
  }
}

// Small fixed color ramp (dark blue -> cyan -> yellow -> red) for overlays.
inline void heat_color(double t, uint8_t& r, uint8_t& g, uint8_t& b) {
  t = clamp(t, 0.0, 1.0);
  double rr, gg, bb;
  if (t < 1.0 / 3) {
    double u = t * 3;
    rr = 0.05;
    gg = u * 0.8;
    bb = 0.5 + u * 0.5;
  } else if (t < 2.0 / 3) {
    double u = (t - 1.0 / 3) * 3;
    rr = u;
    gg = 0.8 + 0.2 * u;
    bb = 1.0 - u;
  } else {
    double u = (t - 2.0 / 3) * 3;
    rr = 1.0;
    gg = 1.0 - u;
    bb = 0.0;
  }
  r = static_cast<uint8_t>(std::lround(rr * 255));
  g = static_cast<uint8_t>(std::lround(gg * 255));
  b = static_cast<uint8_t>(std::lround(bb * 255));
}

// --- binary morphology ------------------------------------------------------

// Disk structuring element offsets for a given radius.
inline std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> off;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) off.emplace_back(dy, dx);
  return off;
}

inline BinaryMask dilate(const BinaryMask& m, int radius) {
  if (radius <= 0) return m;
  auto off = disk_offsets(radius);
  BinaryMask out(m.h, m.w, 0);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      for (auto [dy, dx] : off) {
        int ty = y + dy, tx = x + dx;
        if (ty >= 0 && ty < m.h && tx >= 0 && tx < m.w) out.at(ty, tx) = 1;
      }
    }
  return out;
}

inline BinaryMask erode(const BinaryMask& m, int radius) {
  if (radius <= 0) return m;
  auto off = disk_offsets(radius);
  BinaryMask out(m.h, m.w, 0);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      bool all = true;
      for (auto [dy, dx] : off) {
        int ty = y + dy, tx = x + dx;
        if (ty < 0 || ty >= m.h || tx < 0 || tx >= m.w || !m.at(ty, tx)) {
          all = false;
          break;
        }
      }
      out.at(y, x) = all ? 1 : 0;
    }
  return out;
}

inline BinaryMask open_mask(const BinaryMask& m, int radius) { return dilate(erode(m, radius), radius); }
inline BinaryMask close_mask(const BinaryMask& m, int radius) { return erode(dilate(m, radius), radius); }

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  require(a.h == b.h && a.w == b.w, "mask shape mismatch");
  BinaryMask out(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] & b.v[i];
  return out;
}

// Summed-area table over doubles; query mean of any window in O(1).
class IntegralImage {
 public:
  IntegralImage(const std::vector<double>& values, int h, int w) : h_(h), w_(w) {
    sums_.assign(static_cast<size_t>(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y) {
      double row = 0.0;
      for (int x = 0; x < w; ++x) {
        row += values[static_cast<size_t>(y) * w + x];
        sums_[idx(y + 1, x + 1)] = sums_[idx(y, x + 1)] + row;
      }
    }
  }

  // Mean over the window clipped to bounds; window given by inclusive corners.
  double window_mean(int y0, int x0, int y1, int x1) const {
    y0 = std::max(y0, 0);
    x0 = std::max(x0, 0);
    y1 = std::min(y1, h_ - 1);
    x1 = std::min(x1, w_ - 1);
    double s = sums_[idx(y1 + 1, x1 + 1)] - sums_[idx(y0, x1 + 1)] -
               sums_[idx(y1 + 1, x0)] + sums_[idx(y0, x0)];
    return s / (double(y1 - y0 + 1) * double(x1 - x0 + 1));
  }

 private:
  size_t idx(int y, int x) const { return static_cast<size_t>(y) * (w_ + 1) + x; }
  int h_, w_;
  std::vector<double> sums_;
};

}  // namespace dualattn
