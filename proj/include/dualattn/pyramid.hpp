#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dualattn/common.hpp"
#include "dualattn/kv_config.hpp"
#include "dualattn/png_io.hpp"
#include "dualattn/raster.hpp"
#include "dualattn/rng.hpp"
#include "dualattn/texture.hpp"

namespace dualattn {

inline std::string mag_tag_for_scale(double base_mag, int scale) {
  double m = base_mag / scale;
  std::ostringstream os;
  os << m << "x";
  return os.str();
}

inline double parse_mag_tag(const std::string& tag) {
  try {
    size_t pos = 0;
    double v = std::stod(tag, &pos);
    if (pos + 1 != tag.size() || (tag[pos] != 'x' && tag[pos] != 'X'))
      throw std::invalid_argument(tag);
    return v;
  } catch (...) {
    throw std::invalid_argument("bad magnification tag: " + tag);
  }
}

// Multi-resolution slide. A level is backed by an in-memory raster, a lossless
// PNG file (decoded lazily), or — for synthetic slides too large to store —
// the deterministic texture program. Readers are const and safe to share
// across threads once constructed.
class SlidePyramid {
 public:
  struct Level {
    int scale = 1;
    long h = 0, w = 0;
    std::string mag;
    enum Backing { Memory, File, Procedural } backing = Memory;
    std::string file;  // relative to slide dir when File
  };

  SlidePyramid() = default;

  static SlidePyramid from_rasters(std::vector<Raster> rasters, std::vector<int> scales,
                                   double base_mag = 40.0) {
    require(!rasters.empty() && rasters.size() == scales.size(), "levels/scales mismatch");
    require(scales[0] == 1, "level_scale[0] must be 1");
    SlidePyramid p;
    p.base_h_ = rasters[0].h;
    p.base_w_ = rasters[0].w;
    p.base_mag_ = base_mag;
    for (size_t i = 0; i < rasters.size(); ++i) {
      if (i > 0) require(scales[i] > scales[i - 1], "level_scale must be strictly increasing");
      Level lv;
      lv.scale = scales[i];
      lv.h = rasters[i].h;
      lv.w = rasters[i].w;
      lv.mag = mag_tag_for_scale(base_mag, scales[i]);
      lv.backing = Level::Memory;
      p.levels_.push_back(lv);
      p.cache_.push_back(std::make_shared<Raster>(std::move(rasters[i])));
    }
    p.check_level_shapes();
    return p;
  }

  // Mixed pyramid for the synthetic generator: small scales procedural,
  // the given rasters memory-backed.
  template <typename Cfg>
  static SlidePyramid assemble_mixed(const Cfg& cfg, const TextureProgram& prog,
                                     const std::vector<int>& mat_scales,
                                     std::vector<Raster> mats) {
    SlidePyramid p;
    p.base_h_ = cfg.base_height;
    p.base_w_ = cfg.base_width;
    p.base_mag_ = cfg.base_mag;
    p.texture_ = prog;
    int prev = 0;
    for (int s : cfg.scales) {
      require(s > prev, "level_scale must be strictly increasing");
      prev = s;
      Level lv;
      lv.scale = s;
      lv.h = ceil_div(cfg.base_height, s);
      lv.w = ceil_div(cfg.base_width, s);
      lv.mag = mag_tag_for_scale(cfg.base_mag, s);
      auto it = std::find(mat_scales.begin(), mat_scales.end(), s);
      if (it == mat_scales.end()) {
        lv.backing = Level::Procedural;
        p.cache_.push_back(nullptr);
      } else {
        lv.backing = Level::Memory;
        p.cache_.push_back(
            std::make_shared<Raster>(std::move(mats[it - mat_scales.begin()])));
      }
      p.levels_.push_back(lv);
    }
    require(!p.levels_.empty() && p.levels_[0].scale == 1, "level_scale[0] must be 1");
    return p;
  }

  static SlidePyramid open(const std::filesystem::path& dir) {
    auto manifest_path = dir / "slide.manifest";
    if (!std::filesystem::exists(manifest_path))
      throw data_error("missing slide manifest: " + manifest_path.string());
    KvConfig m = KvConfig::load(manifest_path.string());
    SlidePyramid p;
    p.dir_ = dir;
    p.base_h_ = m.get_int("base_height");
    p.base_w_ = m.get_int("base_width");
    p.base_mag_ = parse_mag_tag(m.get_string("base_mag", "40x"));
    int n = static_cast<int>(m.get_int("levels"));
    for (int i = 0; i < n; ++i) {
      Level lv;
      lv.scale = static_cast<int>(m.get_int("scale_" + std::to_string(i)));
      lv.mag = m.get_string("mag_" + std::to_string(i));
      lv.h = ceil_div(p.base_h_, lv.scale);
      lv.w = ceil_div(p.base_w_, lv.scale);
      std::string store = m.get_string("store_" + std::to_string(i));
      if (store == "procedural") {
        lv.backing = Level::Procedural;
      } else if (store.rfind("file:", 0) == 0) {
        lv.backing = Level::File;
        lv.file = store.substr(5);
      } else {
        throw data_error("unknown level backing '" + store + "' in " + manifest_path.string());
      }
      p.levels_.push_back(lv);
      p.cache_.push_back(nullptr);
    }
    if (m.has("texture")) {
      std::ifstream in(dir / m.get_string("texture"));
      if (!in) throw data_error("missing texture program for " + dir.string());
      nlohmann::json j;
      in >> j;
      p.texture_ = TextureProgram::from_json(j);
    }
    for (const auto& lv : p.levels_)
      if (lv.backing == Level::Procedural && !p.texture_)
        throw data_error("procedural level without texture program in " + dir.string());
    return p;
  }

  // Writes manifest plus one PNG per raster-backed level. Procedural levels
  // are recorded as such alongside the texture program.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    KvConfig m;
    m.set("base_height", static_cast<long long>(base_h_));
    m.set("base_width", static_cast<long long>(base_w_));
    m.set("base_mag", mag_tag_for_scale(base_mag_, 1));
    m.set("levels", static_cast<long long>(levels_.size()));
    for (size_t i = 0; i < levels_.size(); ++i) {
      const Level& lv = levels_[i];
      m.set("scale_" + std::to_string(i), lv.scale);
      m.set("mag_" + std::to_string(i), lv.mag);
      if (lv.backing == Level::Procedural) {
        m.set("store_" + std::to_string(i), std::string("procedural"));
      } else {
        std::string name = lv.file.empty() ? "level_" + std::to_string(i) + ".png" : lv.file;
        m.set("store_" + std::to_string(i), "file:" + name);
        write_png_rgb8((dir / name).string(), level(static_cast<int>(i)));
      }
    }
    if (texture_) {
      m.set("texture", std::string("texture.json"));
      std::ofstream out(dir / "texture.json");
      out << texture_->to_json().dump(0) << "\n";
    }
    m.save((dir / "slide.manifest").string());
  }

  long base_height() const { return base_h_; }
  long base_width() const { return base_w_; }
  double base_mag() const { return base_mag_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }
  const Level& level_info(int i) const { return levels_[i]; }
  const std::optional<TextureProgram>& texture() const { return texture_; }
  void set_texture(TextureProgram t) { texture_ = std::move(t); }

  int level_for_scale(int scale) const {
    for (size_t i = 0; i < levels_.size(); ++i)
      if (levels_[i].scale == scale) return static_cast<int>(i);
    throw std::invalid_argument("no level with scale " + std::to_string(scale));
  }

  int level_for_tag(const std::string& mag) const {
    for (size_t i = 0; i < levels_.size(); ++i)
      if (levels_[i].mag == mag) return static_cast<int>(i);
    throw std::invalid_argument("unknown magnification tag: " + mag);
  }

  // Full raster of a level; decoded once and cached. Refuses to materialize
  // procedurally backed levels above ~64 Mpx.
  const Raster& level(int idx) const {
    require(idx >= 0 && idx < num_levels(), "level index out of range");
    {
      std::lock_guard<std::mutex> lock(*mu_);
      if (cache_[idx]) return *cache_[idx];
    }
    const Level& lv = levels_[idx];
    std::shared_ptr<Raster> r;
    if (lv.backing == Level::File) {
      r = std::make_shared<Raster>(read_png_rgb8((dir_ / lv.file).string()));
      if (r->h != lv.h || r->w != lv.w)
        throw data_error("level file size mismatch: " + lv.file);
    } else if (lv.backing == Level::Procedural) {
      if (lv.h * lv.w > 64L * 1024 * 1024)
        throw data_error("refusing to materialize a procedural level of this size");
      r = std::make_shared<Raster>(
          read_region(idx, 0, 0, static_cast<int>(lv.h), static_cast<int>(lv.w)));
    } else {
      throw data_error("memory level missing from cache");
    }
    std::lock_guard<std::mutex> lock(*mu_);
    if (!cache_[idx]) cache_[idx] = std::move(r);
    return *cache_[idx];
  }

  // Reads a ph x pw window of a level. `X`, `Y` are base-level pixel
  // coordinates of the window's top-left corner; they are converted to level
  // coordinates internally (floor). Out-of-bounds area is zero-padded; a
  // window that misses the slide entirely is an error.
  Raster read_region(int level_idx, long X, long Y, int ph, int pw) const {
    require(level_idx >= 0 && level_idx < num_levels(), "level index out of range");
    require(ph > 0 && pw > 0, "read_region size must be positive");
    const Level& lv = levels_[level_idx];
    long lx = floor_div(X, lv.scale);
    long ly = floor_div(Y, lv.scale);
    if (lx + pw <= 0 || ly + ph <= 0 || lx >= lv.w || ly >= lv.h)
      throw data_error("requested region lies entirely outside the slide");
    Raster out(ph, pw, 3);
    long cx0 = std::max(0L, lx), cy0 = std::max(0L, ly);
    long cx1 = std::min(lv.w, lx + pw), cy1 = std::min(lv.h, ly + ph);
    int cw = static_cast<int>(cx1 - cx0), chh = static_cast<int>(cy1 - cy0);

    if (lv.backing == Level::Procedural) {
      fill_procedural(lv, cx0, cy0, cw, chh, out, cy0 - ly, cx0 - lx);
    } else {
      const Raster& full = level(level_idx);
      for (int y = 0; y < chh; ++y)
        std::memcpy(&out.px[((cy0 - ly + y) * static_cast<size_t>(pw) + (cx0 - lx)) * 3],
                    &full.px[((cy0 + y) * static_cast<size_t>(lv.w) + cx0) * 3],
                    static_cast<size_t>(cw) * 3);
    }
    return out;
  }

  Raster read_region_scale(int scale, long X, long Y, int ph, int pw) const {
    return read_region(level_for_scale(scale), X, Y, ph, pw);
  }
  Raster read_region_tag(const std::string& mag, long X, long Y, int ph, int pw) const {
    return read_region(level_for_tag(mag), X, Y, ph, pw);
  }

 private:
  static long floor_div(long a, long b) {
    long q = a / b;
    return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
  }

  void check_level_shapes() const {
    for (size_t i = 0; i < levels_.size(); ++i) {
      long eh = ceil_div(base_h_, levels_[i].scale), ew = ceil_div(base_w_, levels_[i].scale);
      require(std::abs(levels_[i].h - eh) <= 1 && std::abs(levels_[i].w - ew) <= 1,
              "level shape violates scale invariant");
    }
  }

  // Renders the clipped window of a procedural level; scale > 1 averages the
  // (possibly ragged) base blocks so stored and procedural levels agree.
  void fill_procedural(const Level& lv, long lx0, long ly0, int w, int h, Raster& out,
                       long oy, long ox) const {
    const TextureProgram& prog = *texture_;
    if (lv.scale == 1) {
      Raster win = render_texture(prog, lx0, ly0, w, h);
      for (int y = 0; y < h; ++y)
        std::memcpy(&out.px[((oy + y) * static_cast<size_t>(out.w) + ox) * 3],
                    &win.px[static_cast<size_t>(y) * w * 3], static_cast<size_t>(w) * 3);
      return;
    }
    int s = lv.scale;
    long bx0 = lx0 * s, by0 = ly0 * s;
    long bx1 = std::min(base_w_, (lx0 + w) * s), by1 = std::min(base_h_, (ly0 + h) * s);
    Raster base = render_texture(prog, bx0, by0, static_cast<int>(bx1 - bx0),
                                 static_cast<int>(by1 - by0));
    for (int y = 0; y < h; ++y) {
      long ry0 = y * static_cast<long>(s), ry1 = std::min<long>(base.h, ry0 + s);
      for (int x = 0; x < w; ++x) {
        long rx0 = x * static_cast<long>(s), rx1 = std::min<long>(base.w, rx0 + s);
        long area = (ry1 - ry0) * (rx1 - rx0);
        for (int ch = 0; ch < 3; ++ch) {
          uint64_t acc = 0;
          for (long yy = ry0; yy < ry1; ++yy)
            for (long xx = rx0; xx < rx1; ++xx) acc += base.at(static_cast<int>(yy), static_cast<int>(xx), ch);
          out.at(static_cast<int>(oy + y), static_cast<int>(ox + x), ch) =
              static_cast<uint8_t>((acc + area / 2) / area);
        }
      }
    }
  }

  long base_h_ = 0, base_w_ = 0;
  double base_mag_ = 40.0;
  std::vector<Level> levels_;
  mutable std::vector<std::shared_ptr<Raster>> cache_;
  mutable std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  std::filesystem::path dir_;
  std::optional<TextureProgram> texture_;
};

// Downsampled full-slide view at an arbitrary integer factor. Resolves to the
// deepest level whose scale divides the factor, then block-averages the rest.
inline Raster downsample(const SlidePyramid& slide, int factor) {
  require(factor >= 1, "downsample factor must be >= 1");
  int best = -1;
  for (int i = 0; i < slide.num_levels(); ++i) {
    int s = slide.level_info(i).scale;
    if (s <= factor && factor % s == 0 && (best < 0 || s > slide.level_info(best).scale))
      best = i;
  }
  require(best >= 0, "factor not reachable from any stored level");
  const auto& lv = slide.level_info(best);
  Raster at_level = slide.read_region(best, 0, 0, static_cast<int>(lv.h), static_cast<int>(lv.w));
  return block_downsample(at_level, factor / lv.scale);
}

// ---- tissue masking --------------------------------------------------------

struct MorphologyConfig {
  int open_radius = 2;
  int close_radius = 2;
};

struct TissueMask {
  BinaryMask mask;
  double coverage = 0.0;
  bool degenerate = false;  // single-intensity input; mask left empty
};

// Otsu's threshold over a 256-bin histogram: exhaustive search for the split
// maximizing between-class variance. Returns -1 for single-intensity input.
inline int otsu_threshold(const std::vector<long>& hist) {
  long total = 0;
  double sum = 0;
  int nonzero = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    sum += static_cast<double>(i) * hist[i];
    if (hist[i] > 0) ++nonzero;
  }
  if (total == 0 || nonzero <= 1) return -1;
  double sum_b = 0;
  long w_b = 0;
  double best_var = -1.0;
  int best_t = 0;
  for (int t = 0; t < 255; ++t) {
    w_b += hist[t];
    if (w_b == 0) continue;
    long w_f = total - w_b;
    if (w_f == 0) break;
    sum_b += static_cast<double>(t) * hist[t];
    double m_b = sum_b / w_b;
    double m_f = (sum - sum_b) / w_f;
    double var = static_cast<double>(w_b) * w_f * (m_b - m_f) * (m_b - m_f);
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return best_t;
}

// Grayscale -> Otsu -> binary open -> close. Tissue is the class darker than
// the threshold. A single-intensity image yields an empty mask with the
// degenerate flag set rather than an error.
inline TissueMask tissue_mask(const Raster& I0, const MorphologyConfig& cfg = {}) {
  require(I0.c == 3, "tissue_mask expects an RGB raster");
  Raster gray = to_gray(I0);
  std::vector<long> hist(256, 0);
  for (uint8_t g : gray.px) ++hist[g];
  int t = otsu_threshold(hist);
  TissueMask out;
  out.mask = BinaryMask(I0.h, I0.w, 0);
  if (t < 0) {
    out.degenerate = true;
    return out;
  }
  for (int y = 0; y < I0.h; ++y)
    for (int x = 0; x < I0.w; ++x) out.mask.at(y, x) = gray.at(y, x) <= t ? 1 : 0;
  out.mask = close_mask(open_mask(out.mask, cfg.open_radius), cfg.close_radius);
  out.coverage = out.mask.coverage();
  return out;
}

// ---- synthetic slides -------------------------------------------------------

struct SyntheticSlideSpec {
  int class_label = 0;
  int roi_count = 0;
  double roi_intensity = 0.0;
  uint64_t seed = 0;
  BinaryMask roi_mask;  // filled by the generator, at the mask_factor grid
};

struct SyntheticGeneratorConfig {
  long base_height = 16384, base_width = 16384;
  std::vector<int> scales = {1, 2, 4, 8, 16, 32};
  int materialize_from = 4;  // levels with scale >= this are stored as PNG
  double base_mag = 40.0;
  int mask_factor = 32;               // roi_mask grid resolution
  double roi_mask_threshold = 0.2;    // stain alpha marking a GT cell
  double stain_detect_rb = 30.0;      // R-B margin declaring a pixel stained
  double blob_radius_min_frac = 1.0 / 32, blob_radius_max_frac = 1.0 / 20;
  int fold_count_min = 1, fold_count_max = 4;
  double fold_darkness_min = 0.45, fold_darkness_max = 0.75;
  int threads = 1;

  void save(const std::string& path) const {
    KvConfig kv;
    kv.set("base_height", static_cast<long long>(base_height));
    kv.set("base_width", static_cast<long long>(base_width));
    std::ostringstream ss;
    for (size_t i = 0; i < scales.size(); ++i) ss << (i ? "," : "") << scales[i];
    kv.set("scales", ss.str());
    kv.set("materialize_from", materialize_from);
    kv.set("base_mag", base_mag);
    kv.set("mask_factor", mask_factor);
    kv.set("roi_mask_threshold", roi_mask_threshold);
    kv.set("stain_detect_rb", stain_detect_rb);
    kv.set("blob_radius_min_frac", blob_radius_min_frac);
    kv.set("blob_radius_max_frac", blob_radius_max_frac);
    kv.set("fold_count_min", fold_count_min);
    kv.set("fold_count_max", fold_count_max);
    kv.set("fold_darkness_min", fold_darkness_min);
    kv.set("fold_darkness_max", fold_darkness_max);
    kv.save(path);
  }

  static SyntheticGeneratorConfig load(const std::string& path) {
    KvConfig kv = KvConfig::load(path);
    SyntheticGeneratorConfig c;
    c.base_height = kv.get_int("base_height", c.base_height);
    c.base_width = kv.get_int("base_width", c.base_width);
    if (kv.has("scales")) {
      c.scales.clear();
      std::stringstream ss(kv.get_string("scales"));
      std::string tok;
      while (std::getline(ss, tok, ',')) c.scales.push_back(std::stoi(tok));
    }
    c.materialize_from = static_cast<int>(kv.get_int("materialize_from", c.materialize_from));
    c.base_mag = kv.get_real("base_mag", c.base_mag);
    c.mask_factor = static_cast<int>(kv.get_int("mask_factor", c.mask_factor));
    c.roi_mask_threshold = kv.get_real("roi_mask_threshold", c.roi_mask_threshold);
    c.stain_detect_rb = kv.get_real("stain_detect_rb", c.stain_detect_rb);
    c.blob_radius_min_frac = kv.get_real("blob_radius_min_frac", c.blob_radius_min_frac);
    c.blob_radius_max_frac = kv.get_real("blob_radius_max_frac", c.blob_radius_max_frac);
    c.fold_count_min = static_cast<int>(kv.get_int("fold_count_min", c.fold_count_min));
    c.fold_count_max = static_cast<int>(kv.get_int("fold_count_max", c.fold_count_max));
    c.fold_darkness_min = kv.get_real("fold_darkness_min", c.fold_darkness_min);
    c.fold_darkness_max = kv.get_real("fold_darkness_max", c.fold_darkness_max);
    return c;
  }
};

struct SyntheticSlide {
  SlidePyramid pyramid;
  SyntheticSlideSpec spec;
  TextureProgram program;
};

namespace gendetail {

inline TextureProgram build_program(const SyntheticSlideSpec& spec,
                                    const SyntheticGeneratorConfig& cfg) {
  Rng rng(derive_seed(spec.seed, 0xA11CE));
  TextureProgram p;
  p.seed = derive_seed(spec.seed, 0x7E47);
  p.height = cfg.base_height;
  p.width = cfg.base_width;
  p.tissue_cx = cfg.base_width * rng.uniform_in(0.47, 0.53);
  p.tissue_cy = cfg.base_height * rng.uniform_in(0.47, 0.53);
  p.tissue_rx = cfg.base_width * rng.uniform_in(0.36, 0.42);
  p.tissue_ry = cfg.base_height * rng.uniform_in(0.36, 0.42);
  p.boundary_cell = std::max(64.0, cfg.base_width / 16.0);
  p.coarse_cell = std::max(32.0, cfg.base_width / 32.0);
  p.fine_cell = std::max(8.0, cfg.base_width / 170.0);

  int blob_count = spec.roi_intensity > 0.0 ? spec.roi_count : 0;
  double rmin = cfg.blob_radius_min_frac * cfg.base_height;
  double rmax = cfg.blob_radius_max_frac * cfg.base_height;
  for (int i = 0; i < blob_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      double r = rng.uniform_in(rmin, rmax);
      double ang = rng.uniform_in(0.0, 6.2831853);
      double rad = std::sqrt(rng.uniform()) * 0.7;
      double cx = p.tissue_cx + std::cos(ang) * rad * p.tissue_rx;
      double cy = p.tissue_cy + std::sin(ang) * rad * p.tissue_ry;
      bool clear = true;
      for (const auto& b : p.blobs) {
        double dx = cx - b.cx, dy = cy - b.cy;
        if (std::sqrt(dx * dx + dy * dy) < (r + b.r) * 1.05) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      double strength = spec.roi_intensity * rng.uniform_in(0.9, 1.0);
      p.blobs.push_back({cx, cy, r, strength});
      placed = true;
    }
  }

  int folds = cfg.fold_count_min +
              (cfg.fold_count_max > cfg.fold_count_min
                   ? rng.below_int(cfg.fold_count_max - cfg.fold_count_min + 1)
                   : 0);
  for (int i = 0; i < folds; ++i) {
    double ang = rng.uniform_in(0.0, 6.2831853);
    double rad = std::sqrt(rng.uniform()) * 0.75;
    double cx = p.tissue_cx + std::cos(ang) * rad * p.tissue_rx;
    double cy = p.tissue_cy + std::sin(ang) * rad * p.tissue_ry;
    double dir = rng.uniform_in(0.0, 6.2831853);
    double len = cfg.base_height * rng.uniform_in(0.08, 0.22);
    double hw = rng.uniform_in(0.0015, 0.004) * cfg.base_height;
    double dark = rng.uniform_in(cfg.fold_darkness_min, cfg.fold_darkness_max);
    p.folds.push_back({cx - std::cos(dir) * len / 2, cy - std::sin(dir) * len / 2,
                       cx + std::cos(dir) * len / 2, cy + std::sin(dir) * len / 2, hw, dark});
  }
  return p;
}

}  // namespace gendetail

// Deterministically renders the pyramid for a spec. Levels at or above
// materialize_from are rendered by streaming the base in strips and
// block-averaging; smaller scales stay procedural.
inline SyntheticSlide generate_synthetic_slide(const SyntheticSlideSpec& spec_in,
                                               const SyntheticGeneratorConfig& cfg) {
  SyntheticSlide out;
  out.spec = spec_in;
  TextureProgram prog = gendetail::build_program(out.spec, cfg);
  out.program = prog;

  // ground-truth ROI mask on the mask_factor grid
  int mh = ceil_div(cfg.base_height, cfg.mask_factor);
  int mw = ceil_div(cfg.base_width, cfg.mask_factor);
  out.spec.roi_mask = BinaryMask(mh, mw, 0);
  for (int gy = 0; gy < mh; ++gy)
    for (int gx = 0; gx < mw; ++gx) {
      double x = (gx + 0.5) * cfg.mask_factor;
      double y = (gy + 0.5) * cfg.mask_factor;
      if (stain_alpha_at(prog, x, y) >= cfg.roi_mask_threshold) out.spec.roi_mask.at(gy, gx) = 1;
    }

  // materialized levels, streamed in strips of the largest materialized scale
  std::vector<int> mat_scales;
  for (int s : cfg.scales)
    if (s >= cfg.materialize_from) mat_scales.push_back(s);
  std::vector<Raster> mats;
  for (int s : mat_scales)
    mats.emplace_back(ceil_div(cfg.base_height, s), ceil_div(cfg.base_width, s), 3);

  if (!mat_scales.empty()) {
    int strip = mat_scales.back();
    int n_strips = ceil_div(cfg.base_height, strip);
    int threads = std::max(1, cfg.threads);
    parallel_for(n_strips, threads, [&](int si) {
      long y0 = static_cast<long>(si) * strip;
      int sh = static_cast<int>(std::min<long>(strip, cfg.base_height - y0));
      Raster band = render_texture(prog, 0, y0, static_cast<int>(cfg.base_width), sh);
      for (size_t li = 0; li < mat_scales.size(); ++li) {
        int s = mat_scales[li];
        Raster& dst = mats[li];
        int oy0 = static_cast<int>(y0 / s);
        int rows = ceil_div(sh, s);
        for (int oy = 0; oy < rows; ++oy) {
          int by0 = oy * s, by1 = std::min(sh, by0 + s);
          for (int ox = 0; ox < dst.w; ++ox) {
            int bx0 = ox * s, bx1 = std::min(band.w, bx0 + s);
            long area = static_cast<long>(by1 - by0) * (bx1 - bx0);
            for (int ch = 0; ch < 3; ++ch) {
              uint64_t acc = 0;
              for (int yy = by0; yy < by1; ++yy)
                for (int xx = bx0; xx < bx1; ++xx) acc += band.at(yy, xx, ch);
              dst.at(oy0 + oy, ox, ch) = static_cast<uint8_t>((acc + area / 2) / area);
            }
          }
        }
      }
    });
  }

  // assemble the pyramid: procedural below materialize_from, memory rasters above
  SlidePyramid p;
  std::vector<Raster> mem_levels;
  std::vector<int> mem_scales;
  bool any_procedural = false;
  for (int s : cfg.scales)
    if (s < cfg.materialize_from) any_procedural = true;

  if (!any_procedural) {
    size_t mi = 0;
    for (int s : cfg.scales) {
      (void)s;
      mem_levels.push_back(std::move(mats[mi]));
      ++mi;
    }
    p = SlidePyramid::from_rasters(std::move(mem_levels), cfg.scales, cfg.base_mag);
  } else {
    p = SlidePyramid::assemble_mixed(cfg, prog, mat_scales, std::move(mats));
  }
  p.set_texture(prog);
  out.pyramid = std::move(p);
  return out;
}

}  // namespace dualattn
