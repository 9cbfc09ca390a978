#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualattn/raster.hpp"

namespace dualattn {

struct episode_finished : std::runtime_error {
  episode_finished() : std::runtime_error("episode already ran its T steps") {}
};

// Two views of the same point of focus: g40 at full tile resolution and g20
// covering twice the field, downsampled to the same raster size.
struct GlimpsePair {
  Raster g40, g20;
};

struct GlimpseEnvConfig {
  int glimpse_size = 128;
  int id_size = 128;  // resolution of the context copy i_d
  int T = 6;
};

// Per-tile episode state. The tile is the environment; tile_down is the
// inhibition-of-return context copy whose visited regions are blacked out.
struct GlimpseState {
  Raster tile;
  Raster tile_down;
  int step = 0;
  int T = 6;
  int glimpse_size = 128;
  std::array<double, 2> loc{0.0, 0.0};
  std::vector<std::array<double, 2>> locations;
  std::vector<int> predictions;
  std::vector<std::array<int, 4>> visited;  // y0, x0, h, w in tile coords
  long pixels_read = 0;
};

// Normalized [-1,1] location -> pixel center: (x + 1) / 2 * extent.
inline std::pair<double, double> loc_to_pixel(const std::array<double, 2>& loc, int h, int w) {
  return {(loc[0] + 1.0) / 2.0 * w, (loc[1] + 1.0) / 2.0 * h};
}

inline std::array<int, 4> glimpse_box(const std::array<double, 2>& loc, int h, int w, int size) {
  auto [cx, cy] = loc_to_pixel(loc, h, w);
  int x0 = static_cast<int>(std::lround(cx)) - size / 2;
  int y0 = static_cast<int>(std::lround(cy)) - size / 2;
  return {y0, x0, size, size};
}

// g40: size^2 crop at tile resolution; g20: (2*size)^2 crop downsampled 2x.
// Both centered at loc, zero-padded at the edges.
inline GlimpsePair extract_glimpse_pair(const Raster& tile, const std::array<double, 2>& loc,
                                        int size = 128) {
  require(loc[0] >= -1.0 && loc[0] <= 1.0 && loc[1] >= -1.0 && loc[1] <= 1.0,
          "glimpse location must lie in [-1,1]^2");
  auto box = glimpse_box(loc, tile.h, tile.w, size);
  GlimpsePair p;
  p.g40 = crop_padded(tile, box[0], box[1], size, size);
  Raster wide = crop_padded(tile, box[0] - size / 2, box[1] - size / 2, 2 * size, 2 * size);
  p.g20 = block_downsample(wide, 2);
  return p;
}

inline GlimpseState make_glimpse_state(Raster tile, const GlimpseEnvConfig& cfg) {
  require(tile.h == tile.w, "glimpse environment expects square tiles");
  require(tile.h % cfg.id_size == 0, "tile size must be a multiple of the context size");
  GlimpseState s;
  s.tile_down = block_downsample(tile, tile.h / cfg.id_size);
  s.tile = std::move(tile);
  s.T = cfg.T;
  s.glimpse_size = cfg.glimpse_size;
  return s;
}

// Blacks out the glimpse footprint at `loc` in the context copy and records
// the box. Idempotent for repeated boxes.
inline void apply_ior(GlimpseState& s, const std::array<double, 2>& loc) {
  auto box = glimpse_box(loc, s.tile.h, s.tile.w, s.glimpse_size);
  s.visited.push_back(box);
  int ds = s.tile.h / s.tile_down.h;
  int bx = box[1] >= 0 ? box[1] / ds : (box[1] - ds + 1) / ds;
  int by = box[0] >= 0 ? box[0] / ds : (box[0] - ds + 1) / ds;
  int bs = s.glimpse_size / ds;
  for (int y = std::max(0, by); y < std::min(s.tile_down.h, by + bs); ++y)
    for (int x = std::max(0, bx); x < std::min(s.tile_down.w, bx + bs); ++x)
      for (int c = 0; c < s.tile_down.c; ++c) s.tile_down.at(y, x, c) = 0;
}

// Places the first (externally chosen) location and extracts its pair.
inline GlimpsePair begin_episode(GlimpseState& s, const std::array<double, 2>& first_loc) {
  require(s.locations.empty(), "episode already begun");
  s.loc = first_loc;
  s.locations.push_back(first_loc);
  s.pixels_read += static_cast<long>(s.glimpse_size) * s.glimpse_size * 5;  // g40 + 2x FOV
  return extract_glimpse_pair(s.tile, first_loc, s.glimpse_size);
}

// One saccade: record the prediction made at the current location, suppress
// it in the context copy, move, extract the next pair.
inline GlimpsePair step(GlimpseState& s, const std::array<double, 2>& next_loc, int predicted) {
  if (s.step >= s.T) throw episode_finished();
  require(!s.locations.empty(), "begin_episode must run first");
  s.predictions.push_back(predicted);
  apply_ior(s, s.loc);
  s.loc = next_loc;
  s.locations.push_back(next_loc);
  ++s.step;
  s.pixels_read += static_cast<long>(s.glimpse_size) * s.glimpse_size * 5;
  return extract_glimpse_pair(s.tile, next_loc, s.glimpse_size);
}

// Records the prediction for the final location without moving.
inline void finish_episode(GlimpseState& s, int predicted) {
  s.predictions.push_back(predicted);
}

// Ordered record of one episode; rewards are filled against the ground truth
// by the objectives module.
struct GlimpseEpisode {
  std::vector<std::array<double, 2>> locations;
  std::vector<int> per_step_scores;
  int final_score = -1;
  std::vector<double> rewards;
  double episode_return = 0.0;
  std::vector<double> log_probs;  // location proposals, T-1 entries
  std::vector<double> baselines;  // baseline estimates alongside proposals
  long pixels_read = 0;
};

inline nlohmann::json episode_trace_json(const GlimpseEpisode& e) {
  nlohmann::json j;
  j["locations"] = nlohmann::json::array();
  for (const auto& l : e.locations) j["locations"].push_back({l[0], l[1]});
  j["per_step_scores"] = e.per_step_scores;
  j["final_score"] = e.final_score;
  j["rewards"] = e.rewards;
  j["return"] = e.episode_return;
  j["log_probs"] = e.log_probs;
  j["baselines"] = e.baselines;
  j["pixels_read"] = e.pixels_read;
  return j;
}

// Contact-sheet strip: context copy followed by the g40/g20 pair per step.
inline Raster glimpse_strip(const GlimpseState& s, const std::vector<GlimpsePair>& pairs) {
  int cell = s.glimpse_size;
  int cols = 1 + static_cast<int>(pairs.size());
  Raster sheet(2 * cell + 12, cols * (cell + 4) + 4, 3, 24);
  Raster ctx = s.tile_down;
  if (ctx.h != cell) ctx = block_downsample(ctx, std::max(1, ctx.h / cell));
  blit(sheet, ctx, 6, 4);
  for (size_t i = 0; i < pairs.size(); ++i) {
    int x = 4 + static_cast<int>(i + 1) * (cell + 4);
    blit(sheet, pairs[i].g40, 4, x);
    blit(sheet, pairs[i].g20, cell + 8, x);
  }
  return sheet;
}

}  // namespace dualattn
