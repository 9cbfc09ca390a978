#pragma once

#include <set>
#include <string>

#include "dualattn/hard_attention.hpp"
#include "dualattn/kv_config.hpp"
#include "dualattn/objectives.hpp"
#include "dualattn/sampler.hpp"
#include "dualattn/soft_attention.hpp"

namespace dualattn {

// Everything a run needs: network shapes, sampling, losses and the training
// schedule. Three named presets ship: "her2" and "mmr" mirror the published
// configurations; "synth4" is the reduced desk-scale preset the synthetic
// end-to-end experiment runs on.
struct PipelineConfig {
  std::string preset = "synth4";
  int classes = 4;
  int downsample_factor = 32;

  SoftAttentionConfig soft;
  SamplerConfig sampler;
  HardAttentionConfig hard;
  LossConfig loss;

  std::string mode = "joint";  // joint | separate
  std::string aggregation = "dominant";  // dominant | mean
  int tiles_per_batch = 40;
  int slides_per_batch = 4;
  double lr_soft = 1e-4;
  double lr_hard = 1e-3;
  int lr_step_epochs = 30;   // step decay interval
  double lr_gamma = 0.1;
  int epochs = 10;
  int soft_epochs = 10;      // separate mode, stage 1
  int folds = 4;
  int fold = 0;              // which fold is held out as test
  uint64_t seed = 1;
  double stop_min_delta = 0.005;
  int stop_patience = 10;
  std::string stop_rule = "none";  // none | dice
  double aux_step_ce = 0.0;  // optional per-step classification auxiliary
  int val_every = 1;
  int threads = 2;

  GlimpseEnvConfig env() const {
    GlimpseEnvConfig e;
    e.glimpse_size = hard.glimpse_size;
    e.id_size = hard.id_size;
    e.T = hard.T;
    return e;
  }
};

inline PipelineConfig preset_her2() {
  PipelineConfig c;
  c.preset = "her2";
  c.classes = 4;
  c.downsample_factor = 32;
  c.soft.input_h = c.soft.input_w = 2048;  // ~65k base / 32
  c.soft.conv_layers = 4;
  c.soft.base_channels = 8;
  c.soft.pool_size = 8;
  c.soft.feature_depth = 8;
  c.soft.feature_width = 32;
  c.soft.num_classes = 4;
  c.sampler.n_tiles = 10;
  c.sampler.tile_size_base = 2048;
  c.sampler.tile_size_model = 128;
  c.sampler.scale_factor = 32;
  c.sampler.pool = 8;
  c.sampler.noise = {0.0, 1.0, 0};
  c.sampler.mask_kind = SamplerConfig::Positive;
  c.hard.T = 6;
  c.hard.v_dim = 256;
  c.hard.lstm1 = 256;
  c.hard.lstm2 = 128;
  c.hard.num_classes = 4;
  c.loss = {1.0, 1.0, 0.5, 1.0, 6, false};
  c.mode = "joint";
  c.aggregation = "dominant";
  c.tiles_per_batch = 40;
  c.slides_per_batch = 4;
  c.lr_soft = 1e-4;
  c.lr_hard = 1e-3;
  c.folds = 4;
  c.stop_rule = "none";
  return c;
}

inline PipelineConfig preset_mmr() {
  PipelineConfig c = preset_her2();
  c.preset = "mmr";
  c.classes = 2;
  c.soft.conv_layers = 5;
  c.soft.pool_size = 3;
  c.soft.num_classes = 2;
  c.sampler.n_tiles = 15;
  c.sampler.noise = {-2.0, 1.0, 0};
  c.sampler.mask_kind = SamplerConfig::Tumor;
  c.hard.num_classes = 2;
  c.mode = "separate";
  c.aggregation = "mean";
  c.tiles_per_batch = 30;
  c.slides_per_batch = 2;
  c.folds = 5;
  c.stop_rule = "dice";
  return c;
}

// Reduced preset for the synthetic four-class experiment: 16384^2 base,
// factor-32 view (512^2), 1024-px tiles, slimmer networks. Shapes keep the
// published structure (doubling channels, pooled grid, T = 6, N = 10).
inline PipelineConfig preset_synth4() {
  PipelineConfig c;
  c.preset = "synth4";
  c.classes = 4;
  c.downsample_factor = 32;
  c.soft.input_h = c.soft.input_w = 512;
  c.soft.conv_layers = 2;
  c.soft.base_channels = 4;
  c.soft.pool_size = 8;
  c.soft.feature_depth = 4;
  c.soft.feature_width = 16;
  c.soft.tile_input = 128;
  c.soft.num_classes = 4;
  c.sampler.n_tiles = 10;
  c.sampler.tile_size_base = 1024;
  c.sampler.tile_size_model = 128;
  c.sampler.scale_factor = 32;
  c.sampler.pool = 8;
  c.sampler.noise = {0.0, 1.0, 0};
  c.sampler.mask_kind = SamplerConfig::Positive;
  c.hard.glimpse_size = 128;
  c.hard.id_size = 128;
  c.hard.T = 6;
  c.hard.v_dim = 128;
  c.hard.lstm1 = 64;
  c.hard.lstm2 = 64;
  c.hard.cnn_base_channels = 6;
  c.hard.cnn_layers = 4;
  c.hard.ctx_base_channels = 6;
  c.hard.ctx_layers = 4;
  c.hard.num_classes = 4;
  c.hard.policy_sigma = 0.15;
  c.loss.beta = 0.02;
  c.loss.delta = 0.2;
  c.loss.alpha = 0.5;
  c.loss.T = 6;
  c.mode = "joint";
  c.aggregation = "dominant";
  c.tiles_per_batch = 40;
  c.slides_per_batch = 4;
  c.lr_soft = 1e-3;
  c.lr_hard = 1e-3;
  c.lr_step_epochs = 30;
  c.epochs = 8;
  c.folds = 4;
  c.stop_rule = "none";
  c.aux_step_ce = 0.5;
  return c;
}

inline PipelineConfig preset_by_name(const std::string& name) {
  if (name == "her2") return preset_her2();
  if (name == "mmr") return preset_mmr();
  if (name == "synth4") return preset_synth4();
  throw config_error("unknown preset: " + name);
}

// ---- kv round trip ---------------------------------------------------------

inline const std::set<std::string>& pipeline_config_keys() {
  static const std::set<std::string> keys = {
      "preset",          "classes",        "downsample_factor",
      "soft_input",      "soft_conv_layers", "soft_base_channels",
      "soft_pool",       "feature_depth",  "feature_width",
      "n_tiles",         "tile_size_base", "tile_size_model",
      "noise_low",       "noise_high",     "mask_kind",
      "d_t",             "glimpse_size",   "id_size",
      "T",               "v_dim",          "lstm1",
      "lstm2",           "cnn_base_channels", "cnn_layers",
      "ctx_base_channels", "ctx_layers",   "policy_sigma",
      "beta",            "delta",          "alpha",
      "literal_entropy", "mode",           "aggregation",
      "tiles_per_batch", "slides_per_batch", "lr_soft",
      "lr_hard",         "lr_step_epochs", "lr_gamma",
      "epochs",          "soft_epochs",    "folds",
      "fold",            "seed",           "stop_min_delta",
      "stop_patience",   "stop_rule",      "aux_step_ce",
      "val_every",       "threads"};
  return keys;
}

inline void apply_kv(PipelineConfig& c, const KvConfig& kv) {
  kv.reject_unknown_keys(pipeline_config_keys());
  if (kv.has("preset")) c = preset_by_name(kv.get_string("preset"));
  c.classes = static_cast<int>(kv.get_int("classes", c.classes));
  c.downsample_factor = static_cast<int>(kv.get_int("downsample_factor", c.downsample_factor));
  if (kv.has("soft_input")) c.soft.input_h = c.soft.input_w = static_cast<int>(kv.get_int("soft_input"));
  c.soft.conv_layers = static_cast<int>(kv.get_int("soft_conv_layers", c.soft.conv_layers));
  c.soft.base_channels = static_cast<int>(kv.get_int("soft_base_channels", c.soft.base_channels));
  c.soft.pool_size = static_cast<int>(kv.get_int("soft_pool", c.soft.pool_size));
  c.soft.feature_depth = static_cast<int>(kv.get_int("feature_depth", c.soft.feature_depth));
  c.soft.feature_width = static_cast<int>(kv.get_int("feature_width", c.soft.feature_width));
  c.soft.num_classes = c.classes;
  c.sampler.n_tiles = static_cast<int>(kv.get_int("n_tiles", c.sampler.n_tiles));
  c.sampler.tile_size_base = static_cast<int>(kv.get_int("tile_size_base", c.sampler.tile_size_base));
  c.sampler.tile_size_model = static_cast<int>(kv.get_int("tile_size_model", c.sampler.tile_size_model));
  c.sampler.noise.low = kv.get_real("noise_low", c.sampler.noise.low);
  c.sampler.noise.high = kv.get_real("noise_high", c.sampler.noise.high);
  if (kv.has("mask_kind")) {
    std::string mk = kv.get_string("mask_kind");
    if (mk == "positive") c.sampler.mask_kind = SamplerConfig::Positive;
    else if (mk == "tumor") c.sampler.mask_kind = SamplerConfig::Tumor;
    else throw config_error("mask_kind must be positive|tumor");
  }
  c.sampler.d_t = kv.get_real("d_t", c.sampler.d_t);
  c.sampler.scale_factor = c.downsample_factor;
  c.sampler.pool = c.soft.pool_size;
  c.hard.glimpse_size = static_cast<int>(kv.get_int("glimpse_size", c.hard.glimpse_size));
  c.hard.id_size = static_cast<int>(kv.get_int("id_size", c.hard.id_size));
  c.hard.T = static_cast<int>(kv.get_int("T", c.hard.T));
  c.hard.v_dim = static_cast<int>(kv.get_int("v_dim", c.hard.v_dim));
  c.hard.lstm1 = static_cast<int>(kv.get_int("lstm1", c.hard.lstm1));
  c.hard.lstm2 = static_cast<int>(kv.get_int("lstm2", c.hard.lstm2));
  c.hard.cnn_base_channels = static_cast<int>(kv.get_int("cnn_base_channels", c.hard.cnn_base_channels));
  c.hard.cnn_layers = static_cast<int>(kv.get_int("cnn_layers", c.hard.cnn_layers));
  c.hard.ctx_base_channels = static_cast<int>(kv.get_int("ctx_base_channels", c.hard.ctx_base_channels));
  c.hard.ctx_layers = static_cast<int>(kv.get_int("ctx_layers", c.hard.ctx_layers));
  c.hard.policy_sigma = kv.get_real("policy_sigma", c.hard.policy_sigma);
  c.hard.num_classes = c.classes;
  c.loss.beta = kv.get_real("beta", c.loss.beta);
  c.loss.delta = kv.get_real("delta", c.loss.delta);
  c.loss.alpha = kv.get_real("alpha", c.loss.alpha);
  c.loss.T = c.hard.T;
  c.loss.literal_entropy_sign = kv.get_bool("literal_entropy", c.loss.literal_entropy_sign);
  c.mode = kv.get_string("mode", c.mode);
  if (c.mode != "joint" && c.mode != "separate") throw config_error("mode must be joint|separate");
  c.aggregation = kv.get_string("aggregation", c.aggregation);
  c.tiles_per_batch = static_cast<int>(kv.get_int("tiles_per_batch", c.tiles_per_batch));
  c.slides_per_batch = static_cast<int>(kv.get_int("slides_per_batch", c.slides_per_batch));
  c.lr_soft = kv.get_real("lr_soft", c.lr_soft);
  c.lr_hard = kv.get_real("lr_hard", c.lr_hard);
  c.lr_step_epochs = static_cast<int>(kv.get_int("lr_step_epochs", c.lr_step_epochs));
  c.lr_gamma = kv.get_real("lr_gamma", c.lr_gamma);
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.soft_epochs = static_cast<int>(kv.get_int("soft_epochs", c.soft_epochs));
  c.folds = static_cast<int>(kv.get_int("folds", c.folds));
  c.fold = static_cast<int>(kv.get_int("fold", c.fold));
  c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.stop_min_delta = kv.get_real("stop_min_delta", c.stop_min_delta);
  c.stop_patience = static_cast<int>(kv.get_int("stop_patience", c.stop_patience));
  c.stop_rule = kv.get_string("stop_rule", c.stop_rule);
  c.aux_step_ce = kv.get_real("aux_step_ce", c.aux_step_ce);
  c.val_every = static_cast<int>(kv.get_int("val_every", c.val_every));
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  if (c.tiles_per_batch % c.slides_per_batch != 0)
    throw config_error("tiles_per_batch must be divisible by slides_per_batch");
}

inline KvConfig to_kv(const PipelineConfig& c) {
  KvConfig kv;
  kv.set("preset", c.preset);
  kv.set("classes", c.classes);
  kv.set("downsample_factor", c.downsample_factor);
  kv.set("soft_input", c.soft.input_h);
  kv.set("soft_conv_layers", c.soft.conv_layers);
  kv.set("soft_base_channels", c.soft.base_channels);
  kv.set("soft_pool", c.soft.pool_size);
  kv.set("feature_depth", c.soft.feature_depth);
  kv.set("feature_width", c.soft.feature_width);
  kv.set("n_tiles", c.sampler.n_tiles);
  kv.set("tile_size_base", c.sampler.tile_size_base);
  kv.set("tile_size_model", c.sampler.tile_size_model);
  kv.set("noise_low", c.sampler.noise.low);
  kv.set("noise_high", c.sampler.noise.high);
  kv.set("mask_kind", std::string(c.sampler.mask_kind == SamplerConfig::Positive ? "positive" : "tumor"));
  kv.set("d_t", c.sampler.d_t);
  kv.set("glimpse_size", c.hard.glimpse_size);
  kv.set("id_size", c.hard.id_size);
  kv.set("T", c.hard.T);
  kv.set("v_dim", c.hard.v_dim);
  kv.set("lstm1", c.hard.lstm1);
  kv.set("lstm2", c.hard.lstm2);
  kv.set("cnn_base_channels", c.hard.cnn_base_channels);
  kv.set("cnn_layers", c.hard.cnn_layers);
  kv.set("ctx_base_channels", c.hard.ctx_base_channels);
  kv.set("ctx_layers", c.hard.ctx_layers);
  kv.set("policy_sigma", c.hard.policy_sigma);
  kv.set("beta", c.loss.beta);
  kv.set("delta", c.loss.delta);
  kv.set("alpha", c.loss.alpha);
  kv.set("literal_entropy", std::string(c.loss.literal_entropy_sign ? "true" : "false"));
  kv.set("mode", c.mode);
  kv.set("aggregation", c.aggregation);
  kv.set("tiles_per_batch", c.tiles_per_batch);
  kv.set("slides_per_batch", c.slides_per_batch);
  kv.set("lr_soft", c.lr_soft);
  kv.set("lr_hard", c.lr_hard);
  kv.set("lr_step_epochs", c.lr_step_epochs);
  kv.set("lr_gamma", c.lr_gamma);
  kv.set("epochs", c.epochs);
  kv.set("soft_epochs", c.soft_epochs);
  kv.set("folds", c.folds);
  kv.set("fold", c.fold);
  kv.set("seed", static_cast<long long>(c.seed));
  kv.set("stop_min_delta", c.stop_min_delta);
  kv.set("stop_patience", c.stop_patience);
  kv.set("stop_rule", c.stop_rule);
  kv.set("aux_step_ce", c.aux_step_ce);
  kv.set("val_every", c.val_every);
  kv.set("threads", c.threads);
  return kv;
}

}  // namespace dualattn
