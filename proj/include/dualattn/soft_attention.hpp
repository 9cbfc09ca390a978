#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dualattn/checkpoint.hpp"
#include "dualattn/nn.hpp"
#include "dualattn/png_io.hpp"
#include "dualattn/raster.hpp"

namespace dualattn {

// Probability map over the pooled grid of the downsampled slide view.
// probs sum to 1; source_shape is the grid the probabilities live on.
struct AttentionMap {
  int h = 0, w = 0;
  std::vector<double> probs;

  double at(int y, int x) const { return probs[static_cast<size_t>(y) * w + x]; }
  double sum() const {
    double s = 0;
    for (double p : probs) s += p;
    return s;
  }
};

// Min-max normalization with an epsilon shift so the result lies in (0, 1]
// even at the minimum; a constant map normalizes to all ones.
inline std::vector<double> minmax_normalize(const AttentionMap& a, double eps = 1e-8) {
  require(!a.probs.empty(), "cannot normalize an empty attention map");
  double lo = a.probs[0], hi = a.probs[0];
  for (double p : a.probs) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  std::vector<double> out(a.probs.size());
  double denom = hi - lo + eps;
  for (size_t i = 0; i < out.size(); ++i) out[i] = (a.probs[i] - lo + eps) / denom;
  return out;
}

// Attention-weighted expectation of tile feature vectors, w_i = a_i / sum(a).
// This is the differentiable path through which sampling trains the soft
// attention parameters; the tape version below carries the gradients.
inline std::vector<double> tile_feature_expectation(
    const std::vector<std::vector<double>>& features, const std::vector<double>& attention) {
  require(!features.empty(), "tile_feature_expectation needs at least one tile");
  require(features.size() == attention.size(), "features/attention length mismatch");
  double total = 0;
  for (double a : attention) {
    require(a > 0, "attention values must be positive");
    total += a;
  }
  std::vector<double> out(features[0].size(), 0.0);
  for (size_t i = 0; i < features.size(); ++i) {
    require(features[i].size() == out.size(), "feature length mismatch");
    double w = attention[i] / total;
    for (size_t d = 0; d < out.size(); ++d) out[d] += w * features[i][d];
  }
  return out;
}

template <typename S>
Var tile_feature_expectation_op(Graph<S>& g, const std::vector<Var>& features, Var attention) {
  require(!features.empty(), "tile_feature_expectation needs at least one tile");
  Var total = g.sum(attention);
  Var weights = g.mul_scalar(attention, g.inv_scalar(total));
  Var fmat = g.stack_rows(features);  // [N, D]
  int n = static_cast<int>(features.size());
  int d = static_cast<int>(g.value(features[0]).numel());
  Var wrow = g.reshape(weights, {1, n});
  return g.reshape(g.matmul(wrow, fmat), {d});
}

// CHW tensor in [-0.5, 0.5] from an RGB raster; optional binary mask zeroes
// non-tissue pixels before the shift.
template <typename S>
Tensor<S> raster_to_chw(const Raster& img, const BinaryMask* mask = nullptr) {
  Tensor<S> t({img.c, img.h, img.w});
  long plane = static_cast<long>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      bool keep = !mask || mask->at(y, x);
      for (int ch = 0; ch < img.c; ++ch) {
        double v = keep ? img.at(y, x, ch) / 255.0 : 0.0;
        t.data[ch * plane + static_cast<long>(y) * img.w + x] = static_cast<S>(v - 0.5);
      }
    }
  return t;
}

struct SoftAttentionConfig {
  int input_h = 512, input_w = 512;
  int conv_layers = 4;    // feature extractor depth; channels double per layer
  int base_channels = 8;
  int pool_size = 8;      // attention grid = input / pool_size
  int feature_depth = 8;  // residual tile feature net: stem + 2-conv blocks
  int feature_width = 32;
  int tile_input = 128;   // tiles are resized to this before the feature net
  int num_classes = 4;

  int grid_h() const { return input_h / pool_size; }
  int grid_w() const { return input_w / pool_size; }
};

// Residual feature extractor for sampled tiles: stem conv (stride 2), then
// (depth-2)/2 residual blocks with 2x max pooling between them, global average
// pool to a `width`-dim vector.
template <typename S>
struct TileFeatureNet {
  SoftAttentionConfig cfg;
  Conv2dLayer<S> stem;
  std::vector<ResidualBlock<S>> blocks;

  TileFeatureNet() = default;
  TileFeatureNet(const SoftAttentionConfig& c, Rng& rng) : cfg(c) {
    stem = Conv2dLayer<S>(3, c.feature_width, 3, 2, 1, rng);
    int nblocks = std::max(0, (c.feature_depth - 2) / 2);
    for (int i = 0; i < nblocks; ++i) blocks.emplace_back(c.feature_width, rng);
  }

  Var apply(Graph<S>& g, Binding<S>& bind, Var img) {
    Var x = g.relu(stem.apply(g, bind, img));
    for (size_t i = 0; i < blocks.size(); ++i) {
      x = blocks[i].apply(g, bind, x);
      const auto& shp = g.value(x).shape;
      if (shp[1] >= 16 && shp[2] >= 16) x = g.maxpool2d(x, 2, 2);
    }
    return g.avgpool_all(x);
  }

  void collect(ParamList<S>& p, const std::string& prefix) {
    stem.collect(p, prefix + ".stem");
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(p, prefix + ".block" + std::to_string(i));
  }
};

// The soft attention model: convolutional feature extractor, a one-channel
// attention head, max pooling to the sampling grid and a softmax over all
// grid positions (so the map sums to 1 by construction). The tile feature
// net plus a linear classifier provide the training signal.
template <typename S>
class SoftAttentionNet {
 public:
  SoftAttentionNet() = default;
  SoftAttentionNet(const SoftAttentionConfig& cfg, Rng& rng) : cfg_(cfg) {
    int in_c = 3;
    int ch = cfg.base_channels;
    for (int i = 0; i < cfg.conv_layers; ++i) {
      convs_.emplace_back(in_c, ch, 3, 1, 1, rng);
      in_c = ch;
      ch *= 2;
    }
    head_ = Conv2dLayer<S>(in_c, 1, 3, 1, 1, rng);
    features_ = TileFeatureNet<S>(cfg, rng);
    classifier_ = LinearLayer<S>(cfg.feature_width, cfg.num_classes, rng);
  }

  const SoftAttentionConfig& config() const { return cfg_; }

  // Flattened attention logits over the pooled grid.
  Var attention_logits(Graph<S>& g, Binding<S>& bind, Var img) {
    const auto& shp = g.value(img).shape;
    require(shp.size() == 3 && shp[1] == cfg_.input_h && shp[2] == cfg_.input_w,
            "input shape does not match the configured soft attention input");
    Var x = img;
    for (auto& c : convs_) x = g.relu(c.apply(g, bind, x));
    x = head_.apply(g, bind, x);
    x = g.maxpool2d(x, cfg_.pool_size, cfg_.pool_size);
    return g.reshape(x, {cfg_.grid_h() * cfg_.grid_w()});
  }

  Var attention_probs(Graph<S>& g, Binding<S>& bind, Var img) {
    return g.softmax(attention_logits(g, bind, img));
  }

  // Inference-time attention map for a prepared input tensor.
  AttentionMap compute_attention(const Tensor<S>& input) {
    Graph<S> g;
    Binding<S> bind(g, false);
    Var img = g.constant(input);
    Var probs = attention_probs(g, bind, img);
    AttentionMap a;
    a.h = cfg_.grid_h();
    a.w = cfg_.grid_w();
    a.probs.resize(g.value(probs).numel());
    for (size_t i = 0; i < a.probs.size(); ++i)
      a.probs[i] = static_cast<double>(g.value(probs).data[i]);
    return a;
  }

  AttentionMap compute_attention(const Raster& I0, const BinaryMask* mask = nullptr) {
    return compute_attention(raster_to_chw<S>(I0, mask));
  }

  Var tile_features(Graph<S>& g, Binding<S>& bind, Var tile) {
    return features_.apply(g, bind, tile);
  }

  Var classify_features(Graph<S>& g, Binding<S>& bind, Var feat) {
    return classifier_.apply(g, bind, feat);
  }

  void collect_params(ParamList<S>& p, const std::string& prefix = "soft") {
    for (size_t i = 0; i < convs_.size(); ++i)
      convs_[i].collect(p, prefix + ".conv" + std::to_string(i));
    head_.collect(p, prefix + ".head");
    features_.collect(p, prefix + ".features");
    classifier_.collect(p, prefix + ".classifier");
  }

 private:
  SoftAttentionConfig cfg_;
  std::vector<Conv2dLayer<S>> convs_;
  Conv2dLayer<S> head_;
  TileFeatureNet<S> features_;
  LinearLayer<S> classifier_;
};

// ---- exports ---------------------------------------------------------------

inline void save_attention_gray16(const std::string& path, const AttentionMap& a) {
  double hi = 0;
  for (double p : a.probs) hi = std::max(hi, p);
  std::vector<uint16_t> px(a.probs.size());
  for (size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<uint16_t>(std::lround(hi > 0 ? a.probs[i] / hi * 65535.0 : 0.0));
  write_png_gray16(path, px, a.h, a.w);
}

// Heat overlay of the attention map on the downsampled slide view.
inline Raster attention_overlay(const Raster& I0, const AttentionMap& a) {
  Raster out = I0;
  double hi = 0;
  for (double p : a.probs) hi = std::max(hi, p);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      int gy = std::min(a.h - 1, y * a.h / out.h);
      int gx = std::min(a.w - 1, x * a.w / out.w);
      uint8_t r, g, b;
      heat_color(hi > 0 ? a.at(gy, gx) / hi : 0.0, r, g, b);
      out.at(y, x, 0) = static_cast<uint8_t>((out.at(y, x, 0) + r) / 2);
      out.at(y, x, 1) = static_cast<uint8_t>((out.at(y, x, 1) + g) / 2);
      out.at(y, x, 2) = static_cast<uint8_t>((out.at(y, x, 2) + b) / 2);
    }
  return out;
}

}  // namespace dualattn
