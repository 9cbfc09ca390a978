#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dualattn/glimpse_env.hpp"
#include "dualattn/nn.hpp"
#include "dualattn/soft_attention.hpp"

namespace dualattn {

struct HardAttentionConfig {
  int glimpse_size = 128;
  int id_size = 128;
  int T = 6;
  int v_dim = 256;           // combined glimpse+location representation
  int lstm1 = 256, lstm2 = 128;
  int cnn_base_channels = 8;  // glimpse trunk; channels double per layer
  int cnn_layers = 4;
  int ctx_base_channels = 8;  // context trunk over i_d
  int ctx_layers = 4;
  int num_classes = 4;
  double policy_sigma = 0.15;
};

// Strided conv trunk: stride-2 3x3 convs with doubling channels, global
// average pool to a vector.
template <typename S>
struct SmallCnn {
  std::vector<Conv2dLayer<S>> convs;
  int out_dim = 0;

  SmallCnn() = default;
  SmallCnn(int in_c, int base, int layers, Rng& rng) {
    int c = base;
    for (int i = 0; i < layers; ++i) {
      convs.emplace_back(in_c, c, 3, 2, 1, rng);
      in_c = c;
      if (i + 1 < layers) c *= 2;
    }
    out_dim = in_c;
  }

  Var apply(Graph<S>& g, Binding<S>& bind, Var img) {
    Var x = img;
    for (auto& conv : convs) x = g.relu(conv.apply(g, bind, x));
    return g.avgpool_all(x);
  }

  void collect(ParamList<S>& p, const std::string& prefix) {
    for (size_t i = 0; i < convs.size(); ++i)
      convs[i].collect(p, prefix + ".conv" + std::to_string(i));
  }
};

// One location proposal from the policy head.
struct PolicyOutput {
  std::array<double, 2> loc_mean{0, 0};
  std::array<double, 2> loc_sample{0, 0};  // clamped to [-1,1]^2 for the env
  double loc_log_prob = 0.0;
  std::vector<double> class_probs;
  double baseline = 0.0;
};

// Tape handles for a training episode; valid while the owning Graph lives.
template <typename SGraph = float>
struct EpisodeRun {
  GlimpseEpisode episode;
  std::vector<Var> step_logits;        // T
  std::vector<Var> log_probs;          // T-1 location proposals
  std::vector<Var> baselines;          // T-1
  std::vector<Var> samples_pre_clamp;  // T-1, reparameterized (for L_bb)
  Var final_logits;
  std::vector<double> final_probs;
  std::vector<GlimpsePair> pairs;
};

// The agent: glimpse network, location embedding, two-layer recurrent core,
// context network over i_d, Gaussian location policy, shared per-step
// classifier and a value baseline head.
template <typename S>
class HardAttentionAgent {
 public:
  HardAttentionAgent() = default;
  HardAttentionAgent(const HardAttentionConfig& cfg, Rng& rng) : cfg_(cfg) {
    glimpse_cnn_ = SmallCnn<S>(3, cfg.cnn_base_channels, cfg.cnn_layers, rng);
    glimpse_proj_ = LinearLayer<S>(2 * glimpse_cnn_.out_dim, cfg.v_dim, rng);
    loc_embed_ = LinearLayer<S>(2, cfg.v_dim, rng);
    ctx_cnn_ = SmallCnn<S>(3, cfg.ctx_base_channels, cfg.ctx_layers, rng);
    ctx_proj_ = LinearLayer<S>(ctx_cnn_.out_dim, cfg.lstm2, rng);
    core1_ = LstmCell<S>(cfg.v_dim, cfg.lstm1, rng);
    core2_ = LstmCell<S>(cfg.lstm1, cfg.lstm2, rng);
    loc_head_ = LinearLayer<S>(cfg.lstm2, 2, rng);
    cls_head_ = LinearLayer<S>(cfg.lstm2, cfg.num_classes, rng);
    baseline_head_ = LinearLayer<S>(cfg.lstm2, 1, rng);
  }

  const HardAttentionConfig& config() const { return cfg_; }

  // v_t = v_gt (*) v_lt: shared trunk over both glimpses, concatenated and
  // projected; the location passes through a linear embedding.
  Var glimpse_features(Graph<S>& g, Binding<S>& bind, const GlimpsePair& pair,
                       const std::array<double, 2>& loc) {
    Var f40 = glimpse_cnn_.apply(g, bind, g.constant(raster_to_chw<S>(pair.g40)));
    Var f20 = glimpse_cnn_.apply(g, bind, g.constant(raster_to_chw<S>(pair.g20)));
    Var vg = glimpse_proj_.apply(g, bind, g.concat({f40, f20}));
    Tensor<S> l({2});
    l.data[0] = static_cast<S>(loc[0]);
    l.data[1] = static_cast<S>(loc[1]);
    Var vl = loc_embed_.apply(g, bind, g.constant(l));
    return g.mul(vg, vl);
  }

  struct CoreState {
    typename LstmCell<S>::State s1, s2;
  };

  CoreState initial_state(Graph<S>& g) const {
    return {core1_.zero_state(g), core2_.zero_state(g)};
  }

  // h_{t+1} = f_r(h_t, v_t): stacked LSTM, hidden sizes lstm1 then lstm2.
  CoreState core_step(Graph<S>& g, Binding<S>& bind, Var v, CoreState s) {
    CoreState n;
    n.s1 = core1_.apply(g, bind, v, s.s1);
    n.s2 = core2_.apply(g, bind, n.s1.h, s.s2);
    return n;
  }

  Var context_features(Graph<S>& g, Binding<S>& bind, const Raster& i_d) {
    return ctx_proj_.apply(g, bind, ctx_cnn_.apply(g, bind, g.constant(raster_to_chw<S>(i_d))));
  }

  Var classify(Graph<S>& g, Binding<S>& bind, Var h) { return cls_head_.apply(g, bind, h); }

  Var baseline(Graph<S>& g, Binding<S>& bind, Var h_detached) {
    return baseline_head_.apply(g, bind, h_detached);
  }

  struct Proposal {
    Var mean;             // tanh-squashed, shape [2]
    Var sample_pre_clamp; // mean + sigma * eps, reparameterized
    Var log_prob;         // Gaussian log density at the (detached) sample
    Var baseline;
    PolicyOutput out;
  };

  // mean = tanh(W (h (*) ctx)); sample ~ N(mean, sigma^2 I), clamped for the
  // environment. The log-prob is evaluated at the pre-clamp sample, which is
  // treated as data on the score-function path.
  Proposal propose_location(Graph<S>& g, Binding<S>& bind, Var h, Var ctx, Rng* rng) {
    double sigma = cfg_.policy_sigma;
    Proposal p;
    p.mean = g.tanh_op(loc_head_.apply(g, bind, g.mul(h, ctx)));

    Tensor<S> eps({2});
    if (rng) {
      eps.data[0] = static_cast<S>(rng->normal());
      eps.data[1] = static_cast<S>(rng->normal());
    } else {
      eps.data.setZero();
    }
    Var noise = g.constant(eps);
    p.sample_pre_clamp = g.add(p.mean, g.scale(noise, static_cast<S>(sigma)));

    Tensor<S> sample_val = g.value(p.sample_pre_clamp);
    Var diff = g.sub(g.constant(sample_val), p.mean);
    double log_norm = -2.0 * std::log(sigma * std::sqrt(2.0 * 3.14159265358979323846));
    p.log_prob = g.add_const(g.scale(g.sum(g.mul(diff, diff)), static_cast<S>(-0.5 / (sigma * sigma))),
                             Tensor<S>::scalar(static_cast<S>(log_norm)));

    Var hd = g.constant(g.value(h));
    p.baseline = baseline(g, bind, hd);

    p.out.loc_mean = {static_cast<double>(g.value(p.mean).data[0]),
                      static_cast<double>(g.value(p.mean).data[1])};
    p.out.loc_sample = {clamp(static_cast<double>(sample_val.data[0]), -1.0, 1.0),
                        clamp(static_cast<double>(sample_val.data[1]), -1.0, 1.0)};
    p.out.loc_log_prob = static_cast<double>(g.scalar_value(p.log_prob));
    p.out.baseline = static_cast<double>(g.scalar_value(p.baseline));
    return p;
  }

  // Full rollout over a tile. `rng` drives the first location and the policy
  // noise; pass train=false for greedy (mean) locations. The graph must
  // outlive the returned handles when training.
  EpisodeRun<S> run_episode(Graph<S>& g, Binding<S>& bind, GlimpseState state, uint64_t seed,
                            bool train) {
    Rng rng(seed);
    EpisodeRun<S> run;
    int T = state.T;

    std::array<double, 2> loc0{rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)};
    GlimpsePair pair = begin_episode(state, loc0);
    run.pairs.push_back(pair);
    CoreState cs = initial_state(g);

    for (int t = 0; t < T; ++t) {
      Var v = glimpse_features(g, bind, pair, state.loc);
      cs = core_step(g, bind, v, cs);
      Var logits = classify(g, bind, cs.s2.h);
      run.step_logits.push_back(logits);
      int pred = argmax(g, logits);

      if (t + 1 < T) {
        apply_ior(state, state.loc);
        Var ctx = context_features(g, bind, state.tile_down);
        Proposal prop = propose_location(g, bind, cs.s2.h, ctx, train ? &rng : nullptr);
        run.log_probs.push_back(prop.log_prob);
        run.baselines.push_back(prop.baseline);
        run.samples_pre_clamp.push_back(prop.sample_pre_clamp);
        run.episode.log_probs.push_back(prop.out.loc_log_prob);
        run.episode.baselines.push_back(prop.out.baseline);

        // move without re-applying IOR (already done above)
        state.predictions.push_back(pred);
        state.loc = prop.out.loc_sample;
        state.locations.push_back(state.loc);
        ++state.step;
        state.pixels_read += static_cast<long>(state.glimpse_size) * state.glimpse_size * 5;
        pair = extract_glimpse_pair(state.tile, state.loc, state.glimpse_size);
        run.pairs.push_back(pair);
      } else {
        finish_episode(state, pred);
      }
    }

    run.final_logits = run.step_logits.back();
    run.final_probs = softmax_values(g, run.final_logits);
    run.episode.locations = state.locations;
    run.episode.per_step_scores = state.predictions;
    run.episode.final_score = state.predictions.back();
    run.episode.pixels_read = state.pixels_read;
    return run;
  }

  void collect_params(ParamList<S>& p, const std::string& prefix = "hard") {
    glimpse_cnn_.collect(p, prefix + ".glimpse_cnn");
    glimpse_proj_.collect(p, prefix + ".glimpse_proj");
    loc_embed_.collect(p, prefix + ".loc_embed");
    ctx_cnn_.collect(p, prefix + ".ctx_cnn");
    ctx_proj_.collect(p, prefix + ".ctx_proj");
    core1_.collect(p, prefix + ".core1");
    core2_.collect(p, prefix + ".core2");
    loc_head_.collect(p, prefix + ".loc_head");
    cls_head_.collect(p, prefix + ".cls_head");
    baseline_head_.collect(p, prefix + ".baseline_head");
  }

  static int argmax(Graph<S>& g, Var logits) {
    const auto& d = g.value(logits).data;
    int best = 0;
    for (int i = 1; i < d.size(); ++i)
      if (d[i] > d[best]) best = i;
    return best;
  }

  static std::vector<double> softmax_values(Graph<S>& g, Var logits) {
    const auto& d = g.value(logits).data;
    double mx = d.maxCoeff();
    std::vector<double> p(d.size());
    double sum = 0;
    for (int i = 0; i < d.size(); ++i) {
      p[i] = std::exp(static_cast<double>(d[i]) - mx);
      sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
  }

 private:
  HardAttentionConfig cfg_;
  SmallCnn<S> glimpse_cnn_;
  LinearLayer<S> glimpse_proj_;
  LinearLayer<S> loc_embed_;
  SmallCnn<S> ctx_cnn_;
  LinearLayer<S> ctx_proj_;
  LstmCell<S> core1_, core2_;
  LinearLayer<S> loc_head_;
  LinearLayer<S> cls_head_;
  LinearLayer<S> baseline_head_;
};

}  // namespace dualattn
