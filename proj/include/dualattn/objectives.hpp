#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "dualattn/autodiff.hpp"
#include "dualattn/glimpse_env.hpp"
#include "dualattn/soft_attention.hpp"

namespace dualattn {

struct LossConfig {
  double beta = 1.0;          // entropy regularizer weight
  double delta = 1.0;         // weight of L_bb + L_s
  double alpha = 0.5;         // joint decay base, in (0,1]
  double step_weight = 1.0;   // per-step reward weighing factor
  int T = 6;
  bool literal_entropy_sign = false;  // flips to the printed form (minimizing
                                      // it then reduces entropy)
};

// Entropy regularizer of an attention map. Default sign is negative entropy
// (beta * sum p log p), so minimizing the total loss pushes the map toward
// uniform, the exploration behavior the regularizer exists for. The literal
// switch gives the opposite sign. p log p -> 0 at p = 0.
inline double entropy_loss(const AttentionMap& a, double beta, bool literal_sign = false) {
  require(std::abs(a.sum() - 1.0) < 1e-4, "entropy_loss expects a normalized map");
  double s = 0.0;
  for (double p : a.probs)
    if (p > 0.0) s += p * std::log(p);
  return literal_sign ? -beta * s : beta * s;
}

// Tape version from log-softmax probabilities (numerically safe at p -> 0).
template <typename S>
Var entropy_loss_op(Graph<S>& g, Var log_probs, double beta, bool literal_sign = false) {
  Var term = g.sum(g.mul(g.exp_op(log_probs), log_probs));
  return g.scale(term, static_cast<S>(literal_sign ? -beta : beta));
}

// Eq-style indicator reward: 1 if the prediction matches the ground truth.
inline double step_reward(int predicted, int ground_truth) {
  return predicted == ground_truth ? 1.0 : 0.0;
}

// Fills per-step rewards and the weighted return R_T = sum_t w * r_t.
inline void fill_rewards(GlimpseEpisode& e, int ground_truth, double step_weight = 1.0) {
  e.rewards.resize(e.per_step_scores.size());
  e.episode_return = 0.0;
  for (size_t t = 0; t < e.per_step_scores.size(); ++t) {
    e.rewards[t] = step_reward(e.per_step_scores[t], ground_truth);
    e.episode_return += step_weight * e.rewards[t];
  }
}

// Reward-to-go from step t (inclusive), weighted.
inline std::vector<double> rewards_to_go(const std::vector<double>& rewards, double w = 1.0) {
  std::vector<double> rtg(rewards.size(), 0.0);
  double acc = 0.0;
  for (int t = static_cast<int>(rewards.size()) - 1; t >= 0; --t) {
    acc += w * rewards[t];
    rtg[static_cast<size_t>(t)] = acc;
  }
  return rtg;
}

// Mean pairwise intersection of the glimpse bounding boxes, normalized to
// [0,1] by the box area. Locations and box side are in the same units.
inline double bbox_overlap_loss(const std::vector<std::array<double, 2>>& locations,
                                double box_side) {
  size_t T = locations.size();
  require(T >= 2, "bbox_overlap_loss needs at least two locations");
  double total = 0.0;
  for (size_t i = 0; i < T; ++i)
    for (size_t j = i + 1; j < T; ++j) {
      double ox = std::max(0.0, box_side - std::abs(locations[i][0] - locations[j][0]));
      double oy = std::max(0.0, box_side - std::abs(locations[i][1] - locations[j][1]));
      total += (ox * oy) / (box_side * box_side);
    }
  double pairs = static_cast<double>(T) * (T - 1) / 2.0;
  return total / pairs;
}

// Tape version over the pre-clamp location samples; differentiable a.e., so
// the overlap penalty reaches the policy mean through the reparameterized
// samples.
template <typename S>
Var bbox_overlap_loss_op(Graph<S>& g, const std::vector<Var>& locations, double box_side) {
  size_t T = locations.size();
  require(T >= 2, "bbox_overlap_loss needs at least two locations");
  Tensor<S> side({2});
  side.data[0] = side.data[1] = static_cast<S>(box_side);
  Var total = g.constant_scalar(S(0));
  for (size_t i = 0; i < T; ++i)
    for (size_t j = i + 1; j < T; ++j) {
      Var d = g.sub(locations[i], locations[j]);
      Var ad = g.add(g.relu(d), g.relu(g.scale(d, S(-1))));
      Var ov = g.relu(g.sub(g.constant(side), ad));
      Var area = g.mul(g.pick(ov, 0), g.pick(ov, 1));
      total = g.add(total, area);
    }
  double pairs = static_cast<double>(T) * (T - 1) / 2.0;
  return g.scale(total, static_cast<S>(1.0 / (box_side * box_side * pairs)));
}

// Absolute score distance |Y - GT| on numeric class labels.
inline double score_distance(int predicted, int ground_truth) {
  return std::abs(predicted - ground_truth);
}

// Differentiable surrogate: expected distance under the predicted
// distribution, sum_c p_c |c - GT|.
template <typename S>
Var score_distance_op(Graph<S>& g, Var logits, int ground_truth) {
  int classes = static_cast<int>(g.value(logits).numel());
  Tensor<S> dist({classes});
  for (int c = 0; c < classes; ++c)
    dist.data[c] = static_cast<S>(std::abs(c - ground_truth));
  return g.sum(g.mul_const(g.softmax(logits), std::move(dist)));
}

template <typename S>
Var cross_entropy_op(Graph<S>& g, Var logits, int target) {
  return g.scale(g.pick(g.log_softmax(logits), target), S(-1));
}

// The three parts of the policy-side loss. The surrogate's gradient is the
// REINFORCE estimator: -sum_t log pi_t * (R_t - B_t) with B_t detached;
// classifier cross-entropy on Y_T and the baseline regression are reported
// separately.
template <typename S>
struct ReinforceLossParts {
  Var surrogate;
  Var cross_entropy;
  Var baseline_mse;
  std::vector<double> advantages;
};

template <typename S>
ReinforceLossParts<S> reinforce_loss(Graph<S>& g, const std::vector<Var>& log_probs,
                                     const std::vector<Var>& baselines,
                                     const std::vector<double>& baseline_values,
                                     const std::vector<double>& rewards, Var final_logits,
                                     int ground_truth, double step_weight = 1.0) {
  require(log_probs.size() == baselines.size() &&
              baselines.size() == baseline_values.size(),
          "reinforce_loss handle mismatch");
  std::vector<double> rtg = rewards_to_go(rewards, step_weight);
  ReinforceLossParts<S> parts;
  Var surrogate = g.constant_scalar(S(0));
  Var bmse = g.constant_scalar(S(0));
  for (size_t i = 0; i < log_probs.size(); ++i) {
    // proposal i chose the location glimpsed at step i+1
    double target = i + 1 < rtg.size() ? rtg[i + 1] : 0.0;
    double adv = target - baseline_values[i];
    parts.advantages.push_back(adv);
    surrogate = g.add(surrogate, g.scale(log_probs[i], static_cast<S>(-adv)));
    Var diff = g.add_const(baselines[i], Tensor<S>::scalar(static_cast<S>(-target)));
    bmse = g.add(bmse, g.mul(diff, diff));
  }
  if (!log_probs.empty())
    bmse = g.scale(bmse, static_cast<S>(1.0 / static_cast<double>(log_probs.size())));
  parts.surrogate = surrogate;
  parts.baseline_mse = bmse;
  parts.cross_entropy = cross_entropy_op(g, final_logits, ground_truth);
  return parts;
}

// L_HA = L_theta + delta * (L_bb + L_s).
inline double hard_attention_loss(double l_theta, double l_bb, double l_s, double delta) {
  return l_theta + delta * (l_bb + l_s);
}

template <typename S>
Var hard_attention_loss_op(Graph<S>& g, Var l_theta, Var l_bb, Var l_s, double delta) {
  return g.add(l_theta, g.scale(g.add(l_bb, l_s), static_cast<S>(delta)));
}

// L_J = L_HA + alpha^epoch * L_SA.
inline double joint_coefficient(double alpha, int epoch) {
  require(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0,1]");
  require(epoch >= 0, "epoch must be non-negative");
  return std::pow(alpha, epoch);
}

inline double joint_loss(double l_ha, double l_sa, double alpha, int epoch) {
  return l_ha + joint_coefficient(alpha, epoch) * l_sa;
}

template <typename S>
Var joint_loss_op(Graph<S>& g, Var l_ha, Var l_sa, double alpha, int epoch) {
  return g.add(l_ha, g.scale(l_sa, static_cast<S>(joint_coefficient(alpha, epoch))));
}

}  // namespace dualattn
