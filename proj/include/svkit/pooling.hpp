#pragma once

#include <cstddef>
#include <vector>

#include "svkit/feature_store.hpp"
#include "svkit/matrix.hpp"

namespace svkit {

enum class PoolingKind { stats, attentive_stats, channel_context_stats };

struct PoolingConfig {
  PoolingKind kind = PoolingKind::stats;
  std::size_t attention_hidden = 128;
  bool context = false;  // channel_context_stats only
  double eps_std = 1e-6;

  void validate() const {
    if (kind != PoolingKind::stats)
      require(attention_hidden >= 1, "PoolingConfig: attention_hidden must be >= 1");
    require(eps_std >= 0.0, "PoolingConfig: eps_std must be >= 0");
  }
};

// Softmax-normalized layer weights: nonnegative, summing to one.
std::vector<double> normalized_layer_weights(const std::vector<double>& logits);

// o_t = sum_l w_l * h_t^l with w = softmax(logits). Output is T x D.
Matrix layer_weighted_sum(const FeatureStack& stack,
                          const std::vector<double>& logits);
// Gradient of sum_td d_out[t,d] * o[t,d] w.r.t. the logits.
std::vector<double> layer_weighted_sum_backward(const FeatureStack& stack,
                                                const std::vector<double>& logits,
                                                const Matrix& d_out);

// Per-channel mean followed by per-channel population standard deviation:
// [mu_1..mu_D, sigma_1..sigma_D] with sigma = sqrt(max(E[x^2]-mu^2, 0) + eps).
std::vector<double> stats_pool(const Matrix& frames, double eps_std);
Matrix stats_pool_backward(const Matrix& frames, double eps_std,
                           const std::vector<double>& d_out);

// Frame-attentive pooling: e_t = v . tanh(W h_t + b), alpha = softmax_t(e),
// weighted mean/std over time with the weights shared across channels.
struct AttentivePoolParams {
  Matrix score_w;               // hidden x D
  std::vector<double> score_b;  // hidden
  std::vector<double> score_v;  // hidden
};

std::vector<double> attentive_stats_pool(const Matrix& frames,
                                         const AttentivePoolParams& params,
                                         double eps_std);
// Returns d_frames; accumulates parameter gradients into *d_params when given.
Matrix attentive_stats_pool_backward(const Matrix& frames,
                                     const AttentivePoolParams& params,
                                     double eps_std,
                                     const std::vector<double>& d_out,
                                     AttentivePoolParams* d_params);

// Channel-dependent scores z_{t,c} = (W2 tanh(W1 x_t + b1) + b2)_c normalized
// over time per channel. With context enabled the attention input is h_t
// concatenated with the utterance-wide unweighted mean and std (width 3D).
struct ChannelContextPoolParams {
  Matrix w1;                // hidden x D (or hidden x 3D with context)
  std::vector<double> b1;   // hidden
  Matrix w2;                // D x hidden
  std::vector<double> b2;   // D
};

std::vector<double> channel_context_stats_pool(
    const Matrix& frames, const ChannelContextPoolParams& params, bool context,
    double eps_std);
Matrix channel_context_stats_pool_backward(const Matrix& frames,
                                           const ChannelContextPoolParams& params,
                                           bool context, double eps_std,
                                           const std::vector<double>& d_out,
                                           ChannelContextPoolParams* d_params);

}  // namespace svkit
