#include "svkit/pooling.hpp"

#include <algorithm>
#include <cmath>

#include "svkit/error.hpp"

namespace svkit {

namespace {

// Stable softmax. Input and output may alias.
std::vector<double> softmax(const std::vector<double>& scores) {
  double peak = scores[0];
  for (double s : scores) peak = std::max(peak, s);
  std::vector<double> out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

// sigma = sqrt(max(ex2 - mu^2, 0) + eps). Returns sigma and whether the
// clamp was inactive (gradient flows only then).
std::pair<double, bool> guarded_std(double ex2, double mu, double eps) {
  const double var = ex2 - mu * mu;
  if (var > 0.0) return {std::sqrt(var + eps), true};
  return {std::sqrt(eps), false};
}

}  // namespace

std::vector<double> normalized_layer_weights(const std::vector<double>& logits) {
  require(!logits.empty(), "layer weights: empty logits");
  return softmax(logits);
}

Matrix layer_weighted_sum(const FeatureStack& stack,
                          const std::vector<double>& logits) {
  require(logits.size() == stack.layers,
          "layer_weighted_sum: logits length must equal layer count");
  const auto weights = softmax(logits);
  Matrix out(stack.frames, stack.dim);
  for (std::size_t l = 0; l < stack.layers; ++l) {
    const double w = weights[l];
    for (std::size_t t = 0; t < stack.frames; ++t)
      for (std::size_t d = 0; d < stack.dim; ++d)
        out(t, d) += w * static_cast<double>(stack.at(l, t, d));
  }
  return out;
}

std::vector<double> layer_weighted_sum_backward(const FeatureStack& stack,
                                                const std::vector<double>& logits,
                                                const Matrix& d_out) {
  require(logits.size() == stack.layers,
          "layer_weighted_sum_backward: logits length must equal layer count");
  require(d_out.rows == stack.frames && d_out.cols == stack.dim,
          "layer_weighted_sum_backward: d_out shape mismatch");
  const auto weights = softmax(logits);

  // d/dw_l = <d_out, h^l>, then softmax chain rule.
  std::vector<double> d_weights(logits.size(), 0.0);
  for (std::size_t l = 0; l < stack.layers; ++l) {
    double acc = 0.0;
    for (std::size_t t = 0; t < stack.frames; ++t)
      for (std::size_t d = 0; d < stack.dim; ++d)
        acc += d_out(t, d) * static_cast<double>(stack.at(l, t, d));
    d_weights[l] = acc;
  }
  double mix = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) mix += weights[l] * d_weights[l];
  std::vector<double> d_logits(logits.size());
  for (std::size_t l = 0; l < weights.size(); ++l)
    d_logits[l] = weights[l] * (d_weights[l] - mix);
  return d_logits;
}

std::vector<double> stats_pool(const Matrix& frames, double eps_std) {
  require(frames.rows >= 1 && frames.cols >= 1, "stats_pool: empty input");
  const std::size_t T = frames.rows, D = frames.cols;
  std::vector<double> out(2 * D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    double mean = 0.0, ex2 = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      mean += frames(t, d);
      ex2 += frames(t, d) * frames(t, d);
    }
    mean /= static_cast<double>(T);
    ex2 /= static_cast<double>(T);
    out[d] = mean;
    out[D + d] = guarded_std(ex2, mean, eps_std).first;
  }
  return out;
}

Matrix stats_pool_backward(const Matrix& frames, double eps_std,
                           const std::vector<double>& d_out) {
  const std::size_t T = frames.rows, D = frames.cols;
  require(d_out.size() == 2 * D, "stats_pool_backward: d_out length mismatch");
  Matrix d_frames(T, D);
  for (std::size_t d = 0; d < D; ++d) {
    double mean = 0.0, ex2 = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      mean += frames(t, d);
      ex2 += frames(t, d) * frames(t, d);
    }
    mean /= static_cast<double>(T);
    ex2 /= static_cast<double>(T);
    const auto [sigma, live] = guarded_std(ex2, mean, eps_std);
    const double d_mu = d_out[d];
    const double d_sigma = (live && sigma > 0.0) ? d_out[D + d] / (2.0 * sigma) : 0.0;
    for (std::size_t t = 0; t < T; ++t)
      d_frames(t, d) = d_mu / static_cast<double>(T) +
                       d_sigma * 2.0 * (frames(t, d) - mean) / static_cast<double>(T);
  }
  return d_frames;
}

namespace {

struct AttentiveForward {
  std::vector<std::vector<double>> tanh_acts;  // per frame, hidden
  std::vector<double> alpha;                   // per frame
};

AttentiveForward attentive_weights(const Matrix& frames,
                                   const AttentivePoolParams& params) {
  const std::size_t T = frames.rows, D = frames.cols;
  require(params.score_w.cols == D, "attentive pooling: score_w width must equal D");
  require(params.score_b.size() == params.score_w.rows &&
              params.score_v.size() == params.score_w.rows,
          "attentive pooling: hidden sizes disagree");
  AttentiveForward fwd;
  fwd.tanh_acts.resize(T);
  std::vector<double> scores(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> u = matvec(params.score_w,
                                   std::span(frames.data).subspan(t * D, D));
    for (std::size_t h = 0; h < u.size(); ++h) u[h] = std::tanh(u[h] + params.score_b[h]);
    scores[t] = dot(u, params.score_v);
    fwd.tanh_acts[t] = std::move(u);
  }
  fwd.alpha = softmax(scores);
  return fwd;
}

}  // namespace

std::vector<double> attentive_stats_pool(const Matrix& frames,
                                         const AttentivePoolParams& params,
                                         double eps_std) {
  require(frames.rows >= 1 && frames.cols >= 1, "attentive pooling: empty input");
  const std::size_t T = frames.rows, D = frames.cols;
  const auto fwd = attentive_weights(frames, params);

  std::vector<double> out(2 * D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    double mu = 0.0, ex2 = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      mu += fwd.alpha[t] * frames(t, d);
      ex2 += fwd.alpha[t] * frames(t, d) * frames(t, d);
    }
    out[d] = mu;
    out[D + d] = guarded_std(ex2, mu, eps_std).first;
  }
  return out;
}

Matrix attentive_stats_pool_backward(const Matrix& frames,
                                     const AttentivePoolParams& params,
                                     double eps_std,
                                     const std::vector<double>& d_out,
                                     AttentivePoolParams* d_params) {
  const std::size_t T = frames.rows, D = frames.cols;
  require(d_out.size() == 2 * D, "attentive backward: d_out length mismatch");
  const auto fwd = attentive_weights(frames, params);

  std::vector<double> mu(D, 0.0), ex2(D, 0.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t t = 0; t < T; ++t) {
      mu[d] += fwd.alpha[t] * frames(t, d);
      ex2[d] += fwd.alpha[t] * frames(t, d) * frames(t, d);
    }

  // Upstream through sigma = sqrt(max(ex2 - mu^2, 0) + eps).
  std::vector<double> d_mu(D), d_ex2(D);
  for (std::size_t d = 0; d < D; ++d) {
    const auto [sigma, live] = guarded_std(ex2[d], mu[d], eps_std);
    const double d_sig = (live && sigma > 0.0) ? d_out[D + d] / (2.0 * sigma) : 0.0;
    d_ex2[d] = d_sig;
    d_mu[d] = d_out[d] - 2.0 * mu[d] * d_sig;
  }

  Matrix d_frames(T, D);
  std::vector<double> d_alpha(T, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      d_alpha[t] += d_mu[d] * frames(t, d) + d_ex2[d] * frames(t, d) * frames(t, d);
      d_frames(t, d) = fwd.alpha[t] * (d_mu[d] + 2.0 * frames(t, d) * d_ex2[d]);
    }

  // Softmax over time.
  double mix = 0.0;
  for (std::size_t t = 0; t < T; ++t) mix += fwd.alpha[t] * d_alpha[t];
  for (std::size_t t = 0; t < T; ++t) {
    const double d_score = fwd.alpha[t] * (d_alpha[t] - mix);
    const auto& act = fwd.tanh_acts[t];
    std::vector<double> d_act(act.size());
    for (std::size_t h = 0; h < act.size(); ++h) {
      d_act[h] = d_score * params.score_v[h] * (1.0 - act[h] * act[h]);
      if (d_params) d_params->score_v[h] += d_score * act[h];
    }
    if (d_params) {
      add_outer(d_params->score_w, d_act,
                std::span(frames.data).subspan(t * D, D));
      for (std::size_t h = 0; h < act.size(); ++h) d_params->score_b[h] += d_act[h];
    }
    const auto d_frame = matvec_transposed(params.score_w, d_act);
    for (std::size_t d = 0; d < D; ++d) d_frames(t, d) += d_frame[d];
  }
  return d_frames;
}

namespace {

struct ChannelContextForward {
  Matrix attention_input;                      // T x (D or 3D)
  std::vector<std::vector<double>> tanh_acts;  // per frame, hidden
  Matrix alpha;                                // T x D, column-softmaxed
  std::vector<double> global_mu, global_sigma;
  std::vector<bool> global_live;
};

ChannelContextForward channel_context_weights(
    const Matrix& frames, const ChannelContextPoolParams& params, bool context,
    double eps_std) {
  const std::size_t T = frames.rows, D = frames.cols;
  const std::size_t in_dim = context ? 3 * D : D;
  require(params.w1.cols == in_dim,
          "channel-context pooling: w1 width must equal attention input width");
  require(params.b1.size() == params.w1.rows,
          "channel-context pooling: b1 length mismatch");
  require(params.w2.rows == D && params.w2.cols == params.w1.rows,
          "channel-context pooling: w2 must be D x hidden");
  require(params.b2.size() == D, "channel-context pooling: b2 length mismatch");

  ChannelContextForward fwd;
  if (context) {
    fwd.global_mu.resize(D);
    fwd.global_sigma.resize(D);
    fwd.global_live.resize(D);
    for (std::size_t d = 0; d < D; ++d) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        mean += frames(t, d);
        sq += frames(t, d) * frames(t, d);
      }
      mean /= static_cast<double>(T);
      sq /= static_cast<double>(T);
      const auto [sigma, live] = guarded_std(sq, mean, eps_std);
      fwd.global_mu[d] = mean;
      fwd.global_sigma[d] = sigma;
      fwd.global_live[d] = live;
    }
  }

  fwd.attention_input = Matrix(T, in_dim);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < D; ++d) fwd.attention_input(t, d) = frames(t, d);
    if (context)
      for (std::size_t d = 0; d < D; ++d) {
        fwd.attention_input(t, D + d) = fwd.global_mu[d];
        fwd.attention_input(t, 2 * D + d) = fwd.global_sigma[d];
      }
  }

  Matrix scores(T, D);
  fwd.tanh_acts.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> u =
        matvec(params.w1, std::span(fwd.attention_input.data).subspan(t * in_dim, in_dim));
    for (std::size_t h = 0; h < u.size(); ++h) u[h] = std::tanh(u[h] + params.b1[h]);
    const auto z = matvec(params.w2, u);
    for (std::size_t d = 0; d < D; ++d) scores(t, d) = z[d] + params.b2[d];
    fwd.tanh_acts[t] = std::move(u);
  }

  // Per-channel softmax across time.
  fwd.alpha = Matrix(T, D);
  for (std::size_t d = 0; d < D; ++d) {
    double peak = scores(0, d);
    for (std::size_t t = 1; t < T; ++t) peak = std::max(peak, scores(t, d));
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      fwd.alpha(t, d) = std::exp(scores(t, d) - peak);
      total += fwd.alpha(t, d);
    }
    for (std::size_t t = 0; t < T; ++t) fwd.alpha(t, d) /= total;
  }
  return fwd;
}

}  // namespace

std::vector<double> channel_context_stats_pool(
    const Matrix& frames, const ChannelContextPoolParams& params, bool context,
    double eps_std) {
  require(frames.rows >= 1 && frames.cols >= 1,
          "channel-context pooling: empty input");
  const std::size_t T = frames.rows, D = frames.cols;
  const auto fwd = channel_context_weights(frames, params, context, eps_std);

  std::vector<double> out(2 * D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    double mu = 0.0, ex2 = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      mu += fwd.alpha(t, d) * frames(t, d);
      ex2 += fwd.alpha(t, d) * frames(t, d) * frames(t, d);
    }
    out[d] = mu;
    out[D + d] = guarded_std(ex2, mu, eps_std).first;
  }
  return out;
}

Matrix channel_context_stats_pool_backward(const Matrix& frames,
                                           const ChannelContextPoolParams& params,
                                           bool context, double eps_std,
                                           const std::vector<double>& d_out,
                                           ChannelContextPoolParams* d_params) {
  const std::size_t T = frames.rows, D = frames.cols;
  require(d_out.size() == 2 * D, "channel-context backward: d_out length mismatch");
  const auto fwd = channel_context_weights(frames, params, context, eps_std);
  const std::size_t in_dim = context ? 3 * D : D;

  std::vector<double> mu(D, 0.0), ex2(D, 0.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t t = 0; t < T; ++t) {
      mu[d] += fwd.alpha(t, d) * frames(t, d);
      ex2[d] += fwd.alpha(t, d) * frames(t, d) * frames(t, d);
    }

  std::vector<double> d_mu(D), d_ex2(D);
  for (std::size_t d = 0; d < D; ++d) {
    const auto [sigma, live] = guarded_std(ex2[d], mu[d], eps_std);
    const double d_sig = (live && sigma > 0.0) ? d_out[D + d] / (2.0 * sigma) : 0.0;
    d_ex2[d] = d_sig;
    d_mu[d] = d_out[d] - 2.0 * mu[d] * d_sig;
  }

  Matrix d_frames(T, D);
  Matrix d_alpha(T, D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      d_alpha(t, d) =
          d_mu[d] * frames(t, d) + d_ex2[d] * frames(t, d) * frames(t, d);
      d_frames(t, d) =
          fwd.alpha(t, d) * (d_mu[d] + 2.0 * frames(t, d) * d_ex2[d]);
    }

  // Per-channel softmax backward, then through the shared two-stage map.
  Matrix d_scores(T, D);
  for (std::size_t d = 0; d < D; ++d) {
    double mix = 0.0;
    for (std::size_t t = 0; t < T; ++t) mix += fwd.alpha(t, d) * d_alpha(t, d);
    for (std::size_t t = 0; t < T; ++t)
      d_scores(t, d) = fwd.alpha(t, d) * (d_alpha(t, d) - mix);
  }

  std::vector<double> d_global_mu(D, 0.0), d_global_sigma(D, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const std::span<const double> d_z(&d_scores.data[t * D], D);
    const auto& act = fwd.tanh_acts[t];
    if (d_params) {
      add_outer(d_params->w2, d_z, act);
      for (std::size_t d = 0; d < D; ++d) d_params->b2[d] += d_z[d];
    }
    auto d_act = matvec_transposed(params.w2, d_z);
    for (std::size_t h = 0; h < act.size(); ++h) d_act[h] *= 1.0 - act[h] * act[h];
    if (d_params) {
      add_outer(d_params->w1, d_act,
                std::span(fwd.attention_input.data).subspan(t * in_dim, in_dim));
      for (std::size_t h = 0; h < act.size(); ++h) d_params->b1[h] += d_act[h];
    }
    const auto d_input = matvec_transposed(params.w1, d_act);
    for (std::size_t d = 0; d < D; ++d) d_frames(t, d) += d_input[d];
    if (context)
      for (std::size_t d = 0; d < D; ++d) {
        d_global_mu[d] += d_input[D + d];
        d_global_sigma[d] += d_input[2 * D + d];
      }
  }

  if (context) {
    // Context statistics are plain per-channel mean/std of the frames.
    for (std::size_t d = 0; d < D; ++d) {
      const double d_sig = (fwd.global_live[d] && fwd.global_sigma[d] > 0.0)
                               ? d_global_sigma[d] / (2.0 * fwd.global_sigma[d])
                               : 0.0;
      for (std::size_t t = 0; t < T; ++t)
        d_frames(t, d) += d_global_mu[d] / static_cast<double>(T) +
                          d_sig * 2.0 * (frames(t, d) - fwd.global_mu[d]) /
                              static_cast<double>(T);
    }
  }
  return d_frames;
}

}  // namespace svkit
