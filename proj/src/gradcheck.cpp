#include "svkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "svkit/head.hpp"
#include "svkit/pooling.hpp"
#include "svkit/rng.hpp"
#include "svkit/training.hpp"

namespace svkit {

std::vector<double> finite_difference_gradient(
    const std::function<double()>& eval, std::span<double> x, double base_step) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    const double h = base_step * std::max(1.0, std::fabs(saved));
    x[i] = saved + h;
    const double above = eval();
    x[i] = saved - h;
    const double below = eval();
    x[i] = saved;
    grad[i] = (above - below) / (2.0 * h);
  }
  return grad;
}

double gradient_rel_error(std::span<const double> analytic,
                          std::span<const double> numeric) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::fabs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
  }
  return diff / scale;
}

namespace {

constexpr double kStep = 1e-6;

struct CaseAccumulator {
  GradCheckCase result;

  explicit CaseAccumulator(std::string name, double threshold = 1e-5) {
    result.name = std::move(name);
    result.threshold = threshold;
  }

  void record(std::span<const double> analytic, const std::function<double()>& eval,
              std::span<double> x) {
    const auto numeric = finite_difference_gradient(eval, x, kStep);
    result.max_rel_err =
        std::max(result.max_rel_err, gradient_rel_error(analytic, numeric));
  }

  void bump() { ++result.instances; }
};

Matrix random_frames(Rng& rng, std::size_t t, std::size_t d) {
  Matrix m(t, d);
  for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
  return m;
}

FeatureStack random_stack(Rng& rng, std::size_t l, std::size_t t, std::size_t d) {
  FeatureStack stack(static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(t),
                     static_cast<std::uint32_t>(d));
  for (auto& v : stack.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return stack;
}

Matrix random_probe(Rng& rng, std::size_t t, std::size_t d) {
  Matrix m(t, d);
  for (auto& v : m.data) v = rng.uniform(0.25, 1.25);
  return m;
}

double probe_sum(const std::vector<double>& values, const std::vector<double>& probe) {
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) acc += values[i] * probe[i];
  return acc;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0,
                                  double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

void check_layer_weights(Rng& rng, CaseAccumulator& acc) {
  const std::size_t L = 2 + rng.uniform_int(3), T = 2 + rng.uniform_int(3),
                    D = 1 + rng.uniform_int(4);
  auto stack = random_stack(rng, L, T, D);
  auto logits = random_vector(rng, L);
  const auto probe = random_probe(rng, T, D);

  const auto analytic = layer_weighted_sum_backward(stack, logits, probe);
  auto eval = [&] {
    const auto out = layer_weighted_sum(stack, logits);
    double acc2 = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      acc2 += out.data[i] * probe.data[i];
    return acc2;
  };
  acc.record(analytic, eval, logits);
  acc.bump();
}

void check_stats_pool(Rng& rng, CaseAccumulator& acc) {
  const std::size_t T = 3 + rng.uniform_int(3), D = 1 + rng.uniform_int(4);
  auto frames = random_frames(rng, T, D);
  const auto probe = random_vector(rng, 2 * D, 0.25, 1.25);
  const double eps = 1e-6;

  const auto d_frames = stats_pool_backward(frames, eps, probe);
  auto eval = [&] { return probe_sum(stats_pool(frames, eps), probe); };
  acc.record(d_frames.data, eval, frames.data);
  acc.bump();
}

AttentivePoolParams random_attentive(Rng& rng, std::size_t hidden, std::size_t d) {
  AttentivePoolParams p;
  p.score_w = Matrix(hidden, d);
  for (auto& v : p.score_w.data) v = rng.uniform(-1.0, 1.0);
  p.score_b = random_vector(rng, hidden);
  p.score_v = random_vector(rng, hidden);
  return p;
}

void check_attentive(Rng& rng, CaseAccumulator& params_case,
                     CaseAccumulator& input_case) {
  const std::size_t T = 2 + rng.uniform_int(4), D = 1 + rng.uniform_int(4),
                    H = 1 + rng.uniform_int(3);
  auto frames = random_frames(rng, T, D);
  auto params = random_attentive(rng, H, D);
  const auto probe = random_vector(rng, 2 * D, 0.25, 1.25);
  const double eps = 1e-6;

  AttentivePoolParams grads = random_attentive(rng, H, D);
  std::fill(grads.score_w.data.begin(), grads.score_w.data.end(), 0.0);
  std::fill(grads.score_b.begin(), grads.score_b.end(), 0.0);
  std::fill(grads.score_v.begin(), grads.score_v.end(), 0.0);
  const auto d_frames =
      attentive_stats_pool_backward(frames, params, eps, probe, &grads);

  auto eval = [&] {
    return probe_sum(attentive_stats_pool(frames, params, eps), probe);
  };
  params_case.record(grads.score_w.data, eval, params.score_w.data);
  params_case.record(grads.score_b, eval, params.score_b);
  params_case.record(grads.score_v, eval, params.score_v);
  params_case.bump();
  input_case.record(d_frames.data, eval, frames.data);
  input_case.bump();
}

ChannelContextPoolParams random_channel_context(Rng& rng, std::size_t hidden,
                                                std::size_t d, bool context) {
  ChannelContextPoolParams p;
  p.w1 = Matrix(hidden, context ? 3 * d : d);
  for (auto& v : p.w1.data) v = rng.uniform(-1.0, 1.0);
  p.b1 = random_vector(rng, hidden);
  p.w2 = Matrix(d, hidden);
  for (auto& v : p.w2.data) v = rng.uniform(-1.0, 1.0);
  p.b2 = random_vector(rng, d);
  return p;
}

void check_channel_context(Rng& rng, bool context, CaseAccumulator& params_case,
                           CaseAccumulator& input_case) {
  const std::size_t T = 2 + rng.uniform_int(4), D = 1 + rng.uniform_int(4),
                    H = 1 + rng.uniform_int(3);
  auto frames = random_frames(rng, T, D);
  auto params = random_channel_context(rng, H, D, context);
  const auto probe = random_vector(rng, 2 * D, 0.25, 1.25);
  const double eps = 1e-6;

  ChannelContextPoolParams grads = random_channel_context(rng, H, D, context);
  std::fill(grads.w1.data.begin(), grads.w1.data.end(), 0.0);
  std::fill(grads.b1.begin(), grads.b1.end(), 0.0);
  std::fill(grads.w2.data.begin(), grads.w2.data.end(), 0.0);
  std::fill(grads.b2.begin(), grads.b2.end(), 0.0);
  const auto d_frames = channel_context_stats_pool_backward(frames, params, context,
                                                            eps, probe, &grads);

  auto eval = [&] {
    return probe_sum(channel_context_stats_pool(frames, params, context, eps), probe);
  };
  params_case.record(grads.w1.data, eval, params.w1.data);
  params_case.record(grads.b1, eval, params.b1);
  params_case.record(grads.w2.data, eval, params.w2.data);
  params_case.record(grads.b2, eval, params.b2);
  params_case.bump();
  input_case.record(d_frames.data, eval, frames.data);
  input_case.bump();
}

// ReLU kinks break central differences; retry until every pre-activation
// is comfortably away from zero.
bool encoder_away_from_kinks(const Matrix& frames,
                             const std::vector<EncoderBlockParams>& blocks,
                             const FrameEncoderConfig& config) {
  Matrix x = frames;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Matrix pre(x.rows, blocks[i].w.rows);
    for (std::size_t t = 0; t < x.rows; ++t) {
      std::vector<double> ctx(3 * x.cols);
      const auto clamp = [&](std::ptrdiff_t idx) {
        return static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(idx, 0,
                                       static_cast<std::ptrdiff_t>(x.rows) - 1));
      };
      const std::size_t lo = clamp(static_cast<std::ptrdiff_t>(t) -
                                   static_cast<std::ptrdiff_t>(config.dilations[i]));
      const std::size_t hi = clamp(static_cast<std::ptrdiff_t>(t) +
                                   static_cast<std::ptrdiff_t>(config.dilations[i]));
      for (std::size_t d = 0; d < x.cols; ++d) {
        ctx[d] = x(lo, d);
        ctx[x.cols + d] = x(t, d);
        ctx[2 * x.cols + d] = x(hi, d);
      }
      const auto z = matvec(blocks[i].w, ctx);
      for (std::size_t h = 0; h < z.size(); ++h) {
        if (std::fabs(z[h] + blocks[i].b[h]) < 1e-3) return false;
        pre(t, h) = std::max(0.0, z[h] + blocks[i].b[h]);
      }
    }
    x = pre;
  }
  return true;
}

void check_frame_encoder(Rng& rng, CaseAccumulator& params_case,
                         CaseAccumulator& input_case) {
  FrameEncoderConfig config;
  config.n_blocks = 1 + rng.uniform_int(2);
  config.hidden = 1 + rng.uniform_int(3);
  config.dilations.clear();
  for (std::size_t i = 0; i < config.n_blocks; ++i)
    config.dilations.push_back(1 + rng.uniform_int(2));

  const std::size_t T = 3 + rng.uniform_int(3), D = 1 + rng.uniform_int(3);
  Matrix frames;
  std::vector<EncoderBlockParams> blocks;
  for (int attempt = 0; attempt < 64; ++attempt) {
    frames = random_frames(rng, T, D);
    blocks.clear();
    std::size_t prev = D;
    for (std::size_t i = 0; i < config.n_blocks; ++i) {
      EncoderBlockParams block;
      block.w = Matrix(config.hidden, 3 * prev);
      for (auto& v : block.w.data) v = rng.uniform(-1.0, 1.0);
      block.b = random_vector(rng, config.hidden);
      blocks.push_back(std::move(block));
      prev = config.hidden;
    }
    if (encoder_away_from_kinks(frames, blocks, config)) break;
  }

  const auto out = frame_encoder_forward(frames, blocks, config);
  const auto probe = random_probe(rng, out.rows, out.cols);

  auto eval = [&] {
    const auto y = frame_encoder_forward(frames, blocks, config);
    double acc2 = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) acc2 += y.data[i] * probe.data[i];
    return acc2;
  };

  std::vector<EncoderBlockParams> grads;
  for (const auto& block : blocks) {
    EncoderBlockParams g;
    g.w = Matrix(block.w.rows, block.w.cols);
    g.b.assign(block.b.size(), 0.0);
    grads.push_back(std::move(g));
  }
  const Matrix d_frames =
      frame_encoder_backward(frames, blocks, config, probe, &grads);

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    params_case.record(grads[i].w.data, eval, blocks[i].w.data);
    params_case.record(grads[i].b, eval, blocks[i].b);
  }
  params_case.bump();
  input_case.record(d_frames.data, eval, frames.data);
  input_case.bump();
}

void check_amsoftmax(Rng& rng, CaseAccumulator& embed_case,
                     CaseAccumulator& weights_case) {
  const std::size_t n = 2 + rng.uniform_int(3), d = 2 + rng.uniform_int(3);
  AMSoftmaxParams params;
  params.scale = 30.0;
  params.margin = 0.4;
  params.class_weights = Matrix(n, d);
  for (auto& v : params.class_weights.data) v = rng.uniform(-1.0, 1.0) * 0.8 + 0.2;
  std::vector<double> embedding;
  do {
    embedding = random_vector(rng, d);
  } while (norm(embedding) < 0.3);
  const std::size_t label = rng.uniform_int(n);

  Matrix d_weights(n, d);
  const auto result = amsoftmax_loss(embedding, label, params, &d_weights);
  auto eval = [&] { return amsoftmax_loss(embedding, label, params).loss; };
  embed_case.record(result.d_embedding, eval, embedding);
  embed_case.bump();
  weights_case.record(d_weights.data, eval, params.class_weights.data);
  weights_case.bump();
}

void check_head_pipeline(Rng& rng, PoolingKind kind, bool context,
                         bool with_encoder, CaseAccumulator& acc,
                         CaseAccumulator& embed_affine_case) {
  HeadConfig config;
  config.input_dim = 1 + rng.uniform_int(3);
  config.n_layers = 1 + rng.uniform_int(3);
  config.embed_dim = 2 + rng.uniform_int(3);
  config.pooling.kind = kind;
  config.pooling.attention_hidden = 1 + rng.uniform_int(3);
  config.pooling.context = context;
  config.pooling.eps_std = 1e-6;
  if (with_encoder) {
    FrameEncoderConfig enc;
    enc.n_blocks = 1;
    enc.hidden = 2;
    enc.dilations = {1};
    config.frame_encoder = enc;
  }

  const std::size_t T = 3 + rng.uniform_int(3);
  const std::size_t n_classes = 2 + rng.uniform_int(2);

  FeatureStack stack;
  HeadParams params;
  AMSoftmaxParams am;
  am.scale = 30.0;
  am.margin = 0.4;
  for (int attempt = 0; attempt < 64; ++attempt) {
    stack = random_stack(rng, config.n_layers, T, config.input_dim);
    params = init_head_params(config, rng);
    if (!with_encoder ||
        encoder_away_from_kinks(layer_weighted_sum(stack, params.layer_logits),
                                params.encoder, *config.frame_encoder))
      break;
  }
  am.class_weights = Matrix(n_classes, config.embed_dim);
  for (auto& v : am.class_weights.data) v = rng.uniform(-1.0, 1.0) * 0.8 + 0.2;
  const std::size_t label = rng.uniform_int(n_classes);

  auto eval = [&] {
    return amsoftmax_loss(head_forward(stack, params, config), label, am).loss;
  };

  HeadParams grads = zero_head_grads(config);
  {
    const auto embedding = head_forward(stack, params, config);
    const auto sample = amsoftmax_loss(embedding, label, am);
    head_backward(stack, params, config, sample.d_embedding, &grads);
  }

  acc.record(grads.layer_logits, eval, params.layer_logits);
  if (kind == PoolingKind::attentive_stats) {
    acc.record(grads.attentive.score_w.data, eval, params.attentive.score_w.data);
    acc.record(grads.attentive.score_b, eval, params.attentive.score_b);
    acc.record(grads.attentive.score_v, eval, params.attentive.score_v);
  } else if (kind == PoolingKind::channel_context_stats) {
    acc.record(grads.channel_context.w1.data, eval, params.channel_context.w1.data);
    acc.record(grads.channel_context.b1, eval, params.channel_context.b1);
    acc.record(grads.channel_context.w2.data, eval, params.channel_context.w2.data);
    acc.record(grads.channel_context.b2, eval, params.channel_context.b2);
  }
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    acc.record(grads.encoder[i].w.data, eval, params.encoder[i].w.data);
    acc.record(grads.encoder[i].b, eval, params.encoder[i].b);
  }
  acc.bump();

  embed_affine_case.record(grads.embed_w.data, eval, params.embed_w.data);
  embed_affine_case.record(grads.embed_b, eval, params.embed_b);
  embed_affine_case.bump();
}

}  // namespace

std::vector<GradCheckCase> run_gradient_checks(std::uint64_t seed,
                                               std::size_t instances_per_op) {
  Rng rng(seed);
  CaseAccumulator layer_weights("layer_weights");
  CaseAccumulator stats_input("stats_pool.input");
  CaseAccumulator att_params("attentive_stats_pool.params");
  CaseAccumulator att_input("attentive_stats_pool.input");
  CaseAccumulator cc_params("channel_context_stats_pool.params");
  CaseAccumulator cc_input("channel_context_stats_pool.input");
  CaseAccumulator ccx_params("channel_context_stats_pool.context.params");
  CaseAccumulator ccx_input("channel_context_stats_pool.context.input");
  CaseAccumulator enc_params("frame_encoder.params");
  CaseAccumulator enc_input("frame_encoder.input");
  CaseAccumulator am_embed("amsoftmax.embedding");
  CaseAccumulator am_weights("amsoftmax.class_weights");
  CaseAccumulator embed_affine("embedding_affine");
  CaseAccumulator pipeline("head_pipeline", 1e-4);

  for (std::size_t i = 0; i < instances_per_op; ++i) {
    check_layer_weights(rng, layer_weights);
    check_stats_pool(rng, stats_input);
    check_attentive(rng, att_params, att_input);
    check_channel_context(rng, false, cc_params, cc_input);
    check_channel_context(rng, true, ccx_params, ccx_input);
    check_frame_encoder(rng, enc_params, enc_input);
    check_amsoftmax(rng, am_embed, am_weights);
    check_head_pipeline(rng, PoolingKind::stats, false, true, pipeline, embed_affine);
    check_head_pipeline(rng, PoolingKind::attentive_stats, false, false, pipeline,
                        embed_affine);
    check_head_pipeline(rng, PoolingKind::channel_context_stats, true, false,
                        pipeline, embed_affine);
  }

  return {layer_weights.result, stats_input.result,  att_params.result,
          att_input.result,     cc_params.result,    cc_input.result,
          ccx_params.result,    ccx_input.result,    enc_params.result,
          enc_input.result,     am_embed.result,     am_weights.result,
          embed_affine.result,  pipeline.result};
}

}  // namespace svkit
