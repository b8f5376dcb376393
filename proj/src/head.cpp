#include "svkit/head.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "svkit/csv.hpp"
#include "svkit/error.hpp"

namespace svkit {

namespace {

std::size_t clamp_index(std::ptrdiff_t t, std::size_t count) {
  if (t < 0) return 0;
  if (t >= static_cast<std::ptrdiff_t>(count)) return count - 1;
  return static_cast<std::size_t>(t);
}

std::vector<double> gather_context(const Matrix& x, std::size_t t, std::size_t dilation) {
  const std::size_t P = x.cols;
  std::vector<double> ctx(3 * P);
  const std::size_t lo = clamp_index(static_cast<std::ptrdiff_t>(t) -
                                         static_cast<std::ptrdiff_t>(dilation),
                                     x.rows);
  const std::size_t hi = clamp_index(static_cast<std::ptrdiff_t>(t) +
                                         static_cast<std::ptrdiff_t>(dilation),
                                     x.rows);
  for (std::size_t d = 0; d < P; ++d) {
    ctx[d] = x(lo, d);
    ctx[P + d] = x(t, d);
    ctx[2 * P + d] = x(hi, d);
  }
  return ctx;
}

Matrix encoder_block_forward(const Matrix& x, const EncoderBlockParams& block,
                             std::size_t dilation) {
  require(block.w.cols == 3 * x.cols, "frame encoder: block width mismatch");
  require(block.b.size() == block.w.rows, "frame encoder: bias length mismatch");
  Matrix y(x.rows, block.w.rows);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const auto ctx = gather_context(x, t, dilation);
    auto pre = matvec(block.w, ctx);
    for (std::size_t h = 0; h < pre.size(); ++h)
      y(t, h) = std::max(0.0, pre[h] + block.b[h]);
  }
  return y;
}

// d_y -> d_x; parameter grads accumulate into *d_block when given.
Matrix encoder_block_backward(const Matrix& x, const EncoderBlockParams& block,
                              std::size_t dilation, const Matrix& d_y,
                              EncoderBlockParams* d_block) {
  const std::size_t P = x.cols;
  Matrix d_x(x.rows, P);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const auto ctx = gather_context(x, t, dilation);
    auto pre = matvec(block.w, ctx);
    std::vector<double> d_pre(pre.size());
    for (std::size_t h = 0; h < pre.size(); ++h)
      d_pre[h] = (pre[h] + block.b[h] > 0.0) ? d_y(t, h) : 0.0;
    if (d_block) {
      add_outer(d_block->w, d_pre, ctx);
      for (std::size_t h = 0; h < d_pre.size(); ++h) d_block->b[h] += d_pre[h];
    }
    const auto d_ctx = matvec_transposed(block.w, d_pre);
    const std::size_t lo = clamp_index(static_cast<std::ptrdiff_t>(t) -
                                           static_cast<std::ptrdiff_t>(dilation),
                                       x.rows);
    const std::size_t hi = clamp_index(static_cast<std::ptrdiff_t>(t) +
                                           static_cast<std::ptrdiff_t>(dilation),
                                       x.rows);
    for (std::size_t d = 0; d < P; ++d) {
      d_x(lo, d) += d_ctx[d];
      d_x(t, d) += d_ctx[P + d];
      d_x(hi, d) += d_ctx[2 * P + d];
    }
  }
  return d_x;
}

void fill_uniform(Rng& rng, std::vector<double>& v, std::size_t fan_in) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(1, fan_in)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
}

void fill_uniform(Rng& rng, Matrix& m, std::size_t fan_in) {
  fill_uniform(rng, m.data, fan_in);
}

std::vector<double> pool_dispatch(const Matrix& frames, const HeadParams& params,
                                  const HeadConfig& config) {
  switch (config.pooling.kind) {
    case PoolingKind::stats:
      return stats_pool(frames, config.pooling.eps_std);
    case PoolingKind::attentive_stats:
      return attentive_stats_pool(frames, params.attentive, config.pooling.eps_std);
    case PoolingKind::channel_context_stats:
      return channel_context_stats_pool(frames, params.channel_context,
                                        config.pooling.context,
                                        config.pooling.eps_std);
  }
  throw invariant_error("unknown pooling kind");
}

}  // namespace

HeadParams init_head_params(const HeadConfig& config, Rng& rng) {
  config.validate();
  HeadParams params;
  params.layer_logits.resize(config.n_layers);
  fill_uniform(rng, params.layer_logits, config.n_layers);

  const std::size_t P = config.pool_input_dim();
  const std::size_t hidden = config.pooling.attention_hidden;
  if (config.pooling.kind == PoolingKind::attentive_stats) {
    params.attentive.score_w = Matrix(hidden, P);
    params.attentive.score_b.resize(hidden);
    params.attentive.score_v.resize(hidden);
    fill_uniform(rng, params.attentive.score_w, P);
    fill_uniform(rng, params.attentive.score_b, P);
    fill_uniform(rng, params.attentive.score_v, hidden);
  } else if (config.pooling.kind == PoolingKind::channel_context_stats) {
    const std::size_t in_dim = config.pooling.context ? 3 * P : P;
    params.channel_context.w1 = Matrix(hidden, in_dim);
    params.channel_context.b1.resize(hidden);
    params.channel_context.w2 = Matrix(P, hidden);
    params.channel_context.b2.resize(P);
    fill_uniform(rng, params.channel_context.w1, in_dim);
    fill_uniform(rng, params.channel_context.b1, in_dim);
    fill_uniform(rng, params.channel_context.w2, hidden);
    fill_uniform(rng, params.channel_context.b2, hidden);
  }

  if (config.frame_encoder) {
    std::size_t prev = config.input_dim;
    for (std::size_t i = 0; i < config.frame_encoder->n_blocks; ++i) {
      EncoderBlockParams block;
      block.w = Matrix(config.frame_encoder->hidden, 3 * prev);
      block.b.resize(config.frame_encoder->hidden);
      fill_uniform(rng, block.w, 3 * prev);
      fill_uniform(rng, block.b, 3 * prev);
      params.encoder.push_back(std::move(block));
      prev = config.frame_encoder->hidden;
    }
  }

  params.embed_w = Matrix(config.embed_dim, config.pool_output_dim());
  params.embed_b.resize(config.embed_dim);
  fill_uniform(rng, params.embed_w, config.pool_output_dim());
  fill_uniform(rng, params.embed_b, config.pool_output_dim());
  return params;
}

HeadParams zero_head_grads(const HeadConfig& config) {
  HeadParams grads;
  grads.layer_logits.assign(config.n_layers, 0.0);
  const std::size_t P = config.pool_input_dim();
  const std::size_t hidden = config.pooling.attention_hidden;
  if (config.pooling.kind == PoolingKind::attentive_stats) {
    grads.attentive.score_w = Matrix(hidden, P);
    grads.attentive.score_b.assign(hidden, 0.0);
    grads.attentive.score_v.assign(hidden, 0.0);
  } else if (config.pooling.kind == PoolingKind::channel_context_stats) {
    const std::size_t in_dim = config.pooling.context ? 3 * P : P;
    grads.channel_context.w1 = Matrix(hidden, in_dim);
    grads.channel_context.b1.assign(hidden, 0.0);
    grads.channel_context.w2 = Matrix(P, hidden);
    grads.channel_context.b2.assign(P, 0.0);
  }
  if (config.frame_encoder) {
    std::size_t prev = config.input_dim;
    for (std::size_t i = 0; i < config.frame_encoder->n_blocks; ++i) {
      EncoderBlockParams block;
      block.w = Matrix(config.frame_encoder->hidden, 3 * prev);
      block.b.assign(config.frame_encoder->hidden, 0.0);
      grads.encoder.push_back(std::move(block));
      prev = config.frame_encoder->hidden;
    }
  }
  grads.embed_w = Matrix(config.embed_dim, config.pool_output_dim());
  grads.embed_b.assign(config.embed_dim, 0.0);
  return grads;
}

Matrix frame_encoder_forward(const Matrix& frames,
                             const std::vector<EncoderBlockParams>& blocks,
                             const FrameEncoderConfig& config) {
  config.validate();
  require(blocks.size() == config.n_blocks, "frame encoder: block count mismatch");
  Matrix x = frames;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    x = encoder_block_forward(x, blocks[i], config.dilations[i]);
  return x;
}

Matrix frame_encoder_backward(const Matrix& frames,
                              const std::vector<EncoderBlockParams>& blocks,
                              const FrameEncoderConfig& config, const Matrix& d_out,
                              std::vector<EncoderBlockParams>* grads) {
  config.validate();
  require(blocks.size() == config.n_blocks, "frame encoder: block count mismatch");
  if (grads)
    require(grads->size() == blocks.size(),
            "frame encoder: gradient block count mismatch");
  std::vector<Matrix> inputs;
  Matrix x = frames;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    inputs.push_back(x);
    x = encoder_block_forward(x, blocks[i], config.dilations[i]);
  }
  Matrix d_x = d_out;
  for (std::size_t i = blocks.size(); i-- > 0;)
    d_x = encoder_block_backward(inputs[i], blocks[i], config.dilations[i], d_x,
                                 grads ? &(*grads)[i] : nullptr);
  return d_x;
}

std::vector<double> head_forward(const FeatureStack& stack,
                                 const HeadParams& params,
                                 const HeadConfig& config) {
  require(stack.dim == config.input_dim && stack.layers == config.n_layers,
          "head_forward: feature shape does not match config");
  Matrix frames = layer_weighted_sum(stack, params.layer_logits);
  if (config.frame_encoder)
    frames = frame_encoder_forward(frames, params.encoder, *config.frame_encoder);
  const auto pooled = pool_dispatch(frames, params, config);
  auto embedding = matvec(params.embed_w, pooled);
  for (std::size_t i = 0; i < embedding.size(); ++i) embedding[i] += params.embed_b[i];
  return embedding;
}

void head_backward(const FeatureStack& stack, const HeadParams& params,
                   const HeadConfig& config,
                   const std::vector<double>& d_embedding, HeadParams* grads) {
  require(grads != nullptr, "head_backward: grads must not be null");
  require(d_embedding.size() == config.embed_dim,
          "head_backward: d_embedding length mismatch");

  const Matrix mixed = layer_weighted_sum(stack, params.layer_logits);
  Matrix frames = mixed;
  if (config.frame_encoder)
    frames = frame_encoder_forward(mixed, params.encoder, *config.frame_encoder);
  const auto pooled = pool_dispatch(frames, params, config);

  add_outer(grads->embed_w, d_embedding, pooled);
  for (std::size_t i = 0; i < d_embedding.size(); ++i)
    grads->embed_b[i] += d_embedding[i];
  const auto d_pooled = matvec_transposed(params.embed_w, d_embedding);

  Matrix d_frames;
  switch (config.pooling.kind) {
    case PoolingKind::stats:
      d_frames = stats_pool_backward(frames, config.pooling.eps_std, d_pooled);
      break;
    case PoolingKind::attentive_stats:
      d_frames = attentive_stats_pool_backward(frames, params.attentive,
                                               config.pooling.eps_std, d_pooled,
                                               &grads->attentive);
      break;
    case PoolingKind::channel_context_stats:
      d_frames = channel_context_stats_pool_backward(
          frames, params.channel_context, config.pooling.context,
          config.pooling.eps_std, d_pooled, &grads->channel_context);
      break;
  }

  if (config.frame_encoder)
    d_frames = frame_encoder_backward(mixed, params.encoder, *config.frame_encoder,
                                      d_frames, &grads->encoder);

  const auto d_logits =
      layer_weighted_sum_backward(stack, params.layer_logits, d_frames);
  for (std::size_t l = 0; l < d_logits.size(); ++l)
    grads->layer_logits[l] += d_logits[l];
}

std::size_t param_count(const HeadConfig& config) {
  config.validate();
  std::size_t count = config.n_layers;
  const std::size_t P = config.pool_input_dim();
  const std::size_t hidden = config.pooling.attention_hidden;
  if (config.pooling.kind == PoolingKind::attentive_stats) {
    count += hidden * P + hidden + hidden;
  } else if (config.pooling.kind == PoolingKind::channel_context_stats) {
    const std::size_t in_dim = config.pooling.context ? 3 * P : P;
    count += hidden * in_dim + hidden + P * hidden + P;
  }
  if (config.frame_encoder) {
    std::size_t prev = config.input_dim;
    for (std::size_t i = 0; i < config.frame_encoder->n_blocks; ++i) {
      count += config.frame_encoder->hidden * 3 * prev + config.frame_encoder->hidden;
      prev = config.frame_encoder->hidden;
    }
  }
  count += config.embed_dim * config.pool_output_dim() + config.embed_dim;
  return count;
}

namespace {

FeatureStack matrix_to_stack(const Matrix& m) {
  FeatureStack stack(1, static_cast<std::uint32_t>(m.rows),
                     static_cast<std::uint32_t>(m.cols));
  for (std::size_t i = 0; i < m.data.size(); ++i)
    stack.values[i] = static_cast<float>(m.data[i]);
  return stack;
}

FeatureStack vector_to_stack(const std::vector<double>& v) {
  FeatureStack stack(1, 1, static_cast<std::uint32_t>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    stack.values[i] = static_cast<float>(v[i]);
  return stack;
}

Matrix stack_to_matrix(const FeatureStack& stack) {
  require(stack.layers == 1, "checkpoint tensor must be single-layer");
  Matrix m(stack.frames, stack.dim);
  for (std::size_t i = 0; i < stack.values.size(); ++i)
    m.data[i] = static_cast<double>(stack.values[i]);
  return m;
}

std::vector<double> stack_to_vector(const FeatureStack& stack) {
  require(stack.layers == 1 && stack.frames == 1,
          "checkpoint tensor must be a vector");
  std::vector<double> v(stack.dim);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<double>(stack.values[i]);
  return v;
}

class CheckpointWriter {
 public:
  CheckpointWriter(const std::filesystem::path& dir) : dir_(dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create checkpoint directory: " + dir.string());
  }

  void add(const std::string& name, const FeatureStack& tensor) {
    const std::string file = name + ".svf";
    write_features(tensor, dir_ / file);
    index_.emplace_back(name, file);
  }

  void finish() {
    std::ofstream out(dir_ / "index.csv", std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write checkpoint index in " + dir_.string());
    write_csv_row(out, {"tensor_name", "path"});
    for (const auto& [name, file] : index_) write_csv_row(out, {name, file});
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> index_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const HeadParams& params,
                     const Matrix* class_weights) {
  CheckpointWriter writer(dir);
  writer.add("layer_logits", vector_to_stack(params.layer_logits));
  if (!params.attentive.score_w.empty()) {
    writer.add("attentive.score_w", matrix_to_stack(params.attentive.score_w));
    writer.add("attentive.score_b", vector_to_stack(params.attentive.score_b));
    writer.add("attentive.score_v", vector_to_stack(params.attentive.score_v));
  }
  if (!params.channel_context.w1.empty()) {
    writer.add("channel_context.w1", matrix_to_stack(params.channel_context.w1));
    writer.add("channel_context.b1", vector_to_stack(params.channel_context.b1));
    writer.add("channel_context.w2", matrix_to_stack(params.channel_context.w2));
    writer.add("channel_context.b2", vector_to_stack(params.channel_context.b2));
  }
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i);
    writer.add(prefix + ".w", matrix_to_stack(params.encoder[i].w));
    writer.add(prefix + ".b", vector_to_stack(params.encoder[i].b));
  }
  writer.add("embed_w", matrix_to_stack(params.embed_w));
  writer.add("embed_b", vector_to_stack(params.embed_b));
  if (class_weights)
    writer.add("amsoftmax.class_weights", matrix_to_stack(*class_weights));
  writer.finish();
}

HeadParams load_checkpoint(const std::filesystem::path& dir,
                           const HeadConfig& config, Matrix* class_weights) {
  config.validate();
  const auto rows = read_csv(dir / "index.csv");
  require(!rows.empty() && rows[0] == std::vector<std::string>{"tensor_name", "path"},
          "bad checkpoint index in " + dir.string());
  std::map<std::string, FeatureStack> tensors;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    require(rows[i].size() == 2, "bad checkpoint index row in " + dir.string());
    tensors.emplace(rows[i][0], read_features(dir / rows[i][1]));
  }

  auto take = [&](const std::string& name) -> const FeatureStack& {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw format_error("checkpoint missing tensor '" + name + "' in " +
                         dir.string());
    return it->second;
  };

  HeadParams params = zero_head_grads(config);
  params.layer_logits = stack_to_vector(take("layer_logits"));
  require(params.layer_logits.size() == config.n_layers,
          "checkpoint layer_logits length mismatch");

  if (config.pooling.kind == PoolingKind::attentive_stats) {
    const Matrix expect = params.attentive.score_w;
    params.attentive.score_w = stack_to_matrix(take("attentive.score_w"));
    require(params.attentive.score_w.same_shape(expect),
            "checkpoint attentive.score_w shape mismatch");
    params.attentive.score_b = stack_to_vector(take("attentive.score_b"));
    params.attentive.score_v = stack_to_vector(take("attentive.score_v"));
    require(params.attentive.score_b.size() == config.pooling.attention_hidden &&
                params.attentive.score_v.size() == config.pooling.attention_hidden,
            "checkpoint attentive vector shape mismatch");
  } else if (config.pooling.kind == PoolingKind::channel_context_stats) {
    const Matrix expect_w1 = params.channel_context.w1;
    const Matrix expect_w2 = params.channel_context.w2;
    params.channel_context.w1 = stack_to_matrix(take("channel_context.w1"));
    params.channel_context.b1 = stack_to_vector(take("channel_context.b1"));
    params.channel_context.w2 = stack_to_matrix(take("channel_context.w2"));
    params.channel_context.b2 = stack_to_vector(take("channel_context.b2"));
    require(params.channel_context.w1.same_shape(expect_w1) &&
                params.channel_context.w2.same_shape(expect_w2) &&
                params.channel_context.b1.size() == config.pooling.attention_hidden &&
                params.channel_context.b2.size() == config.pool_input_dim(),
            "checkpoint channel_context shape mismatch");
  }

  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i);
    const Matrix expect = params.encoder[i].w;
    params.encoder[i].w = stack_to_matrix(take(prefix + ".w"));
    params.encoder[i].b = stack_to_vector(take(prefix + ".b"));
    require(params.encoder[i].w.same_shape(expect) &&
                params.encoder[i].b.size() == config.frame_encoder->hidden,
            "checkpoint encoder shape mismatch");
  }

  {
    const Matrix expect = params.embed_w;
    params.embed_w = stack_to_matrix(take("embed_w"));
    require(params.embed_w.same_shape(expect), "checkpoint embed_w shape mismatch");
    params.embed_b = stack_to_vector(take("embed_b"));
    require(params.embed_b.size() == config.embed_dim,
            "checkpoint embed_b length mismatch");
  }

  if (class_weights) {
    auto it = tensors.find("amsoftmax.class_weights");
    if (it == tensors.end())
      throw format_error("checkpoint has no amsoftmax.class_weights in " +
                         dir.string());
    *class_weights = stack_to_matrix(it->second);
  }
  return params;
}

}  // namespace svkit
