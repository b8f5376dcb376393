#include "svkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "svkit/error.hpp"
#include "svkit/util.hpp"

namespace svkit {

AMSoftmaxResult amsoftmax_loss(const std::vector<double>& embedding,
                               std::size_t label, const AMSoftmaxParams& params,
                               Matrix* d_class_weights) {
  const std::size_t n_classes = params.class_weights.rows;
  const std::size_t dim = params.class_weights.cols;
  require(n_classes >= 2, "amsoftmax_loss: need at least 2 classes");
  require(label < n_classes, "amsoftmax_loss: label out of range");
  require(embedding.size() == dim, "amsoftmax_loss: embedding width mismatch");
  require(params.scale > 0.0, "amsoftmax_loss: scale must be positive");
  require(params.margin >= 0.0, "amsoftmax_loss: margin must be nonnegative");
  if (d_class_weights)
    require(d_class_weights->same_shape(params.class_weights),
            "amsoftmax_loss: gradient shape mismatch");

  const double embed_norm = norm(embedding);
  if (embed_norm == 0.0)
    throw invariant_error("amsoftmax_loss: zero-norm embedding");

  std::vector<double> row_norms(n_classes), cosines(n_classes), logits(n_classes);
  for (std::size_t j = 0; j < n_classes; ++j) {
    const std::span<const double> row(&params.class_weights.data[j * dim], dim);
    row_norms[j] = norm(row);
    if (row_norms[j] == 0.0)
      throw invariant_error("amsoftmax_loss: zero-norm class weight row");
    cosines[j] = dot(embedding, row) / (embed_norm * row_norms[j]);
    logits[j] = params.scale * cosines[j];
  }
  logits[label] = params.scale * (cosines[label] - params.margin);

  double peak = logits[0];
  for (double v : logits) peak = std::max(peak, v);
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  const double lse = peak + std::log(total);

  AMSoftmaxResult result;
  result.loss = lse - logits[label];
  result.d_embedding.assign(dim, 0.0);

  for (std::size_t j = 0; j < n_classes; ++j) {
    const double p = std::exp(logits[j] - lse);
    const double d_cos = params.scale * (p - (j == label ? 1.0 : 0.0));
    const std::span<const double> row(&params.class_weights.data[j * dim], dim);
    const double inv_joint = 1.0 / (embed_norm * row_norms[j]);
    for (std::size_t k = 0; k < dim; ++k) {
      result.d_embedding[k] +=
          d_cos * (row[k] * inv_joint -
                   cosines[j] * embedding[k] / (embed_norm * embed_norm));
      if (d_class_weights)
        (*d_class_weights)(j, k) +=
            d_cos * (embedding[k] * inv_joint -
                     cosines[j] * row[k] / (row_norms[j] * row_norms[j]));
    }
  }
  return result;
}

void adamw_step(std::span<double> params, std::span<const double> grads,
                std::vector<double>& first_moment,
                std::vector<double>& second_moment, std::uint64_t step,
                const AdamWConfig& config) {
  require(params.size() == grads.size() && params.size() == first_moment.size() &&
              params.size() == second_moment.size(),
          "adamw_step: buffer sizes disagree");
  require(step >= 1, "adamw_step: step must be >= 1");
  for (double g : grads)
    if (!std::isfinite(g))
      throw invariant_error("adamw_step: non-finite gradient; aborting update");

  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    first_moment[i] = config.beta1 * first_moment[i] + (1.0 - config.beta1) * grads[i];
    second_moment[i] =
        config.beta2 * second_moment[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double m_hat = first_moment[i] / bias1;
    const double v_hat = second_moment[i] / bias2;
    params[i] -= config.lr * (m_hat / (std::sqrt(v_hat) + config.eps) +
                              config.weight_decay * params[i]);
  }
}

namespace {

// Fixed flattening order shared by the optimizer and param_count cross-checks.
struct TensorRef {
  double* data;
  std::size_t size;
};

std::vector<TensorRef> flatten(HeadParams& params, Matrix* class_weights) {
  std::vector<TensorRef> refs;
  auto add_vec = [&](std::vector<double>& v) {
    if (!v.empty()) refs.push_back({v.data(), v.size()});
  };
  auto add_mat = [&](Matrix& m) {
    if (!m.empty()) refs.push_back({m.data.data(), m.data.size()});
  };
  add_vec(params.layer_logits);
  add_mat(params.attentive.score_w);
  add_vec(params.attentive.score_b);
  add_vec(params.attentive.score_v);
  add_mat(params.channel_context.w1);
  add_vec(params.channel_context.b1);
  add_mat(params.channel_context.w2);
  add_vec(params.channel_context.b2);
  for (auto& block : params.encoder) {
    add_mat(block.w);
    add_vec(block.b);
  }
  add_mat(params.embed_w);
  add_vec(params.embed_b);
  if (class_weights) add_mat(*class_weights);
  return refs;
}

FeatureStack crop_stack(const FeatureStack& stack, std::size_t crop_frames,
                        std::size_t offset) {
  FeatureStack out(stack.layers, static_cast<std::uint32_t>(crop_frames), stack.dim);
  for (std::size_t l = 0; l < stack.layers; ++l)
    for (std::size_t t = 0; t < crop_frames; ++t) {
      const std::size_t src = offset + t;
      if (src >= stack.frames) break;  // zero padding beyond the utterance
      for (std::size_t d = 0; d < stack.dim; ++d)
        out.at(l, t, d) = stack.at(l, src, d);
    }
  return out;
}

}  // namespace

TrainResult train(const Manifest& manifest, const TrainConfig& config,
                  const HeadConfig& head_config, const AdamWConfig& optim,
                  const std::filesystem::path& out_dir) {
  config.validate();
  head_config.validate();

  // Labels follow sorted speaker ids.
  std::set<std::string> speaker_set;
  for (const auto& rec : manifest.records) speaker_set.insert(rec.speaker_id);
  require(speaker_set.size() >= 2, "train: need at least 2 speakers");
  std::vector<std::string> speaker_order(speaker_set.begin(), speaker_set.end());
  std::map<std::string, std::size_t> speaker_index;
  for (std::size_t i = 0; i < speaker_order.size(); ++i)
    speaker_index.emplace(speaker_order[i], i);

  // Surface data problems before step 1.
  std::vector<FeatureStack> stacks(manifest.records.size());
  std::vector<std::size_t> labels(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    stacks[i] = read_features(manifest.resolve(manifest.records[i]));
    require(stacks[i].layers == head_config.n_layers &&
                stacks[i].dim == head_config.input_dim,
            "train: feature shape of " + manifest.records[i].utt_id +
                " does not match head config");
    labels[i] = speaker_index.at(manifest.records[i].speaker_id);
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output directory: " + out_dir.string());

  Rng rng(config.seed);
  HeadParams params = init_head_params(head_config, rng);
  AMSoftmaxParams am;
  am.scale = config.am_scale;
  am.margin = config.am_margin;
  am.class_weights = Matrix(speaker_order.size(), head_config.embed_dim);
  for (std::size_t j = 0; j < am.class_weights.rows; ++j) {
    std::span<double> row(&am.class_weights.data[j * am.class_weights.cols],
                          am.class_weights.cols);
    for (auto& v : row) v = rng.gaussian();
    const double n = norm(row);
    if (n > 0.0)
      for (auto& v : row) v /= n;
  }

  auto refs = flatten(params, &am.class_weights);
  OptimState state;
  state.config = optim;
  std::vector<std::size_t> sizes;
  for (const auto& ref : refs) sizes.push_back(ref.size);
  state.init(sizes);

  TrainResult result;
  result.speaker_order = speaker_order;
  result.log_path = out_dir / "train_log.csv";
  std::ofstream log(result.log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw io_error("cannot open training log: " + result.log_path.string());
  log << "step,loss\n";

  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    std::vector<std::size_t> batch(config.batch_size);
    for (auto& idx : batch)
      idx = static_cast<std::size_t>(rng.uniform_int(stacks.size()));

    HeadParams grads = zero_head_grads(head_config);
    Matrix d_class(am.class_weights.rows, am.class_weights.cols);
    double loss_sum = 0.0;
    for (std::size_t idx : batch) {
      const auto& full = stacks[idx];
      const std::size_t offset =
          full.frames > config.crop_frames
              ? static_cast<std::size_t>(
                    rng.uniform_int(full.frames - config.crop_frames + 1))
              : 0;
      const FeatureStack cropped = crop_stack(full, config.crop_frames, offset);
      const auto embedding = head_forward(cropped, params, head_config);
      auto sample = amsoftmax_loss(embedding, labels[idx], am, &d_class);
      loss_sum += sample.loss;
      for (auto& g : sample.d_embedding) g *= inv_batch;
      head_backward(cropped, params, head_config, sample.d_embedding, &grads);
    }
    for (auto& g : d_class.data) g *= inv_batch;

    const double loss = loss_sum * inv_batch;
    result.losses.push_back(loss);
    log << step << ',' << fmt_double(loss) << '\n';

    auto grad_refs = flatten(grads, &d_class);
    require(grad_refs.size() == refs.size(), "train: gradient layout mismatch");
    state.step = step;
    for (std::size_t i = 0; i < refs.size(); ++i)
      adamw_step(std::span(refs[i].data, refs[i].size),
                 std::span(grad_refs[i].data, grad_refs[i].size),
                 state.first_moment[i], state.second_moment[i], step, optim);

    if (step % config.checkpoint_every == 0 || step == config.total_steps) {
      const auto dir = out_dir / ("ckpt_" + std::to_string(step));
      save_checkpoint(dir, params, &am.class_weights);
      if (result.checkpoints.empty() || result.checkpoints.back().second != dir)
        result.checkpoints.emplace_back(step, dir);
    }
  }
  log.flush();
  if (!log) throw io_error("write failed: " + result.log_path.string());
  return result;
}

BestCheckpoint select_best_checkpoint(
    const std::vector<std::pair<std::uint64_t, std::filesystem::path>>& checkpoints,
    const TrialList& trials, const Manifest& manifest,
    const HeadConfig& head_config, std::size_t threads) {
  require(!checkpoints.empty(), "select_best_checkpoint: no checkpoints given");
  BestCheckpoint best;
  bool first = true;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto params = load_checkpoint(checkpoints[i].second, head_config);
    const auto embeddings =
        extract_embeddings(manifest, params, head_config, threads);
    const auto report = compute_eer(score_trials(embeddings, trials));
    if (first || report.eer < best.eer) {
      best.index = i;
      best.step = checkpoints[i].first;
      best.eer = report.eer;
      first = false;
    }
  }
  return best;
}

}  // namespace svkit
