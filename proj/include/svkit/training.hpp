#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "svkit/evaluation.hpp"
#include "svkit/head.hpp"

namespace svkit {

// Additive-margin softmax over cosine logits: the target logit is
// s*(cos - m), every other logit s*cos, evaluated with stable log-sum-exp.
struct AMSoftmaxParams {
  Matrix class_weights;  // n_speakers x embed_dim
  double scale = 30.0;
  double margin = 0.4;
};

struct AMSoftmaxResult {
  double loss = 0.0;
  std::vector<double> d_embedding;
};

// Gradients for the class weights accumulate into *d_class_weights when given.
AMSoftmaxResult amsoftmax_loss(const std::vector<double>& embedding,
                               std::size_t label, const AMSoftmaxParams& params,
                               Matrix* d_class_weights = nullptr);

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// One decoupled-weight-decay update on a single tensor. `step` is the
// 1-based count including this update; moments persist across calls.
void adamw_step(std::span<double> params, std::span<const double> grads,
                std::vector<double>& first_moment,
                std::vector<double>& second_moment, std::uint64_t step,
                const AdamWConfig& config);

// Moment buffers for a list of tensors updated together.
struct OptimState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  AdamWConfig config;

  void init(const std::vector<std::size_t>& sizes) {
    first_moment.assign(sizes.size(), {});
    second_moment.assign(sizes.size(), {});
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      first_moment[i].assign(sizes[i], 0.0);
      second_moment[i].assign(sizes[i], 0.0);
    }
  }
};

struct TrainConfig {
  std::size_t total_steps = 1000;
  std::size_t checkpoint_every = 500;
  std::size_t batch_size = 40;
  std::size_t crop_frames = 300;
  double am_scale = 30.0;
  double am_margin = 0.4;
  std::uint64_t seed = 0;

  void validate() const {
    require(total_steps >= 1 && checkpoint_every >= 1 && batch_size >= 1 &&
                crop_frames >= 1,
            "TrainConfig: counts must be >= 1");
  }
};

struct TrainResult {
  std::vector<double> losses;  // one per step
  std::vector<std::pair<std::uint64_t, std::filesystem::path>> checkpoints;
  std::filesystem::path log_path;
  std::vector<std::string> speaker_order;  // label index -> speaker_id
};

// AM-softmax training of the head over the manifest's speakers. Fully
// deterministic given the seed; checkpoints land in out_dir/ckpt_<step>/.
TrainResult train(const Manifest& manifest, const TrainConfig& config,
                  const HeadConfig& head_config, const AdamWConfig& optim,
                  const std::filesystem::path& out_dir);

struct BestCheckpoint {
  std::size_t index = 0;
  std::uint64_t step = 0;
  double eer = 1.0;
};

// Minimum-EER checkpoint on the given trials; ties resolve to the earliest
// step.
BestCheckpoint select_best_checkpoint(
    const std::vector<std::pair<std::uint64_t, std::filesystem::path>>& checkpoints,
    const TrialList& trials, const Manifest& manifest,
    const HeadConfig& head_config, std::size_t threads = 1);

}  // namespace svkit
