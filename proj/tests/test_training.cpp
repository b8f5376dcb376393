#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "svkit/error.hpp"
#include "svkit/gradcheck.hpp"
#include "svkit/training.hpp"
#include "test_util.hpp"

using namespace svkit;
using svtest::TempDir;

namespace {

AMSoftmaxParams two_class_params(double scale, double margin) {
  AMSoftmaxParams params;
  params.scale = scale;
  params.margin = margin;
  params.class_weights = Matrix(2, 2);
  params.class_weights(0, 0) = 1.0;
  params.class_weights(0, 1) = 0.0;
  params.class_weights(1, 0) = 0.0;
  params.class_weights(1, 1) = 1.0;
  return params;
}

}  // namespace

TEST_CASE("margin-free unit-scale loss on equidistant classes is ln 2") {
  AMSoftmaxParams params;
  params.scale = 1.0;
  params.margin = 0.0;
  params.class_weights = Matrix(2, 2);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  params.class_weights(0, 0) = inv_sqrt2;
  params.class_weights(0, 1) = inv_sqrt2;
  params.class_weights(1, 0) = inv_sqrt2;
  params.class_weights(1, 1) = -inv_sqrt2;

  const auto result = amsoftmax_loss({1.0, 0.0}, 0, params);
  CHECK(std::fabs(result.loss - std::log(2.0)) < 1e-12);
}

TEST_CASE("paper-scale loss on a perfect embedding is log(1 + exp(-18))") {
  const auto params = two_class_params(30.0, 0.4);
  const auto result = amsoftmax_loss({1.0, 0.0}, 0, params);
  CHECK(std::fabs(result.loss - std::log1p(std::exp(-18.0))) < 1e-12);
  CHECK(result.loss == doctest::Approx(1.5229979628736488e-08).epsilon(1e-6));
}

TEST_CASE("loss is positive, finite, and scale-invariant") {
  Rng rng(3);
  for (int round = 0; round < 30; ++round) {
    AMSoftmaxParams params;
    params.scale = 30.0;
    params.margin = 0.4;
    const std::size_t n = 2 + rng.uniform_int(4), d = 2 + rng.uniform_int(4);
    params.class_weights = Matrix(n, d);
    for (auto& v : params.class_weights.data) v = rng.uniform(-1.0, 1.0) + 0.1;
    std::vector<double> embedding(d);
    for (auto& v : embedding) v = rng.uniform(-1.0, 1.0) + 0.1;
    const std::size_t label = rng.uniform_int(n);

    const double loss = amsoftmax_loss(embedding, label, params).loss;
    CHECK(loss > 0.0);
    CHECK(std::isfinite(loss));

    auto scaled = embedding;
    for (auto& v : scaled) v *= 731.0;
    const double rescaled = amsoftmax_loss(scaled, label, params).loss;
    CHECK(std::fabs(loss - rescaled) < 1e-10);
  }
}

TEST_CASE("shrinking the margin never increases the loss") {
  Rng rng(4);
  for (int round = 0; round < 30; ++round) {
    AMSoftmaxParams params;
    params.scale = 30.0;
    params.class_weights = Matrix(3, 3);
    for (auto& v : params.class_weights.data) v = rng.uniform(-1.0, 1.0) + 0.05;
    std::vector<double> embedding{rng.uniform(-1.0, 1.0) + 0.05,
                                  rng.uniform(-1.0, 1.0),
                                  rng.uniform(-1.0, 1.0)};
    const std::size_t label = rng.uniform_int(3);

    params.margin = 0.2;
    const double small = amsoftmax_loss(embedding, label, params).loss;
    params.margin = 0.4;
    const double large = amsoftmax_loss(embedding, label, params).loss;
    CHECK(small <= large + 1e-15);
  }
}

TEST_CASE("degenerate loss inputs are rejected") {
  const auto params = two_class_params(30.0, 0.4);
  CHECK_THROWS_AS(amsoftmax_loss({0.0, 0.0}, 0, params), invariant_error);
  CHECK_THROWS_AS(amsoftmax_loss({1.0, 0.0}, 2, params), invariant_error);

  auto zero_row = params;
  zero_row.class_weights(1, 0) = 0.0;
  zero_row.class_weights(1, 1) = 0.0;
  CHECK_THROWS_AS(amsoftmax_loss({1.0, 0.0}, 0, zero_row), invariant_error);
}

TEST_CASE("loss gradients match finite differences on a random 3-class case") {
  Rng rng(6);
  AMSoftmaxParams params;
  params.scale = 30.0;
  params.margin = 0.4;
  params.class_weights = Matrix(3, 3);
  for (auto& v : params.class_weights.data) v = rng.uniform(0.2, 1.0);
  std::vector<double> embedding{0.4, -0.7, 0.5};
  const std::size_t label = 1;

  Matrix d_weights(3, 3);
  const auto result = amsoftmax_loss(embedding, label, params, &d_weights);

  auto eval = [&] { return amsoftmax_loss(embedding, label, params).loss; };
  const auto fd_embed = finite_difference_gradient(eval, embedding, 1e-6);
  CHECK(gradient_rel_error(result.d_embedding, fd_embed) <= 1e-5);
  const auto fd_weights =
      finite_difference_gradient(eval, params.class_weights.data, 1e-6);
  CHECK(gradient_rel_error(d_weights.data, fd_weights) <= 1e-5);
}

TEST_CASE("adamw hand cases") {
  AdamWConfig config;
  config.lr = 0.1;
  config.beta1 = 0.9;
  config.beta2 = 0.999;
  config.eps = 1e-8;

  SUBCASE("zero gradient and zero decay fix the parameters") {
    config.weight_decay = 0.0;
    std::vector<double> p{1.25, -3.5}, g{0.0, 0.0}, m(2, 0.0), v(2, 0.0);
    adamw_step(p, g, m, v, 1, config);
    CHECK(p == std::vector<double>{1.25, -3.5});
  }

  SUBCASE("bias-corrected first step moves by about lr") {
    config.weight_decay = 0.0;
    std::vector<double> p{1.0}, g{1.0}, m(1, 0.0), v(1, 0.0);
    adamw_step(p, g, m, v, 1, config);
    CHECK(std::fabs(p[0] - 0.9) < 1e-6);
  }

  SUBCASE("decay applies without any gradient signal") {
    config.weight_decay = 0.1;
    std::vector<double> p{1.0}, g{0.0}, m(1, 0.0), v(1, 0.0);
    adamw_step(p, g, m, v, 1, config);
    CHECK(p[0] == 0.99);
  }

  SUBCASE("non-finite gradients abort") {
    std::vector<double> p{1.0}, g{std::nan("")}, m(1, 0.0), v(1, 0.0);
    CHECK_THROWS_AS(adamw_step(p, g, m, v, 1, config), invariant_error);
  }
}

namespace {

Manifest separable_corpus(const TempDir& dir, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_speakers = 6;
  spec.utts_per_speaker = 6;
  spec.layers = 2;
  spec.dim = 8;
  spec.frames_min = 20;
  spec.frames_max = 30;
  spec.speaker_scale = 1.0;
  spec.frame_noise = 0.3;
  spec.layer_mix = {1.0, 0.5};
  spec.seed = seed;
  return generate_synthetic_corpus(spec, dir.path());
}

HeadConfig small_head() {
  HeadConfig config;
  config.input_dim = 8;
  config.n_layers = 2;
  config.embed_dim = 16;
  config.pooling.kind = PoolingKind::stats;
  config.pooling.eps_std = 1e-6;
  return config;
}

TrainConfig small_train(std::uint64_t seed) {
  TrainConfig config;
  config.total_steps = 400;
  config.checkpoint_every = 200;
  config.batch_size = 8;
  config.crop_frames = 24;
  config.seed = seed;
  return config;
}

}  // namespace

TEST_CASE("training reduces the loss on a separable corpus") {
  TempDir corpus, run;
  const auto manifest = separable_corpus(corpus, 51);
  const auto result = train(manifest, small_train(7), small_head(), AdamWConfig{},
                            run.path() / "run");

  REQUIRE(result.losses.size() == 400);
  const double head_mean =
      std::accumulate(result.losses.begin(), result.losses.begin() + 100, 0.0) / 100.0;
  const double tail_mean =
      std::accumulate(result.losses.end() - 100, result.losses.end(), 0.0) / 100.0;
  CHECK(tail_mean < head_mean);

  REQUIRE(result.checkpoints.size() == 2);
  CHECK(result.checkpoints[0].first == 200);
  CHECK(result.checkpoints[1].first == 400);
  CHECK(std::filesystem::exists(result.log_path));
}

TEST_CASE("training is bit-reproducible under a fixed seed") {
  TempDir corpus, run_a, run_b;
  const auto manifest = separable_corpus(corpus, 52);
  const auto config = small_train(11);

  TrainConfig short_config = config;
  short_config.total_steps = 60;
  short_config.checkpoint_every = 30;

  const auto a = train(manifest, short_config, small_head(), AdamWConfig{},
                       run_a.path() / "run");
  const auto b = train(manifest, short_config, small_head(), AdamWConfig{},
                       run_b.path() / "run");
  CHECK(a.losses == b.losses);
  CHECK(svtest::same_tree(run_a.path(), run_b.path()));
}

TEST_CASE("single-speaker training is rejected") {
  TempDir corpus, run;
  SynthSpec spec;
  spec.n_speakers = 1;
  spec.utts_per_speaker = 4;
  spec.layers = 1;
  spec.dim = 4;
  spec.frames_min = 10;
  spec.frames_max = 12;
  spec.layer_mix = {1.0};
  spec.seed = 1;
  const auto manifest = generate_synthetic_corpus(spec, corpus.path());

  HeadConfig head = small_head();
  head.input_dim = 4;
  head.n_layers = 1;
  CHECK_THROWS_AS(train(manifest, small_train(1), head, AdamWConfig{}, run.path()),
                  invariant_error);
}

TEST_CASE("feature/config mismatches surface before step one") {
  TempDir corpus, run;
  const auto manifest = separable_corpus(corpus, 53);
  HeadConfig wrong = small_head();
  wrong.input_dim = 5;
  CHECK_THROWS_AS(train(manifest, small_train(2), wrong, AdamWConfig{}, run.path()),
                  invariant_error);
}

TEST_CASE("best-checkpoint selection minimizes EER with earliest-step ties") {
  TempDir corpus, run;
  const auto manifest = separable_corpus(corpus, 54);
  const auto head = small_head();
  auto config = small_train(13);
  config.total_steps = 120;
  config.checkpoint_every = 40;
  const auto result = train(manifest, config, head, AdamWConfig{},
                            run.path() / "run");
  REQUIRE(result.checkpoints.size() == 3);

  const auto trials = build_trials(manifest, 0.0, 1.0, 5, 21);

  // Independent recomputation per checkpoint.
  std::vector<double> eers;
  for (const auto& [step, dir] : result.checkpoints) {
    const auto params = load_checkpoint(dir, head);
    const auto embeddings = extract_embeddings(manifest, params, head);
    eers.push_back(compute_eer(score_trials(embeddings, trials)).eer);
  }

  const auto best = select_best_checkpoint(result.checkpoints, trials, manifest, head);
  std::size_t expected = 0;
  for (std::size_t i = 1; i < eers.size(); ++i)
    if (eers[i] < eers[expected]) expected = i;
  CHECK(best.index == expected);
  CHECK(best.eer == eers[expected]);
  CHECK(best.step == result.checkpoints[expected].first);

  SUBCASE("single checkpoint returns trivially") {
    const decltype(result.checkpoints) one{result.checkpoints[0]};
    const auto single = select_best_checkpoint(one, trials, manifest, head);
    CHECK(single.index == 0);
    CHECK(single.eer == eers[0]);
  }

  SUBCASE("empty checkpoint list is rejected") {
    CHECK_THROWS_AS(select_best_checkpoint({}, trials, manifest, head),
                    invariant_error);
  }
}

TEST_CASE("full-pipeline gradient check stays within tolerance") {
  const auto cases = run_gradient_checks(777, 3);
  for (const auto& c : cases) {
    if (c.name != "head_pipeline") continue;
    CHECK(c.max_rel_err <= 1e-4);
  }
}
