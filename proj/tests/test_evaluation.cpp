#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "svkit/error.hpp"
#include "svkit/evaluation.hpp"
#include "svkit/feature_store.hpp"
#include "svkit/rng.hpp"
#include "svkit/util.hpp"
#include "test_util.hpp"

using namespace svkit;
using svtest::TempDir;

TEST_CASE("cosine score basics") {
  const std::vector<double> a{1.0, 2.0, -3.0};
  CHECK(cosine_score(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<double> x{1.0, 0.0}, y{0.0, 5.0};
  CHECK(cosine_score(x, y) == 0.0);

  const std::vector<double> u{1.0, 0.0}, v{1.0, 1.0};
  CHECK(cosine_score(u, v) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(cosine_score(zero, v), invariant_error);
  CHECK_THROWS_AS(cosine_score(v, zero), invariant_error);
}

TEST_CASE("cosine score ignores positive rescaling") {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> a(4), b(4);
    for (auto& v : a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);
    if (norm(a) == 0.0 || norm(b) == 0.0) continue;
    auto scaled = a;
    const double factor = rng.uniform(0.001, 1000.0);
    for (auto& v : scaled) v *= factor;
    CHECK(std::fabs(cosine_score(a, b) - cosine_score(scaled, b)) < 1e-12);
  }
}

TEST_CASE("EER hand cases") {
  SUBCASE("perfect separation") {
    const auto report = compute_eer({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    CHECK(report.eer == 0.0);
    CHECK(report.n_target == 2);
    CHECK(report.n_nontarget == 2);
  }
  SUBCASE("perfect anti-separation") {
    const auto report = compute_eer({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1});
    CHECK(report.eer == 1.0);
  }
  SUBCASE("half-and-half crossing") {
    const auto report = compute_eer({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0});
    CHECK(report.eer == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("missing class") {
    CHECK_THROWS_AS(compute_eer({0.5, 0.4}, {1, 1}), invariant_error);
    CHECK_THROWS_AS(compute_eer({0.5, 0.4}, {0, 0}), invariant_error);
  }
}

TEST_CASE("EER agrees with the brute-force sweep oracle") {
  Rng rng(31);
  for (int round = 0; round < 300; ++round) {
    const std::size_t n = 2 + rng.uniform_int(199);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool quantized = rng.uniform() < 0.5;
    bool has_target = false, has_nontarget = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = quantized ? 0.1 * static_cast<double>(rng.uniform_int(11))
                            : rng.uniform(-1.0, 1.0);
      labels[i] = rng.uniform() < 0.4 ? 1 : 0;
      (labels[i] == 1 ? has_target : has_nontarget) = true;
    }
    if (!has_target) labels[0] = 1;
    if (!has_nontarget) labels[n - 1] = 0;

    const auto report = compute_eer(scores, labels);
    const double oracle = svtest::eer_bruteforce(scores, labels);
    CHECK(std::fabs(report.eer - oracle) <= 1e-9);
    CHECK(report.eer >= 0.0);
    CHECK(report.eer <= 1.0);
  }
}

TEST_CASE("EER is invariant under strictly increasing score transforms") {
  Rng rng(77);
  for (int round = 0; round < 50; ++round) {
    const std::size_t n = 4 + rng.uniform_int(60);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform(-1.0, 1.0);
      labels[i] = i % 3 == 0 ? 1 : 0;
    }
    auto transformed = scores;
    for (auto& s : transformed) s = std::exp(2.0 * s) + 5.0;
    CHECK(compute_eer(scores, labels).eer == compute_eer(transformed, labels).eer);
  }
}

TEST_CASE("relative improvement matches the printed table arithmetic") {
  CHECK(fmt_fixed(rel_improvement(7.2, 4.4), 1) == "38.9");
  CHECK(fmt_fixed(rel_improvement(7.2, 11.4), 1) == "-58.3");
  CHECK(fmt_fixed(rel_improvement(8000000.0, 199000.0), 2) == "97.51");
  CHECK(rel_improvement(3.3, 3.3) == 0.0);
  CHECK_THROWS_AS(rel_improvement(0.0, 1.0), invariant_error);
  CHECK_THROWS_AS(rel_improvement(-2.0, 1.0), invariant_error);
}

TEST_CASE("spearman rank correlation") {
  SUBCASE("identical rankings") {
    const auto r = spearman_rho({1, 2, 3, 4, 5}, {10, 20, 30, 40, 50});
    CHECK(r.rho == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.p_two_sided == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("reversed rankings") {
    const auto r = spearman_rho({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1});
    CHECK(r.rho == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("reference values without ties") {
    // scipy.stats.spearmanr([1,2,3,4,5], [2,1,4,3,5])
    const auto r = spearman_rho({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5});
    CHECK(r.rho == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(r.p_two_sided == doctest::Approx(0.10408803866182788).epsilon(1e-9));
  }
  SUBCASE("reference values with ties") {
    // scipy.stats.spearmanr([1,2,2,4], [10,9,7,8])
    const auto r = spearman_rho({1.0, 2.0, 2.0, 4.0}, {10.0, 9.0, 7.0, 8.0});
    CHECK(r.rho == doctest::Approx(-0.632455532033676).epsilon(1e-12));
    CHECK(r.p_two_sided == doctest::Approx(0.367544467966324).epsilon(1e-9));
  }
  SUBCASE("symmetry") {
    Rng rng(9);
    std::vector<double> x(8), y(8);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : y) v = rng.uniform(-1.0, 1.0);
    CHECK(spearman_rho(x, y).rho == doctest::Approx(spearman_rho(y, x).rho));
    CHECK(spearman_rho(x, y).rho >= -1.0);
    CHECK(spearman_rho(x, y).rho <= 1.0);
  }
  SUBCASE("degenerate inputs") {
    CHECK_THROWS_AS(spearman_rho({1, 1, 1}, {1, 2, 3}), invariant_error);
    CHECK_THROWS_AS(spearman_rho({1, 2, 3}, {4, 4, 4}), invariant_error);
    CHECK_THROWS_AS(spearman_rho({1, 2}, {1, 2}), invariant_error);
    CHECK_THROWS_AS(spearman_rho({1, 2, 3}, {1, 2}), invariant_error);
  }
}

TEST_CASE("score files round-trip exactly") {
  TempDir dir;
  ScoreSet set;
  set.trials = {{1, "a", "b"}, {0, "c", "d"}};
  set.scores = {0.12345678901234567, -0.5};
  const auto path = dir.path() / "scores.txt";
  write_scores(set, path);
  const auto back = read_scores(path);
  CHECK(back.trials == set.trials);
  CHECK(back.scores == set.scores);

  std::ofstream(path) << "0.5 7 a b\n";
  CHECK_THROWS_AS(read_scores(path), parse_error);
}

namespace {

Manifest synth(const TempDir& dir, const std::vector<double>& layer_mix,
               double noise, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_speakers = 8;
  spec.utts_per_speaker = 6;
  spec.layers = layer_mix.size();
  spec.dim = 6;
  spec.frames_min = 15;
  spec.frames_max = 25;
  spec.speaker_scale = 1.0;
  spec.frame_noise = noise;
  spec.layer_mix = layer_mix;
  spec.seed = seed;
  return generate_synthetic_corpus(spec, dir.path());
}

}  // namespace

TEST_CASE("zero-shot evaluation separates a noiseless corpus perfectly") {
  TempDir dir;
  const auto manifest = synth(dir, {1.0, 0.5}, 0.0, 41);
  const auto trials = build_trials(manifest, 0.0, 1.0, 5, 8);
  const auto result = zero_shot_eval(manifest, trials);
  REQUIRE(result.report.per_layer.size() == 2);
  CHECK(result.report.per_layer.at(0) == 0.0);
  CHECK(result.report.per_layer.at(1) == 0.0);
  CHECK(result.report.eer == 0.0);
}

TEST_CASE("zero-shot evaluation flags the informative layer") {
  TempDir dir;
  const auto manifest = synth(dir, {1.0, 0.0}, 0.5, 43);
  const auto trials = build_trials(manifest, 0.0, 1.0, 5, 8);
  REQUIRE(trials.trials.size() >= 500);
  const auto result = zero_shot_eval(manifest, trials);
  CHECK(result.report.best_layer == 0);
  CHECK(result.report.per_layer.at(0) < 0.2);
  CHECK(std::fabs(result.report.per_layer.at(1) - 0.5) <= 0.05);

  SUBCASE("single-layer request") {
    const auto single = zero_shot_eval(manifest, trials, 1);
    REQUIRE(single.report.per_layer.size() == 1);
    CHECK(single.report.per_layer.at(1) == result.report.per_layer.at(1));
    CHECK_THROWS_AS(zero_shot_eval(manifest, trials, 2), invariant_error);
  }

  SUBCASE("threaded scoring matches single-threaded") {
    const auto threaded = zero_shot_eval(manifest, trials, std::nullopt, 0.0, 4);
    CHECK(threaded.report.per_layer == result.report.per_layer);
  }

  SUBCASE("score files recompute to the same EER") {
    TempDir out;
    for (const auto& [layer, set] : result.layer_scores) {
      const auto path = out.path() / ("scores_" + std::to_string(layer) + ".txt");
      write_scores(set, path);
      const auto reread = compute_eer(read_scores(path));
      CHECK(reread.eer == result.report.per_layer.at(layer));
    }
  }
}
