#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "svkit/error.hpp"
#include "svkit/gradcheck.hpp"
#include "svkit/pooling.hpp"
#include "svkit/rng.hpp"

using namespace svkit;

namespace {

FeatureStack two_layer_stack(std::initializer_list<double> layer0,
                             std::initializer_list<double> layer1,
                             std::uint32_t frames, std::uint32_t dim) {
  FeatureStack stack(2, frames, dim);
  std::size_t i = 0;
  for (double v : layer0) stack.values[i++] = static_cast<float>(v);
  for (double v : layer1) stack.values[i++] = static_cast<float>(v);
  return stack;
}

Matrix frames_from(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t t = 0;
  for (const auto& row : rows) {
    std::size_t d = 0;
    for (double v : row) m(t, d++) = v;
    ++t;
  }
  return m;
}

}  // namespace

TEST_CASE("layer weights normalize to a convex combination") {
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    std::vector<double> logits(1 + rng.uniform_int(6));
    for (auto& v : logits) v = rng.uniform(-4.0, 4.0);
    const auto weights = normalized_layer_weights(logits);
    double total = 0.0;
    for (double w : weights) {
      CHECK(w >= 0.0);
      total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("single-layer weighted sum is the identity") {
  FeatureStack stack(1, 2, 2);
  stack.values = {1.5f, -2.0f, 0.25f, 4.0f};
  const auto out = layer_weighted_sum(stack, {3.7});
  CHECK(out(0, 0) == 1.5);
  CHECK(out(0, 1) == -2.0);
  CHECK(out(1, 0) == 0.25);
  CHECK(out(1, 1) == 4.0);
}

TEST_CASE("equal logits average the layers") {
  const auto stack = two_layer_stack({4.0, 0.0}, {0.0, 4.0}, 1, 2);
  const auto out = layer_weighted_sum(stack, {0.3, 0.3});
  CHECK(out(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("log-ratio logits give quarter/three-quarter weights") {
  const auto stack = two_layer_stack({4.0, 0.0}, {0.0, 4.0}, 1, 2);
  const auto out = layer_weighted_sum(stack, {std::log(1.0), std::log(3.0)});
  CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out(0, 1) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("layer count mismatch is rejected") {
  FeatureStack stack(2, 1, 1);
  CHECK_THROWS_AS(layer_weighted_sum(stack, {0.0}), invariant_error);
  CHECK_THROWS_AS(layer_weighted_sum(stack, {0.0, 0.0, 0.0}), invariant_error);
}

TEST_CASE("stats pooling hand cases") {
  SUBCASE("constant frames have zero spread") {
    const auto out = stats_pool(frames_from({{2.5, -1.0}, {2.5, -1.0}}), 0.0);
    CHECK(out == std::vector<double>{2.5, -1.0, 0.0, 0.0});
  }
  SUBCASE("population formula on two frames") {
    const auto out = stats_pool(frames_from({{1.0}, {3.0}}), 0.0);
    CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("single frame") {
    const auto out = stats_pool(frames_from({{7.0, -3.0}}), 0.0);
    CHECK(out == std::vector<double>{7.0, -3.0, 0.0, 0.0});
  }
  SUBCASE("eps shows up as sqrt(eps) at zero variance") {
    const auto out = stats_pool(frames_from({{1.0}, {1.0}}), 1e-6);
    CHECK(out[1] == doctest::Approx(1e-3).epsilon(1e-12));
  }
}

TEST_CASE("attentive pooling with constant scores reduces to stats pooling") {
  Rng rng(11);
  Matrix frames(5, 3);
  for (auto& v : frames.data) v = rng.uniform(-2.0, 2.0);

  AttentivePoolParams params;
  params.score_w = Matrix(2, 3, 0.0);
  params.score_b = {0.0, 0.0};
  params.score_v = {0.7, -0.4};

  const auto pooled = attentive_stats_pool(frames, params, 1e-6);
  const auto plain = stats_pool(frames, 1e-6);
  REQUIRE(pooled.size() == plain.size());
  for (std::size_t i = 0; i < pooled.size(); ++i)
    CHECK(pooled[i] == doctest::Approx(plain[i]).epsilon(1e-6));
}

TEST_CASE("attentive pooling hand case") {
  // b = 0 keeps e(0) = 0; w large saturates tanh so e(4) = v = ln 3.
  Matrix frames = frames_from({{0.0}, {4.0}});
  AttentivePoolParams params;
  params.score_w = Matrix(1, 1);
  params.score_w(0, 0) = 10.0;
  params.score_b = {0.0};
  params.score_v = {std::log(3.0)};

  const auto out = attentive_stats_pool(frames, params, 0.0);
  CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(out[1] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));
}

TEST_CASE("attentive pooling single frame") {
  Matrix frames = frames_from({{2.0, -1.0}});
  AttentivePoolParams params;
  params.score_w = Matrix(2, 2);
  params.score_b = {0.1, 0.2};
  params.score_v = {1.0, -1.0};
  for (auto& v : params.score_w.data) v = 0.5;
  const auto out = attentive_stats_pool(frames, params, 0.0);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == -1.0);
  CHECK(out[2] == 0.0);
  CHECK(out[3] == 0.0);
}

TEST_CASE("channel-context pooling with constant scores reduces to stats pooling") {
  Rng rng(13);
  Matrix frames(6, 4);
  for (auto& v : frames.data) v = rng.uniform(-2.0, 2.0);

  for (bool context : {false, true}) {
    CAPTURE(context);
    ChannelContextPoolParams params;
    params.w1 = Matrix(3, context ? 12 : 4);
    for (auto& v : params.w1.data) v = rng.uniform(-1.0, 1.0);
    params.b1 = {0.2, -0.1, 0.4};
    params.w2 = Matrix(4, 3, 0.0);  // zero second stage -> constant scores
    params.b2 = {0.5, -0.5, 1.0, 0.0};

    const auto pooled = channel_context_stats_pool(frames, params, context, 1e-6);
    const auto plain = stats_pool(frames, 1e-6);
    for (std::size_t i = 0; i < pooled.size(); ++i)
      CHECK(pooled[i] == doctest::Approx(plain[i]).epsilon(1e-6));
  }
}

TEST_CASE("channel-context pooling hand case") {
  // hidden = 1; a = tanh(10*h[0]) is 0 on frame 0 and 1 on frame 1; the
  // second stage sends channel 0 to constant scores and channel 1 to
  // (0, ln 3).
  Matrix frames = frames_from({{0.0, 0.0}, {4.0, 4.0}});
  ChannelContextPoolParams params;
  params.w1 = Matrix(1, 2);
  params.w1(0, 0) = 10.0;
  params.w1(0, 1) = 0.0;
  params.b1 = {0.0};
  params.w2 = Matrix(2, 1);
  params.w2(0, 0) = 0.0;
  params.w2(1, 0) = std::log(3.0);
  params.b2 = {0.0, 0.0};

  const auto out = channel_context_stats_pool(frames, params, false, 0.0);
  CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-9));            // uniform alpha
  CHECK(out[1] == doctest::Approx(3.0).epsilon(1e-9));            // (0.25, 0.75)
  CHECK(out[2] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(out[3] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-9));
}

TEST_CASE("channel-context pooling single frame") {
  Matrix frames = frames_from({{1.0, -2.0}});
  ChannelContextPoolParams params;
  params.w1 = Matrix(2, 2, 0.3);
  params.b1 = {0.0, 0.1};
  params.w2 = Matrix(2, 2, -0.2);
  params.b2 = {0.0, 0.0};
  const auto out = channel_context_stats_pool(frames, params, false, 0.0);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == -2.0);
  CHECK(out[2] == 0.0);
  CHECK(out[3] == 0.0);
}

TEST_CASE("stats pooling is order-free; attentive variants are equivariant") {
  Rng rng(17);
  Matrix frames(6, 3);
  // dyadic values keep every sum exact, so reordering cannot move a bit
  for (auto& v : frames.data)
    v = 0.25 * static_cast<double>(static_cast<int>(rng.uniform_int(17)) - 8);

  std::vector<std::size_t> perm(frames.rows);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Matrix shuffled(frames.rows, frames.cols);
  for (std::size_t t = 0; t < frames.rows; ++t)
    for (std::size_t d = 0; d < frames.cols; ++d)
      shuffled(t, d) = frames(perm[t], d);

  SUBCASE("stats pooling, exact") {
    CHECK(stats_pool(frames, 1e-6) == stats_pool(shuffled, 1e-6));
  }

  SUBCASE("attentive pooling") {
    AttentivePoolParams params;
    params.score_w = Matrix(2, 3);
    for (auto& v : params.score_w.data) v = rng.uniform(-1.0, 1.0);
    params.score_b = {0.3, -0.2};
    params.score_v = {0.8, 0.6};
    const auto a = attentive_stats_pool(frames, params, 1e-6);
    const auto b = attentive_stats_pool(shuffled, params, 1e-6);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }

  SUBCASE("channel-context pooling") {
    ChannelContextPoolParams params;
    params.w1 = Matrix(2, 3);
    for (auto& v : params.w1.data) v = rng.uniform(-1.0, 1.0);
    params.b1 = {0.1, 0.0};
    params.w2 = Matrix(3, 2);
    for (auto& v : params.w2.data) v = rng.uniform(-1.0, 1.0);
    params.b2 = {0.0, 0.2, -0.1};
    const auto a = channel_context_stats_pool(frames, params, true, 1e-6);
    const auto b = channel_context_stats_pool(shuffled, params, true, 1e-6);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("spread outputs are never negative") {
  Rng rng(19);
  for (int round = 0; round < 50; ++round) {
    const std::size_t T = 1 + rng.uniform_int(6), D = 1 + rng.uniform_int(4);
    Matrix frames(T, D);
    const bool constant = rng.uniform() < 0.3;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d)
        frames(t, d) = constant ? 1.5 : rng.uniform(-3.0, 3.0);
    const double eps = rng.uniform() < 0.5 ? 0.0 : 1e-6;

    const auto plain = stats_pool(frames, eps);
    for (std::size_t d = 0; d < D; ++d) CHECK(plain[D + d] >= 0.0);

    AttentivePoolParams att;
    att.score_w = Matrix(2, D);
    for (auto& v : att.score_w.data) v = rng.uniform(-1.0, 1.0);
    att.score_b = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    att.score_v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const auto weighted = attentive_stats_pool(frames, att, eps);
    for (std::size_t d = 0; d < D; ++d) CHECK(weighted[D + d] >= 0.0);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  const auto cases = run_gradient_checks(1234, 4);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CAPTURE(c.max_rel_err);
    CHECK(c.instances > 0);
    CHECK(c.pass());
  }
}
