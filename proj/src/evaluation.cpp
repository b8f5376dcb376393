#include "svkit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "svkit/error.hpp"
#include "svkit/head.hpp"
#include "svkit/pooling.hpp"
#include "svkit/util.hpp"

namespace svkit {

double cosine_score(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine_score: length mismatch");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0)
    throw invariant_error("cosine_score: zero-norm input");
  return dot(a, b) / (na * nb);
}

EvalReport compute_eer(const std::vector<double>& scores,
                       const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "compute_eer: length mismatch");
  std::vector<double> targets, nontargets;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(std::isfinite(scores[i]), "compute_eer: non-finite score");
    if (labels[i] == 1)
      targets.push_back(scores[i]);
    else
      nontargets.push_back(scores[i]);
  }
  if (targets.empty() || nontargets.empty())
    throw invariant_error("compute_eer: need at least one target and one nontarget");
  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());

  std::vector<double> taus(scores);
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  taus.insert(taus.begin(), taus.front() - 1.0);
  taus.push_back(taus.back() + 1.0);

  const auto nt = static_cast<double>(targets.size());
  const auto nn = static_cast<double>(nontargets.size());
  auto frr_at = [&](double tau) {
    return static_cast<double>(std::lower_bound(targets.begin(), targets.end(), tau) -
                               targets.begin()) / nt;
  };
  auto far_at = [&](double tau) {
    return static_cast<double>(nontargets.end() -
                               std::lower_bound(nontargets.begin(), nontargets.end(),
                                                tau)) / nn;
  };

  EvalReport report;
  report.n_target = targets.size();
  report.n_nontarget = nontargets.size();

  // frr - far is nondecreasing in tau and spans [-1, 1]; locate the sign
  // change and interpolate the crossing.
  double prev_frr = frr_at(taus[0]), prev_far = far_at(taus[0]);
  double prev_tau = taus[0];
  for (std::size_t k = 1; k < taus.size(); ++k) {
    const double frr = frr_at(taus[k]);
    const double far = far_at(taus[k]);
    const double gap = frr - far;
    if (gap >= 0.0) {
      if (gap == 0.0) {
        report.eer = frr;
        report.threshold = taus[k];
      } else {
        const double prev_gap = prev_frr - prev_far;
        const double t = -prev_gap / (gap - prev_gap);
        report.eer = prev_frr + t * (frr - prev_frr);
        report.threshold = prev_tau + t * (taus[k] - prev_tau);
      }
      return report;
    }
    prev_frr = frr;
    prev_far = far;
    prev_tau = taus[k];
  }
  throw invariant_error("compute_eer: no crossing found");  // unreachable
}

EvalReport compute_eer(const ScoreSet& scores) {
  std::vector<int> labels;
  labels.reserve(scores.trials.size());
  for (const auto& trial : scores.trials) labels.push_back(trial.label);
  return compute_eer(scores.scores, labels);
}

double rel_improvement(double baseline, double value) {
  require(baseline > 0.0, "rel_improvement: baseline must be positive");
  return 100.0 * (baseline - value) / baseline;
}

namespace {

// Regularized incomplete beta via the standard continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return h;
}

double betainc(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

SpearmanResult spearman_rho(const std::vector<double>& x,
                            const std::vector<double>& y) {
  require(x.size() == y.size(), "spearman_rho: length mismatch");
  const std::size_t n = x.size();
  require(n >= 3, "spearman_rho: need at least 3 observations");
  const auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v[0]; });
  };
  if (constant(x) || constant(y))
    throw invariant_error("spearman_rho: correlation undefined for constant input");

  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mean = 0.5 * static_cast<double>(n + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  SpearmanResult result;
  result.rho = sxy / std::sqrt(sxx * syy);
  result.rho = std::clamp(result.rho, -1.0, 1.0);

  const double df = static_cast<double>(n - 2);
  if (1.0 - result.rho * result.rho <= 0.0) {
    result.p_two_sided = 0.0;
  } else {
    const double t2 = result.rho * result.rho * df / (1.0 - result.rho * result.rho);
    result.p_two_sided = betainc(0.5 * df, 0.5, df / (df + t2));
  }
  return result;
}

ZeroShotResult zero_shot_eval(const Manifest& manifest, const TrialList& trials,
                              std::optional<std::size_t> layer, double eps_std,
                              std::size_t threads) {
  require(!manifest.records.empty(), "zero_shot_eval: empty manifest");
  require(!trials.trials.empty(), "zero_shot_eval: empty trial list");

  // Load every utterance once; pooled vectors per (layer, utterance).
  std::vector<FeatureStack> stacks(manifest.records.size());
  parallel_for(manifest.records.size(), threads, [&](std::size_t i) {
    stacks[i] = read_features(manifest.resolve(manifest.records[i]));
  });
  const std::uint32_t n_layers = stacks[0].layers;
  for (const auto& stack : stacks)
    require(stack.layers == n_layers,
            "zero_shot_eval: inconsistent layer counts across corpus");
  if (layer)
    require(*layer < n_layers, "zero_shot_eval: layer index out of range");

  std::vector<std::size_t> wanted;
  if (layer)
    wanted.push_back(*layer);
  else
    for (std::size_t l = 0; l < n_layers; ++l) wanted.push_back(l);

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    index.emplace(manifest.records[i].utt_id, i);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(trials.trials.size());
  for (const auto& trial : trials.trials) {
    const auto e = index.find(trial.enroll_utt);
    const auto t = index.find(trial.test_utt);
    if (e == index.end() || t == index.end())
      throw invariant_error("zero_shot_eval: trial references unknown utterance");
    pairs.emplace_back(e->second, t->second);
  }

  ZeroShotResult result;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t l : wanted) {
    std::vector<std::vector<double>> pooled(stacks.size());
    parallel_for(stacks.size(), threads, [&](std::size_t i) {
      pooled[i] = stats_pool(stacks[i].layer_frames(l), eps_std);
    });

    ScoreSet set;
    set.protocol = trials.source;
    set.trials = trials.trials;
    set.scores.resize(trials.trials.size());
    parallel_for(trials.trials.size(), threads, [&](std::size_t i) {
      set.scores[i] = cosine_score(pooled[pairs[i].first], pooled[pairs[i].second]);
    });

    const auto report = compute_eer(set);
    result.report.per_layer[l] = report.eer;
    result.report.n_target = report.n_target;
    result.report.n_nontarget = report.n_nontarget;
    if (report.eer < best) {
      best = report.eer;
      result.report.best_layer = l;
      result.report.eer = report.eer;
      result.report.threshold = report.threshold;
    }
    result.layer_scores.emplace(l, std::move(set));
  }
  return result;
}

void write_scores(const ScoreSet& scores, const std::filesystem::path& path) {
  require(scores.scores.size() == scores.trials.size(),
          "write_scores: scores and trials disagree");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  for (std::size_t i = 0; i < scores.trials.size(); ++i)
    out << fmt_double(scores.scores[i]) << ' ' << scores.trials[i].label << ' '
        << scores.trials[i].enroll_utt << ' ' << scores.trials[i].test_utt << '\n';
  out.flush();
  if (!out) throw io_error("write failed: " + path.string());
}

ScoreSet read_scores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open score file: " + path.string());
  ScoreSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string score_text, label, enroll, test, extra;
    if (!(fields >> score_text >> label >> enroll >> test) || (fields >> extra))
      throw parse_error("expected '<score> <label> <enroll> <test>'", line_no);
    if (label != "0" && label != "1")
      throw parse_error("label must be 0 or 1, got '" + label + "'", line_no);
    double score = 0.0;
    try {
      score = std::stod(score_text);
    } catch (const std::exception&) {
      throw parse_error("bad score '" + score_text + "'", line_no);
    }
    set.trials.push_back({label == "1" ? 1 : 0, enroll, test});
    set.scores.push_back(score);
  }
  return set;
}

std::map<std::string, std::vector<double>> extract_embeddings(
    const Manifest& manifest, const HeadParams& params, const HeadConfig& config,
    std::size_t threads) {
  std::vector<std::vector<double>> embeddings(manifest.records.size());
  parallel_for(manifest.records.size(), threads, [&](std::size_t i) {
    const auto stack = read_features(manifest.resolve(manifest.records[i]));
    embeddings[i] = head_forward(stack, params, config);
  });
  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    out.emplace(manifest.records[i].utt_id, std::move(embeddings[i]));
  return out;
}

ScoreSet score_trials(const std::map<std::string, std::vector<double>>& embeddings,
                      const TrialList& trials) {
  ScoreSet set;
  set.protocol = trials.source;
  set.trials = trials.trials;
  set.scores.reserve(trials.trials.size());
  for (const auto& trial : trials.trials) {
    const auto e = embeddings.find(trial.enroll_utt);
    const auto t = embeddings.find(trial.test_utt);
    if (e == embeddings.end() || t == embeddings.end())
      throw invariant_error("score_trials: trial references unknown utterance");
    set.scores.push_back(cosine_score(e->second, t->second));
  }
  return set;
}

}  // namespace svkit
