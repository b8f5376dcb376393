#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "svkit/feature_store.hpp"
#include "svkit/trial_protocol.hpp"

namespace svkit {

struct ScoreSet {
  std::vector<Trial> trials;
  std::vector<double> scores;
  std::string protocol;
};

struct EvalReport {
  double eer = 0.0;  // fraction in [0, 1]
  double threshold = 0.0;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
  std::map<std::size_t, double> per_layer;
  std::size_t best_layer = 0;
};

double cosine_score(std::span<const double> a, std::span<const double> b);

// Threshold-sweep EER: at threshold tau, FRR counts targets with score
// < tau and FAR counts nontargets with score >= tau. The reported EER sits
// at the (linearly interpolated) crossing of the two rates along the
// operating points, which is also where the returned threshold lies.
EvalReport compute_eer(const std::vector<double>& scores,
                       const std::vector<int>& labels);
EvalReport compute_eer(const ScoreSet& scores);

struct ZeroShotResult {
  EvalReport report;
  std::map<std::size_t, ScoreSet> layer_scores;
};

// Per-layer stats-pooled cosine scoring with no trained head. Evaluates the
// requested layer, or every layer when absent, and flags the best one.
ZeroShotResult zero_shot_eval(const Manifest& manifest, const TrialList& trials,
                              std::optional<std::size_t> layer = std::nullopt,
                              double eps_std = 0.0, std::size_t threads = 1);

// 100 * (baseline - value) / baseline.
double rel_improvement(double baseline, double value);

struct SpearmanResult {
  double rho = 0.0;
  double p_two_sided = 1.0;
};

// Average-rank (tie-corrected) Spearman correlation; the p-value uses the
// t approximation with n-2 degrees of freedom.
SpearmanResult spearman_rho(const std::vector<double>& x,
                            const std::vector<double>& y);

// Score file lines: "<score> <label> <enroll_utt> <test_utt>".
void write_scores(const ScoreSet& scores, const std::filesystem::path& path);
ScoreSet read_scores(const std::filesystem::path& path);

struct HeadParams;
struct HeadConfig;

// Embeds every utterance of the manifest with a trained head (full length,
// no crop). Parameters are shared read-only across worker threads.
std::map<std::string, std::vector<double>> extract_embeddings(
    const Manifest& manifest, const HeadParams& params, const HeadConfig& config,
    std::size_t threads = 1);

ScoreSet score_trials(const std::map<std::string, std::vector<double>>& embeddings,
                      const TrialList& trials);

}  // namespace svkit
