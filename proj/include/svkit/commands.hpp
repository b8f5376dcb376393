#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "svkit/evaluation.hpp"
#include "svkit/training.hpp"

namespace svkit {

// Table arithmetic over a "model,eer_libri,eer_vox" CSV with an FBank
// baseline row: per-row relative improvements plus the rank correlation
// between the two improvement columns.
struct TablesResult {
  std::vector<std::string> models;  // non-baseline rows, input order
  std::vector<double> eer_libri, eer_vox;
  std::vector<double> delta_libri, delta_vox;
  double baseline_libri = 0.0, baseline_vox = 0.0;
  SpearmanResult spearman;
};

TablesResult compute_tables(const std::filesystem::path& csv_in);
// Deltas print at 1 decimal, the summary line is
// "spearman_rho,<rho>,p,<p>".
void write_tables_csv(const TablesResult& result, std::ostream& out);

struct DataEfficiencyPoint {
  double fraction = 0.0;
  double eer = 0.0;                 // fraction in [0, 1]
  std::uint64_t best_step = 0;
  std::size_t n_speakers = 0;
};

// Fig.-1-style sweep: nested speaker subsets, one training run per subset,
// each evaluated on the fixed trial list via best-checkpoint selection.
// Rows are appended to out_csv as they complete so a failed condition
// preserves earlier results.
std::vector<DataEfficiencyPoint> run_data_efficiency(
    const Manifest& train_manifest, const Manifest& eval_manifest,
    const TrialList& trials, const std::vector<double>& fractions,
    const TrainConfig& train_config, const HeadConfig& head_config,
    const AdamWConfig& optim, const std::filesystem::path& out_dir,
    std::size_t threads = 1);

}  // namespace svkit
