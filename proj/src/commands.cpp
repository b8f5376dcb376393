#include "svkit/commands.hpp"

#include <cmath>
#include <fstream>

#include "svkit/csv.hpp"
#include "svkit/error.hpp"
#include "svkit/trial_protocol.hpp"
#include "svkit/util.hpp"

namespace svkit {

TablesResult compute_tables(const std::filesystem::path& csv_in) {
  const auto rows = read_csv(csv_in);
  if (rows.empty()) throw parse_error("empty table CSV: " + csv_in.string(), 1);
  if (rows[0] != std::vector<std::string>{"model", "eer_libri", "eer_vox"})
    throw parse_error("expected header model,eer_libri,eer_vox in " +
                          csv_in.string(), 1);

  TablesResult result;
  bool have_baseline = false;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 3)
      throw parse_error("expected 3 fields in " + csv_in.string(), i + 1);
    double libri = 0.0, vox = 0.0;
    try {
      libri = std::stod(rows[i][1]);
      vox = std::stod(rows[i][2]);
    } catch (const std::exception&) {
      throw parse_error("bad EER value in " + csv_in.string(), i + 1);
    }
    if (rows[i][0] == "FBank") {
      result.baseline_libri = libri;
      result.baseline_vox = vox;
      have_baseline = true;
    } else {
      result.models.push_back(rows[i][0]);
      result.eer_libri.push_back(libri);
      result.eer_vox.push_back(vox);
    }
  }
  if (!have_baseline)
    throw invariant_error("table CSV has no FBank baseline row: " + csv_in.string());
  if (result.models.empty())
    throw invariant_error("table CSV has only the baseline row: " + csv_in.string());

  for (std::size_t i = 0; i < result.models.size(); ++i) {
    result.delta_libri.push_back(
        rel_improvement(result.baseline_libri, result.eer_libri[i]));
    result.delta_vox.push_back(
        rel_improvement(result.baseline_vox, result.eer_vox[i]));
  }
  result.spearman = spearman_rho(result.delta_libri, result.delta_vox);
  return result;
}

void write_tables_csv(const TablesResult& result, std::ostream& out) {
  write_csv_row(out, {"model", "eer_libri", "delta_libri", "eer_vox", "delta_vox"});
  write_csv_row(out, {"FBank", fmt_double(result.baseline_libri), "0.0",
                      fmt_double(result.baseline_vox), "0.0"});
  for (std::size_t i = 0; i < result.models.size(); ++i)
    write_csv_row(out, {result.models[i], fmt_double(result.eer_libri[i]),
                        fmt_fixed(result.delta_libri[i], 1),
                        fmt_double(result.eer_vox[i]),
                        fmt_fixed(result.delta_vox[i], 1)});
  write_csv_row(out, {"spearman_rho", fmt_fixed(result.spearman.rho, 4), "p",
                      fmt_fixed(result.spearman.p_two_sided, 4)});
}

std::vector<DataEfficiencyPoint> run_data_efficiency(
    const Manifest& train_manifest, const Manifest& eval_manifest,
    const TrialList& trials, const std::vector<double>& fractions,
    const TrainConfig& train_config, const HeadConfig& head_config,
    const AdamWConfig& optim, const std::filesystem::path& out_dir,
    std::size_t threads) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output directory: " + out_dir.string());

  const auto subsets = subset_speakers(train_manifest, fractions, train_config.seed);

  const auto csv_path = out_dir / "data_efficiency.csv";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw io_error("cannot open for writing: " + csv_path.string());
  write_csv_row(csv, {"fraction", "n_speakers", "eer", "best_step"});
  csv.flush();

  std::vector<DataEfficiencyPoint> points;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto pct = static_cast<long long>(std::llround(fractions[i] * 100.0));
    const auto run_dir = out_dir / ("frac_" + std::to_string(pct));
    const auto run = train(subsets[i], train_config, head_config, optim, run_dir);
    const auto best = select_best_checkpoint(run.checkpoints, trials,
                                             eval_manifest, head_config, threads);
    DataEfficiencyPoint point;
    point.fraction = fractions[i];
    point.eer = best.eer;
    point.best_step = best.step;
    point.n_speakers = subsets[i].speakers().size();
    points.push_back(point);

    write_csv_row(csv, {fmt_double(point.fraction), std::to_string(point.n_speakers),
                        fmt_double(point.eer), std::to_string(point.best_step)});
    csv.flush();
  }
  return points;
}

}  // namespace svkit
