#include "svkit/trial_protocol.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "svkit/error.hpp"
#include "svkit/rng.hpp"

namespace svkit {

TrialList build_trials(const Manifest& manifest, double min_s, double max_s,
                       std::size_t neg_per_pos, std::uint64_t seed) {
  require(min_s < max_s, "build_trials: need min_s < max_s");
  require(neg_per_pos >= 1, "build_trials: need neg_per_pos >= 1");

  std::vector<const UtteranceRecord*> kept;
  for (const auto& rec : manifest.records)
    if (rec.duration_s > min_s && rec.duration_s < max_s) kept.push_back(&rec);
  if (kept.size() < 2)
    throw invariant_error("build_trials: fewer than 2 utterances in (" +
                          std::to_string(min_s) + ", " + std::to_string(max_s) +
                          ") seconds");

  TrialList list;
  list.seed = seed;
  list.source = manifest.base_dir.string();

  std::vector<std::pair<std::size_t, std::size_t>> negatives;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      if (kept[i]->speaker_id == kept[j]->speaker_id)
        list.trials.push_back({1, kept[i]->utt_id, kept[j]->utt_id});
      else
        negatives.emplace_back(i, j);
    }
  }

  const std::size_t n_pos = list.trials.size();
  if (n_pos == 0)
    list.warnings.push_back("no positive pairs survive the duration filter");

  const std::size_t quota = neg_per_pos * n_pos;
  const std::size_t n_neg = std::min(negatives.size(), quota);
  if (n_neg < quota)
    list.warnings.push_back("only " + std::to_string(negatives.size()) +
                            " negative pairs available for a quota of " +
                            std::to_string(quota));

  // Partial Fisher-Yates; the first n_neg entries are the draws in order.
  Rng rng(seed);
  for (std::size_t k = 0; k < n_neg; ++k) {
    const std::size_t pick = k + static_cast<std::size_t>(
                                     rng.uniform_int(negatives.size() - k));
    std::swap(negatives[k], negatives[pick]);
    const auto [i, j] = negatives[k];
    list.trials.push_back({0, kept[i]->utt_id, kept[j]->utt_id});
  }
  return list;
}

std::vector<Manifest> subset_speakers(const Manifest& manifest,
                                      const std::vector<double>& fractions,
                                      std::uint64_t seed) {
  require(!manifest.records.empty(), "subset_speakers: empty manifest");
  require(!fractions.empty(), "subset_speakers: no fractions given");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    require(fractions[i] > 0.0 && fractions[i] <= 1.0,
            "subset_speakers: fractions must lie in (0, 1]");
    if (i > 0)
      require(fractions[i] > fractions[i - 1],
              "subset_speakers: fractions must be strictly increasing");
  }

  std::vector<std::string> order = manifest.speakers();
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Manifest> subsets;
  subsets.reserve(fractions.size());
  for (double fraction : fractions) {
    const auto target = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(order.size())));
    const std::size_t count = std::max<std::size_t>(1, std::min(target, order.size()));
    std::vector<std::string> chosen(order.begin(), order.begin() + count);
    std::sort(chosen.begin(), chosen.end());

    Manifest subset;
    subset.base_dir = manifest.base_dir;
    for (const auto& rec : manifest.records)
      if (std::binary_search(chosen.begin(), chosen.end(), rec.speaker_id))
        subset.records.push_back(rec);
    subsets.push_back(std::move(subset));
  }
  return subsets;
}

void write_trials(const TrialList& list, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  for (const auto& trial : list.trials)
    out << trial.label << ' ' << trial.enroll_utt << ' ' << trial.test_utt << '\n';
  out.flush();
  if (!out) throw io_error("write failed: " + path.string());
}

TrialList read_trials(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open trial file: " + path.string());

  TrialList list;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string label, enroll, test, extra;
    if (!(fields >> label >> enroll >> test) || (fields >> extra))
      throw parse_error("expected '<label> <enroll> <test>'", line_no);
    if (label != "0" && label != "1")
      throw parse_error("label must be 0 or 1, got '" + label + "'", line_no);
    list.trials.push_back({label == "1" ? 1 : 0, enroll, test});
  }
  if (list.trials.empty()) list.warnings.push_back("trial file is empty");
  return list;
}

}  // namespace svkit
