#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svkit/feature_store.hpp"

namespace svkit {

struct Trial {
  int label = 0;  // 1 = same speaker, 0 = different
  std::string enroll_utt;
  std::string test_utt;

  bool operator==(const Trial&) const = default;
};

struct TrialList {
  std::vector<Trial> trials;
  std::string source;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;  // degenerate protocols are reported, not silent
};

// Keeps utterances with min_s < duration < max_s (strict), forms all
// unordered pairs, keeps every positive, and downsamples negatives to
// neg_per_pos per positive (uniform, without replacement). Output order:
// positives in manifest order, then sampled negatives in draw order.
TrialList build_trials(const Manifest& manifest, double min_s, double max_s,
                       std::size_t neg_per_pos, std::uint64_t seed);

// Nested random speaker subsets: the set for each fraction contains the set
// for every smaller fraction. Sizes are round-half-away-from-zero with a
// floor of one speaker.
std::vector<Manifest> subset_speakers(const Manifest& manifest,
                                      const std::vector<double>& fractions,
                                      std::uint64_t seed);

// Wire format: one trial per line, "<label> <enroll_utt> <test_utt>".
void write_trials(const TrialList& list, const std::filesystem::path& path);
TrialList read_trials(const std::filesystem::path& path);

}  // namespace svkit
