#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svkit/matrix.hpp"

namespace svkit {

// One utterance's frame features for every layer of the upstream model.
// Values are stored layer-major: [layer][frame][channel].
struct FeatureStack {
  std::uint32_t layers = 0;
  std::uint32_t frames = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;

  FeatureStack() = default;
  FeatureStack(std::uint32_t l, std::uint32_t t, std::uint32_t d)
      : layers(l), frames(t), dim(d),
        values(static_cast<std::size_t>(l) * t * d, 0.0f) {}

  float& at(std::size_t l, std::size_t t, std::size_t d) {
    return values[(l * frames + t) * dim + d];
  }
  float at(std::size_t l, std::size_t t, std::size_t d) const {
    return values[(l * frames + t) * dim + d];
  }

  // Frames of one layer widened to doubles, T x D.
  Matrix layer_frames(std::size_t layer) const;

  bool finite() const;
};

struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  double duration_s = 0.0;
  std::string path;  // relative to the manifest's directory
};

struct Manifest {
  std::vector<UtteranceRecord> records;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const UtteranceRecord& record) const {
    return base_dir / record.path;
  }

  // Unique speaker ids in order of first appearance.
  std::vector<std::string> speakers() const;
};

// Synthetic corpus recipe. Each speaker gets a Gaussian signature vector of
// scale speaker_scale; every frame of layer l carries layer_mix[l] times the
// signature plus Gaussian noise of scale frame_noise.
struct SynthSpec {
  std::size_t n_speakers = 0;
  std::size_t utts_per_speaker = 0;
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::size_t frames_min = 0;
  std::size_t frames_max = 0;
  double speaker_scale = 1.0;
  double frame_noise = 0.1;
  std::vector<double> layer_mix;
  std::uint64_t seed = 0;

  void validate() const;
};

// SVF1 container: magic "SVFT", u32 version=1, u32 L/T/D, then L*T*D
// f32 little-endian values in [layer][frame][channel] order.
void write_features(const FeatureStack& stack, const std::filesystem::path& path);
FeatureStack read_features(const std::filesystem::path& path);

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// Checks id uniqueness, durations, and that every referenced feature file
// has a well-formed header.
void validate_manifest(const Manifest& manifest);

Manifest generate_synthetic_corpus(const SynthSpec& spec,
                                   const std::filesystem::path& out_dir);

}  // namespace svkit
