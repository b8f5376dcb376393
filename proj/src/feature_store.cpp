#include "svkit/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "svkit/csv.hpp"
#include "svkit/error.hpp"
#include "svkit/rng.hpp"
#include "svkit/util.hpp"

namespace svkit {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'F', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr double kFrameHopSeconds = 0.02;

void put_u32_le(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {
      static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
      static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

bool get_u32_le(std::istream& in, std::uint32_t& v) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
  v = static_cast<std::uint32_t>(bytes[0]) |
      (static_cast<std::uint32_t>(bytes[1]) << 8) |
      (static_cast<std::uint32_t>(bytes[2]) << 16) |
      (static_cast<std::uint32_t>(bytes[3]) << 24);
  return true;
}

}  // namespace

Matrix FeatureStack::layer_frames(std::size_t layer) const {
  require(layer < layers, "layer_frames: layer index out of range");
  Matrix out(frames, dim);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t d = 0; d < dim; ++d)
      out(t, d) = static_cast<double>(at(layer, t, d));
  return out;
}

bool FeatureStack::finite() const {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

void write_features(const FeatureStack& stack, const std::filesystem::path& path) {
  require(stack.layers >= 1 && stack.frames >= 1 && stack.dim >= 1,
          "write_features: empty shape");
  const std::size_t expected =
      static_cast<std::size_t>(stack.layers) * stack.frames * stack.dim;
  require(stack.values.size() == expected, "write_features: value count mismatch");
  if (!stack.finite())
    throw non_finite_error("write_features: tensor contains NaN or Inf");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  put_u32_le(out, kVersion);
  put_u32_le(out, stack.layers);
  put_u32_le(out, stack.frames);
  put_u32_le(out, stack.dim);
  for (float v : stack.values) put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  out.flush();
  if (!out) throw io_error("write failed: " + path.string());
}

FeatureStack read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open feature file: " + path.string());

  char magic[4];
  if (!in.read(magic, 4))
    throw truncated_error("feature file shorter than header: " + path.string());
  if (!std::equal(magic, magic + 4, kMagic))
    throw bad_magic_error("not an SVF1 feature file: " + path.string());

  std::uint32_t version = 0;
  if (!get_u32_le(in, version))
    throw truncated_error("feature file shorter than header: " + path.string());
  if (version != kVersion)
    throw bad_version_error("unsupported SVF version " + std::to_string(version) +
                            ": " + path.string());

  FeatureStack stack;
  if (!get_u32_le(in, stack.layers) || !get_u32_le(in, stack.frames) ||
      !get_u32_le(in, stack.dim))
    throw truncated_error("feature file shorter than header: " + path.string());
  if (stack.layers < 1 || stack.frames < 1 || stack.dim < 1)
    throw format_error("degenerate shape in header: " + path.string());

  const std::size_t count =
      static_cast<std::size_t>(stack.layers) * stack.frames * stack.dim;
  stack.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    if (!get_u32_le(in, bits))
      throw truncated_error("payload shorter than declared L*T*D: " + path.string());
    stack.values[i] = std::bit_cast<float>(bits);
  }
  if (!stack.finite())
    throw non_finite_error("payload contains NaN or Inf: " + path.string());
  return stack;
}

std::vector<std::string> Manifest::speakers() const {
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& rec : records)
    if (seen.insert(rec.speaker_id).second) order.push_back(rec.speaker_id);
  return order;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  write_csv_row(out, {"utt_id", "speaker_id", "duration_s", "path"});
  for (const auto& rec : manifest.records)
    write_csv_row(out, {rec.utt_id, rec.speaker_id, fmt_double(rec.duration_s),
                        rec.path});
  out.flush();
  if (!out) throw io_error("write failed: " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw parse_error("manifest is empty: " + path.string(), 1);
  const std::vector<std::string> header = {"utt_id", "speaker_id", "duration_s",
                                           "path"};
  if (rows[0] != header)
    throw parse_error("bad manifest header in " + path.string(), 1);

  Manifest manifest;
  manifest.base_dir = path.parent_path();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 4)
      throw parse_error("expected 4 fields in " + path.string(), i + 1);
    UtteranceRecord rec;
    rec.utt_id = row[0];
    rec.speaker_id = row[1];
    try {
      rec.duration_s = std::stod(row[2]);
    } catch (const std::exception&) {
      throw parse_error("bad duration '" + row[2] + "' in " + path.string(), i + 1);
    }
    rec.path = row[3];
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void validate_manifest(const Manifest& manifest) {
  require(!manifest.records.empty(), "manifest has no records");
  std::set<std::string> ids;
  for (const auto& rec : manifest.records) {
    if (!ids.insert(rec.utt_id).second)
      throw invariant_error("duplicate utt_id: " + rec.utt_id);
    if (!(rec.duration_s > 0.0))
      throw invariant_error("nonpositive duration for " + rec.utt_id);
    const auto path = manifest.resolve(rec);
    // Header-only read keeps validation cheap; shape checks happen on use.
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("missing feature file: " + path.string());
    char magic[4];
    std::uint32_t version = 0;
    if (!in.read(magic, 4) || !get_u32_le(in, version))
      throw truncated_error("feature file shorter than header: " + path.string());
    if (!std::equal(magic, magic + 4, kMagic))
      throw bad_magic_error("not an SVF1 feature file: " + path.string());
    if (version != kVersion)
      throw bad_version_error("unsupported SVF version: " + path.string());
  }
}

void SynthSpec::validate() const {
  require(n_speakers >= 1, "SynthSpec: need at least one speaker");
  require(utts_per_speaker >= 1, "SynthSpec: need at least one utterance");
  require(layers >= 1 && dim >= 1, "SynthSpec: layers and dim must be >= 1");
  require(frames_min >= 1 && frames_min <= frames_max,
          "SynthSpec: need 1 <= frames_min <= frames_max");
  require(speaker_scale >= 0.0 && frame_noise >= 0.0,
          "SynthSpec: scales must be nonnegative");
  require(layer_mix.size() == layers, "SynthSpec: layer_mix length must equal layers");
  for (double m : layer_mix)
    require(m >= 0.0 && m <= 1.0, "SynthSpec: layer_mix entries must be in [0,1]");
}

Manifest generate_synthetic_corpus(const SynthSpec& spec,
                                   const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output directory: " + out_dir.string());

  Rng rng(spec.seed);
  Manifest manifest;
  manifest.base_dir = out_dir;

  char name[64];
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    std::vector<double> signature(spec.dim);
    for (auto& v : signature) v = rng.gaussian(0.0, spec.speaker_scale);
    std::snprintf(name, sizeof(name), "spk%04zu", s);
    const std::string speaker_id = name;

    for (std::size_t u = 0; u < spec.utts_per_speaker; ++u) {
      const std::size_t frames =
          spec.frames_min + rng.uniform_int(spec.frames_max - spec.frames_min + 1);
      FeatureStack stack(static_cast<std::uint32_t>(spec.layers),
                         static_cast<std::uint32_t>(frames),
                         static_cast<std::uint32_t>(spec.dim));
      for (std::size_t l = 0; l < spec.layers; ++l)
        for (std::size_t t = 0; t < frames; ++t)
          for (std::size_t d = 0; d < spec.dim; ++d)
            stack.at(l, t, d) = static_cast<float>(
                spec.layer_mix[l] * signature[d] +
                rng.gaussian(0.0, spec.frame_noise));

      std::snprintf(name, sizeof(name), "%s_utt%04zu", speaker_id.c_str(), u);
      UtteranceRecord rec;
      rec.utt_id = name;
      rec.speaker_id = speaker_id;
      rec.duration_s = static_cast<double>(frames) * kFrameHopSeconds;
      rec.path = rec.utt_id + ".svf";
      write_features(stack, manifest.resolve(rec));
      manifest.records.push_back(std::move(rec));
    }
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace svkit
