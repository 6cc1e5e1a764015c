#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arw/numerics.hpp"

namespace arw {

enum class Split : std::uint8_t { Train = 0, Eval = 1 };

struct GroupAxis {
  std::string name;
  std::vector<std::string> categories;
};

struct Speaker {
  int id = 0;
  std::vector<int> groups;  // category per axis
  Split split = Split::Train;
};

// Immutable feature corpus. Features are stored as the file format's
// 32-bit floats, speaker-major then utterance-major, and widened to
// doubles at batch time.
struct Corpus {
  std::vector<GroupAxis> axes;
  std::vector<Speaker> speakers;
  std::size_t feature_dim = 0;
  std::size_t utts_per_speaker = 0;
  std::vector<float> features;

  std::size_t speaker_count() const { return speakers.size(); }
  std::vector<std::size_t> split_indices(Split split) const;
  // Feature row for (speaker index, utterance index), widened to double.
  Vector feature_row(std::size_t speaker_idx, std::size_t utt) const;
  void validate() const;
};

struct AxisGenConfig {
  std::string name;
  std::vector<std::string> categories;
  std::vector<double> proportions;   // sums to 1
  std::vector<double> noise_scales;  // within-speaker noise multiplier per category
};

struct GenConfig {
  std::vector<AxisGenConfig> axes;
  std::size_t speakers = 100;
  std::size_t utts_per_speaker = 10;
  std::size_t feature_dim = 64;
  double group_separation = 3.0;    // norm of each category direction
  double speaker_spread = 1.0;      // between-speaker noise scale
  double base_noise = 0.3;          // within-speaker noise before group scaling
  double eval_fraction = 0.3;       // stratified held-out speakers

  void validate() const;
};

// Category counts per axis use largest-remainder rounding; the eval split
// is stratified over group combinations. Minority categories get their
// configured (larger) within-speaker noise, which is what makes a plain
// learner underperform on them.
Corpus generate_corpus(const GenConfig& config, RngStream& rng);

struct FeatureBatch {
  std::vector<std::size_t> speaker_indices;  // into corpus.speakers
  std::vector<int> speaker_labels;           // dense train-split labels
  Matrix features;                           // (N*M) x F, speaker-major
  std::size_t n_speakers = 0;
  std::size_t m_utts = 0;
};

// N distinct train-split speakers, M utterances each, both without
// replacement. Speaker labels are dense indices into the train split.
FeatureBatch sample_batch(const Corpus& corpus, std::size_t n, std::size_t m,
                          RngStream& rng);

// "ARWC" binary: magic, u16 version, u32 JSON metadata length, metadata,
// then f32 little-endian features in declared order.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

GenConfig gen_config_from_json_file(const std::string& path);
std::string gen_config_to_json(const GenConfig& config);

}  // namespace arw
