// include/astnet/signal.hpp

// Copyright 2026  The AstNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "astnet/numeric.hpp"

namespace astnet {

// T x C positions in millimetres sampled uniformly at sample_rate_hz.
struct Trajectory {
  Matrix frames;
  double sample_rate_hz = 100.0;
  std::vector<std::string> channel_names;

  std::size_t length() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(frames.cols()); }
  // Throws InvalidInput when shape, names or values are inconsistent.
  void validate() const;
};

struct PhoneSegment {
  std::string label;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // exclusive

  std::size_t frames() const { return end_frame - start_frame; }
  bool operator==(const PhoneSegment&) const = default;
};

enum class Rate { Neutral, Fast, Slow };

std::string to_string(Rate rate);
Rate parse_rate(const std::string& text);

struct Utterance {
  std::string sentence_id;
  std::string subject_id;
  Rate rate = Rate::Neutral;
  Trajectory trajectory;
  std::vector<PhoneSegment> segments;

  // Checks the segment cover invariant: contiguous, non-empty, spanning [0, T).
  void validate() const;
};

struct SynthConfig {
  std::size_t n_subjects = 3;
  std::size_t n_sentences = 120;
  std::vector<std::string> phone_inventory;  // empty: default inventory
  std::size_t channels = 6;
  std::uint64_t seed = 1;
  // One factor per inventory phone. Empty vectors are drawn from the seed
  // within the ranges below.
  std::vector<double> fast_duration_scale;
  std::vector<double> slow_duration_scale;
  double fast_amplitude_scale = 0.8;
  double slow_amplitude_scale = 1.15;

  double fast_scale_min = 0.45, fast_scale_max = 0.65;
  double slow_scale_min = 1.7, slow_scale_max = 2.1;
  std::size_t min_phones = 8, max_phones = 25;
  double phone_duration_min_s = 0.05, phone_duration_max_s = 0.09;
  double duration_jitter = 0.1;          // +-10% per occurrence
  double posture_spread_mm = 4.0;        // std dev of phone targets about rest
  double rest_spread_mm = 15.0;          // std dev of per-subject rest positions
  double time_constant_min_s = 0.016;    // per-subject smoother time constant
  double time_constant_max_s = 0.030;
  double sensor_noise_mm = 0.05;
  double raw_rate_hz = 250.0;
  double output_rate_hz = 100.0;
  double cutoff_hz = 25.0;

  // Throws InvalidInput when a field is out of range.
  void validate() const;
};

std::vector<std::string> default_phone_inventory();
std::vector<std::string> default_channel_names(std::size_t channels);

// Returns cfg with phone_inventory and the per-phone duration scales filled in.
SynthConfig resolve_synth_config(const SynthConfig& cfg);

class Corpus {
 public:
  Corpus() = default;

  void add(Utterance utt);
  const Utterance* find(const std::string& subject, const std::string& sentence, Rate rate) const;
  const Utterance& at(const std::string& subject, const std::string& sentence, Rate rate) const;

  const std::vector<Utterance>& utterances() const { return utterances_; }
  // Subjects and sentences in first-seen order.
  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::vector<std::string>& sentence_ids() const { return sentences_; }
  std::size_t channels() const;

  // Free-form key=value provenance written next to the corpus.
  std::vector<std::pair<std::string, std::string>> manifest;

 private:
  std::vector<Utterance> utterances_;
  std::vector<std::string> subjects_;
  std::vector<std::string> sentences_;
  std::map<std::tuple<std::string, std::string, int>, std::size_t> index_;
};

// Zero-phase Butterworth low-pass (5th order, forward-backward).
Trajectory lowpass(const Trajectory& traj, double cutoff_hz, int order = 5);

// Linear interpolation onto a uniform grid at to_hz covering the same span.
Trajectory resample(const Trajectory& traj, double to_hz);
std::size_t resampled_length(std::size_t frames, double from_hz, double to_hz);

// Per-channel mean removal.
Trajectory zero_mean(const Trajectory& traj);

// Second-order sections (b0 b1 b2 a1 a2, a0 == 1) of a digital Butterworth
// low-pass with unit DC gain.
struct Biquad {
  double b0, b1, b2, a1, a2;
};
std::vector<Biquad> butterworth_lowpass_sections(int order, double cutoff_hz, double sample_rate_hz);

// Rounds every value to the 6-decimal text precision used on disk.
double quantize6(double value);

Corpus synth_corpus(const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// On-disk format.

void write_trajectory_file(const std::filesystem::path& path, const Utterance& utt);
void write_segment_file(const std::filesystem::path& path, const std::vector<PhoneSegment>& segs);
// Reads an utterance text file and, when present, its ".seg" sidecar.
Utterance read_utterance_file(const std::filesystem::path& path);
std::vector<PhoneSegment> read_segment_file(const std::filesystem::path& path);

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace astnet
