// src/signal.cpp

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

#include "astnet/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "astnet/error.hpp"
#include "astnet/rng.hpp"

namespace astnet {

void Trajectory::validate() const {
  if (frames.rows() < 1) throw InvalidInput("trajectory has no frames");
  if (static_cast<std::size_t>(frames.cols()) != channel_names.size()) {
    throw InvalidInput("trajectory has " + std::to_string(frames.cols()) + " channels but " +
                       std::to_string(channel_names.size()) + " channel names");
  }
  if (!(sample_rate_hz > 0.0)) throw InvalidInput("trajectory sample rate must be positive");
  if (!frames.allFinite()) throw InvalidInput("trajectory contains non-finite values");
}

std::string to_string(Rate rate) {
  switch (rate) {
    case Rate::Neutral: return "neutral";
    case Rate::Fast: return "fast";
    case Rate::Slow: return "slow";
  }
  return "neutral";
}

Rate parse_rate(const std::string& text) {
  if (text == "neutral") return Rate::Neutral;
  if (text == "fast") return Rate::Fast;
  if (text == "slow") return Rate::Slow;
  throw InvalidInput("unknown rate '" + text + "'");
}

void Utterance::validate() const {
  trajectory.validate();
  if (segments.empty()) return;
  std::size_t expect = 0;
  for (const PhoneSegment& s : segments) {
    if (s.start_frame != expect || s.end_frame <= s.start_frame) {
      throw InvalidInput("utterance " + sentence_id + ": segments are not contiguous and non-empty at '" +
                         s.label + "'");
    }
    expect = s.end_frame;
  }
  if (expect != trajectory.length()) {
    throw InvalidInput("utterance " + sentence_id + ": segments end at frame " + std::to_string(expect) +
                       " but trajectory has " + std::to_string(trajectory.length()) + " frames");
  }
}

void SynthConfig::validate() const {
  if (n_subjects < 1 || n_sentences < 1 || channels < 1) {
    throw InvalidInput("synth: subjects, sentences and channels must be >= 1");
  }
  if (min_phones < 1 || max_phones < min_phones) throw InvalidInput("synth: bad phone count range");
  const std::size_t n_phones = phone_inventory.empty() ? default_phone_inventory().size() : phone_inventory.size();
  auto check_scales = [&](const std::vector<double>& v, bool fast) {
    if (v.empty()) return;
    if (v.size() != n_phones) throw InvalidInput("synth: need one duration scale per phone");
    for (double s : v) {
      if (!(s > 0.0)) throw InvalidInput("synth: duration scales must be positive");
      if (fast ? !(s < 1.0) : !(s > 1.0)) throw InvalidInput("synth: fast scales must be < 1 and slow scales > 1");
    }
  };
  check_scales(fast_duration_scale, true);
  check_scales(slow_duration_scale, false);
  if (!(fast_scale_min > 0.0 && fast_scale_min <= fast_scale_max && fast_scale_max < 1.0)) {
    throw InvalidInput("synth: fast scale range must lie in (0, 1)");
  }
  if (!(slow_scale_min > 1.0 && slow_scale_min <= slow_scale_max)) {
    throw InvalidInput("synth: slow scale range must lie above 1");
  }
  if (!(fast_amplitude_scale > 0.0 && fast_amplitude_scale < 1.0 && slow_amplitude_scale > 1.0)) {
    throw InvalidInput("synth: amplitude scales must satisfy 0 < fast < 1 < slow");
  }
  if (!(phone_duration_min_s > 0.0 && phone_duration_max_s >= phone_duration_min_s)) {
    throw InvalidInput("synth: bad phone duration range");
  }
  if (!(time_constant_min_s > 0.0 && time_constant_max_s >= time_constant_min_s)) {
    throw InvalidInput("synth: bad smoother time constant range");
  }
  if (!(duration_jitter >= 0.0 && duration_jitter < 0.5)) throw InvalidInput("synth: jitter must be in [0, 0.5)");
  if (!(sensor_noise_mm >= 0.0)) throw InvalidInput("synth: noise must be non-negative");
  if (!(raw_rate_hz > 0.0 && output_rate_hz > 0.0 && cutoff_hz > 0.0 && cutoff_hz < output_rate_hz / 2.0 &&
        output_rate_hz <= raw_rate_hz)) {
    throw InvalidInput("synth: need 0 < cutoff < output_rate/2 and output_rate <= raw_rate");
  }
}

std::vector<std::string> default_phone_inventory() {
  return {"AA", "AE", "AH", "AO", "AY", "B",  "D",  "EH", "ER", "EY", "F",  "G",
          "IH", "IY", "K",  "L",  "M",  "N",  "OW", "P",  "R",  "S",  "T",  "UW"};
}

std::vector<std::string> default_channel_names(std::size_t channels) {
  static const char* kNames[] = {"TTx",  "TTz",  "TBx", "TBz", "LLz", "JAWz", "TDx", "TDz", "ULx",
                                 "ULz",  "LLx",  "JAWx", "RCx", "RCz", "LCx",  "LCz", "THx", "THz"};
  std::vector<std::string> out;
  for (std::size_t c = 0; c < channels; ++c) {
    out.push_back(c < std::size(kNames) ? kNames[c] : "ch" + std::to_string(c));
  }
  return out;
}

SynthConfig resolve_synth_config(const SynthConfig& cfg) {
  cfg.validate();
  SynthConfig out = cfg;
  if (out.phone_inventory.empty()) out.phone_inventory = default_phone_inventory();
  const std::size_t n = out.phone_inventory.size();
  if (out.fast_duration_scale.empty()) {
    auto rng = substream(cfg.seed, "fast-scale");
    std::uniform_real_distribution<double> u(cfg.fast_scale_min, cfg.fast_scale_max);
    for (std::size_t i = 0; i < n; ++i) out.fast_duration_scale.push_back(u(rng));
  }
  if (out.slow_duration_scale.empty()) {
    auto rng = substream(cfg.seed, "slow-scale");
    std::uniform_real_distribution<double> u(cfg.slow_scale_min, cfg.slow_scale_max);
    for (std::size_t i = 0; i < n; ++i) out.slow_duration_scale.push_back(u(rng));
  }
  return out;
}

// ---------------------------------------------------------------------------

void Corpus::add(Utterance utt) {
  auto key = std::make_tuple(utt.subject_id, utt.sentence_id, static_cast<int>(utt.rate));
  if (index_.count(key) != 0) {
    throw DataError("duplicate utterance " + utt.subject_id + "/" + to_string(utt.rate) + "/" + utt.sentence_id);
  }
  if (std::find(subjects_.begin(), subjects_.end(), utt.subject_id) == subjects_.end()) {
    subjects_.push_back(utt.subject_id);
  }
  if (std::find(sentences_.begin(), sentences_.end(), utt.sentence_id) == sentences_.end()) {
    sentences_.push_back(utt.sentence_id);
  }
  index_[key] = utterances_.size();
  utterances_.push_back(std::move(utt));
}

const Utterance* Corpus::find(const std::string& subject, const std::string& sentence, Rate rate) const {
  auto it = index_.find(std::make_tuple(subject, sentence, static_cast<int>(rate)));
  return it == index_.end() ? nullptr : &utterances_[it->second];
}

const Utterance& Corpus::at(const std::string& subject, const std::string& sentence, Rate rate) const {
  const Utterance* u = find(subject, sentence, rate);
  if (u == nullptr) {
    throw DataError("missing utterance " + subject + "/" + to_string(rate) + "/" + sentence);
  }
  return *u;
}

std::size_t Corpus::channels() const {
  return utterances_.empty() ? 0 : utterances_.front().trajectory.channels();
}

// ---------------------------------------------------------------------------
// Filtering

std::vector<Biquad> butterworth_lowpass_sections(int order, double cutoff_hz, double sample_rate_hz) {
  if (order < 1) throw InvalidInput("butterworth: order must be >= 1");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < sample_rate_hz / 2.0)) {
    throw InvalidInput("lowpass: cutoff must lie strictly between 0 and the Nyquist frequency");
  }
  using cd = std::complex<double>;
  const double fs2 = 2.0 * sample_rate_hz;
  const double warped = fs2 * std::tan(std::numbers::pi * cutoff_hz / sample_rate_hz);
  std::vector<Biquad> sections;
  // Analog prototype poles in the upper half plane; conjugates are implied.
  for (int k = 0; k < order / 2; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
    const cd pole = warped * cd(std::cos(theta), std::sin(theta));
    const cd z = (fs2 + pole) / (fs2 - pole);
    const double a1 = -2.0 * z.real();
    const double a2 = std::norm(z);
    const double gain = (1.0 + a1 + a2) / 4.0;
    sections.push_back({gain, 2.0 * gain, gain, a1, a2});
  }
  if (order % 2 == 1) {
    const double z = (fs2 - warped) / (fs2 + warped);
    const double gain = (1.0 - z) / 2.0;
    sections.push_back({gain, gain, 0.0, -z, 0.0});
  }
  return sections;
}

namespace {

// Transposed direct form II over a cascade, state initialised to the steady
// state for a constant input equal to x[0].
void sos_filter(const std::vector<Biquad>& sections, std::vector<double>& x) {
  if (x.empty()) return;
  double level = x.front();
  for (const Biquad& s : sections) {
    const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double y_ss = dc * level;
    double z2 = s.b2 * level - s.a2 * y_ss;
    double z1 = s.b1 * level - s.a1 * y_ss + z2;
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    level = y_ss;
  }
}

std::vector<double> filtfilt(const std::vector<Biquad>& sections, const std::vector<double>& x, std::size_t padlen) {
  const std::size_t n = x.size();
  padlen = std::min(padlen, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);
  sos_filter(sections, ext);
  std::reverse(ext.begin(), ext.end());
  sos_filter(sections, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<long>(padlen), ext.begin() + static_cast<long>(padlen + n)};
}

}  // namespace

Trajectory lowpass(const Trajectory& traj, double cutoff_hz, int order) {
  if (!(cutoff_hz < traj.sample_rate_hz / 2.0)) {
    throw InvalidInput("lowpass: cutoff " + std::to_string(cutoff_hz) + " Hz is not below Nyquist (" +
                       std::to_string(traj.sample_rate_hz / 2.0) + " Hz)");
  }
  const auto sections = butterworth_lowpass_sections(order, cutoff_hz, traj.sample_rate_hz);
  Trajectory out = traj;
  const std::size_t n = traj.length();
  if (n < 2) return out;
  const std::size_t padlen = 3 * static_cast<std::size_t>(order + 1);
  std::vector<double> column(n);
  for (long c = 0; c < traj.frames.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) column[i] = traj.frames(static_cast<long>(i), c);
    const auto filtered = filtfilt(sections, column, padlen);
    for (std::size_t i = 0; i < n; ++i) out.frames(static_cast<long>(i), c) = filtered[i];
  }
  return out;
}

std::size_t resampled_length(std::size_t frames, double from_hz, double to_hz) {
  if (frames == 0) return 0;
  const double span = static_cast<double>(frames - 1) * to_hz / from_hz;
  return static_cast<std::size_t>(std::floor(span + 1e-9)) + 1;
}

Trajectory resample(const Trajectory& traj, double to_hz) {
  if (!(to_hz > 0.0)) throw InvalidInput("resample: target rate must be positive");
  const double from_hz = traj.sample_rate_hz;
  const std::size_t n = traj.length();
  const std::size_t m = resampled_length(n, from_hz, to_hz);
  Trajectory out;
  out.sample_rate_hz = to_hz;
  out.channel_names = traj.channel_names;
  out.frames.resize(static_cast<long>(m), traj.frames.cols());
  for (std::size_t k = 0; k < m; ++k) {
    const double pos = static_cast<double>(k) * from_hz / to_hz;
    auto i0 = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(i0);
    if (i0 >= n - 1) {
      i0 = n - 1;
      frac = 0.0;
    }
    const long r = static_cast<long>(k);
    if (frac == 0.0) {
      out.frames.row(r) = traj.frames.row(static_cast<long>(i0));
    } else {
      const auto a = traj.frames.row(static_cast<long>(i0));
      const auto b = traj.frames.row(static_cast<long>(i0 + 1));
      out.frames.row(r) = a + frac * (b - a);
    }
  }
  return out;
}

Trajectory zero_mean(const Trajectory& traj) {
  Trajectory out = traj;
  if (traj.length() == 0) return out;
  const Eigen::RowVectorXd mean = traj.frames.colwise().mean();
  out.frames.rowwise() -= mean;
  return out;
}

double quantize6(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return std::strtod(buf, nullptr);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct SubjectModel {
  std::string id;
  Vector rest;               // C
  Matrix postures;           // phones x C, absolute (rest included)
  double time_constant_s = 0.02;
};

struct SentencePlan {
  std::string id;
  std::vector<std::size_t> phones;
};

SubjectModel make_subject(const SynthConfig& cfg, std::size_t s) {
  auto rng = substream(cfg.seed, "subject", s);
  std::normal_distribution<double> rest(0.0, cfg.rest_spread_mm);
  std::normal_distribution<double> spread(0.0, cfg.posture_spread_mm);
  std::uniform_real_distribution<double> tc(cfg.time_constant_min_s, cfg.time_constant_max_s);
  SubjectModel m;
  char name[16];
  std::snprintf(name, sizeof name, "S%zu", s + 1);
  m.id = name;
  const long c = static_cast<long>(cfg.channels);
  m.rest.resize(c);
  for (long k = 0; k < c; ++k) m.rest(k) = rest(rng);
  m.postures.resize(static_cast<long>(cfg.phone_inventory.size()), c);
  for (long p = 0; p < m.postures.rows(); ++p) {
    for (long k = 0; k < c; ++k) m.postures(p, k) = m.rest(k) + spread(rng);
  }
  m.time_constant_s = tc(rng);
  return m;
}

SentencePlan make_sentence(const SynthConfig& cfg, std::size_t i) {
  auto rng = substream(cfg.seed, "sentence", i);
  std::uniform_int_distribution<std::size_t> len(cfg.min_phones, cfg.max_phones);
  std::uniform_int_distribution<std::size_t> phone(0, cfg.phone_inventory.size() - 1);
  SentencePlan plan;
  char name[16];
  std::snprintf(name, sizeof name, "s%04zu", i + 1);
  plan.id = name;
  const std::size_t n = len(rng);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = phone(rng);
    // No immediate repeats so every segment has a distinct target.
    while (!plan.phones.empty() && p == plan.phones.back()) p = phone(rng);
    plan.phones.push_back(p);
  }
  return plan;
}

// Boundaries (in samples at `rate_hz`) of consecutive durations, each
// segment at least one sample long.
std::vector<std::size_t> boundaries_from_durations(const std::vector<double>& durations_s, double rate_hz) {
  std::vector<std::size_t> b(durations_s.size() + 1, 0);
  double t = 0.0;
  for (std::size_t k = 0; k < durations_s.size(); ++k) {
    t += durations_s[k];
    b[k + 1] = std::max(b[k] + 1, static_cast<std::size_t>(std::llround(t * rate_hz)));
  }
  return b;
}

Utterance render(const SynthConfig& cfg, const SubjectModel& subject, const SentencePlan& plan,
                 const std::vector<double>& neutral_durations_s, Rate rate, std::mt19937_64& noise_rng) {
  std::vector<double> durations = neutral_durations_s;
  double amplitude = 1.0;
  if (rate == Rate::Fast) {
    for (std::size_t k = 0; k < durations.size(); ++k) durations[k] *= cfg.fast_duration_scale[plan.phones[k]];
    amplitude = cfg.fast_amplitude_scale;
  } else if (rate == Rate::Slow) {
    for (std::size_t k = 0; k < durations.size(); ++k) durations[k] *= cfg.slow_duration_scale[plan.phones[k]];
    amplitude = cfg.slow_amplitude_scale;
  }
  const auto raw_bounds = boundaries_from_durations(durations, cfg.raw_rate_hz);
  const std::size_t n_raw = raw_bounds.back();
  const long c = static_cast<long>(cfg.channels);

  // Step targets through a critically damped second-order smoother realised
  // as two identical one-pole sections.
  const double k = 1.0 - std::exp(-1.0 / (subject.time_constant_s * cfg.raw_rate_hz));
  Trajectory raw;
  raw.sample_rate_hz = cfg.raw_rate_hz;
  raw.channel_names = default_channel_names(cfg.channels);
  raw.frames.resize(static_cast<long>(n_raw), c);
  Vector s1 = subject.postures.row(static_cast<long>(plan.phones.front())).transpose();
  Vector s2 = s1;
  for (std::size_t seg = 0; seg < plan.phones.size(); ++seg) {
    const auto target = subject.postures.row(static_cast<long>(plan.phones[seg])).transpose();
    for (std::size_t n = raw_bounds[seg]; n < raw_bounds[seg + 1]; ++n) {
      s1 += k * (target - s1);
      s2 += k * (s1 - s2);
      raw.frames.row(static_cast<long>(n)) = s2.transpose();
    }
  }
  const Eigen::RowVectorXd mean = raw.frames.colwise().mean();
  raw.frames = ((raw.frames.rowwise() - mean) * amplitude).rowwise() + mean;
  if (cfg.sensor_noise_mm > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.sensor_noise_mm);
    for (long i = 0; i < raw.frames.rows(); ++i) {
      for (long j = 0; j < c; ++j) raw.frames(i, j) += noise(noise_rng);
    }
  }

  Trajectory processed = resample(lowpass(raw, cfg.cutoff_hz), cfg.output_rate_hz);
  processed.frames = processed.frames.unaryExpr([](double v) { return quantize6(v); });

  // Map boundaries onto the output grid and keep every segment non-empty.
  const std::size_t t_out = processed.length();
  const std::size_t n_seg = plan.phones.size();
  std::vector<std::size_t> b(n_seg + 1);
  for (std::size_t i = 0; i <= n_seg; ++i) {
    b[i] = static_cast<std::size_t>(
        std::llround(static_cast<double>(raw_bounds[i]) * cfg.output_rate_hz / cfg.raw_rate_hz));
  }
  b.front() = 0;
  b.back() = t_out;
  for (std::size_t i = 1; i < n_seg; ++i) b[i] = std::max(b[i], b[i - 1] + 1);
  for (std::size_t i = n_seg - 1; i >= 1; --i) b[i] = std::min(b[i], b[i + 1] - 1);

  Utterance utt;
  utt.sentence_id = plan.id;
  utt.subject_id = subject.id;
  utt.rate = rate;
  utt.trajectory = std::move(processed);
  for (std::size_t i = 0; i < n_seg; ++i) {
    utt.segments.push_back({cfg.phone_inventory[plan.phones[i]], b[i], b[i + 1]});
  }
  utt.validate();
  return utt;
}

std::string format_list(const std::vector<double>& values) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.6f", i ? "," : "", values[i]);
    out += buf;
  }
  return out;
}

}  // namespace

Corpus synth_corpus(const SynthConfig& input_cfg) {
  const SynthConfig cfg = resolve_synth_config(input_cfg);
  std::vector<SubjectModel> subjects;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) subjects.push_back(make_subject(cfg, s));

  auto base_rng = substream(cfg.seed, "phone-duration");
  std::uniform_real_distribution<double> base(cfg.phone_duration_min_s, cfg.phone_duration_max_s);
  std::vector<double> base_duration;
  for (std::size_t p = 0; p < cfg.phone_inventory.size(); ++p) base_duration.push_back(base(base_rng));

  Corpus corpus;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    const SubjectModel& subject = subjects[s];
    for (std::size_t i = 0; i < cfg.n_sentences; ++i) {
      const SentencePlan plan = make_sentence(cfg, i);
      auto rng = substream(cfg.seed, "render", s, i);
      std::uniform_real_distribution<double> jitter(1.0 - cfg.duration_jitter, 1.0 + cfg.duration_jitter);
      std::vector<double> durations;
      for (std::size_t p : plan.phones) durations.push_back(base_duration[p] * jitter(rng));
      for (Rate rate : {Rate::Neutral, Rate::Fast, Rate::Slow}) {
        corpus.add(render(cfg, subject, plan, durations, rate, rng));
      }
    }
  }

  char buf[64];
  auto put = [&](const std::string& key, const std::string& value) { corpus.manifest.emplace_back(key, value); };
  put("seed", std::to_string(cfg.seed));
  put("n_subjects", std::to_string(cfg.n_subjects));
  put("n_sentences", std::to_string(cfg.n_sentences));
  put("channels", std::to_string(cfg.channels));
  std::string inv;
  for (std::size_t i = 0; i < cfg.phone_inventory.size(); ++i) inv += (i ? "," : "") + cfg.phone_inventory[i];
  put("phone_inventory", inv);
  put("fast_duration_scale", format_list(cfg.fast_duration_scale));
  put("slow_duration_scale", format_list(cfg.slow_duration_scale));
  std::snprintf(buf, sizeof buf, "%.6f", cfg.fast_amplitude_scale);
  put("fast_amplitude_scale", buf);
  std::snprintf(buf, sizeof buf, "%.6f", cfg.slow_amplitude_scale);
  put("slow_amplitude_scale", buf);
  std::snprintf(buf, sizeof buf, "%.6f", cfg.output_rate_hz);
  put("sample_rate_hz", buf);
  return corpus;
}

// ---------------------------------------------------------------------------
// Files

void write_trajectory_file(const std::filesystem::path& path, const Utterance& utt) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("cannot write " + path.string());
  const Trajectory& t = utt.trajectory;
  std::fprintf(f, "# sentence_id: %s\n", utt.sentence_id.c_str());
  std::fprintf(f, "# rate: %s\n", to_string(utt.rate).c_str());
  std::fprintf(f, "# sample_rate_hz: %.6f\n", t.sample_rate_hz);
  std::string names;
  for (std::size_t c = 0; c < t.channel_names.size(); ++c) names += (c ? "," : "") + t.channel_names[c];
  std::fprintf(f, "# channels: %s\n", names.c_str());
  for (long i = 0; i < t.frames.rows(); ++i) {
    for (long c = 0; c < t.frames.cols(); ++c) std::fprintf(f, c ? " %.6f" : "%.6f", t.frames(i, c));
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw IoError("error closing " + path.string());
}

void write_segment_file(const std::filesystem::path& path, const std::vector<PhoneSegment>& segs) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const PhoneSegment& s : segs) os << s.label << ' ' << s.start_frame << ' ' << s.end_frame << '\n';
  if (!os) throw IoError("error writing " + path.string());
}

std::vector<PhoneSegment> read_segment_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<PhoneSegment> segs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    PhoneSegment s;
    if (!(ls >> s.label >> s.start_frame >> s.end_frame)) throw DataError("malformed segment line in " + path.string());
    segs.push_back(s);
  }
  return segs;
}

Utterance read_utterance_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  Utterance utt;
  utt.sentence_id = path.stem().string();
  bool have_rate = false, have_names = false;
  std::vector<double> values;
  std::string line;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string key = line.substr(1, colon - 1);
      std::string value = line.substr(colon + 1);
      auto trim = [](std::string& s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
      };
      trim(key);
      trim(value);
      if (key == "sentence_id") {
        utt.sentence_id = value;
      } else if (key == "rate") {
        utt.rate = parse_rate(value);
        have_rate = true;
      } else if (key == "sample_rate_hz") {
        utt.trajectory.sample_rate_hz = std::stod(value);
      } else if (key == "channels") {
        std::istringstream vs(value);
        std::string name;
        while (std::getline(vs, name, ',')) utt.trajectory.channel_names.push_back(name);
        have_names = true;
      }
      continue;
    }
    std::istringstream ls(line);
    double v;
    std::size_t count = 0;
    while (ls >> v) {
      values.push_back(v);
      ++count;
    }
    if (!ls.eof()) throw DataError("non-numeric frame value in " + path.string());
    if (have_names && count != utt.trajectory.channel_names.size()) {
      throw DataError(path.string() + ": frame " + std::to_string(rows) + " has " + std::to_string(count) +
                      " values, expected " + std::to_string(utt.trajectory.channel_names.size()));
    }
    ++rows;
  }
  if (!have_names || !have_rate) throw DataError(path.string() + ": missing rate or channels header");
  const long c = static_cast<long>(utt.trajectory.channel_names.size());
  utt.trajectory.frames = ConstMatrixMap(values.data(), static_cast<long>(rows), c);
  auto seg = path;
  seg.replace_extension(".seg");
  if (std::filesystem::exists(seg)) utt.segments = read_segment_file(seg);
  try {
    utt.validate();
  } catch (const InvalidInput& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return utt;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream os(dir / "manifest.txt");
    if (!os) throw IoError("cannot write manifest in " + dir.string());
    for (const auto& [k, v] : corpus.manifest) os << k << '=' << v << '\n';
  }
  for (const Utterance& u : corpus.utterances()) {
    const fs::path sub = dir / u.subject_id / to_string(u.rate);
    fs::create_directories(sub, ec);
    if (ec) throw IoError("cannot create " + sub.string() + ": " + ec.message());
    write_trajectory_file(sub / (u.sentence_id + ".txt"), u);
    write_segment_file(sub / (u.sentence_id + ".seg"), u.segments);
  }
}

Corpus read_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("corpus directory " + dir.string() + " does not exist");
  Corpus corpus;
  {
    std::ifstream is(dir / "manifest.txt");
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) corpus.manifest.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  std::vector<fs::path> subjects;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) subjects.push_back(e.path());
  }
  std::sort(subjects.begin(), subjects.end());
  for (const fs::path& sdir : subjects) {
    for (Rate rate : {Rate::Neutral, Rate::Fast, Rate::Slow}) {
      const fs::path rdir = sdir / to_string(rate);
      if (!fs::is_directory(rdir)) continue;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(rdir)) {
        if (e.path().extension() == ".txt") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const fs::path& f : files) {
        Utterance u = read_utterance_file(f);
        u.subject_id = sdir.filename().string();
        if (u.rate != rate) throw DataError(f.string() + ": header rate disagrees with directory");
        corpus.add(std::move(u));
      }
    }
  }
  if (corpus.utterances().empty()) throw DataError("corpus directory " + dir.string() + " holds no utterances");
  return corpus;
}

}  // namespace astnet
