// src/run_config.cpp

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

#include "astnet/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "astnet/error.hpp"

namespace astnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw InvalidInput("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) {
    throw InvalidInput("config key '" + key + "': expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field count_field(T RunConfig::*outer, std::size_t T::*inner) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.*outer.*inner = parse_u64(k, v); },
          [=](const RunConfig& c) { return std::to_string(c.*outer.*inner); }};
}

template <typename T>
Field real_field(T RunConfig::*outer, double T::*inner) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.*outer.*inner = parse_real(k, v); },
          [=](const RunConfig& c) { return real_text(c.*outer.*inner); }};
}

Field path_field(std::filesystem::path RunConfig::*member) {
  return {[=](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [=](const RunConfig& c) { return (c.*member).string(); }};
}

// Ordered so that items() is stable.
const std::vector<std::pair<std::string, Field>>& field_table() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    using R = RunConfig;
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("seed", Field{[](R& c, const std::string& k, const std::string& v) {
                                   c.synth.seed = c.train.seed = parse_u64(k, v);
                                 },
                                 [](const R& c) { return std::to_string(c.train.seed); }});
    t.emplace_back("subjects", count_field(&R::synth, &SynthConfig::n_subjects));
    t.emplace_back("sentences", count_field(&R::synth, &SynthConfig::n_sentences));
    t.emplace_back("channels", Field{[](R& c, const std::string& k, const std::string& v) {
                                       c.synth.channels = c.model.channels = parse_u64(k, v);
                                     },
                                     [](const R& c) { return std::to_string(c.model.channels); }});
    t.emplace_back("min_phones", count_field(&R::synth, &SynthConfig::min_phones));
    t.emplace_back("max_phones", count_field(&R::synth, &SynthConfig::max_phones));
    t.emplace_back("phone_duration_min_s", real_field(&R::synth, &SynthConfig::phone_duration_min_s));
    t.emplace_back("phone_duration_max_s", real_field(&R::synth, &SynthConfig::phone_duration_max_s));
    t.emplace_back("duration_jitter", real_field(&R::synth, &SynthConfig::duration_jitter));
    t.emplace_back("fast_scale_min", real_field(&R::synth, &SynthConfig::fast_scale_min));
    t.emplace_back("fast_scale_max", real_field(&R::synth, &SynthConfig::fast_scale_max));
    t.emplace_back("slow_scale_min", real_field(&R::synth, &SynthConfig::slow_scale_min));
    t.emplace_back("slow_scale_max", real_field(&R::synth, &SynthConfig::slow_scale_max));
    t.emplace_back("fast_amplitude_scale", real_field(&R::synth, &SynthConfig::fast_amplitude_scale));
    t.emplace_back("slow_amplitude_scale", real_field(&R::synth, &SynthConfig::slow_amplitude_scale));
    t.emplace_back("posture_spread_mm", real_field(&R::synth, &SynthConfig::posture_spread_mm));
    t.emplace_back("rest_spread_mm", real_field(&R::synth, &SynthConfig::rest_spread_mm));
    t.emplace_back("time_constant_min_s", real_field(&R::synth, &SynthConfig::time_constant_min_s));
    t.emplace_back("time_constant_max_s", real_field(&R::synth, &SynthConfig::time_constant_max_s));
    t.emplace_back("sensor_noise_mm", real_field(&R::synth, &SynthConfig::sensor_noise_mm));
    t.emplace_back("raw_rate_hz", real_field(&R::synth, &SynthConfig::raw_rate_hz));
    t.emplace_back("output_rate_hz", real_field(&R::synth, &SynthConfig::output_rate_hz));
    t.emplace_back("cutoff_hz", real_field(&R::synth, &SynthConfig::cutoff_hz));

    t.emplace_back("enc_hidden", count_field(&R::model, &ModelConfig::enc_hidden));
    t.emplace_back("dec_hidden", count_field(&R::model, &ModelConfig::dec_hidden));
    t.emplace_back("prenet_units", count_field(&R::model, &ModelConfig::prenet_units));
    t.emplace_back("attn_dim", count_field(&R::model, &ModelConfig::attn_dim));
    t.emplace_back("location_filters", count_field(&R::model, &ModelConfig::location_filters));
    t.emplace_back("location_kernel_width", count_field(&R::model, &ModelConfig::location_kernel_width));
    t.emplace_back("stop_threshold", real_field(&R::model, &ModelConfig::stop_threshold));
    t.emplace_back("max_steps_factor", real_field(&R::model, &ModelConfig::max_steps_factor));

    t.emplace_back("direction", Field{[](R& c, const std::string&, const std::string& v) {
                                        c.train.direction = parse_direction(v);
                                      },
                                      [](const R& c) { return to_string(c.train.direction); }});
    t.emplace_back("scheme", Field{[](R& c, const std::string&, const std::string& v) {
                                     c.train.scheme = parse_scheme(v);
                                   },
                                   [](const R& c) { return to_string(c.train.scheme); }});
    t.emplace_back("epochs", count_field(&R::train, &TrainConfig::epochs));
    t.emplace_back("batch_size", count_field(&R::train, &TrainConfig::batch_size));
    t.emplace_back("learning_rate", real_field(&R::train, &TrainConfig::learning_rate));
    t.emplace_back("lr_decay", real_field(&R::train, &TrainConfig::lr_decay));
    t.emplace_back("grad_clip_norm", real_field(&R::train, &TrainConfig::grad_clip_norm));
    t.emplace_back("stop_target_positive_weight", real_field(&R::train, &TrainConfig::stop_target_positive_weight));
    t.emplace_back("prenet_dropout", real_field(&R::train, &TrainConfig::prenet_dropout));
    t.emplace_back("guided_attention_weight", real_field(&R::train, &TrainConfig::guided_attention_weight));
    t.emplace_back("guided_attention_width", real_field(&R::train, &TrainConfig::guided_attention_width));
    t.emplace_back("finetune_epochs", Field{[](R& c, const std::string& k, const std::string& v) {
                                              c.finetune_epochs = parse_u64(k, v);
                                            },
                                            [](const R& c) { return std::to_string(c.finetune_epochs); }});
    t.emplace_back("finetune_learning_rate", Field{[](R& c, const std::string& k, const std::string& v) {
                                                     c.finetune_learning_rate = parse_real(k, v);
                                                   },
                                                   [](const R& c) { return real_text(c.finetune_learning_rate); }});
    t.emplace_back("folds", Field{[](R& c, const std::string& k, const std::string& v) { c.folds = parse_u64(k, v); },
                                  [](const R& c) { return std::to_string(c.folds); }});
    t.emplace_back("fold", Field{[](R& c, const std::string& k, const std::string& v) { c.fold = parse_u64(k, v); },
                                 [](const R& c) { return std::to_string(c.fold); }});
    t.emplace_back("subject", Field{[](R& c, const std::string&, const std::string& v) { c.subject = v; },
                                    [](const R& c) { return c.subject; }});

    t.emplace_back("corpus", path_field(&R::corpus));
    t.emplace_back("out", path_field(&R::out));
    t.emplace_back("generic", path_field(&R::generic));
    t.emplace_back("checkpoints", path_field(&R::checkpoints));
    t.emplace_back("checkpoint", path_field(&R::checkpoint));
    t.emplace_back("input", path_field(&R::input));
    t.emplace_back("attention", path_field(&R::attention));
    t.emplace_back("max_steps_override",
                   Field{[](R& c, const std::string& k, const std::string& v) { c.max_steps_override = parse_u64(k, v); },
                         [](const R& c) { return std::to_string(c.max_steps_override); }});
    t.emplace_back("schemes", Field{[](R& c, const std::string&, const std::string& v) {
                                      std::vector<std::string> list = split_list(v);
                                      for (const std::string& s : list) {
                                        if (s != "itdtw") parse_scheme(s);
                                      }
                                      c.schemes = std::move(list);
                                    },
                                    [](const R& c) {
                                      std::string out;
                                      for (const std::string& s : c.schemes) out += (out.empty() ? "" : ",") + s;
                                      return out;
                                    }});
    t.emplace_back("threads", Field{[](R& c, const std::string& k, const std::string& v) { c.threads = parse_u64(k, v); },
                                    [](const R& c) { return std::to_string(c.threads); }});
    t.emplace_back("force", Field{[](R& c, const std::string& k, const std::string& v) { c.force = parse_bool(k, v); },
                                  [](const R& c) { return std::string(c.force ? "true" : "false"); }});
    t.emplace_back("gradcheck_corrupt", Field{[](R& c, const std::string&, const std::string& v) {
                                                c.gradcheck_corrupt = v;
                                              },
                                              [](const R& c) { return c.gradcheck_corrupt; }});
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, field] : field_table()) {
    if (name == key) return &field;
  }
  return nullptr;
}

}  // namespace

RunConfig::RunConfig() {
  train.prenet_dropout = 0.5;
  train.guided_attention_weight = 1.0;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw InvalidInput("unknown config key '" + key + "'");
  try {
    f->set(*this, key, value);
  } catch (const InvalidInput& e) {
    const std::string what = e.what();
    if (what.rfind("config key", 0) == 0) throw;
    throw InvalidInput("config key '" + key + "': " + what);
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const InvalidInput& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, field] : field_table()) out.emplace_back(name, field.get(*this));
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& entry : field_table()) out.push_back(entry.first);
    return out;
  }();
  return k;
}

void RunConfig::validate() const {
  synth.validate();
  model.validate();
  train.validate();
  if (synth.channels != model.channels) throw InvalidInput("config: synth and model channel counts differ");
  if (folds < 2) throw InvalidInput("config: folds must be >= 2");
  if (fold >= folds) {
    throw InvalidInput("config: fold " + std::to_string(fold) + " is out of range for " + std::to_string(folds) +
                       " folds");
  }
  if (finetune_epochs < 1) throw InvalidInput("config: finetune_epochs must be >= 1");
  if (!(finetune_learning_rate > 0.0)) throw InvalidInput("config: finetune_learning_rate must be positive");
  if (threads < 1) throw InvalidInput("config: threads must be >= 1");
  if (schemes.empty()) throw InvalidInput("config: schemes must list at least one scheme");
}

TrainConfig RunConfig::train_config_for(Scheme scheme) const {
  TrainConfig t = train;
  t.scheme = scheme;
  if (scheme == Scheme::Finetuned) {
    t.epochs = finetune_epochs;
    t.learning_rate = finetune_learning_rate;
  }
  return t;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& root, Direction direction, Scheme scheme,
                                      std::size_t fold, const std::string& subject) {
  std::string name = "fold" + std::to_string(fold);
  if (scheme != Scheme::Generic) name += "_" + subject;
  return root / to_string(direction) / to_string(scheme) / (name + ".ckpt");
}

}  // namespace astnet
