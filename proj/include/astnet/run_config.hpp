// include/astnet/run_config.hpp

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
#include <string>
#include <vector>

#include "astnet/model.hpp"
#include "astnet/signal.hpp"
#include "astnet/training.hpp"

namespace astnet {

// Flat key=value configuration shared by every command. Later assignments
// win, so a config file loaded first is overridden by command-line flags.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;

  std::size_t folds = 4;
  std::size_t fold = 0;
  std::string subject;  // finetuned and subject_dependent runs
  // Finetuning continues from generic weights with its own schedule.
  std::size_t finetune_epochs = 20;
  double finetune_learning_rate = 5e-4;

  std::filesystem::path corpus;       // corpus directory
  std::filesystem::path out;          // output directory or file
  std::filesystem::path generic;      // generic checkpoint for finetuning
  std::filesystem::path checkpoints;  // checkpoint tree for eval
  std::filesystem::path checkpoint;   // single checkpoint for transform
  std::filesystem::path input;        // utterance file for transform
  std::filesystem::path attention;    // optional attention side output
  std::size_t max_steps_override = 0;  // 0: use the checkpoint's bound
  std::vector<std::string> schemes{"generic", "finetuned"};  // evaluated schemes besides IT-DTW

  std::size_t threads = 1;
  bool force = false;
  std::string gradcheck_corrupt;  // test hook: group whose analytic gradient is perturbed

  RunConfig();

  // Throws InvalidInput for unknown keys and malformed values.
  void set(const std::string& key, const std::string& value);
  // Lines of key=value; '#' starts a comment; blank lines are skipped.
  void load_file(const std::filesystem::path& path);
  // Every recognized key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> items() const;
  static const std::vector<std::string>& keys();

  // Range checks on every embedded config.
  void validate() const;

  // The schedule actually used for a given scheme.
  TrainConfig train_config_for(Scheme scheme) const;
};

// <root>/<direction>/<scheme>/fold<k>[_<subject>].ckpt
std::filesystem::path checkpoint_path(const std::filesystem::path& root, Direction direction, Scheme scheme,
                                      std::size_t fold, const std::string& subject);

}  // namespace astnet
