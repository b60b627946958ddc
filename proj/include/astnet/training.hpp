// include/astnet/training.hpp

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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "astnet/model.hpp"
#include "astnet/signal.hpp"

namespace astnet {

enum class Direction { N2F, N2S };
enum class Scheme { SubjectDependent, Generic, Finetuned };

std::string to_string(Direction d);
std::string to_string(Scheme s);
Direction parse_direction(const std::string& text);
Scheme parse_scheme(const std::string& text);
Rate target_rate(Direction d);

struct TrainConfig {
  Direction direction = Direction::N2F;
  Scheme scheme = Scheme::Generic;
  std::size_t epochs = 60;
  std::size_t batch_size = 1;
  double learning_rate = 1e-3;
  double lr_decay = 0.98;  // per epoch, multiplicative
  double grad_clip_norm = 1.0;
  double stop_target_positive_weight = 5.0;
  double prenet_dropout = 0.0;  // training only
  // Diagonal attention prior, training only. Weight 0 disables it.
  double guided_attention_weight = 0.0;
  double guided_attention_width = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossTerms {
  double mse = 0.0;
  double bce = 0.0;
  double total = 0.0;
};

// Mean squared error over all frames and channels plus the positive-weighted
// binary cross-entropy of the stop probabilities against a target that is 1
// on frame target_length-1 and 0 elsewhere.
LossTerms loss(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& target,
               const Eigen::Ref<const Vector>& stop_probs, std::size_t target_length,
               double positive_weight = 5.0);

struct LossGradient {
  LossTerms terms;
  Matrix d_frames;
  Vector d_stop_logits;
};

// Same objective evaluated from stop logits (numerically stable), with its
// gradient with respect to the frames and the logits.
LossGradient loss_with_gradient(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& target,
                                const Eigen::Ref<const Vector>& stop_logits, double positive_weight);

// weight/M * sum_t sum_n alpha[t,n] * (1 - exp(-(n/N - t/M)^2 / (2 width^2))),
// which is small when each step attends near the diagonal. Returns the value
// and its gradient with respect to the M x N attention weights.
struct GuidedAttentionTerm {
  double value = 0.0;
  Matrix d_alphas;
};

GuidedAttentionTerm guided_attention(const Eigen::Ref<const Matrix>& alphas, double weight, double width);

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
};

// One bias-corrected Adam update. Throws DataError naming the offending
// parameter (via `names`, when given) on a non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               std::span<const ParamSlice> names = {});

// Rescales grads in place so the global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<double> grads, double max_norm);

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Seeded shuffle, then k contiguous test blocks of floor/ceil(n/k) ids.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& sentence_ids, std::size_t k, std::uint64_t seed);

// One input/target pair, both zero-mean.
struct TrainingPair {
  std::string subject_id;
  std::string sentence_id;
  Matrix input;
  Matrix target;
};

// Neutral -> target-rate pairs for the given subjects and sentences. Throws
// DataError listing every sentence without a complete pair.
std::vector<TrainingPair> make_pairs(const Corpus& corpus, Direction direction,
                                     const std::vector<std::string>& subjects,
                                     const std::vector<std::string>& sentence_ids);

struct EpochStats {
  LossTerms mean;
  double guided_attention = 0.0;  // mean prior term, not part of mean.total
  double learning_rate = 0.0;
};

struct TrainResult {
  AstNetParams params;
  LossTerms initial;               // teacher-forced loss of the starting weights
  std::vector<EpochStats> epochs;  // mean loss over each epoch's updates
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

// Trains from `init` (or a fresh seeded initialisation) on `pairs`.
TrainResult train_pairs(const std::vector<TrainingPair>& pairs, const ModelConfig& model_cfg,
                        const TrainConfig& cfg, const AstNetParams* init = nullptr,
                        const EpochCallback& on_epoch = {});

// Teacher-forced mean loss of params over pairs, no update.
LossTerms evaluate_loss(const std::vector<TrainingPair>& pairs, const AstNetParams& params,
                        double positive_weight);

// Scheme-level entry point. subject_dependent and finetuned need `subject`;
// finetuned needs `generic`.
TrainResult train(const Corpus& corpus, const FoldSplit& fold, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::string& subject = {}, const AstNetParams* generic = nullptr,
                  const EpochCallback& on_epoch = {});

// Longest target-rate utterance (frames) over the given pairs.
std::size_t longest_target(const std::vector<TrainingPair>& pairs);

// key=value training log.
struct RunManifest {
  std::vector<std::pair<std::string, std::string>> entries;
  void add(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
  std::string str() const;
  void write(const std::filesystem::path& path) const;
};

RunManifest make_manifest(const TrainConfig& cfg, const ModelConfig& model_cfg, std::size_t fold,
                          const std::string& subject, const TrainResult& result, std::size_t max_out_frames);

// ---------------------------------------------------------------------------
// Whole-network finite-difference check on a toy instance (C=2, enc 4,
// dec 6, 5 input frames, 4 target frames) against the full training loss.

ModelConfig toy_model_config();

struct ToyGradCheckOptions {
  std::uint64_t seed = 1;
  // Large enough that rounding noise in the loss stays well below the
  // tolerance for near-zero gradient entries.
  double eps = 3e-4;
  // Test hook: perturb the analytic gradient of this group before comparing.
  std::string corrupt_group;
};

GradientCheckReport toy_gradient_check(const ToyGradCheckOptions& options = {});

}  // namespace astnet
