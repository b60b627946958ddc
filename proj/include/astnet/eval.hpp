// include/astnet/eval.hpp

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

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "astnet/model.hpp"
#include "astnet/signal.hpp"
#include "astnet/training.hpp"

namespace astnet {

// ---------------------------------------------------------------------------
// Dynamic time warping

struct DtwResult {
  double distance_mm = 0.0;  // total_cost / path_length
  double total_cost = 0.0;   // accumulated Euclidean cost along the path
  std::vector<std::pair<std::size_t, std::size_t>> path;
  std::size_t path_length = 0;
};

// Steps (1,0), (0,1), (1,1); Euclidean local cost over all channels. Among
// equal-cost alignments the shortest path wins, which keeps the normalised
// distance symmetric in its arguments.
DtwResult dtw(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);
DtwResult dtw(const Trajectory& a, const Trajectory& b);

double relative_improvement(double baseline_mean, double model_mean);

// Population standard deviation per channel. Needs at least two frames.
Vector sdat(const Trajectory& traj);
Vector sdat(const Eigen::Ref<const Matrix>& frames);

// ---------------------------------------------------------------------------
// Statistics

// Regularised incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-sided tail probability of Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct TTestResult {
  std::size_t n = 0;
  double mean_diff = 0.0;
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};

// Paired t-test on a[i] - b[i]. Identical samples give t = 0, p = 1.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Scheme evaluation

// Weights for (scheme, fold, subject); nullptr means "no model available".
using ModelLookup = std::function<const AstNetParams*(std::size_t fold, const std::string& subject)>;

struct UtteranceEval {
  std::string subject_id;
  std::string sentence_id;
  std::size_t fold = 0;
  double dtw_mm = 0.0;
  double dtw_total = 0.0;
  std::size_t path_length = 0;
  std::size_t predicted_frames = 0;
  std::size_t target_frames = 0;
  bool truncated = false;
  Trajectory prediction;  // zero-mean, same units as the corpus
};

struct SchemeEvaluation {
  std::string scheme;  // "itdtw", "subject_dependent", "generic", "finetuned"
  Direction direction = Direction::N2F;
  std::vector<UtteranceEval> utterances;
};

// Transforms every test utterance of every fold with the model from `lookup`
// (identity when lookup is empty: the IT-DTW baseline) and scores it against
// the zero-mean ground truth. Throws DataError naming any missing model or
// empty test set.
SchemeEvaluation evaluate_scheme(const Corpus& corpus, Direction direction, const std::vector<FoldSplit>& folds,
                                 const std::string& scheme, const ModelLookup& lookup,
                                 const std::vector<std::string>& subjects = {});

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> values);

struct SchemeTable {
  Direction direction = Direction::N2F;
  std::vector<std::string> schemes;
  std::vector<std::string> subjects;
  std::map<std::pair<std::string, std::string>, MeanStd> cells;  // (scheme, subject)

  const MeanStd& at(const std::string& scheme, const std::string& subject) const;
  // Schemes as rows, subjects as columns, "mean (std)" cells.
  std::string render() const;
};

SchemeTable make_scheme_table(const std::vector<SchemeEvaluation>& evaluations);

// ---------------------------------------------------------------------------
// Range (SDAT) and duration analyses

struct SdatSummary {
  std::vector<std::string> channels;
  // condition -> one SDAT vector per utterance
  std::map<std::string, std::vector<Vector>> values;
  // condition -> per-channel median
  std::map<std::string, Vector> medians;
};

// Conditions "neutral", "original" (target rate) and "predicted".
SdatSummary sdat_analysis(const Corpus& corpus, const SchemeEvaluation& evaluation);

struct PhoneDuration {
  std::string label;
  std::vector<double> neutral, original, predicted;  // seconds
  double median_neutral = 0.0, median_original = 0.0, median_predicted = 0.0;
  double abs_median_diff = 0.0;  // |median(neutral) - median(original)|
  TTestResult test;
  bool significant = false;  // p < 0.01
};

struct DurationStats {
  Direction direction = Direction::N2F;
  std::vector<PhoneDuration> phones;  // ascending abs_median_diff
  std::vector<std::string> excluded;  // fewer than two paired occurrences
};

// Boundaries of the target segmentation carried onto `predicted` through the
// predicted<->target DTW path: each boundary goes to the first path pair
// reaching it. Durations are clamped to at least one frame.
std::vector<PhoneSegment> transfer_segments(const Trajectory& predicted, const Trajectory& target,
                                            const std::vector<PhoneSegment>& target_segments);

DurationStats duration_analysis(const Corpus& corpus, const SchemeEvaluation& evaluation);

// Writes scheme_table.csv, scheme_table.txt, utterance_dtw.csv, sdat_long.csv,
// duration_long.csv and duration_tests.csv into `dir`.
void emit_reports(const SchemeTable& table, const std::vector<SchemeEvaluation>& evaluations,
                  const SdatSummary* sdat_summary, const DurationStats* durations, const std::filesystem::path& dir,
                  const std::string& prefix = "");

// Parses a scheme_table.csv back into cells.
SchemeTable read_scheme_table_csv(const std::filesystem::path& path);

}  // namespace astnet
