// tests/test_eval.cpp

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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "doctest.h"

#include "astnet/error.hpp"
#include "astnet/eval.hpp"

using namespace astnet;
namespace fs = std::filesystem;

namespace {

struct Best {
  double cost = std::numeric_limits<double>::infinity();
  std::size_t length = 0;
};

// Walks every monotone path from (0,0) to (n-1,m-1) and keeps the cheapest,
// shortest among equal costs. Exponential, fine for lengths up to 5.
void enumerate(const std::vector<double>& a, const std::vector<double>& b, std::size_t i, std::size_t j,
               double cost, std::size_t len, Best& best) {
  cost += std::abs(a[i] - b[j]);
  ++len;
  if (i + 1 == a.size() && j + 1 == b.size()) {
    if (cost < best.cost || (cost == best.cost && len < best.length)) best = {cost, len};
    return;
  }
  if (i + 1 < a.size()) enumerate(a, b, i + 1, j, cost, len, best);
  if (j + 1 < b.size()) enumerate(a, b, i, j + 1, cost, len, best);
  if (i + 1 < a.size() && j + 1 < b.size()) enumerate(a, b, i + 1, j + 1, cost, len, best);
}

std::vector<std::vector<double>> all_sequences(std::size_t n) {
  std::vector<std::vector<double>> out{{}};
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::vector<double>> next;
    for (const auto& s : out)
      for (double v : {0.0, 1.0, 2.0}) {
        next.push_back(s);
        next.back().push_back(v);
      }
    out = std::move(next);
  }
  return out;
}

Matrix column(const std::vector<double>& v) {
  Matrix m(static_cast<long>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<long>(i), 0) = v[i];
  return m;
}

Matrix random_matrix(long r, long c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

double boost_p(double t, double df) {
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

Corpus small_corpus() {
  SynthConfig s;
  s.n_sentences = 8;
  s.min_phones = 4;
  s.max_phones = 6;
  return synth_corpus(s);
}

}  // namespace

TEST_CASE("dtw agrees with exhaustive path enumeration") {
  std::size_t pairs = 0;
  for (std::size_t n = 1; n <= 5; ++n) {
    const auto as = all_sequences(n);
    for (std::size_t m = 1; m <= 5; ++m) {
      const auto bs = all_sequences(m);
      for (const auto& a : as) {
        for (const auto& b : bs) {
          Best best;
          enumerate(a, b, 0, 0, 0.0, 0, best);
          const DtwResult d = dtw(column(a), column(b));
          REQUIRE(d.total_cost == best.cost);
          REQUIRE(d.path_length == best.length);
          REQUIRE(d.distance_mm == doctest::Approx(best.cost / static_cast<double>(best.length)).epsilon(1e-15));
          ++pairs;
        }
      }
    }
  }
  CHECK(pairs == 363u * 363u);
}

TEST_CASE("dtw path is a valid monotone alignment") {
  std::mt19937_64 rng(4);
  const Matrix a = random_matrix(7, 3, rng), b = random_matrix(11, 3, rng);
  const DtwResult d = dtw(a, b);
  REQUIRE(d.path.size() == d.path_length);
  CHECK(d.path.front() == std::make_pair<std::size_t, std::size_t>(0, 0));
  CHECK(d.path.back() == std::make_pair<std::size_t, std::size_t>(6, 10));
  double total = 0.0;
  for (std::size_t k = 0; k < d.path.size(); ++k) {
    const auto [i, j] = d.path[k];
    total += (a.row(static_cast<long>(i)) - b.row(static_cast<long>(j))).norm();
    if (k > 0) {
      const std::size_t di = i - d.path[k - 1].first, dj = j - d.path[k - 1].second;
      CHECK(di <= 1);
      CHECK(dj <= 1);
      CHECK(di + dj >= 1);
    }
  }
  CHECK(total == doctest::Approx(d.total_cost).epsilon(1e-12));
}

TEST_CASE("dtw is zero on itself and symmetric") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<long> len(1, 30);
  for (int t = 0; t < 100; ++t) {
    const Matrix a = random_matrix(len(rng), 6, rng), b = random_matrix(len(rng), 6, rng);
    CHECK(dtw(a, a).distance_mm == 0.0);
    CHECK(dtw(a, b).distance_mm == doctest::Approx(dtw(b, a).distance_mm).epsilon(1e-12));
  }
  CHECK_THROWS_AS(dtw(Matrix(0, 2), Matrix::Zero(3, 2)), InvalidInput);
  CHECK_THROWS_AS(dtw(Matrix::Zero(3, 1), Matrix::Zero(3, 2)), InvalidInput);
}

TEST_CASE("relative improvement in percent") {
  CHECK(relative_improvement(4.79, 4.69) == doctest::Approx(2.0877).epsilon(1e-4));
  CHECK(std::round(relative_improvement(4.79, 4.69) * 100.0) / 100.0 == 2.09);
  CHECK(std::round(relative_improvement(5.05, 4.76) * 100.0) / 100.0 == 5.74);
  CHECK(relative_improvement(2.0, 3.0) < 0.0);
  CHECK_THROWS_AS(relative_improvement(0.0, 1.0), InvalidInput);
}

TEST_CASE("paired t-test against closed forms") {
  // Differences 1, 2, 2: mean 5/3, sample sd 1/sqrt(3), t = 5 on 2 df.
  const std::vector<double> a{2.0, 3.0, 4.0}, b{1.0, 1.0, 2.0};
  const TTestResult r = paired_t_test(a, b);
  CHECK(r.n == 3);
  CHECK(r.df == 2);
  CHECK(r.mean_diff == doctest::Approx(5.0 / 3.0));
  CHECK(std::abs(r.t - 5.0) < 1e-9);
  // With 2 df the two-sided tail is 1 - t / sqrt(2 + t^2).
  CHECK(std::abs(r.p - (1.0 - 5.0 / std::sqrt(27.0))) < 1e-9);

  // With 1 df it is 1 - (2/pi) atan|t|.
  for (double t : {0.3, 1.0, 6.5, 40.0}) {
    CHECK(std::abs(student_t_two_sided_p(t, 1.0) - (1.0 - 2.0 / std::numbers::pi * std::atan(t))) < 1e-10);
  }
  const std::vector<double> same{1.0, 2.0, 3.0};
  const TTestResult z = paired_t_test(same, same);
  CHECK(z.t == 0.0);
  CHECK(z.p == 1.0);
  CHECK_THROWS_AS(paired_t_test(std::vector<double>{1.0}, std::vector<double>{2.0}), InvalidInput);
  CHECK_THROWS_AS(paired_t_test(a, std::vector<double>{1.0, 2.0}), InvalidInput);
}

TEST_CASE("t tail and incomplete beta against boost") {
  for (double df : {1.0, 2.0, 3.0, 7.0, 29.0, 120.0}) {
    for (double t : {0.0, 0.1, 0.9, 2.0, 3.7, 12.0}) {
      CHECK(std::abs(student_t_two_sided_p(t, df) - boost_p(t, df)) < 1e-10);
      CHECK(std::abs(student_t_two_sided_p(-t, df) - boost_p(t, df)) < 1e-10);
    }
  }
  for (double a : {0.5, 1.0, 3.5, 20.0}) {
    for (double b : {0.5, 2.0, 9.0}) {
      for (double x : {0.0, 0.05, 0.3, 0.5, 0.77, 0.999, 1.0}) {
        CHECK(std::abs(incomplete_beta(a, b, x) - boost::math::ibeta(a, b, x)) < 1e-12);
      }
    }
  }
  std::mt19937_64 rng(21);
  for (int k = 0; k < 20; ++k) {
    const Matrix x = random_matrix(15, 2, rng);
    std::vector<double> a(15), b(15);
    for (int i = 0; i < 15; ++i) {
      a[i] = x(i, 0) + 0.3;
      b[i] = x(i, 1);
    }
    const TTestResult r = paired_t_test(a, b);
    CHECK(std::abs(r.p - boost_p(r.t, 14.0)) < 1e-10);
  }
}

TEST_CASE("median, mean_std and sdat") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK_THROWS_AS(median({}), InvalidInput);

  const std::vector<double> v{2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0};
  const MeanStd ms = mean_std(v);
  CHECK(ms.mean == 5.0);
  CHECK(ms.std == doctest::Approx(2.0));  // population
  CHECK(ms.n == 8);

  Matrix f(4, 2);
  f << 1, 10, 2, 10, 3, 10, 4, 10;
  const Vector s = sdat(f);
  CHECK(s(0) == doctest::Approx(std::sqrt(1.25)));
  CHECK(s(1) == 0.0);
  CHECK_THROWS_AS(sdat(Matrix::Zero(1, 2)), InvalidInput);
}

TEST_CASE("segment transfer through the alignment") {
  // Prediction is the target with every frame doubled.
  Trajectory target, pred;
  target.sample_rate_hz = pred.sample_rate_hz = 100.0;
  target.frames.resize(6, 1);
  target.frames << 0, 0, 5, 5, 9, 9;
  pred.frames.resize(12, 1);
  for (long i = 0; i < 12; ++i) pred.frames(i, 0) = target.frames(i / 2, 0);
  target.channel_names = pred.channel_names = {"x"};
  const std::vector<PhoneSegment> segs{{"A", 0, 2}, {"B", 2, 4}, {"C", 4, 6}};
  const auto out = transfer_segments(pred, target, segs);
  REQUIRE(out.size() == 3);
  CHECK(out[0] == PhoneSegment{"A", 0, 4});
  CHECK(out[1] == PhoneSegment{"B", 4, 8});
  CHECK(out[2] == PhoneSegment{"C", 8, 12});

  // A one-frame prediction still gives every phone at least one frame.
  Trajectory tiny = pred;
  tiny.frames = Matrix::Zero(1, 1);
  const auto clamp = transfer_segments(tiny, target, segs);
  for (const PhoneSegment& s : clamp) CHECK(s.frames() >= 1);
}

TEST_CASE("identity baseline, tables and analyses") {
  const Corpus c = small_corpus();
  const auto folds = make_folds(c.sentence_ids(), 4, 1);
  const SchemeEvaluation ev = evaluate_scheme(c, Direction::N2S, folds, "itdtw", {});
  CHECK(ev.utterances.size() == 3 * 8);
  for (const UtteranceEval& u : ev.utterances) {
    const Trajectory in = zero_mean(c.at(u.subject_id, u.sentence_id, Rate::Neutral).trajectory);
    const Trajectory tg = zero_mean(c.at(u.subject_id, u.sentence_id, Rate::Slow).trajectory);
    CHECK(u.dtw_mm == doctest::Approx(dtw(in, tg).distance_mm).epsilon(1e-12));
    CHECK(u.predicted_frames == in.length());
    CHECK(u.target_frames == tg.length());
  }

  const SchemeTable table = make_scheme_table({ev});
  CHECK(table.subjects.size() == 3);
  CHECK(table.at("itdtw", "S1").n == 8);
  CHECK_THROWS(table.at("generic", "S1"));
  CHECK(table.render().find("itdtw") != std::string::npos);

  const SdatSummary sd = sdat_analysis(c, ev);
  CHECK(sd.values.at("neutral").size() == 24);
  CHECK(sd.medians.at("predicted").size() == 6);
  CHECK((sd.medians.at("predicted") - sd.medians.at("neutral")).cwiseAbs().maxCoeff() < 1e-9);

  const DurationStats du = duration_analysis(c, ev);
  CHECK_FALSE(du.phones.empty());
  for (std::size_t i = 1; i < du.phones.size(); ++i) CHECK(du.phones[i - 1].abs_median_diff <= du.phones[i].abs_median_diff);
  for (const PhoneDuration& p : du.phones) {
    CHECK(p.neutral.size() == p.predicted.size());
    CHECK(p.median_original > p.median_neutral);  // slow speech
  }

  const fs::path dir = fs::temp_directory_path() / "astnet_eval_reports";
  fs::remove_all(dir);
  emit_reports(table, {ev}, &sd, &du, dir, "n2s_");
  for (const char* f : {"scheme_table.csv", "scheme_table.txt", "utterance_dtw.csv", "sdat_long.csv",
                        "duration_long.csv", "duration_tests.csv"}) {
    CHECK(fs::exists(dir / (std::string("n2s_") + f)));
  }
  const SchemeTable back = read_scheme_table_csv(dir / "n2s_scheme_table.csv");
  CHECK(back.at("itdtw", "S2").n == 8);
  CHECK(back.at("itdtw", "S2").mean == doctest::Approx(table.at("itdtw", "S2").mean).epsilon(1e-6));
  fs::remove_all(dir);
}

TEST_CASE("missing models are named") {
  const Corpus c = small_corpus();
  const auto folds = make_folds(c.sentence_ids(), 4, 1);
  const ModelLookup none = [](std::size_t, const std::string&) -> const AstNetParams* { return nullptr; };
  try {
    evaluate_scheme(c, Direction::N2F, folds, "generic", none);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("generic") != std::string::npos);
  }
}

TEST_CASE("scheme table csv rejects a foreign header") {
  const fs::path p = fs::temp_directory_path() / "astnet_bad_table.csv";
  {
    std::ofstream f(p);
    f << "a,b\n";
  }
  CHECK_THROWS_AS(read_scheme_table_csv(p), DataError);
  fs::remove(p);
}
