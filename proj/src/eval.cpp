// src/eval.cpp

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

#include "astnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "astnet/error.hpp"

namespace astnet {

DtwResult dtw(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  if (a.cols() != b.cols()) {
    throw InvalidInput("dtw: channel mismatch (" + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
  }
  if (a.rows() == 0 || b.rows() == 0) throw InvalidInput("dtw: empty sequence");
  const std::size_t n = static_cast<std::size_t>(a.rows()), m = static_cast<std::size_t>(b.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // Accumulated cost, path length and predecessor move per cell.
  std::vector<double> cost(n * m, inf);
  std::vector<std::size_t> len(n * m, 0);
  std::vector<unsigned char> move(n * m, 0);  // 1: from (i-1,j-1), 2: from (i-1,j), 3: from (i,j-1)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double local = (a.row(static_cast<long>(i)) - b.row(static_cast<long>(j))).norm();
      const std::size_t k = i * m + j;
      if (i == 0 && j == 0) {
        cost[k] = local;
        len[k] = 1;
        continue;
      }
      double best = inf;
      std::size_t best_len = 0;
      unsigned char best_move = 0;
      auto consider = [&](std::size_t pk, unsigned char mv) {
        if (cost[pk] < best || (cost[pk] == best && len[pk] < best_len)) {
          best = cost[pk];
          best_len = len[pk];
          best_move = mv;
        }
      };
      if (i > 0 && j > 0) consider((i - 1) * m + (j - 1), 1);
      if (i > 0) consider((i - 1) * m + j, 2);
      if (j > 0) consider(i * m + (j - 1), 3);
      cost[k] = best + local;
      len[k] = best_len + 1;
      move[k] = best_move;
    }
  }
  DtwResult r;
  std::size_t i = n - 1, j = m - 1;
  r.path.emplace_back(i, j);
  while (i != 0 || j != 0) {
    switch (move[i * m + j]) {
      case 1: --i; --j; break;
      case 2: --i; break;
      default: --j; break;
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  r.total_cost = cost[n * m - 1];
  r.path_length = r.path.size();
  r.distance_mm = r.total_cost / static_cast<double>(r.path_length);
  return r;
}

DtwResult dtw(const Trajectory& a, const Trajectory& b) { return dtw(a.frames, b.frames); }

double relative_improvement(double baseline_mean, double model_mean) {
  if (!(baseline_mean > 0.0)) throw InvalidInput("relative_improvement: baseline mean must be positive");
  return 100.0 * (baseline_mean - model_mean) / baseline_mean;
}

Vector sdat(const Eigen::Ref<const Matrix>& frames) {
  if (frames.rows() < 2) throw InvalidInput("sdat: need at least two frames");
  const Eigen::RowVectorXd mean = frames.colwise().mean();
  const Matrix centred = frames.rowwise() - mean;
  return (centred.colwise().squaredNorm() / static_cast<double>(frames.rows())).cwiseSqrt().transpose();
}

Vector sdat(const Trajectory& traj) { return sdat(traj.frames); }

// ---------------------------------------------------------------------------

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw VerificationError("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw InvalidInput("incomplete_beta: shape parameters must be positive");
  if (x < 0.0 || x > 1.0) throw InvalidInput("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw InvalidInput("student_t: degrees of freedom must be positive");
  if (std::isnan(t)) throw InvalidInput("student_t: t is NaN");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("paired_t_test: samples differ in length");
  if (a.size() < 2) throw InvalidInput("paired_t_test: need at least two pairs");
  TTestResult r;
  r.n = a.size();
  r.df = r.n - 1;
  std::vector<double> d(r.n);
  for (std::size_t i = 0; i < r.n; ++i) d[i] = a[i] - b[i];
  r.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(r.n);
  double ss = 0.0;
  for (double v : d) ss += (v - r.mean_diff) * (v - r.mean_diff);
  const double se = std::sqrt(ss / static_cast<double>(r.df) / static_cast<double>(r.n));
  if (se == 0.0) {
    r.t = r.mean_diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
  } else {
    r.t = r.mean_diff / se;
  }
  r.p = student_t_two_sided_p(r.t, static_cast<double>(r.df));
  return r;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidInput("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.n = values.size();
  if (r.n == 0) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(r.n);
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(r.n));
  return r;
}

// ---------------------------------------------------------------------------

SchemeEvaluation evaluate_scheme(const Corpus& corpus, Direction direction, const std::vector<FoldSplit>& folds,
                                 const std::string& scheme, const ModelLookup& lookup,
                                 const std::vector<std::string>& subjects_in) {
  const std::vector<std::string>& subjects = subjects_in.empty() ? corpus.subjects() : subjects_in;
  if (folds.empty()) throw DataError("evaluate " + scheme + ": no folds");
  SchemeEvaluation ev;
  ev.scheme = scheme;
  ev.direction = direction;
  const Rate out_rate = target_rate(direction);
  for (const FoldSplit& fold : folds) {
    for (const std::string& subject : subjects) {
      const AstNetParams* params = nullptr;
      if (lookup) {
        params = lookup(fold.fold_index, subject);
        if (params == nullptr) {
          throw DataError("evaluate " + scheme + ": no model for fold " + std::to_string(fold.fold_index) +
                          ", subject " + subject);
        }
      }
      for (const std::string& id : fold.test_ids) {
        const Trajectory input = zero_mean(corpus.at(subject, id, Rate::Neutral).trajectory);
        const Trajectory target = zero_mean(corpus.at(subject, id, out_rate).trajectory);
        UtteranceEval u;
        u.subject_id = subject;
        u.sentence_id = id;
        u.fold = fold.fold_index;
        u.target_frames = target.length();
        if (params == nullptr) {
          u.prediction = input;
        } else {
          const std::size_t bound = params->config().max_decoder_steps > 0
                                        ? params->config().max_decoder_steps
                                        : 3 * input.length();
          InferResult r = infer(input, *params, bound);
          u.truncated = r.truncated;
          u.prediction = std::move(r.output);
        }
        u.predicted_frames = u.prediction.length();
        if (u.prediction.length() == 0) {
          // Nothing generated: score the go-frame alone.
          u.prediction.frames = Matrix::Zero(1, target.frames.cols());
        }
        const DtwResult d = dtw(u.prediction, target);
        u.dtw_mm = d.distance_mm;
        u.dtw_total = d.total_cost;
        u.path_length = d.path_length;
        ev.utterances.push_back(std::move(u));
      }
    }
  }
  if (ev.utterances.empty()) throw DataError("evaluate " + scheme + ": no test utterances");
  return ev;
}

const MeanStd& SchemeTable::at(const std::string& scheme, const std::string& subject) const {
  auto it = cells.find({scheme, subject});
  if (it == cells.end()) throw DataError("scheme table has no cell " + scheme + "/" + subject);
  return it->second;
}

std::string SchemeTable::render() const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-20s", "Model");
  os << buf;
  for (const auto& s : subjects) {
    std::snprintf(buf, sizeof buf, "%16s", s.c_str());
    os << buf;
  }
  os << '\n';
  for (const auto& scheme : schemes) {
    std::snprintf(buf, sizeof buf, "%-20s", scheme.c_str());
    os << buf;
    for (const auto& s : subjects) {
      const MeanStd& c = at(scheme, s);
      char cell[48];
      std::snprintf(cell, sizeof cell, "%.2f (%.2f)", c.mean, c.std);
      std::snprintf(buf, sizeof buf, "%16s", cell);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

SchemeTable make_scheme_table(const std::vector<SchemeEvaluation>& evaluations) {
  SchemeTable table;
  if (evaluations.empty()) throw DataError("scheme table: no evaluations");
  table.direction = evaluations.front().direction;
  for (const SchemeEvaluation& ev : evaluations) {
    if (ev.utterances.empty()) throw DataError("scheme table: scheme " + ev.scheme + " has no test utterances");
    table.schemes.push_back(ev.scheme);
    std::map<std::string, std::vector<double>> per_subject;
    for (const UtteranceEval& u : ev.utterances) {
      if (std::find(table.subjects.begin(), table.subjects.end(), u.subject_id) == table.subjects.end()) {
        table.subjects.push_back(u.subject_id);
      }
      per_subject[u.subject_id].push_back(u.dtw_mm);
    }
    for (const auto& [subject, values] : per_subject) table.cells[{ev.scheme, subject}] = mean_std(values);
  }
  return table;
}

// ---------------------------------------------------------------------------

SdatSummary sdat_analysis(const Corpus& corpus, const SchemeEvaluation& evaluation) {
  SdatSummary s;
  const Rate out_rate = target_rate(evaluation.direction);
  for (const UtteranceEval& u : evaluation.utterances) {
    const Utterance& neutral = corpus.at(u.subject_id, u.sentence_id, Rate::Neutral);
    const Utterance& original = corpus.at(u.subject_id, u.sentence_id, out_rate);
    if (s.channels.empty()) s.channels = neutral.trajectory.channel_names;
    s.values["neutral"].push_back(sdat(neutral.trajectory));
    s.values["original"].push_back(sdat(original.trajectory));
    if (u.prediction.length() >= 2) s.values["predicted"].push_back(sdat(u.prediction));
  }
  for (const auto& [condition, rows] : s.values) {
    if (rows.empty()) continue;
    const long c = rows.front().size();
    Vector med(c);
    for (long k = 0; k < c; ++k) {
      std::vector<double> col;
      for (const Vector& r : rows) col.push_back(r(k));
      med(k) = median(std::move(col));
    }
    s.medians[condition] = med;
  }
  return s;
}

std::vector<PhoneSegment> transfer_segments(const Trajectory& predicted, const Trajectory& target,
                                            const std::vector<PhoneSegment>& target_segments) {
  if (target_segments.empty()) return {};
  const DtwResult d = dtw(predicted, target);
  const std::size_t n_pred = predicted.length();
  // first predicted index aligned to each target frame
  std::vector<std::size_t> first(target.length(), n_pred);
  for (const auto& [i, j] : d.path) first[j] = std::min(first[j], i);
  std::vector<PhoneSegment> out;
  std::size_t prev = 0;
  for (std::size_t k = 0; k < target_segments.size(); ++k) {
    const bool last = k + 1 == target_segments.size();
    std::size_t end = last ? n_pred : first[target_segments[k + 1].start_frame];
    end = std::max(end, prev + 1);
    out.push_back({target_segments[k].label, prev, end});
    prev = end;
  }
  return out;
}

DurationStats duration_analysis(const Corpus& corpus, const SchemeEvaluation& evaluation) {
  DurationStats stats;
  stats.direction = evaluation.direction;
  const Rate out_rate = target_rate(evaluation.direction);
  std::map<std::string, PhoneDuration> by_phone;
  for (const UtteranceEval& u : evaluation.utterances) {
    const Utterance& neutral = corpus.at(u.subject_id, u.sentence_id, Rate::Neutral);
    const Utterance& original = corpus.at(u.subject_id, u.sentence_id, out_rate);
    if (neutral.segments.size() != original.segments.size()) {
      throw DataError("duration analysis: segmentations of " + u.sentence_id + " differ between rates");
    }
    const Trajectory target = zero_mean(original.trajectory);
    const auto predicted = transfer_segments(u.prediction, target, original.segments);
    const double fs_n = neutral.trajectory.sample_rate_hz;
    const double fs_o = original.trajectory.sample_rate_hz;
    const double fs_p = u.prediction.sample_rate_hz;
    for (std::size_t k = 0; k < original.segments.size(); ++k) {
      PhoneDuration& pd = by_phone[original.segments[k].label];
      pd.label = original.segments[k].label;
      pd.neutral.push_back(static_cast<double>(neutral.segments[k].frames()) / fs_n);
      pd.original.push_back(static_cast<double>(original.segments[k].frames()) / fs_o);
      pd.predicted.push_back(static_cast<double>(predicted[k].frames()) / fs_p);
    }
  }
  for (auto& [label, pd] : by_phone) {
    if (pd.original.size() < 2) {
      stats.excluded.push_back(label);
      continue;
    }
    pd.median_neutral = median(pd.neutral);
    pd.median_original = median(pd.original);
    pd.median_predicted = median(pd.predicted);
    pd.abs_median_diff = std::abs(pd.median_neutral - pd.median_original);
    pd.test = paired_t_test(pd.original, pd.predicted);
    pd.significant = pd.test.p < 0.01;
    stats.phones.push_back(std::move(pd));
  }
  std::stable_sort(stats.phones.begin(), stats.phones.end(),
                   [](const PhoneDuration& a, const PhoneDuration& b) { return a.abs_median_diff < b.abs_median_diff; });
  return stats;
}

// ---------------------------------------------------------------------------

namespace {

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : path_(path), f_(std::fopen(path.c_str(), "w")) {
    if (f_ == nullptr) throw IoError("cannot write " + path.string());
  }
  ~CsvWriter() {
    if (f_ != nullptr) std::fclose(f_);
  }
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  [[gnu::format(printf, 2, 3)]] void line(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    const int rc = std::vfprintf(f_, fmt, args);
    va_end(args);
    if (rc < 0) throw IoError("error writing " + path_.string());
  }
  void close() {
    const int rc = std::fclose(f_);
    f_ = nullptr;
    if (rc != 0) throw IoError("error closing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::FILE* f_;
};

}  // namespace

void emit_reports(const SchemeTable& table, const std::vector<SchemeEvaluation>& evaluations,
                  const SdatSummary* sdat_summary, const DurationStats* durations, const std::filesystem::path& dir,
                  const std::string& prefix) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create report directory " + dir.string());

  {
    CsvWriter w(dir / (prefix + "scheme_table.csv"));
    w.line("scheme,subject,mean_mm,std_mm,n\n");
    for (const auto& scheme : table.schemes) {
      for (const auto& subject : table.subjects) {
        const MeanStd& c = table.at(scheme, subject);
        w.line("%s,%s,%.6f,%.6f,%zu\n", scheme.c_str(), subject.c_str(), c.mean, c.std, c.n);
      }
    }
    w.close();
  }
  {
    CsvWriter w(dir / (prefix + "scheme_table.txt"));
    w.line("%s", table.render().c_str());
    w.close();
  }
  {
    CsvWriter w(dir / (prefix + "utterance_dtw.csv"));
    w.line("scheme,subject,fold,sentence,dtw_mm,dtw_total_mm,path_length,predicted_frames,target_frames,truncated\n");
    for (const SchemeEvaluation& ev : evaluations) {
      for (const UtteranceEval& u : ev.utterances) {
        w.line("%s,%s,%zu,%s,%.6f,%.6f,%zu,%zu,%zu,%d\n", ev.scheme.c_str(), u.subject_id.c_str(), u.fold,
               u.sentence_id.c_str(), u.dtw_mm, u.dtw_total, u.path_length, u.predicted_frames, u.target_frames,
               u.truncated ? 1 : 0);
      }
    }
    w.close();
  }
  if (sdat_summary != nullptr) {
    CsvWriter w(dir / (prefix + "sdat_long.csv"));
    w.line("condition,channel,value\n");
    for (const auto& [condition, rows] : sdat_summary->values) {
      for (const Vector& r : rows) {
        for (long k = 0; k < r.size(); ++k) {
          const std::string& ch = static_cast<std::size_t>(k) < sdat_summary->channels.size()
                                      ? sdat_summary->channels[static_cast<std::size_t>(k)]
                                      : std::to_string(k);
          w.line("%s,%s,%.6f\n", condition.c_str(), ch.c_str(), r(k));
        }
      }
    }
    w.close();
  }
  if (durations != nullptr) {
    CsvWriter w(dir / (prefix + "duration_long.csv"));
    w.line("condition,phone,value\n");
    for (const PhoneDuration& pd : durations->phones) {
      for (double v : pd.neutral) w.line("neutral,%s,%.6f\n", pd.label.c_str(), v);
      for (double v : pd.original) w.line("original,%s,%.6f\n", pd.label.c_str(), v);
      for (double v : pd.predicted) w.line("predicted,%s,%.6f\n", pd.label.c_str(), v);
    }
    w.close();
    CsvWriter t(dir / (prefix + "duration_tests.csv"));
    t.line("rank,phone,n,median_neutral_s,median_original_s,median_predicted_s,abs_median_diff_s,t,p,significant\n");
    std::size_t rank = 1;
    for (const PhoneDuration& pd : durations->phones) {
      t.line("%zu,%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6g,%d\n", rank++, pd.label.c_str(), pd.test.n, pd.median_neutral,
             pd.median_original, pd.median_predicted, pd.abs_median_diff, pd.test.t, pd.test.p, pd.significant ? 1 : 0);
    }
    for (const std::string& label : durations->excluded) t.line("-,%s,excluded\n", label.c_str());
    t.close();
  }
}

SchemeTable read_scheme_table_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  SchemeTable table;
  std::string line;
  std::getline(is, line);
  if (line != "scheme,subject,mean_mm,std_mm,n") throw DataError(path.string() + ": unexpected header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string scheme, subject, mean, sd, n;
    if (!std::getline(ls, scheme, ',') || !std::getline(ls, subject, ',') || !std::getline(ls, mean, ',') ||
        !std::getline(ls, sd, ',') || !std::getline(ls, n)) {
      throw DataError(path.string() + ": malformed row '" + line + "'");
    }
    if (std::find(table.schemes.begin(), table.schemes.end(), scheme) == table.schemes.end()) {
      table.schemes.push_back(scheme);
    }
    if (std::find(table.subjects.begin(), table.subjects.end(), subject) == table.subjects.end()) {
      table.subjects.push_back(subject);
    }
    table.cells[{scheme, subject}] = {std::stod(mean), std::stod(sd), std::stoul(n)};
  }
  return table;
}

}  // namespace astnet
