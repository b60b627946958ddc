// src/training.cpp

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

#include "astnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "astnet/error.hpp"
#include "astnet/rng.hpp"

namespace astnet {

std::string to_string(Direction d) { return d == Direction::N2F ? "n2f" : "n2s"; }

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::SubjectDependent: return "subject_dependent";
    case Scheme::Generic: return "generic";
    case Scheme::Finetuned: return "finetuned";
  }
  return "generic";
}

Direction parse_direction(const std::string& text) {
  if (text == "n2f" || text == "N2F") return Direction::N2F;
  if (text == "n2s" || text == "N2S") return Direction::N2S;
  throw InvalidInput("unknown direction '" + text + "' (expected n2f or n2s)");
}

Scheme parse_scheme(const std::string& text) {
  if (text == "subject_dependent") return Scheme::SubjectDependent;
  if (text == "generic") return Scheme::Generic;
  if (text == "finetuned") return Scheme::Finetuned;
  throw InvalidInput("unknown scheme '" + text + "' (expected subject_dependent, generic or finetuned)");
}

Rate target_rate(Direction d) { return d == Direction::N2F ? Rate::Fast : Rate::Slow; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidInput("train: learning_rate must be positive");
  if (epochs < 1) throw InvalidInput("train: epochs must be >= 1");
  if (batch_size < 1) throw InvalidInput("train: batch_size must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidInput("train: lr_decay must be in (0, 1]");
  if (!(grad_clip_norm > 0.0)) throw InvalidInput("train: grad_clip_norm must be positive");
  if (!(stop_target_positive_weight > 0.0)) throw InvalidInput("train: stop weight must be positive");
  if (!(prenet_dropout >= 0.0 && prenet_dropout < 1.0)) throw InvalidInput("train: prenet_dropout must be in [0, 1)");
  if (!(guided_attention_weight >= 0.0)) throw InvalidInput("train: guided_attention_weight must be >= 0");
  if (!(guided_attention_width > 0.0)) throw InvalidInput("train: guided_attention_width must be > 0");
}

// ---------------------------------------------------------------------------

namespace {

void check_loss_shapes(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& target, long n_stop) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw InvalidInput("loss: prediction is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                       ", target is " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  }
  if (n_stop != pred.rows()) throw InvalidInput("loss: need one stop value per frame");
  if (pred.rows() == 0) throw InvalidInput("loss: empty sequence");
}

}  // namespace

LossTerms loss(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& target,
               const Eigen::Ref<const Vector>& stop_probs, std::size_t target_length, double positive_weight) {
  check_loss_shapes(pred, target, stop_probs.size());
  if (target_length != static_cast<std::size_t>(target.rows())) {
    throw InvalidInput("loss: target_length disagrees with the target frames");
  }
  LossTerms t;
  t.mse = (pred - target).squaredNorm() / static_cast<double>(pred.size());
  const long M = stop_probs.size();
  double bce = 0.0;
  for (long i = 0; i < M; ++i) {
    const double p = stop_probs(i);
    if (i == M - 1) {
      bce -= positive_weight * std::log(p);
    } else {
      bce -= std::log1p(-p);
    }
  }
  t.bce = bce / static_cast<double>(M);
  t.total = t.mse + t.bce;
  return t;
}

LossGradient loss_with_gradient(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& target,
                                const Eigen::Ref<const Vector>& stop_logits, double positive_weight) {
  check_loss_shapes(pred, target, stop_logits.size());
  LossGradient g;
  const double n = static_cast<double>(pred.size());
  const Matrix diff = pred - target;
  g.terms.mse = diff.squaredNorm() / n;
  g.d_frames = diff * (2.0 / n);
  const long M = stop_logits.size();
  g.d_stop_logits.resize(M);
  double bce = 0.0;
  for (long i = 0; i < M; ++i) {
    const double z = stop_logits(i);
    const double p = sigmoid(z);
    if (i == M - 1) {
      bce += positive_weight * softplus(-z);  // -log p
      g.d_stop_logits(i) = positive_weight * (p - 1.0);
    } else {
      bce += softplus(z);  // -log(1 - p)
      g.d_stop_logits(i) = p;
    }
  }
  g.terms.bce = bce / static_cast<double>(M);
  g.d_stop_logits /= static_cast<double>(M);
  g.terms.total = g.terms.mse + g.terms.bce;
  return g;
}

GuidedAttentionTerm guided_attention(const Eigen::Ref<const Matrix>& alphas, double weight, double width) {
  if (!(width > 0.0)) throw InvalidInput("guided_attention: width must be > 0");
  const Eigen::Index M = alphas.rows(), N = alphas.cols();
  GuidedAttentionTerm g;
  g.d_alphas = Matrix::Zero(M, N);
  if (M == 0 || N == 0 || weight == 0.0) return g;
  const double scale = weight / static_cast<double>(M);
  const double denom = 2.0 * width * width;
  for (Eigen::Index t = 0; t < M; ++t) {
    const double tt = static_cast<double>(t) / static_cast<double>(M);
    for (Eigen::Index n = 0; n < N; ++n) {
      const double d = static_cast<double>(n) / static_cast<double>(N) - tt;
      g.d_alphas(t, n) = scale * (1.0 - std::exp(-d * d / denom));
    }
  }
  g.value = (alphas.array() * g.d_alphas.array()).sum();
  return g;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               std::span<const ParamSlice> names) {
  if (params.size() != grads.size()) throw InvalidInput("adam: gradient size differs from parameter count");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::string where = "index " + std::to_string(i);
      for (const ParamSlice& s : names) {
        if (i >= s.offset && i < s.offset + s.size) where = s.name + "[" + std::to_string(i - s.offset) + "]";
      }
      throw DataError("adam: non-finite gradient for " + where);
    }
  }
  ++state.step;
  const double b1 = AdamState::kBeta1, b2 = AdamState::kBeta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + AdamState::kEps);
  }
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grads) g *= s;
  }
  return norm;
}

std::vector<FoldSplit> make_folds(const std::vector<std::string>& sentence_ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidInput("make_folds: need k >= 2");
  if (sentence_ids.size() < k) {
    throw InvalidInput("make_folds: " + std::to_string(sentence_ids.size()) + " sentences cannot fill " +
                       std::to_string(k) + " folds");
  }
  std::vector<std::string> ids = sentence_ids;
  auto rng = substream(seed, "folds");
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(ids[i], ids[j]);
  }
  const std::size_t n = ids.size();
  std::vector<FoldSplit> folds;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t lo = f * n / k, hi = (f + 1) * n / k;
    FoldSplit split;
    split.fold_index = f;
    for (std::size_t i = 0; i < n; ++i) {
      (i >= lo && i < hi ? split.test_ids : split.train_ids).push_back(ids[i]);
    }
    folds.push_back(std::move(split));
  }
  return folds;
}

std::vector<TrainingPair> make_pairs(const Corpus& corpus, Direction direction,
                                     const std::vector<std::string>& subjects,
                                     const std::vector<std::string>& sentence_ids) {
  std::vector<TrainingPair> pairs;
  std::vector<std::string> missing;
  const Rate out_rate = target_rate(direction);
  for (const std::string& subject : subjects) {
    for (const std::string& id : sentence_ids) {
      const Utterance* in = corpus.find(subject, id, Rate::Neutral);
      const Utterance* out = corpus.find(subject, id, out_rate);
      if (in == nullptr || out == nullptr) {
        missing.push_back(subject + "/" + id);
        continue;
      }
      pairs.push_back({subject, id, zero_mean(in->trajectory).frames, zero_mean(out->trajectory).frames});
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("missing " + to_string(direction) + " pair for: " + list);
  }
  return pairs;
}

std::size_t longest_target(const std::vector<TrainingPair>& pairs) {
  std::size_t m = 0;
  for (const TrainingPair& p : pairs) m = std::max(m, static_cast<std::size_t>(p.target.rows()));
  return m;
}

LossTerms evaluate_loss(const std::vector<TrainingPair>& pairs, const AstNetParams& params, double positive_weight) {
  LossTerms sum;
  for (const TrainingPair& p : pairs) {
    Trajectory in, out;
    in.frames = p.input;
    out.frames = p.target;
    const TeacherForcedOutput f = forward_teacher_forced(in, out, params);
    const LossGradient g = loss_with_gradient(f.frames, p.target, f.stop_logits, positive_weight);
    sum.mse += g.terms.mse;
    sum.bce += g.terms.bce;
  }
  const double n = static_cast<double>(std::max<std::size_t>(pairs.size(), 1));
  sum.mse /= n;
  sum.bce /= n;
  sum.total = sum.mse + sum.bce;
  return sum;
}

TrainResult train_pairs(const std::vector<TrainingPair>& pairs, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const AstNetParams* init, const EpochCallback& on_epoch) {
  cfg.validate();
  if (pairs.empty()) throw DataError("train: no training pairs");
  TrainResult result{AstNetParams(model_cfg), {}, {}};
  if (init != nullptr) {
    ModelConfig a = init->config(), b = model_cfg;
    a.max_decoder_steps = b.max_decoder_steps = 0;
    a.stop_threshold = b.stop_threshold;
    a.max_steps_factor = b.max_steps_factor;
    if (!(a == b)) throw InvalidInput("train: initial weights do not match the model configuration");
    result.params.values() = init->values();
  } else {
    result.params.values() = AstNetParams::random(model_cfg, stream_seed(cfg.seed, "init")).values();
  }
  const auto slices = result.params.slices();
  result.initial = evaluate_loss(pairs, result.params, cfg.stop_target_positive_weight);

  AdamState adam;
  std::vector<std::size_t> order(pairs.size());
  Gradients accum(result.params.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = substream(cfg.seed, "shuffle", epoch);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);
    }
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
    LossTerms sum;
    double guided_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::fill(accum.begin(), accum.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const TrainingPair& p = pairs[order[b]];
        PrenetDropout dropout{cfg.prenet_dropout, substream(cfg.seed, "dropout", epoch, b)()};
        const TapedForward fwd = forward_with_tape(p.input, p.target, result.params, &dropout);
        const LossGradient lg =
            loss_with_gradient(fwd.output.frames, p.target, fwd.output.stop_logits, cfg.stop_target_positive_weight);
        const Matrix* d_alphas = nullptr;
        GuidedAttentionTerm ga;
        if (cfg.guided_attention_weight > 0.0) {
          ga = guided_attention(fwd.output.alphas, cfg.guided_attention_weight, cfg.guided_attention_width);
          d_alphas = &ga.d_alphas;
          guided_sum += ga.value;
        }
        const Gradients g = backward(*fwd.tape, result.params, lg.d_frames, lg.d_stop_logits, d_alphas);
        for (std::size_t i = 0; i < g.size(); ++i) accum[i] += g[i];
        sum.mse += lg.terms.mse;
        sum.bce += lg.terms.bce;
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (double& g : accum) g *= scale;
      clip_grad_norm(accum, cfg.grad_clip_norm);
      adam_step(result.params.values(), accum, adam, lr, slices);
    }
    if (!result.params.all_finite()) throw DataError("train: parameters became non-finite in epoch " + std::to_string(epoch));
    EpochStats stats;
    stats.mean.mse = sum.mse / static_cast<double>(pairs.size());
    stats.mean.bce = sum.bce / static_cast<double>(pairs.size());
    stats.mean.total = stats.mean.mse + stats.mean.bce;
    stats.guided_attention = guided_sum / static_cast<double>(pairs.size());
    stats.learning_rate = lr;
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  result.params.values().shrink_to_fit();
  ModelConfig final_cfg = model_cfg;
  final_cfg.max_decoder_steps =
      static_cast<std::size_t>(std::ceil(model_cfg.max_steps_factor * static_cast<double>(longest_target(pairs))));
  AstNetParams finished(final_cfg);
  finished.values() = std::move(result.params.values());
  result.params = std::move(finished);
  return result;
}

TrainResult train(const Corpus& corpus, const FoldSplit& fold, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::string& subject, const AstNetParams* generic, const EpochCallback& on_epoch) {
  cfg.validate();
  std::vector<std::string> subjects;
  const AstNetParams* init = nullptr;
  switch (cfg.scheme) {
    case Scheme::Generic:
      subjects = corpus.subjects();
      break;
    case Scheme::SubjectDependent:
    case Scheme::Finetuned:
      if (subject.empty()) throw InvalidInput("train: scheme " + to_string(cfg.scheme) + " needs a subject");
      if (std::find(corpus.subjects().begin(), corpus.subjects().end(), subject) == corpus.subjects().end()) {
        throw DataError("train: subject " + subject + " is not in the corpus");
      }
      subjects = {subject};
      if (cfg.scheme == Scheme::Finetuned) {
        if (generic == nullptr) throw InvalidInput("train: finetuned scheme needs a generic checkpoint");
        init = generic;
      }
      break;
  }
  const auto pairs = make_pairs(corpus, cfg.direction, subjects, fold.train_ids);
  return train_pairs(pairs, model_cfg, cfg, init, on_epoch);
}

// ---------------------------------------------------------------------------

std::string RunManifest::str() const {
  std::string out;
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << str();
  if (!os) throw IoError("error writing manifest " + path.string());
}

RunManifest make_manifest(const TrainConfig& cfg, const ModelConfig& model_cfg, std::size_t fold,
                          const std::string& subject, const TrainResult& result, std::size_t max_out_frames) {
  RunManifest m;
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  m.add("direction", to_string(cfg.direction));
  m.add("scheme", to_string(cfg.scheme));
  m.add("fold", std::to_string(fold));
  m.add("subject", subject.empty() ? "all" : subject);
  m.add("seed", std::to_string(cfg.seed));
  m.add("epochs", std::to_string(cfg.epochs));
  m.add("batch_size", std::to_string(cfg.batch_size));
  m.add("learning_rate", real(cfg.learning_rate));
  m.add("lr_decay", real(cfg.lr_decay));
  m.add("grad_clip_norm", real(cfg.grad_clip_norm));
  m.add("stop_target_positive_weight", real(cfg.stop_target_positive_weight));
  m.add("prenet_dropout", real(cfg.prenet_dropout));
  m.add("guided_attention_weight", real(cfg.guided_attention_weight));
  m.add("guided_attention_width", real(cfg.guided_attention_width));
  m.add("channels", std::to_string(model_cfg.channels));
  m.add("enc_hidden", std::to_string(model_cfg.enc_hidden));
  m.add("dec_hidden", std::to_string(model_cfg.dec_hidden));
  m.add("prenet_units", std::to_string(model_cfg.prenet_units));
  m.add("attn_dim", std::to_string(model_cfg.attn_dim));
  m.add("location_filters", std::to_string(model_cfg.location_filters));
  m.add("location_kernel_width", std::to_string(model_cfg.location_kernel_width));
  m.add("max_out_frames", std::to_string(max_out_frames));
  m.add("initial.mse", real(result.initial.mse));
  m.add("initial.bce", real(result.initial.bce));
  for (std::size_t e = 0; e < result.epochs.size(); ++e) {
    const std::string p = "epoch." + std::to_string(e + 1) + ".";
    m.add(p + "mse", real(result.epochs[e].mean.mse));
    m.add(p + "bce", real(result.epochs[e].mean.bce));
    if (cfg.guided_attention_weight > 0.0) m.add(p + "guided_attention", real(result.epochs[e].guided_attention));
    m.add(p + "lr", real(result.epochs[e].learning_rate));
  }
  return m;
}

ModelConfig toy_model_config() {
  ModelConfig c;
  c.channels = 2;
  c.enc_hidden = 4;
  c.dec_hidden = 6;
  c.prenet_units = 5;
  c.attn_dim = 4;
  c.location_filters = 3;
  c.location_kernel_width = 5;
  return c;
}

GradientCheckReport toy_gradient_check(const ToyGradCheckOptions& options) {
  const ModelConfig cfg = toy_model_config();
  constexpr double kStopWeight = 5.0;
  AstNetParams params = AstNetParams::random(cfg, stream_seed(options.seed, "init"));
  auto rng = substream(options.seed, "toy-data");
  std::normal_distribution<double> normal;
  Matrix input(5, 2), target(4, 2);
  for (long i = 0; i < input.size(); ++i) input.data()[i] = normal(rng);
  for (long i = 0; i < target.size(); ++i) target.data()[i] = normal(rng);

  const TapedForward fwd = forward_with_tape(input, target, params);
  const LossGradient lg = loss_with_gradient(fwd.output.frames, target, fwd.output.stop_logits, kStopWeight);
  Gradients analytic = backward(*fwd.tape, params, lg.d_frames, lg.d_stop_logits);

  const std::vector<ParamSlice> slices = params.slices();
  if (!options.corrupt_group.empty()) {
    auto it = std::find_if(slices.begin(), slices.end(),
                           [&](const ParamSlice& s) { return s.name == options.corrupt_group; });
    if (it == slices.end()) throw InvalidInput("gradcheck: unknown parameter group '" + options.corrupt_group + "'");
    analytic[it->offset] += 1.0;
  }

  auto f = [&](std::span<const double> values) {
    AstNetParams probe(cfg);
    probe.values().assign(values.begin(), values.end());
    const TapedForward out = forward_with_tape(input, target, probe);
    return loss_with_gradient(out.output.frames, target, out.output.stop_logits, kStopWeight).terms.total;
  };
  return grad_check(f, params.values(), analytic, options.eps, slices);
}

}  // namespace astnet
