// tests/test_model.cpp

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

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"

#include "astnet/error.hpp"
#include "astnet/model.hpp"

using namespace astnet;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.channels = 3;
  c.enc_hidden = 4;
  c.dec_hidden = 5;
  c.prenet_units = 4;
  c.attn_dim = 3;
  c.location_filters = 2;
  c.location_kernel_width = 3;
  return c;
}

Matrix random_matrix(long r, long c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

Trajectory as_traj(const Matrix& m) {
  Trajectory t;
  t.frames = m;
  t.channel_names = default_channel_names(static_cast<std::size_t>(m.cols()));
  return t;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reference LSTM step written from the gate equations.
void ref_lstm(const Matrix& Wx, const Matrix& Wh, const Vector& b, const Vector& x, Vector& h, Vector& c) {
  const long H = h.size();
  const Vector a = Wx * x + Wh * h + b;
  Vector hn(H), cn(H);
  for (long k = 0; k < H; ++k) {
    const double i = sig(a(k)), f = sig(a(H + k)), g = std::tanh(a(2 * H + k)), o = sig(a(3 * H + k));
    cn(k) = f * c(k) + i * g;
    hn(k) = o * std::tanh(cn(k));
  }
  h = hn;
  c = cn;
}

struct RefState {
  Vector h1, c1, h2, c2, alpha, ctx, y;
};

// One decoder step from the architecture description, independent of the
// library's step engine.
void ref_step(const AstNetParams& p, const Matrix& E, RefState& s, Vector& frame, double& stop) {
  const ModelConfig& cfg = p.config();
  const Vector p1 = (Matrix(p.mat(Param::PrenetW1)) * s.y + Vector(p.vec(Param::PrenetB1))).cwiseMax(0.0);
  const Vector p2 = (Matrix(p.mat(Param::PrenetW2)) * p1 + Vector(p.vec(Param::PrenetB2))).cwiseMax(0.0);
  Vector x1(p2.size() + s.ctx.size());
  x1 << p2, s.ctx;
  ref_lstm(p.mat(Param::Dec1Wx), p.mat(Param::Dec1Wh), p.vec(Param::Dec1B), x1, s.h1, s.c1);
  ref_lstm(p.mat(Param::Dec2Wx), p.mat(Param::Dec2Wh), p.vec(Param::Dec2B), s.h1, s.h2, s.c2);

  const long N = E.rows();
  const long L = static_cast<long>(cfg.location_filters), K = static_cast<long>(cfg.location_kernel_width);
  const auto F = p.vec(Param::AttnF);
  Matrix loc = Matrix::Zero(N, L);
  for (long n = 0; n < N; ++n)
    for (long l = 0; l < L; ++l)
      for (long j = 0; j < K; ++j) {
        const long src = n + j - K / 2;
        if (src >= 0 && src < N) loc(n, l) += F(l * K + j) * s.alpha(src);
      }
  Vector score(N);
  for (long n = 0; n < N; ++n) {
    const Vector pre = Matrix(p.mat(Param::AttnW)) * s.h2 + Matrix(p.mat(Param::AttnV)) * E.row(n).transpose() +
                       Matrix(p.mat(Param::AttnU)) * loc.row(n).transpose() + Vector(p.vec(Param::AttnBias));
    score(n) = p.vec(Param::AttnScore).dot(pre.array().tanh().matrix());
  }
  Vector alpha = (score.array() - score.maxCoeff()).exp();
  alpha /= alpha.sum();
  s.alpha = alpha;
  s.ctx = E.transpose() * alpha;
  Vector o(s.h2.size() + s.ctx.size());
  o << s.h2, s.ctx;
  frame = Matrix(p.mat(Param::FrameW)) * o + Vector(p.vec(Param::FrameB));
  stop = sig(p.vec(Param::StopW).dot(o) + p.vec(Param::StopB)(0));
}

}  // namespace

TEST_CASE("parameter layout names every tensor once") {
  const AstNetParams p(small_config());
  std::set<std::string> names;
  std::size_t total = 0;
  for (const ParamSlice& s : p.slices()) {
    CHECK(names.insert(s.name).second);
    CHECK(s.offset == total);
    total += s.size;
  }
  CHECK(names.size() == kParamCount);
  CHECK(total == p.size());
  CHECK(names.count("attention.F") == 1);
  CHECK(names.count("stop.b") == 1);
  CHECK(p.info(Param::AttnF).size() == 2 * 3);
  CHECK(p.info(Param::Dec1Wx).cols == small_config().dec_input_dim());
}

TEST_CASE("random init is seeded, bounded and sets forget biases") {
  const ModelConfig c = small_config();
  const AstNetParams a = AstNetParams::random(c, 4), b = AstNetParams::random(c, 4), d = AstNetParams::random(c, 5);
  CHECK(a.values() == b.values());
  CHECK(a.values() != d.values());
  const long H = static_cast<long>(c.dec_hidden);
  CHECK(a.vec(Param::Dec1B).segment(H, H).isApprox(Vector::Ones(H)));
  const long He = static_cast<long>(c.enc_hidden);
  CHECK(a.vec(Param::EncBwdB).segment(He, He).isApprox(Vector::Ones(He)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(c.channels));
  CHECK(a.mat(Param::PrenetW1).cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("model config validation") {
  ModelConfig c = small_config();
  c.location_kernel_width = 4;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.stop_threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.channels = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("backward encoder half equals forward pass over the reversed input") {
  AstNetParams p = AstNetParams::random(small_config(), 7);
  // Give both directions the same weights.
  p.mat(Param::EncBwdWx) = p.mat(Param::EncFwdWx);
  p.mat(Param::EncBwdWh) = p.mat(Param::EncFwdWh);
  p.vec(Param::EncBwdB) = p.vec(Param::EncFwdB);
  const Matrix x = random_matrix(6, 3, 1);
  const Matrix xr = x.colwise().reverse();
  const Matrix E = encode(x, p).states;
  const Matrix Er = encode(xr, p).states;
  const long H = 4;
  CHECK(E.rows() == 6);
  CHECK(E.cols() == 2 * H);
  for (long n = 0; n < 6; ++n) {
    CHECK((E.row(n).tail(H) - Er.row(5 - n).head(H)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("encoder forward half matches a hand-unrolled LSTM") {
  const AstNetParams p = AstNetParams::random(small_config(), 8);
  const Matrix x = random_matrix(4, 3, 2);
  const Matrix E = encode(x, p).states;
  Vector h = Vector::Zero(4), c = Vector::Zero(4);
  for (long t = 0; t < 4; ++t) {
    ref_lstm(p.mat(Param::EncFwdWx), p.mat(Param::EncFwdWh), p.vec(Param::EncFwdB), x.row(t).transpose(), h, c);
    CHECK((E.row(t).head(4).transpose() - h).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("initial decoder state") {
  const AstNetParams p = AstNetParams::random(small_config(), 9);
  const EncoderOutput enc = encode(random_matrix(5, 3, 3), p);
  const DecoderState s = DecoderState::initial(p.config(), enc);
  CHECK(s.y_prev.isZero(0.0));
  CHECK(s.h1.isZero(0.0));
  CHECK(s.attention.alpha_prev(0) == 1.0);
  CHECK(s.attention.alpha_prev.sum() == 1.0);
  CHECK(s.context == enc.states.row(0).transpose());
}

TEST_CASE("decoder steps match a hand-unrolled reference") {
  const AstNetParams p = AstNetParams::random(small_config(), 10);
  const Matrix x = random_matrix(6, 3, 4);
  const Matrix target = random_matrix(4, 3, 5);
  const EncoderOutput enc = encode(x, p);

  RefState ref;
  ref.h1 = ref.c1 = ref.h2 = ref.c2 = Vector::Zero(5);
  ref.alpha = Vector::Zero(6);
  ref.alpha(0) = 1.0;
  ref.ctx = enc.states.row(0).transpose();
  ref.y = Vector::Zero(3);

  DecoderState s = DecoderState::initial(p.config(), enc);
  const TeacherForcedOutput tf = forward_teacher_forced(as_traj(x), as_traj(target), p);
  for (long t = 0; t < 4; ++t) {
    Vector frame;
    double stop = 0.0;
    ref_step(p, enc.states, ref, frame, stop);
    const Vector teacher = target.row(t).transpose();
    auto [out, next] = decoder_step(s, enc, p, teacher, static_cast<std::size_t>(t));
    CHECK((out.frame - frame).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(out.stop_prob - stop) < 1e-12);
    CHECK((out.alpha - ref.alpha).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(out.alpha.sum() - 1.0) < 1e-12);
    CHECK((tf.frames.row(t).transpose() - frame).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((tf.alphas.row(t).transpose() - ref.alpha).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(next.y_prev == teacher);
    ref.y = teacher;
    s = next;
  }
  CHECK(tf.frames.rows() == 4);
  CHECK(tf.stop_probs.size() == 4);
}

TEST_CASE("attend and prenet public ops agree with the decoder") {
  const AstNetParams p = AstNetParams::random(small_config(), 12);
  const EncoderOutput enc = encode(random_matrix(5, 3, 6), p);
  AttentionState st = AttentionState::initial(5);
  const Vector d = random_matrix(5, 1, 7).col(0);
  const AttentionResult r = attend(d, st, enc, p);
  CHECK(std::abs(r.alpha.sum() - 1.0) < 1e-12);
  CHECK((r.context - enc.states.transpose() * r.alpha).norm() < 1e-12);
  CHECK(st.alpha_prev == r.alpha);
  CHECK_THROWS_AS(attend(Vector::Zero(3), st, enc, p), InvalidInput);

  const Vector y = random_matrix(3, 1, 8).col(0);
  const Vector out = prenet(y, p);
  CHECK(out.size() == 4);
  CHECK(out.minCoeff() >= 0.0);
  CHECK_THROWS_AS(prenet(Vector::Zero(2), p), InvalidInput);
}

TEST_CASE("infer feeds back its own frames and respects the bound") {
  AstNetParams p = AstNetParams::random(small_config(), 13);
  p.vec(Param::StopB)(0) = -50.0;  // never stops
  const Trajectory x = as_traj(random_matrix(5, 3, 9));
  const InferResult r = infer(x, p, 7);
  CHECK(r.truncated);
  CHECK(r.output.length() == 7);
  CHECK(r.alphas.rows() == 7);
  CHECK(r.alphas.cols() == 5);

  // Free-running steps chained through decoder_step give the same frames.
  const EncoderOutput enc = encode(x, p);
  DecoderState s = DecoderState::initial(p.config(), enc);
  for (long t = 0; t < 7; ++t) {
    auto [out, next] = decoder_step(s, enc, p, std::nullopt, static_cast<std::size_t>(t));
    CHECK((out.frame - r.output.frames.row(t).transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(next.y_prev == out.frame);
    s = next;
  }

  p.vec(Param::StopB)(0) = 50.0;  // stops at once
  const InferResult e = infer(x, p, 7);
  CHECK_FALSE(e.truncated);
  CHECK(e.output.length() == 0);
  CHECK_THROWS_AS(infer(x, p, 0), InvalidInput);
}

TEST_CASE("single LSTM cell gradient at eps 1e-5") {
  const long X = 3, H = 4;
  const Matrix Wx = random_matrix(4 * H, X, 20), Wh = random_matrix(4 * H, H, 21);
  const Vector b = random_matrix(4 * H, 1, 22).col(0), x = random_matrix(X, 1, 23).col(0);
  const Vector h0 = random_matrix(H, 1, 24).col(0), c0 = random_matrix(H, 1, 25).col(0);
  const Vector Rh = random_matrix(H, 1, 26).col(0), Rc = random_matrix(H, 1, 27).col(0);
  const LstmCellGradient g = lstm_cell_gradient(x, h0, c0, Wx, Wh, b, Rh, Rc);

  // Flatten Wx, Wh, b, x, h_prev, c_prev into one vector.
  std::vector<double> flat;
  auto push = [&](const auto& m) {
    for (long i = 0; i < m.size(); ++i) flat.push_back(m.data()[i]);
  };
  push(Wx);
  push(Wh);
  push(b);
  push(x);
  push(h0);
  push(c0);
  std::vector<double> analytic;
  auto push_g = [&](const auto& m) {
    for (long i = 0; i < m.size(); ++i) analytic.push_back(m.data()[i]);
  };
  push_g(g.dWx);
  push_g(g.dWh);
  push_g(g.db);
  push_g(g.dx);
  push_g(g.dh_prev);
  push_g(g.dc_prev);
  std::vector<ParamSlice> groups;
  std::size_t off = 0;
  for (auto [name, size] : std::vector<std::pair<std::string, long>>{
           {"Wx", 4 * H * X}, {"Wh", 4 * H * H}, {"b", 4 * H}, {"x", X}, {"h_prev", H}, {"c_prev", H}}) {
    groups.push_back({name, off, static_cast<std::size_t>(size)});
    off += static_cast<std::size_t>(size);
  }
  auto f = [&](std::span<const double> v) {
    std::size_t o = 0;
    auto take = [&](long r, long c) {
      Matrix m = Eigen::Map<const Matrix>(v.data() + o, r, c);
      o += static_cast<std::size_t>(r * c);
      return m;
    };
    const Matrix wx = take(4 * H, X), wh = take(4 * H, H);
    const Vector bb = take(4 * H, 1).col(0), xx = take(X, 1).col(0), hh = take(H, 1).col(0), cc = take(H, 1).col(0);
    const LstmCellOutput out = lstm_cell(xx, hh, cc, wx, wh, bb);
    return Rh.dot(out.h) + Rc.dot(out.c);
  };
  const GradientCheckReport r = grad_check(f, flat, analytic, 1e-5, groups);
  for (const ParamGroupError& e : r.groups) {
    INFO(e.name);
    CHECK(e.max_rel_error < 1e-4);
  }
}

namespace {

// L = <R, frames> + <r, stop_logits> (+ <A, alphas>) over the unrolled network.
GradientCheckReport network_check(std::uint64_t seed, double eps, const PrenetDropout* dropout,
                                  bool attention_term = false) {
  ModelConfig cfg = small_config();
  const AstNetParams p = AstNetParams::random(cfg, seed);
  const Matrix x = random_matrix(5, 3, seed + 100), y = random_matrix(4, 3, seed + 200);
  const Matrix R = random_matrix(4, 3, seed + 300);
  const Vector r = random_matrix(4, 1, seed + 400).col(0);
  const Matrix A = attention_term ? Matrix(random_matrix(4, 5, seed + 500)) : Matrix::Zero(4, 5);
  const TapedForward fwd = forward_with_tape(x, y, p, dropout);
  const Gradients g = backward(*fwd.tape, p, R, r, attention_term ? &A : nullptr);
  ParamVector values = p.values();
  auto f = [&](std::span<const double> v) {
    AstNetParams q(cfg);
    q.values().assign(v.begin(), v.end());
    const TapedForward o = forward_with_tape(x, y, q, dropout);
    return o.output.frames.cwiseProduct(R).sum() + o.output.stop_logits.dot(r) + o.output.alphas.cwiseProduct(A).sum();
  };
  return grad_check(f, values, g, eps, p.slices());
}

}  // namespace

TEST_CASE("every block of the unrolled network passes the gradient check") {
  const GradientCheckReport rep = network_check(31, 3e-4, nullptr);
  CHECK(rep.groups.size() == kParamCount);
  for (const ParamGroupError& e : rep.groups) {
    INFO(e.name);
    CHECK(e.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient with a fixed Pre-Net dropout mask") {
  const PrenetDropout drop{0.5, 77};
  const GradientCheckReport rep = network_check(32, 3e-4, &drop);
  for (const ParamGroupError& e : rep.groups) {
    INFO(e.name);
    CHECK(e.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient with a direct loss on the attention weights") {
  const GradientCheckReport rep = network_check(33, 3e-4, nullptr, true);
  CHECK(rep.groups.size() == kParamCount);
  for (const ParamGroupError& e : rep.groups) {
    INFO(e.name);
    CHECK(e.max_rel_error < 1e-4);
  }
  const ModelConfig cfg = small_config();
  const AstNetParams p = AstNetParams::random(cfg, 33);
  const TapedForward fwd = forward_with_tape(random_matrix(5, 3, 1), random_matrix(4, 3, 2), p);
  const Matrix bad = Matrix::Zero(4, 4);
  CHECK_THROWS_AS(backward(*fwd.tape, p, Matrix::Zero(4, 3), Vector::Zero(4), &bad), InvalidInput);
}

TEST_CASE("teacher-forced tape output equals the plain forward pass") {
  const AstNetParams p = AstNetParams::random(small_config(), 14);
  const Matrix x = random_matrix(5, 3, 15), y = random_matrix(6, 3, 16);
  const TapedForward t = forward_with_tape(x, y, p);
  const TeacherForcedOutput f = forward_teacher_forced(as_traj(x), as_traj(y), p);
  CHECK(t.output.frames == f.frames);
  CHECK(t.output.stop_logits == f.stop_logits);
  CHECK(f.frames.rows() == 6);
  CHECK_THROWS_AS(forward_with_tape(x, random_matrix(3, 2, 1), p), InvalidInput);
}

TEST_CASE("checkpoints round-trip byte for byte") {
  ModelConfig c = small_config();
  c.max_decoder_steps = 42;
  AstNetParams p(c);
  p.values() = AstNetParams::random(c, 17).values();
  const std::string bytes = serialize_checkpoint(p);
  CHECK(bytes.substr(0, 8) == "ASTNETCK");
  const AstNetParams q = deserialize_checkpoint(bytes);
  CHECK(q.config() == c);
  CHECK(q.values() == p.values());
  CHECK(serialize_checkpoint(q) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "astnet_model_test.ckpt";
  save_checkpoint(path, p);
  CHECK(load_checkpoint(path).values() == p.values());
  std::filesystem::remove(path);
}

TEST_CASE("damaged checkpoints are rejected") {
  const AstNetParams p = AstNetParams::random(small_config(), 18);
  std::string bytes = serialize_checkpoint(p);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 5)), DataError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), DataError);
  bad = bytes;
  bad[8] = 9;  // version
  CHECK_THROWS_AS(deserialize_checkpoint(bad), DataError);
  CHECK_THROWS(load_checkpoint("/nonexistent/astnet.ckpt"));
}
