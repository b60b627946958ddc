// src/model.cpp

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

#include "astnet/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "astnet/error.hpp"
#include "astnet/rng.hpp"

namespace astnet {

void ModelConfig::validate() const {
  if (channels < 1 || enc_hidden < 1 || dec_hidden < 1 || prenet_units < 1 || attn_dim < 1 ||
      location_filters < 1 || location_kernel_width < 1) {
    throw InvalidInput("model config: all sizes must be >= 1");
  }
  if (location_kernel_width % 2 == 0) throw InvalidInput("model config: location_kernel_width must be odd");
  if (!(stop_threshold > 0.0 && stop_threshold < 1.0)) throw InvalidInput("model config: stop_threshold must be in (0,1)");
  if (!(max_steps_factor > 0.0)) throw InvalidInput("model config: max_steps_factor must be positive");
}

// ---------------------------------------------------------------------------
// Parameters

AstNetParams::AstNetParams(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t C = config.channels, He = config.enc_hidden, Hd = config.dec_hidden;
  const std::size_t P = config.prenet_units, A = config.attn_dim, L = config.location_filters;
  const std::size_t K = config.location_kernel_width, De = config.enc_dim(), O = config.proj_input_dim();
  const std::array<TensorInfo, kParamCount> shapes = {{
      {"encoder.fwd.Wx", 4 * He, C},
      {"encoder.fwd.Wh", 4 * He, He},
      {"encoder.fwd.b", 4 * He, 1},
      {"encoder.bwd.Wx", 4 * He, C},
      {"encoder.bwd.Wh", 4 * He, He},
      {"encoder.bwd.b", 4 * He, 1},
      {"attention.W", A, Hd},
      {"attention.V", A, De},
      {"attention.U", A, L},
      {"attention.F", L, K},
      {"attention.w", A, 1},
      {"attention.b", A, 1},
      {"prenet.W1", P, C},
      {"prenet.b1", P, 1},
      {"prenet.W2", P, P},
      {"prenet.b2", P, 1},
      {"decoder1.Wx", 4 * Hd, P + De},
      {"decoder1.Wh", 4 * Hd, Hd},
      {"decoder1.b", 4 * Hd, 1},
      {"decoder2.Wx", 4 * Hd, Hd},
      {"decoder2.Wh", 4 * Hd, Hd},
      {"decoder2.b", 4 * Hd, 1},
      {"frame.W", C, O},
      {"frame.b", C, 1},
      {"stop.w", 1, O},
      {"stop.b", 1, 1},
  }};
  std::size_t offset = 0;
  for (std::size_t i = 0; i < kParamCount; ++i) {
    layout_[i] = shapes[i];
    layout_[i].offset = offset;
    offset += shapes[i].size();
  }
  values_.assign(offset, 0.0);
}

AstNetParams AstNetParams::random(const ModelConfig& config, std::uint64_t seed) {
  AstNetParams p(config);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const TensorInfo& t = p.layout_[i];
    auto rng = substream(seed, "init", i);
    const auto id = static_cast<Param>(i);
    // Biases take the fan-in of their weight matrix.
    std::size_t fan_in = t.cols;
    switch (id) {
      case Param::EncFwdB: case Param::EncBwdB: case Param::EncFwdWh: case Param::EncBwdWh:
        fan_in = config.enc_hidden; break;
      case Param::Dec1B: case Param::Dec2B: case Param::Dec1Wh: case Param::Dec2Wh:
        fan_in = config.dec_hidden; break;
      case Param::PrenetB1: fan_in = config.channels; break;
      case Param::PrenetB2: fan_in = config.prenet_units; break;
      case Param::AttnScore: case Param::AttnBias: fan_in = config.attn_dim; break;
      case Param::AttnF: fan_in = config.location_kernel_width; break;
      case Param::FrameB: case Param::StopB: fan_in = config.proj_input_dim(); break;
      default: break;
    }
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-k, k);
    for (std::size_t j = 0; j < t.size(); ++j) p.values_[t.offset + j] = u(rng);
  }
  auto forget_bias = [&](Param b, std::size_t h) {
    auto v = p.vec(b);
    for (std::size_t j = 0; j < h; ++j) v(static_cast<long>(h + j)) = 1.0;
  };
  forget_bias(Param::EncFwdB, config.enc_hidden);
  forget_bias(Param::EncBwdB, config.enc_hidden);
  forget_bias(Param::Dec1B, config.dec_hidden);
  forget_bias(Param::Dec2B, config.dec_hidden);
  return p;
}

std::vector<ParamSlice> AstNetParams::slices() const {
  std::vector<ParamSlice> out;
  for (const TensorInfo& t : layout_) out.push_back({t.name, t.offset, t.size()});
  return out;
}

MatrixMap AstNetParams::mat(Param p) {
  const TensorInfo& t = info(p);
  return {values_.data() + t.offset, static_cast<long>(t.rows), static_cast<long>(t.cols)};
}
ConstMatrixMap AstNetParams::mat(Param p) const {
  const TensorInfo& t = info(p);
  return {values_.data() + t.offset, static_cast<long>(t.rows), static_cast<long>(t.cols)};
}
VectorMap AstNetParams::vec(Param p) {
  const TensorInfo& t = info(p);
  return {values_.data() + t.offset, static_cast<long>(t.size())};
}
ConstVectorMap AstNetParams::vec(Param p) const {
  const TensorInfo& t = info(p);
  return {values_.data() + t.offset, static_cast<long>(t.size())};
}

bool AstNetParams::all_finite() const {
  return ConstVectorMap(values_.data(), static_cast<long>(values_.size())).allFinite();
}

// ---------------------------------------------------------------------------
// LSTM cell

namespace {

// Pre-activations in `gates` are replaced by activations; c and h computed.
void lstm_activate(Eigen::Ref<Vector> gates, const Eigen::Ref<const Vector>& c_prev, Eigen::Ref<Vector> c,
                   Eigen::Ref<Vector> h) {
  const long H = c_prev.size();
  for (long k = 0; k < H; ++k) {
    const double i = sigmoid(gates(k));
    const double f = sigmoid(gates(H + k));
    const double g = std::tanh(gates(2 * H + k));
    const double o = sigmoid(gates(3 * H + k));
    gates(k) = i;
    gates(H + k) = f;
    gates(2 * H + k) = g;
    gates(3 * H + k) = o;
    c(k) = f * c_prev(k) + i * g;
    h(k) = o * std::tanh(c(k));
  }
}

// Given dL/dh and dL/dc (from the future) at one step, writes dL/d(pre-activations)
// and returns dL/dc_prev in dc (in place).
void lstm_cell_backward(const Eigen::Ref<const Vector>& gates, const Eigen::Ref<const Vector>& c_prev,
                        const Eigen::Ref<const Vector>& c, const Eigen::Ref<const Vector>& dh, Eigen::Ref<Vector> dc,
                        Eigen::Ref<Vector> dpre) {
  const long H = c.size();
  for (long k = 0; k < H; ++k) {
    const double i = gates(k), f = gates(H + k), g = gates(2 * H + k), o = gates(3 * H + k);
    const double tc = std::tanh(c(k));
    const double dct = dc(k) + dh(k) * o * (1.0 - tc * tc);
    dpre(k) = dct * g * i * (1.0 - i);
    dpre(H + k) = dct * c_prev(k) * f * (1.0 - f);
    dpre(2 * H + k) = dct * i * (1.0 - g * g);
    dpre(3 * H + k) = dh(k) * tc * o * (1.0 - o);
    dc(k) = dct * f;
  }
}

// Trace of one LSTM run, rows in processing order.
struct LstmTrace {
  Matrix x, gates, c_prev, c, h_prev, h;
};

LstmTrace run_lstm(const Eigen::Ref<const Matrix>& x, ConstMatrixMap Wx, ConstMatrixMap Wh, ConstVectorMap b) {
  const long T = x.rows();
  const long H = Wh.cols();
  LstmTrace tr;
  tr.x = x;
  tr.gates = x * Wx.transpose();
  tr.gates.rowwise() += b.transpose();
  tr.c_prev = Matrix::Zero(T, H);
  tr.h_prev = Matrix::Zero(T, H);
  tr.c.resize(T, H);
  tr.h.resize(T, H);
  Vector h = Vector::Zero(H), c = Vector::Zero(H), g(4 * H), cn(H), hn(H);
  for (long t = 0; t < T; ++t) {
    tr.h_prev.row(t) = h.transpose();
    tr.c_prev.row(t) = c.transpose();
    g = tr.gates.row(t).transpose();
    g.noalias() += Wh * h;
    lstm_activate(g, c, cn, hn);
    tr.gates.row(t) = g.transpose();
    tr.c.row(t) = cn.transpose();
    tr.h.row(t) = hn.transpose();
    c = cn;
    h = hn;
  }
  return tr;
}

// Backpropagates dL/dh rows (processing order) through a traced LSTM run and
// accumulates weight gradients.
void backward_lstm(const LstmTrace& tr, ConstMatrixMap Wh, const Eigen::Ref<const Matrix>& dh_rows, MatrixMap dWx,
                   MatrixMap dWh, VectorMap db) {
  const long T = tr.x.rows();
  const long H = tr.h.cols();
  Matrix dpre(T, 4 * H);
  Vector dh_next = Vector::Zero(H), dc = Vector::Zero(H), dh(H), dp(4 * H);
  for (long t = T - 1; t >= 0; --t) {
    dh = dh_rows.row(t).transpose() + dh_next;
    lstm_cell_backward(tr.gates.row(t).transpose(), tr.c_prev.row(t).transpose(), tr.c.row(t).transpose(), dh, dc,
                       dp);
    dpre.row(t) = dp.transpose();
    dh_next.noalias() = Wh.transpose() * dp;
  }
  dWx.noalias() += dpre.transpose() * tr.x;
  dWh.noalias() += dpre.transpose() * tr.h_prev;
  db += dpre.colwise().sum().transpose();
}

void check_cell_shapes(long nx, long nh, long nc, const Eigen::Ref<const Matrix>& Wx,
                       const Eigen::Ref<const Matrix>& Wh, long nb) {
  const long H = Wh.cols();
  if (Wx.rows() != 4 * H || Wh.rows() != 4 * H || Wx.cols() != nx || nh != H || nc != H || nb != 4 * H) {
    throw InvalidInput("lstm_cell: inconsistent shapes");
  }
}

}  // namespace

LstmCellOutput lstm_cell(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& h_prev,
                         const Eigen::Ref<const Vector>& c_prev, const Eigen::Ref<const Matrix>& Wx,
                         const Eigen::Ref<const Matrix>& Wh, const Eigen::Ref<const Vector>& b) {
  check_cell_shapes(x.size(), h_prev.size(), c_prev.size(), Wx, Wh, b.size());
  Vector g = Wx * x + Wh * h_prev + b;
  LstmCellOutput out;
  out.h.resize(h_prev.size());
  out.c.resize(h_prev.size());
  lstm_activate(g, c_prev, out.c, out.h);
  return out;
}

LstmCellGradient lstm_cell_gradient(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& h_prev,
                                    const Eigen::Ref<const Vector>& c_prev, const Eigen::Ref<const Matrix>& Wx,
                                    const Eigen::Ref<const Matrix>& Wh, const Eigen::Ref<const Vector>& b,
                                    const Eigen::Ref<const Vector>& dh, const Eigen::Ref<const Vector>& dc) {
  check_cell_shapes(x.size(), h_prev.size(), c_prev.size(), Wx, Wh, b.size());
  const long H = h_prev.size();
  if (dh.size() != H || dc.size() != H) throw InvalidInput("lstm_cell_gradient: upstream gradient has the wrong size");
  Vector g = Wx * x + Wh * h_prev + b;
  Vector c(H), h(H);
  lstm_activate(g, c_prev, c, h);
  Vector dcc = dc;
  Vector dpre(4 * H);
  lstm_cell_backward(g, c_prev, c, dh, dcc, dpre);
  LstmCellGradient r;
  r.dWx = dpre * x.transpose();
  r.dWh = dpre * h_prev.transpose();
  r.db = dpre;
  r.dx = Wx.transpose() * dpre;
  r.dh_prev = Wh.transpose() * dpre;
  r.dc_prev = dcc;
  return r;
}

// ---------------------------------------------------------------------------

class ForwardTape {
 public:
  LstmTrace enc_fwd, enc_bwd;
  Matrix E, keys;
  // Decoder, one row per step.
  Matrix y_prev, p1, p2, proj_in, alpha_prev, alpha;
  Matrix drop1, drop2;  // Pre-Net dropout scales, empty when disabled
  LstmTrace dec1, dec2;
  std::vector<Matrix> th, loc;
};

namespace {

ConvKernel1D location_kernel(const AstNetParams& params) {
  const ModelConfig& cfg = params.config();
  ConvKernel1D k;
  k.n_filters = cfg.location_filters;
  k.in_channels = 1;
  k.width = cfg.location_kernel_width;
  const auto f = params.vec(Param::AttnF);
  k.weights.assign(f.data(), f.data() + f.size());
  return k;
}

Matrix attention_keys(const Matrix& E, const AstNetParams& params) {
  Matrix keys = E * params.mat(Param::AttnV).transpose();
  keys.rowwise() += params.vec(Param::AttnBias).transpose();
  return keys;
}

EncoderOutput encode_impl(const Eigen::Ref<const Matrix>& x, const AstNetParams& params, ForwardTape* tape) {
  const ModelConfig& cfg = params.config();
  if (static_cast<std::size_t>(x.cols()) != cfg.channels) {
    throw InvalidInput("encode: input has " + std::to_string(x.cols()) + " channels, model expects " +
                       std::to_string(cfg.channels));
  }
  if (x.rows() < 1) throw InvalidInput("encode: input has no frames");
  const long N = x.rows();
  const long He = static_cast<long>(cfg.enc_hidden);
  LstmTrace fwd = run_lstm(x, params.mat(Param::EncFwdWx), params.mat(Param::EncFwdWh), params.vec(Param::EncFwdB));
  Matrix reversed = x.colwise().reverse();
  LstmTrace bwd =
      run_lstm(reversed, params.mat(Param::EncBwdWx), params.mat(Param::EncBwdWh), params.vec(Param::EncBwdB));
  EncoderOutput out;
  out.states.resize(N, 2 * He);
  out.states.leftCols(He) = fwd.h;
  out.states.rightCols(He) = bwd.h.colwise().reverse();
  if (tape != nullptr) {
    tape->enc_fwd = std::move(fwd);
    tape->enc_bwd = std::move(bwd);
  }
  return out;
}

// Per-utterance decoder machinery shared by teacher forcing, inference and
// the public single-step op.
class StepEngine {
 public:
  StepEngine(const EncoderOutput& encoded, const AstNetParams& params)
      : params_(params), E_(encoded.states), keys_(attention_keys(encoded.states, params)),
        kernel_(location_kernel(params)) {}

  const Matrix& keys() const { return keys_; }

  AttentionResult attend(const Vector& d, const Vector& alpha_prev, Matrix* th_out, Matrix* loc_out) const {
    if (alpha_prev.size() != E_.rows()) {
      throw InvalidInput("attend: previous alignment has " + std::to_string(alpha_prev.size()) +
                         " entries, encoder output has " + std::to_string(E_.rows()) + " frames");
    }
    Matrix loc = conv1d_same(alpha_prev, kernel_);
    Matrix th = keys_;
    th.rowwise() += (params_.mat(Param::AttnW) * d).transpose();
    th.noalias() += loc * params_.mat(Param::AttnU).transpose();
    th = th.array().tanh();
    const Vector scores = th * params_.vec(Param::AttnScore);
    AttentionResult r;
    r.alpha = softmax(scores);
    r.context = E_.transpose() * r.alpha;
    if (th_out != nullptr) *th_out = std::move(th);
    if (loc_out != nullptr) *loc_out = std::move(loc);
    return r;
  }

  StepOutput step(const DecoderState& s, DecoderState& next, ForwardTape* tape, long t) const {
    const ModelConfig& cfg = params_.config();
    const long Hd = static_cast<long>(cfg.dec_hidden);
    const long P = static_cast<long>(cfg.prenet_units);

    const bool drop = tape != nullptr && tape->drop1.size() > 0;
    Vector p1 = (params_.mat(Param::PrenetW1) * s.y_prev + params_.vec(Param::PrenetB1)).cwiseMax(0.0);
    if (drop) p1.array() *= tape->drop1.row(t).transpose().array();
    Vector p2 = (params_.mat(Param::PrenetW2) * p1 + params_.vec(Param::PrenetB2)).cwiseMax(0.0);
    if (drop) p2.array() *= tape->drop2.row(t).transpose().array();
    Vector x1(cfg.dec_input_dim());
    x1.head(P) = p2;
    x1.tail(static_cast<long>(cfg.enc_dim())) = s.context;

    Vector g1 = params_.vec(Param::Dec1B);
    g1.noalias() += params_.mat(Param::Dec1Wx) * x1;
    g1.noalias() += params_.mat(Param::Dec1Wh) * s.h1;
    next.h1.resize(Hd);
    next.c1.resize(Hd);
    lstm_activate(g1, s.c1, next.c1, next.h1);

    Vector g2 = params_.vec(Param::Dec2B);
    g2.noalias() += params_.mat(Param::Dec2Wx) * next.h1;
    g2.noalias() += params_.mat(Param::Dec2Wh) * s.h2;
    next.h2.resize(Hd);
    next.c2.resize(Hd);
    lstm_activate(g2, s.c2, next.c2, next.h2);

    Matrix* th = nullptr;
    Matrix* loc = nullptr;
    if (tape != nullptr) {
      tape->th.emplace_back();
      tape->loc.emplace_back();
      th = &tape->th.back();
      loc = &tape->loc.back();
    }
    AttentionResult att = attend(next.h2, s.attention.alpha_prev, th, loc);

    Vector o(cfg.proj_input_dim());
    o.head(Hd) = next.h2;
    o.tail(static_cast<long>(cfg.enc_dim())) = att.context;
    StepOutput out;
    out.frame = params_.mat(Param::FrameW) * o + params_.vec(Param::FrameB);
    out.stop_logit = params_.vec(Param::StopW).dot(o) + params_.vec(Param::StopB)(0);
    out.stop_prob = sigmoid(out.stop_logit);
    if (!out.frame.allFinite() || !std::isfinite(out.stop_logit) || !att.alpha.allFinite()) {
      throw DataError("decoder produced a non-finite value at step " + std::to_string(t));
    }

    if (tape != nullptr) {
      tape->y_prev.row(t) = s.y_prev.transpose();
      tape->p1.row(t) = p1.transpose();
      tape->p2.row(t) = p2.transpose();
      tape->dec1.x.row(t) = x1.transpose();
      tape->dec1.h_prev.row(t) = s.h1.transpose();
      tape->dec1.c_prev.row(t) = s.c1.transpose();
      tape->dec1.gates.row(t) = g1.transpose();
      tape->dec1.c.row(t) = next.c1.transpose();
      tape->dec1.h.row(t) = next.h1.transpose();
      tape->dec2.x.row(t) = next.h1.transpose();
      tape->dec2.h_prev.row(t) = s.h2.transpose();
      tape->dec2.c_prev.row(t) = s.c2.transpose();
      tape->dec2.gates.row(t) = g2.transpose();
      tape->dec2.c.row(t) = next.c2.transpose();
      tape->dec2.h.row(t) = next.h2.transpose();
      tape->alpha_prev.row(t) = s.attention.alpha_prev.transpose();
      tape->alpha.row(t) = att.alpha.transpose();
      tape->proj_in.row(t) = o.transpose();
    }

    next.attention.alpha_prev = att.alpha;
    next.context = att.context;
    next.y_prev = out.frame;
    out.alpha = std::move(att.alpha);
    out.context = std::move(att.context);
    return out;
  }

 private:
  const AstNetParams& params_;
  const Matrix& E_;
  Matrix keys_;
  ConvKernel1D kernel_;
};

void check_target(const Eigen::Ref<const Matrix>& target, const ModelConfig& cfg) {
  if (static_cast<std::size_t>(target.cols()) != cfg.channels) {
    throw InvalidInput("target has " + std::to_string(target.cols()) + " channels, model expects " +
                       std::to_string(cfg.channels));
  }
}

}  // namespace

AttentionState AttentionState::initial(std::size_t n) {
  AttentionState s;
  s.alpha_prev = Vector::Zero(static_cast<long>(n));
  if (n > 0) s.alpha_prev(0) = 1.0;
  return s;
}

DecoderState DecoderState::initial(const ModelConfig& config, const EncoderOutput& encoded) {
  DecoderState s;
  const long Hd = static_cast<long>(config.dec_hidden);
  s.h1 = s.c1 = s.h2 = s.c2 = Vector::Zero(Hd);
  s.attention = AttentionState::initial(static_cast<std::size_t>(encoded.states.rows()));
  s.context = encoded.states.row(0).transpose();
  s.y_prev = Vector::Zero(static_cast<long>(config.channels));
  return s;
}

EncoderOutput encode(const Trajectory& input, const AstNetParams& params) {
  return encode_impl(input.frames, params, nullptr);
}

EncoderOutput encode(const Eigen::Ref<const Matrix>& frames, const AstNetParams& params) {
  return encode_impl(frames, params, nullptr);
}

AttentionResult attend(const Eigen::Ref<const Vector>& d_prev, AttentionState& state, const EncoderOutput& encoded,
                       const AstNetParams& params) {
  if (static_cast<std::size_t>(d_prev.size()) != params.config().dec_hidden) {
    throw InvalidInput("attend: decoder state has the wrong size");
  }
  StepEngine engine(encoded, params);
  AttentionResult r = engine.attend(d_prev, state.alpha_prev, nullptr, nullptr);
  state.alpha_prev = r.alpha;
  return r;
}

Vector prenet(const Eigen::Ref<const Vector>& y_prev, const AstNetParams& params) {
  if (static_cast<std::size_t>(y_prev.size()) != params.config().channels) {
    throw InvalidInput("prenet: frame has the wrong number of channels");
  }
  Vector p1 = (params.mat(Param::PrenetW1) * y_prev + params.vec(Param::PrenetB1)).cwiseMax(0.0);
  return (params.mat(Param::PrenetW2) * p1 + params.vec(Param::PrenetB2)).cwiseMax(0.0);
}

std::pair<StepOutput, DecoderState> decoder_step(const DecoderState& state, const EncoderOutput& encoded,
                                                 const AstNetParams& params, const std::optional<Vector>& teacher_frame,
                                                 std::size_t step_index) {
  const ModelConfig& cfg = params.config();
  if (teacher_frame && static_cast<std::size_t>(teacher_frame->size()) != cfg.channels) {
    throw InvalidInput("decoder_step: teacher frame has the wrong number of channels");
  }
  if (static_cast<std::size_t>(state.y_prev.size()) != cfg.channels ||
      static_cast<std::size_t>(state.h1.size()) != cfg.dec_hidden ||
      state.context.size() != encoded.states.cols()) {
    throw InvalidInput("decoder_step: state does not match the model configuration");
  }
  StepEngine engine(encoded, params);
  DecoderState next;
  StepOutput out = engine.step(state, next, nullptr, static_cast<long>(step_index));
  if (teacher_frame) next.y_prev = *teacher_frame;
  return {std::move(out), std::move(next)};
}

TapedForward forward_with_tape(const Eigen::Ref<const Matrix>& input, const Eigen::Ref<const Matrix>& target,
                               const AstNetParams& params, const PrenetDropout* dropout) {
  const ModelConfig& cfg = params.config();
  check_target(target, cfg);
  auto tape = std::make_shared<ForwardTape>();
  EncoderOutput encoded = encode_impl(input, params, tape.get());
  const long M = target.rows();
  const long N = encoded.states.rows();
  const long Hd = static_cast<long>(cfg.dec_hidden);
  const long C = static_cast<long>(cfg.channels);
  const long P = static_cast<long>(cfg.prenet_units);
  tape->y_prev.resize(M, C);
  tape->p1.resize(M, P);
  tape->p2.resize(M, P);
  tape->proj_in.resize(M, static_cast<long>(cfg.proj_input_dim()));
  tape->alpha_prev.resize(M, N);
  tape->alpha.resize(M, N);
  for (LstmTrace* tr : {&tape->dec1, &tape->dec2}) {
    tr->x.resize(M, tr == &tape->dec1 ? static_cast<long>(cfg.dec_input_dim()) : Hd);
    tr->gates.resize(M, 4 * Hd);
    tr->c_prev.resize(M, Hd);
    tr->c.resize(M, Hd);
    tr->h_prev.resize(M, Hd);
    tr->h.resize(M, Hd);
  }
  tape->th.reserve(static_cast<std::size_t>(M));
  tape->loc.reserve(static_cast<std::size_t>(M));
  if (dropout != nullptr && dropout->rate > 0.0) {
    if (!(dropout->rate < 1.0)) throw InvalidInput("Pre-Net dropout rate must be in [0, 1)");
    std::mt19937_64 rng(dropout->seed);
    std::bernoulli_distribution keep(1.0 - dropout->rate);
    const double scale = 1.0 / (1.0 - dropout->rate);
    for (Matrix* m : {&tape->drop1, &tape->drop2}) {
      m->resize(M, P);
      for (long i = 0; i < M; ++i)
        for (long j = 0; j < P; ++j) (*m)(i, j) = keep(rng) ? scale : 0.0;
    }
  }

  StepEngine engine(encoded, params);
  TapedForward result;
  TeacherForcedOutput& out = result.output;
  out.frames.resize(M, C);
  out.stop_probs.resize(M);
  out.stop_logits.resize(M);
  out.alphas.resize(M, N);
  DecoderState state = DecoderState::initial(cfg, encoded);
  DecoderState next;
  for (long t = 0; t < M; ++t) {
    StepOutput so = engine.step(state, next, tape.get(), t);
    out.frames.row(t) = so.frame.transpose();
    out.stop_probs(t) = so.stop_prob;
    out.stop_logits(t) = so.stop_logit;
    out.alphas.row(t) = so.alpha.transpose();
    next.y_prev = target.row(t).transpose();
    std::swap(state, next);
  }
  tape->E = std::move(encoded.states);
  tape->keys = engine.keys();
  result.tape = std::move(tape);
  return result;
}

TeacherForcedOutput forward_teacher_forced(const Trajectory& input, const Trajectory& target,
                                           const AstNetParams& params) {
  const ModelConfig& cfg = params.config();
  check_target(target.frames, cfg);
  EncoderOutput encoded = encode_impl(input.frames, params, nullptr);
  StepEngine engine(encoded, params);
  const long M = target.frames.rows();
  TeacherForcedOutput out;
  out.frames.resize(M, static_cast<long>(cfg.channels));
  out.stop_probs.resize(M);
  out.stop_logits.resize(M);
  out.alphas.resize(M, encoded.states.rows());
  DecoderState state = DecoderState::initial(cfg, encoded);
  DecoderState next;
  for (long t = 0; t < M; ++t) {
    StepOutput so = engine.step(state, next, nullptr, t);
    out.frames.row(t) = so.frame.transpose();
    out.stop_probs(t) = so.stop_prob;
    out.stop_logits(t) = so.stop_logit;
    out.alphas.row(t) = so.alpha.transpose();
    next.y_prev = target.frames.row(t).transpose();
    std::swap(state, next);
  }
  return out;
}

InferResult infer(const Trajectory& input, const AstNetParams& params, std::size_t max_out_frames) {
  if (max_out_frames < 1) throw InvalidInput("infer: max_out_frames must be >= 1");
  const ModelConfig& cfg = params.config();
  EncoderOutput encoded = encode_impl(input.frames, params, nullptr);
  StepEngine engine(encoded, params);
  std::vector<Vector> frames;
  std::vector<Vector> alphas;
  DecoderState state = DecoderState::initial(cfg, encoded);
  DecoderState next;
  InferResult result;
  result.truncated = true;
  for (std::size_t t = 0; t < max_out_frames; ++t) {
    StepOutput so = engine.step(state, next, nullptr, static_cast<long>(t));
    if (so.stop_prob > cfg.stop_threshold) {
      result.truncated = false;
      break;
    }
    frames.push_back(std::move(so.frame));
    alphas.push_back(std::move(so.alpha));
    std::swap(state, next);
  }
  result.output.sample_rate_hz = input.sample_rate_hz;
  result.output.channel_names = input.channel_names;
  result.output.frames.resize(static_cast<long>(frames.size()), static_cast<long>(cfg.channels));
  result.alphas.resize(static_cast<long>(frames.size()), encoded.states.rows());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    result.output.frames.row(static_cast<long>(t)) = frames[t].transpose();
    result.alphas.row(static_cast<long>(t)) = alphas[t].transpose();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Backward pass

Gradients backward(const ForwardTape& tape, const AstNetParams& params, const Eigen::Ref<const Matrix>& d_frames,
                   const Eigen::Ref<const Vector>& d_stop_logits, const Matrix* d_alphas) {
  const ModelConfig& cfg = params.config();
  const long M = tape.alpha.rows();
  const long N = tape.E.rows();
  const long Hd = static_cast<long>(cfg.dec_hidden);
  const long He = static_cast<long>(cfg.enc_hidden);
  const long De = static_cast<long>(cfg.enc_dim());
  const long P = static_cast<long>(cfg.prenet_units);
  if (d_frames.rows() != M || d_frames.cols() != static_cast<long>(cfg.channels) || d_stop_logits.size() != M) {
    throw InvalidInput("backward: output gradients do not match the taped forward pass");
  }
  if (d_alphas != nullptr && (d_alphas->rows() != M || d_alphas->cols() != N)) {
    throw InvalidInput("backward: attention gradient does not match the taped forward pass");
  }

  AstNetParams grad(cfg);  // reuse the layout for named gradient views

  // Output heads, all steps at once.
  grad.mat(Param::FrameW).noalias() += d_frames.transpose() * tape.proj_in;
  grad.vec(Param::FrameB) += d_frames.colwise().sum().transpose();
  grad.vec(Param::StopW).noalias() += tape.proj_in.transpose() * d_stop_logits;
  grad.vec(Param::StopB)(0) += d_stop_logits.sum();
  Matrix d_proj = d_frames * params.mat(Param::FrameW);
  d_proj.noalias() += d_stop_logits * params.vec(Param::StopW).transpose();

  const auto W = params.mat(Param::AttnW);
  const auto U = params.mat(Param::AttnU);
  const auto w = params.vec(Param::AttnScore);
  const auto Wh1 = params.mat(Param::Dec1Wh);
  const auto Wx1 = params.mat(Param::Dec1Wx);
  const auto Wh2 = params.mat(Param::Dec2Wh);
  const auto Wx2 = params.mat(Param::Dec2Wx);
  const ConvKernel1D kernel = location_kernel(params);

  auto dW = grad.mat(Param::AttnW);
  auto dU = grad.mat(Param::AttnU);
  auto dw = grad.vec(Param::AttnScore);
  std::span<double> dF(grad.values().data() + grad.info(Param::AttnF).offset, grad.info(Param::AttnF).size());

  Matrix d_keys = Matrix::Zero(N, static_cast<long>(cfg.attn_dim));
  Matrix d_context = Matrix::Zero(M, De);  // dL/dg_t from every consumer except x1 of step t+1
  Matrix dpre1(M, 4 * Hd), dpre2(M, 4 * Hd), d_p2(M, P);
  Matrix dE = Matrix::Zero(N, De);

  Vector dg_carry = Vector::Zero(De);
  Vector dalpha_carry = Vector::Zero(N);
  Vector dh1_next = Vector::Zero(Hd), dc1 = Vector::Zero(Hd);
  Vector dh2_next = Vector::Zero(Hd), dc2 = Vector::Zero(Hd);
  Vector dh(Hd), dp(4 * Hd), dx1(cfg.dec_input_dim());
  Matrix dloc, dalpha_prev_m;

  for (long t = M - 1; t >= 0; --t) {
    const Vector dg = d_proj.row(t).tail(De).transpose() + dg_carry;
    d_context.row(t) = dg.transpose();

    // Attention: alpha = softmax(th w), th = tanh(keys + W d + loc U^T).
    const auto alpha = tape.alpha.row(t).transpose();
    Vector dalpha = tape.E * dg + dalpha_carry;
    if (d_alphas != nullptr) dalpha += d_alphas->row(t).transpose();
    const double dot = alpha.dot(dalpha);
    const Vector ds = alpha.cwiseProduct(dalpha.array().matrix() - Vector::Constant(N, dot));
    const Matrix& th = tape.th[static_cast<std::size_t>(t)];
    dw.noalias() += th.transpose() * ds;
    Matrix dpre = (ds * w.transpose()).cwiseProduct((1.0 - th.array().square()).matrix());
    const Vector dsum = dpre.colwise().sum().transpose();
    const auto d_t = tape.dec2.h.row(t).transpose();
    dW.noalias() += dsum * d_t.transpose();
    d_keys += dpre;
    const Matrix& loc = tape.loc[static_cast<std::size_t>(t)];
    dU.noalias() += dpre.transpose() * loc;
    dloc.noalias() = dpre * U;
    dalpha_prev_m = Matrix::Zero(N, 1);
    conv1d_same_backward(tape.alpha_prev.row(t).transpose(), kernel, dloc, &dalpha_prev_m, dF);
    dalpha_carry = dalpha_prev_m.col(0);

    // Decoder layer 2 (its output d_t feeds projection and attention).
    dh = d_proj.row(t).head(Hd).transpose() + W.transpose() * dsum + dh2_next;
    lstm_cell_backward(tape.dec2.gates.row(t).transpose(), tape.dec2.c_prev.row(t).transpose(),
                       tape.dec2.c.row(t).transpose(), dh, dc2, dp);
    dpre2.row(t) = dp.transpose();
    dh2_next.noalias() = Wh2.transpose() * dp;

    // Decoder layer 1.
    dh.noalias() = Wx2.transpose() * dp;
    dh += dh1_next;
    lstm_cell_backward(tape.dec1.gates.row(t).transpose(), tape.dec1.c_prev.row(t).transpose(),
                       tape.dec1.c.row(t).transpose(), dh, dc1, dp);
    dpre1.row(t) = dp.transpose();
    dh1_next.noalias() = Wh1.transpose() * dp;
    dx1.noalias() = Wx1.transpose() * dp;
    d_p2.row(t) = dx1.head(P).transpose();
    dg_carry = dx1.tail(De);
  }
  // The initial context is the first encoder state.
  dE.row(0) += dg_carry.transpose();

  // Batched weight gradients for the decoder stack.
  grad.mat(Param::Dec1Wx).noalias() += dpre1.transpose() * tape.dec1.x;
  grad.mat(Param::Dec1Wh).noalias() += dpre1.transpose() * tape.dec1.h_prev;
  grad.vec(Param::Dec1B) += dpre1.colwise().sum().transpose();
  grad.mat(Param::Dec2Wx).noalias() += dpre2.transpose() * tape.dec2.x;
  grad.mat(Param::Dec2Wh).noalias() += dpre2.transpose() * tape.dec2.h_prev;
  grad.vec(Param::Dec2B) += dpre2.colwise().sum().transpose();

  // Pre-Net.
  // Stored activations are post-dropout, so a dropped unit also has a zero mask.
  Matrix da2 = d_p2.cwiseProduct((tape.p2.array() > 0.0).cast<double>().matrix());
  if (tape.drop2.size() > 0) da2.array() *= tape.drop2.array();
  grad.mat(Param::PrenetW2).noalias() += da2.transpose() * tape.p1;
  grad.vec(Param::PrenetB2) += da2.colwise().sum().transpose();
  Matrix da1 = (da2 * params.mat(Param::PrenetW2)).cwiseProduct((tape.p1.array() > 0.0).cast<double>().matrix());
  if (tape.drop1.size() > 0) da1.array() *= tape.drop1.array();
  grad.mat(Param::PrenetW1).noalias() += da1.transpose() * tape.y_prev;
  grad.vec(Param::PrenetB1) += da1.colwise().sum().transpose();

  // Attention memory: keys = E V^T + b, context = alpha^T E.
  grad.mat(Param::AttnV).noalias() += d_keys.transpose() * tape.E;
  grad.vec(Param::AttnBias) += d_keys.colwise().sum().transpose();
  dE.noalias() += d_keys * params.mat(Param::AttnV);
  dE.noalias() += tape.alpha.transpose() * d_context;

  // Encoder.
  backward_lstm(tape.enc_fwd, params.mat(Param::EncFwdWh), dE.leftCols(He), grad.mat(Param::EncFwdWx),
                grad.mat(Param::EncFwdWh), grad.vec(Param::EncFwdB));
  const Matrix dE_bwd = dE.rightCols(He).colwise().reverse();
  backward_lstm(tape.enc_bwd, params.mat(Param::EncBwdWh), dE_bwd, grad.mat(Param::EncBwdWx),
                grad.mat(Param::EncBwdWh), grad.vec(Param::EncBwdB));

  return std::move(grad.values());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'A', 'S', 'T', 'N', 'E', 'T', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string config_text(const ModelConfig& c) {
  std::ostringstream os;
  char buf[64];
  os << "channels=" << c.channels << '\n'
     << "enc_hidden=" << c.enc_hidden << '\n'
     << "dec_hidden=" << c.dec_hidden << '\n'
     << "prenet_units=" << c.prenet_units << '\n'
     << "attn_dim=" << c.attn_dim << '\n'
     << "location_filters=" << c.location_filters << '\n'
     << "location_kernel_width=" << c.location_kernel_width << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", c.stop_threshold);
  os << "stop_threshold=" << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", c.max_steps_factor);
  os << "max_steps_factor=" << buf << '\n';
  os << "max_decoder_steps=" << c.max_decoder_steps << '\n';
  return os.str();
}

ModelConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint config line without '='");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("checkpoint config lacks ") + key);
    return it->second;
  };
  ModelConfig c;
  c.channels = std::stoul(need("channels"));
  c.enc_hidden = std::stoul(need("enc_hidden"));
  c.dec_hidden = std::stoul(need("dec_hidden"));
  c.prenet_units = std::stoul(need("prenet_units"));
  c.attn_dim = std::stoul(need("attn_dim"));
  c.location_filters = std::stoul(need("location_filters"));
  c.location_kernel_width = std::stoul(need("location_kernel_width"));
  c.stop_threshold = std::stod(need("stop_threshold"));
  c.max_steps_factor = std::stod(need("max_steps_factor"));
  c.max_decoder_steps = std::stoul(need("max_decoder_steps"));
  return c;
}

}  // namespace

std::string serialize_checkpoint(const AstNetParams& params) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = config_text(params.config());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(kParamCount));
  for (const TensorInfo& t : params.layout()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint64_t>(out, t.rows);
    put<std::uint64_t>(out, t.cols);
    for (std::size_t i = 0; i < t.size(); ++i) put<double>(out, params.values()[t.offset + i]);
  }
  return out;
}

AstNetParams deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError("not an AstNet checkpoint (bad magic)");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = take<std::uint32_t>(bytes, pos);
  if (pos + cfg_len > bytes.size()) throw DataError("checkpoint is truncated");
  ModelConfig cfg;
  try {
    cfg = parse_config_text(bytes.substr(pos, cfg_len));
    cfg.validate();
  } catch (const std::logic_error& e) {
    throw DataError(std::string("checkpoint config invalid: ") + e.what());
  }
  pos += cfg_len;
  AstNetParams params(cfg);
  const auto count = take<std::uint32_t>(bytes, pos);
  if (count != kParamCount) throw DataError("checkpoint holds " + std::to_string(count) + " tensors");
  for (const TensorInfo& t : params.layout()) {
    const auto name_len = take<std::uint32_t>(bytes, pos);
    if (pos + name_len > bytes.size()) throw DataError("checkpoint is truncated");
    const std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto rows = take<std::uint64_t>(bytes, pos);
    const auto cols = take<std::uint64_t>(bytes, pos);
    if (name != t.name || rows != t.rows || cols != t.cols) {
      throw DataError("checkpoint tensor '" + name + "' does not match expected '" + t.name + "' " +
                      std::to_string(t.rows) + "x" + std::to_string(t.cols));
    }
    for (std::size_t i = 0; i < t.size(); ++i) params.values()[t.offset + i] = take<double>(bytes, pos);
  }
  if (pos != bytes.size()) throw DataError("trailing bytes after checkpoint tensors");
  if (!params.all_finite()) throw DataError("checkpoint holds non-finite weights");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const AstNetParams& params) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("error writing checkpoint " + path.string());
}

AstNetParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace astnet
