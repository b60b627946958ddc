// include/astnet/model.hpp

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

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "astnet/numeric.hpp"
#include "astnet/signal.hpp"

namespace astnet {

struct ModelConfig {
  std::size_t channels = 6;
  std::size_t enc_hidden = 32;    // per direction
  std::size_t dec_hidden = 64;
  std::size_t prenet_units = 32;  // both layers
  std::size_t attn_dim = 32;
  std::size_t location_filters = 8;
  std::size_t location_kernel_width = 15;
  double stop_threshold = 0.5;
  double max_steps_factor = 1.2;
  // Inference bound fixed at training time: ceil(max_steps_factor x longest
  // target-rate training utterance). 0 until a model has been trained.
  std::size_t max_decoder_steps = 0;

  std::size_t enc_dim() const { return 2 * enc_hidden; }
  std::size_t dec_input_dim() const { return prenet_units + enc_dim(); }
  std::size_t proj_input_dim() const { return dec_hidden + enc_dim(); }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Every learnable tensor, in storage order.
enum class Param : std::size_t {
  EncFwdWx, EncFwdWh, EncFwdB,
  EncBwdWx, EncBwdWh, EncBwdB,
  AttnW, AttnV, AttnU, AttnF, AttnScore, AttnBias,
  PrenetW1, PrenetB1, PrenetW2, PrenetB2,
  Dec1Wx, Dec1Wh, Dec1B,
  Dec2Wx, Dec2Wh, Dec2B,
  FrameW, FrameB,
  StopW, StopB,
  Count
};
constexpr std::size_t kParamCount = static_cast<std::size_t>(Param::Count);

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return rows * cols; }
};

// Flat parameter storage. The base address is aligned so that vectorised
// reductions over the views take the same path on every run.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

// All weights of the network in one flat buffer, addressed through named
// row-major views. LSTM gate blocks are ordered input, forget, cell, output.
class AstNetParams {
 public:
  explicit AstNetParams(const ModelConfig& config);  // all zeros

  // Uniform(+-1/sqrt(fan_in)) weights, forget-gate biases at 1.
  static AstNetParams random(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::array<TensorInfo, kParamCount>& layout() const { return layout_; }
  const TensorInfo& info(Param p) const { return layout_[static_cast<std::size_t>(p)]; }
  std::vector<ParamSlice> slices() const;

  ParamVector& values() { return values_; }
  const ParamVector& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  MatrixMap mat(Param p);
  ConstMatrixMap mat(Param p) const;
  VectorMap vec(Param p);
  ConstVectorMap vec(Param p) const;

  bool all_finite() const;

 private:
  ModelConfig config_;
  std::array<TensorInfo, kParamCount> layout_;
  ParamVector values_;
};

// Gradient buffer with the same layout as AstNetParams.
using Gradients = ParamVector;

// ---------------------------------------------------------------------------
// Single LSTM cell step, gates = Wx x + Wh h_prev + b in order i, f, g, o.

struct LstmCellOutput {
  Vector h, c;
};

struct LstmCellGradient {
  Matrix dWx, dWh;
  Vector db, dx, dh_prev, dc_prev;
};

LstmCellOutput lstm_cell(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& h_prev,
                         const Eigen::Ref<const Vector>& c_prev, const Eigen::Ref<const Matrix>& Wx,
                         const Eigen::Ref<const Matrix>& Wh, const Eigen::Ref<const Vector>& b);

// Backpropagates dL/dh and dL/dc of one step.
LstmCellGradient lstm_cell_gradient(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& h_prev,
                                    const Eigen::Ref<const Vector>& c_prev, const Eigen::Ref<const Matrix>& Wx,
                                    const Eigen::Ref<const Matrix>& Wh, const Eigen::Ref<const Vector>& b,
                                    const Eigen::Ref<const Vector>& dh, const Eigen::Ref<const Vector>& dc);

// ---------------------------------------------------------------------------
// Forward building blocks (public ops).

struct EncoderOutput {
  Matrix states;  // N x 2*enc_hidden: [forward | backward]
};

struct AttentionState {
  Vector alpha_prev;  // length N, a probability distribution

  // One-hot on the first encoder frame.
  static AttentionState initial(std::size_t n);
};

struct AttentionResult {
  Vector alpha;
  Vector context;
};

struct DecoderState {
  Vector h1, c1, h2, c2;
  AttentionState attention;
  Vector context;   // g_{t-1}
  Vector y_prev;    // previous output (or teacher) frame

  // Zero LSTM state, go-frame of zeros, alignment on the first encoder
  // frame and the matching context e_1.
  static DecoderState initial(const ModelConfig& config, const EncoderOutput& encoded);
};

struct StepOutput {
  Vector frame;
  double stop_prob = 0.0;
  double stop_logit = 0.0;
  Vector alpha;
  Vector context;
};

EncoderOutput encode(const Trajectory& input, const AstNetParams& params);
EncoderOutput encode(const Eigen::Ref<const Matrix>& frames, const AstNetParams& params);

// Updates state.alpha_prev to the new alignment.
AttentionResult attend(const Eigen::Ref<const Vector>& d_prev, AttentionState& state,
                       const EncoderOutput& encoded, const AstNetParams& params);

Vector prenet(const Eigen::Ref<const Vector>& y_prev, const AstNetParams& params);

// One autoregressive step. The returned state feeds the next step; its
// y_prev is teacher_frame when given, else the predicted frame.
std::pair<StepOutput, DecoderState> decoder_step(const DecoderState& state, const EncoderOutput& encoded,
                                                 const AstNetParams& params,
                                                 const std::optional<Vector>& teacher_frame = std::nullopt,
                                                 std::size_t step_index = 0);

struct TeacherForcedOutput {
  Matrix frames;       // M x C
  Vector stop_probs;   // M
  Vector stop_logits;  // M
  Matrix alphas;       // M x N
};

TeacherForcedOutput forward_teacher_forced(const Trajectory& input, const Trajectory& target,
                                           const AstNetParams& params);

struct InferResult {
  Trajectory output;
  Matrix alphas;  // frames x N
  bool truncated = false;
};

InferResult infer(const Trajectory& input, const AstNetParams& params, std::size_t max_out_frames);

// ---------------------------------------------------------------------------
// Training-mode forward pass that keeps every intermediate needed for
// backpropagation through time.

class ForwardTape;

struct TapedForward {
  TeacherForcedOutput output;
  std::shared_ptr<const ForwardTape> tape;
};

// Inverted dropout on both Pre-Net layers, training only.
struct PrenetDropout {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

TapedForward forward_with_tape(const Eigen::Ref<const Matrix>& input, const Eigen::Ref<const Matrix>& target,
                               const AstNetParams& params, const PrenetDropout* dropout = nullptr);

// Backpropagates dL/d(frames) (M x C) and dL/d(stop logits) (M) through the
// whole unrolled network. Returns a gradient with the parameter layout.
// d_alphas (M x N), when given, is a direct loss gradient on the attention
// weights.
Gradients backward(const ForwardTape& tape, const AstNetParams& params, const Eigen::Ref<const Matrix>& d_frames,
                   const Eigen::Ref<const Vector>& d_stop_logits, const Matrix* d_alphas = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: "ASTNETCK" magic, format version, config block, named tensors.

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const AstNetParams& params);
AstNetParams load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const AstNetParams& params);
AstNetParams deserialize_checkpoint(const std::string& bytes);

}  // namespace astnet
