// tests/test_training.cpp

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
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"

#include "astnet/error.hpp"
#include "astnet/run_config.hpp"
#include "astnet/training.hpp"

using namespace astnet;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.enc_hidden = 6;
  c.dec_hidden = 8;
  c.prenet_units = 6;
  c.attn_dim = 6;
  c.location_filters = 2;
  c.location_kernel_width = 5;
  return c;
}

Corpus tiny_corpus() {
  SynthConfig s;
  s.n_sentences = 8;
  s.min_phones = 4;
  s.max_phones = 6;
  return synth_corpus(s);
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("id" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("loss against a hand computation") {
  Matrix pred(2, 2), target(2, 2);
  pred << 1.0, 2.0, 3.0, 4.0;
  target << 1.5, 2.0, 2.0, 4.0;
  Vector stop(2);
  stop << 0.2, 0.6;
  const LossTerms t = loss(pred, target, stop, 2, 5.0);
  CHECK(t.mse == doctest::Approx((0.25 + 1.0) / 4.0));
  const double bce = (-std::log(0.8) - 5.0 * std::log(0.6)) / 2.0;
  CHECK(t.bce == doctest::Approx(bce));
  CHECK(t.total == doctest::Approx(t.mse + bce));

  // The logit form evaluates the same objective.
  Vector logits(2);
  logits << std::log(0.2 / 0.8), std::log(0.6 / 0.4);
  const LossGradient g = loss_with_gradient(pred, target, logits, 5.0);
  CHECK(g.terms.total == doctest::Approx(t.total).epsilon(1e-12));
  CHECK(g.d_frames(0, 0) == doctest::Approx(2.0 * -0.5 / 4.0));
  CHECK(g.d_stop_logits(0) == doctest::Approx(0.2 / 2.0));
  CHECK(g.d_stop_logits(1) == doctest::Approx(5.0 * (0.6 - 1.0) / 2.0));

  CHECK_THROWS_AS(loss(pred, target, stop, 3, 5.0), InvalidInput);
  CHECK_THROWS_AS(loss(pred, Matrix::Zero(3, 2), stop, 3, 5.0), InvalidInput);
}

TEST_CASE("loss gradient matches finite differences") {
  Matrix pred(3, 2), target(3, 2);
  pred << 0.1, -0.4, 1.2, 0.3, -0.7, 0.9;
  target << 0.0, 0.5, 1.0, -0.2, 0.4, 0.8;
  Vector z(3);
  z << -1.0, 0.4, 2.0;
  const LossGradient g = loss_with_gradient(pred, target, z, 5.0);
  std::vector<double> v(pred.data(), pred.data() + pred.size());
  v.insert(v.end(), z.data(), z.data() + z.size());
  std::vector<double> a(g.d_frames.data(), g.d_frames.data() + g.d_frames.size());
  a.insert(a.end(), g.d_stop_logits.data(), g.d_stop_logits.data() + 3);
  auto f = [&](std::span<const double> p) {
    const Matrix pr = Eigen::Map<const Matrix>(p.data(), 3, 2);
    const Vector zz = Eigen::Map<const Vector>(p.data() + 6, 3);
    return loss_with_gradient(pr, target, zz, 5.0).terms.total;
  };
  CHECK(grad_check(f, v, a, 1e-5).passed(1e-7));
}

TEST_CASE("guided attention term by hand") {
  Matrix a(2, 2);
  a << 0.9, 0.1, 0.3, 0.7;
  const GuidedAttentionTerm g = guided_attention(a, 2.0, 0.5);
  // Positions n/N and t/M are {0, 0.5}; the penalty is 1 - exp(-d^2 / 0.5).
  const double off = 1.0 - std::exp(-0.25 / 0.5);
  CHECK(g.d_alphas(0, 0) == 0.0);
  CHECK(g.d_alphas(1, 1) == 0.0);
  CHECK(g.d_alphas(0, 1) == doctest::Approx(off).epsilon(1e-15));
  CHECK(g.d_alphas(1, 0) == doctest::Approx(off).epsilon(1e-15));
  CHECK(g.value == doctest::Approx(off * (0.1 + 0.3)).epsilon(1e-15));
  const GuidedAttentionTerm off_term = guided_attention(a, 0.0, 0.5);
  CHECK(off_term.value == 0.0);
  CHECK(off_term.d_alphas.isZero(0.0));
  CHECK_THROWS_AS(guided_attention(a, 1.0, 0.0), InvalidInput);
}

TEST_CASE("adam follows the bias-corrected update by hand") {
  std::vector<double> p{1.0, -2.0};
  AdamState st;
  const double lr = 0.1;
  adam_step(p, std::vector<double>{0.5, 0.0}, st, lr);
  // Step 1: mhat = g, vhat = g^2, so the move is lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == -2.0);
  adam_step(p, std::vector<double>{-1.0, 0.0}, st, lr);
  const double m = 0.9 * 0.05 + 0.1 * -1.0;
  const double v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mhat = m / (1.0 - 0.81), vhat = v / (1.0 - 0.999 * 0.999);
  const double expect = (1.0 - 0.1 * 0.5 / (0.5 + 1e-8)) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(st.step == 2);
}

TEST_CASE("adam names the parameter with a non-finite gradient") {
  std::vector<double> p{0.0, 0.0, 0.0};
  AdamState st;
  const std::vector<ParamSlice> names{{"w", 0, 2}, {"b", 2, 1}};
  const std::vector<double> g{0.0, 0.0, std::numeric_limits<double>::infinity()};
  try {
    adam_step(p, g, st, 0.1, names);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("b[0]") != std::string::npos);
  }
  CHECK(p[0] == 0.0);
}

TEST_CASE("gradient norm clipping") {
  std::vector<double> g{3.0, 4.0};
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  std::vector<double> small{0.3, 0.4};
  clip_grad_norm(small, 1.0);
  CHECK(small[0] == 0.3);
}

TEST_CASE("folds partition the sentences") {
  const auto folds = make_folds(ids(460), 4, 1);
  REQUIRE(folds.size() == 4);
  std::multiset<std::string> tested;
  for (const FoldSplit& f : folds) {
    CHECK(f.test_ids.size() == 115);
    CHECK(f.train_ids.size() == 345);
    std::set<std::string> tr(f.train_ids.begin(), f.train_ids.end());
    for (const auto& id : f.test_ids) CHECK(tr.count(id) == 0);
    tested.insert(f.test_ids.begin(), f.test_ids.end());
  }
  CHECK(tested.size() == 460);
  CHECK(std::set<std::string>(tested.begin(), tested.end()).size() == 460);

  const auto again = make_folds(ids(460), 4, 1);
  CHECK(again[2].test_ids == folds[2].test_ids);
  CHECK(make_folds(ids(460), 4, 2)[0].test_ids != folds[0].test_ids);

  const auto odd = make_folds(ids(10), 4, 3);
  std::size_t total = 0;
  for (const auto& f : odd) {
    CHECK(f.test_ids.size() >= 2);
    CHECK(f.test_ids.size() <= 3);
    total += f.test_ids.size();
  }
  CHECK(total == 10);
  CHECK_THROWS_AS(make_folds(ids(3), 4, 1), InvalidInput);
}

TEST_CASE("pairs are zero-mean and missing pairs are listed") {
  const Corpus c = tiny_corpus();
  const auto pairs = make_pairs(c, Direction::N2S, {"S2"}, {"s0001", "s0002"});
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].input.colwise().mean().cwiseAbs().maxCoeff() < 1e-10);
  CHECK(pairs[0].target.rows() == static_cast<long>(c.at("S2", "s0001", Rate::Slow).trajectory.length()));
  try {
    make_pairs(c, Direction::N2F, {"S1"}, {"s0001", "nope"});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("S1/nope") != std::string::npos);
  }
}

TEST_CASE("training reduces the loss and is deterministic") {
  const Corpus c = tiny_corpus();
  const auto folds = make_folds(c.sentence_ids(), 4, 1);
  TrainConfig tc;
  tc.epochs = 4;
  tc.learning_rate = 3e-3;
  tc.prenet_dropout = 0.5;
  tc.guided_attention_weight = 1.0;
  std::size_t calls = 0;
  const TrainResult a = train(c, folds[0], tiny_model(), tc, "", nullptr, [&](std::size_t, const EpochStats&) { ++calls; });
  CHECK(calls == 4);
  REQUIRE(a.epochs.size() == 4);
  for (const EpochStats& e : a.epochs) {
    CHECK(std::isfinite(e.mean.total));
    CHECK(e.guided_attention > 0.0);
  }
  CHECK(a.epochs.back().mean.mse < a.initial.mse);
  CHECK(a.epochs[1].learning_rate == doctest::Approx(3e-3 * 0.98));
  CHECK(a.params.config().max_decoder_steps > 0);

  const TrainResult b = train(c, folds[0], tiny_model(), tc);
  CHECK(a.params.values() == b.params.values());
  CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(b.params));
}

TEST_CASE("finetuning starts from the generic weights") {
  const Corpus c = tiny_corpus();
  const auto folds = make_folds(c.sentence_ids(), 4, 1);
  TrainConfig tc;
  tc.epochs = 1;
  const TrainResult generic = train(c, folds[0], tiny_model(), tc);
  const auto pairs = make_pairs(c, Direction::N2F, {"S3"}, folds[0].train_ids);
  const LossTerms on_subject = evaluate_loss(pairs, generic.params, tc.stop_target_positive_weight);

  TrainConfig ft = tc;
  ft.scheme = Scheme::Finetuned;
  const TrainResult f = train(c, folds[0], tiny_model(), ft, "S3", &generic.params);
  CHECK(f.initial.total == doctest::Approx(on_subject.total).epsilon(1e-12));

  CHECK_THROWS_AS(train(c, folds[0], tiny_model(), ft, "S3", nullptr), InvalidInput);
  CHECK_THROWS_AS(train(c, folds[0], tiny_model(), ft, "", &generic.params), InvalidInput);
  ModelConfig other = tiny_model();
  other.dec_hidden = 9;
  CHECK_THROWS_AS(train(c, folds[0], other, ft, "S3", &generic.params), InvalidInput);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = TrainConfig{};
  t.prenet_dropout = 1.0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = TrainConfig{};
  t.guided_attention_weight = -1.0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = TrainConfig{};
  t.guided_attention_width = 0.0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  CHECK_THROWS_AS(parse_direction("n2x"), InvalidInput);
  CHECK(parse_scheme("finetuned") == Scheme::Finetuned);
  CHECK(target_rate(Direction::N2S) == Rate::Slow);
}

TEST_CASE("manifest echoes the run") {
  const Corpus c = tiny_corpus();
  const auto folds = make_folds(c.sentence_ids(), 4, 1);
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 9;
  const TrainResult r = train(c, folds[1], tiny_model(), tc);
  const RunManifest m = make_manifest(tc, tiny_model(), 1, "", r, 33);
  const std::string s = m.str();
  CHECK(s.find("seed=9\n") != std::string::npos);
  CHECK(s.find("fold=1\n") != std::string::npos);
  CHECK(s.find("epoch.2.mse=") != std::string::npos);
  CHECK(s.find("max_out_frames=33\n") != std::string::npos);
}

TEST_CASE("whole-network gradient check on the toy model") {
  const GradientCheckReport r = toy_gradient_check();
  CHECK(r.groups.size() == kParamCount);
  CHECK(r.passed(1e-4));
  ToyGradCheckOptions bad;
  bad.corrupt_group = "decoder2.Wh";
  const GradientCheckReport c = toy_gradient_check(bad);
  CHECK_FALSE(c.passed(1e-4));
  for (const ParamGroupError& g : c.groups) {
    if (g.name == "decoder2.Wh") {
      CHECK(g.max_rel_error > 1e-4);
    } else {
      CHECK(g.max_rel_error < 1e-4);
    }
  }
  bad.corrupt_group = "no.such";
  CHECK_THROWS_AS(toy_gradient_check(bad), InvalidInput);
}

TEST_CASE("run config keys, files and overrides") {
  RunConfig rc;
  CHECK(rc.train.prenet_dropout == 0.5);
  CHECK(rc.train.guided_attention_weight == 1.0);
  CHECK(TrainConfig{}.guided_attention_weight == 0.0);
  rc.set("epochs", "12");
  rc.set("seed", "7");
  rc.set("direction", "n2s");
  CHECK(rc.train.epochs == 12);
  CHECK(rc.train.seed == 7);
  CHECK(rc.synth.seed == 7);
  CHECK(rc.train.direction == Direction::N2S);
  CHECK_THROWS_AS(rc.set("epoch", "3"), InvalidInput);
  CHECK_THROWS_AS(rc.set("epochs", "-3"), InvalidInput);
  CHECK_THROWS_AS(rc.set("learning_rate", "fast"), InvalidInput);
  CHECK_THROWS_AS(rc.set("schemes", "generic,bogus"), InvalidInput);

  const auto path = std::filesystem::temp_directory_path() / "astnet_run_config.txt";
  {
    std::ofstream f(path);
    f << "# comment\nsentences = 9\n\nlearning_rate=0.002  # inline\n";
  }
  RunConfig fc;
  fc.load_file(path);
  CHECK(fc.synth.n_sentences == 9);
  CHECK(fc.train.learning_rate == 0.002);
  fc.set("sentences", "4");  // flags applied after the file win
  CHECK(fc.synth.n_sentences == 4);
  {
    std::ofstream f(path);
    f << "sentences=9\nunknown_key=1\n";
  }
  try {
    RunConfig x;
    x.load_file(path);
    FAIL("expected InvalidInput");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  std::filesystem::remove(path);

  RunConfig v;
  v.fold = 4;
  CHECK_THROWS_AS(v.validate(), InvalidInput);
  v = RunConfig{};
  v.set("channels", "4");
  CHECK_NOTHROW(v.validate());
  CHECK(v.items().size() == RunConfig::keys().size());

  const TrainConfig ft = RunConfig{}.train_config_for(Scheme::Finetuned);
  CHECK(ft.epochs == 20);
  CHECK(ft.learning_rate == 5e-4);
  CHECK(checkpoint_path("ck", Direction::N2F, Scheme::Finetuned, 2, "S1") ==
        std::filesystem::path("ck/n2f/finetuned/fold2_S1.ckpt"));
  CHECK(checkpoint_path("ck", Direction::N2S, Scheme::Generic, 0, "S1") ==
        std::filesystem::path("ck/n2s/generic/fold0.ckpt"));
}
