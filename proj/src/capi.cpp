// src/capi.cpp

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

#include "astnet/astnet.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "astnet/error.hpp"
#include "astnet/eval.hpp"
#include "astnet/model.hpp"
#include "astnet/run_config.hpp"
#include "astnet/signal.hpp"
#include "astnet/training.hpp"

struct astnet_config {
  astnet::RunConfig cfg;
};

struct astnet_corpus {
  astnet::Corpus corpus;
};

struct astnet_model {
  astnet::AstNetParams params;
};

namespace {

thread_local std::string g_last_error;

astnet_status fail(astnet_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Maps the library's exception types onto status codes.
template <typename F>
astnet_status guarded(F&& body) {
  try {
    return body();
  } catch (const astnet::InvalidInput& e) {
    return fail(ASTNET_ERR_USAGE, e.what());
  } catch (const astnet::DataError& e) {
    return fail(ASTNET_ERR_DATA, e.what());
  } catch (const astnet::IoError& e) {
    return fail(ASTNET_ERR_IO, e.what());
  } catch (const astnet::VerificationError& e) {
    return fail(ASTNET_ERR_VERIFY, e.what());
  } catch (const std::bad_alloc&) {
    return fail(ASTNET_ERR_DATA, "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ASTNET_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(ASTNET_ERR_DATA, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define ASTNET_REQUIRE(cond, what) \
  do {                             \
    if (!(cond)) return fail(ASTNET_ERR_USAGE, what); \
  } while (0)

bool has_subject(const astnet::Corpus& corpus, const std::string& subject) {
  for (const std::string& s : corpus.subjects()) {
    if (s == subject) return true;
  }
  return false;
}

// Directory must be absent or empty unless overwriting was requested.
void check_output_dir(const std::filesystem::path& dir, bool force) {
  if (dir.empty()) throw astnet::InvalidInput("no output directory given");
  if (std::filesystem::exists(dir)) {
    if (!std::filesystem::is_directory(dir)) throw astnet::InvalidInput(dir.string() + " exists and is not a directory");
    if (!force && !std::filesystem::is_empty(dir)) {
      throw astnet::InvalidInput("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    }
  }
}

}  // namespace

extern "C" {

const char* astnet_last_error(void) { return g_last_error.c_str(); }

const char* astnet_version(void) { return "1.0.0"; }

void astnet_string_free(char* s) { std::free(s); }

// ---- configuration --------------------------------------------------------

astnet_status astnet_config_new(astnet_config** out) {
  ASTNET_REQUIRE(out != nullptr, "config_new: null output");
  return guarded([&] {
    *out = new astnet_config();
    return ASTNET_OK;
  });
}

void astnet_config_free(astnet_config* cfg) { delete cfg; }

astnet_status astnet_config_load(astnet_config* cfg, const char* path) {
  ASTNET_REQUIRE(cfg != nullptr && path != nullptr, "config_load: null argument");
  return guarded([&] {
    // Parse into a copy so a bad file leaves the config untouched.
    astnet::RunConfig next = cfg->cfg;
    next.load_file(path);
    cfg->cfg = std::move(next);
    return ASTNET_OK;
  });
}

astnet_status astnet_config_set(astnet_config* cfg, const char* key, const char* value) {
  ASTNET_REQUIRE(cfg != nullptr && key != nullptr && value != nullptr, "config_set: null argument");
  return guarded([&] {
    astnet::RunConfig next = cfg->cfg;
    next.set(key, value);
    cfg->cfg = std::move(next);
    return ASTNET_OK;
  });
}

astnet_status astnet_config_get(const astnet_config* cfg, const char* key, char** value) {
  ASTNET_REQUIRE(cfg != nullptr && key != nullptr && value != nullptr, "config_get: null argument");
  return guarded([&] {
    for (const auto& [k, v] : cfg->cfg.items()) {
      if (k == key) {
        *value = dup_string(v);
        return ASTNET_OK;
      }
    }
    return fail(ASTNET_ERR_USAGE, std::string("unknown config key '") + key + "'");
  });
}

astnet_status astnet_config_validate(const astnet_config* cfg) {
  ASTNET_REQUIRE(cfg != nullptr, "config_validate: null config");
  return guarded([&] {
    cfg->cfg.validate();
    return ASTNET_OK;
  });
}

astnet_status astnet_config_dump(const astnet_config* cfg, char** text) {
  ASTNET_REQUIRE(cfg != nullptr && text != nullptr, "config_dump: null argument");
  return guarded([&] {
    std::string out;
    for (const auto& [k, v] : cfg->cfg.items()) out += k + "=" + v + "\n";
    *text = dup_string(out);
    return ASTNET_OK;
  });
}

// ---- corpus ---------------------------------------------------------------

astnet_status astnet_corpus_synth(const astnet_config* cfg, astnet_corpus** out) {
  ASTNET_REQUIRE(cfg != nullptr && out != nullptr, "corpus_synth: null argument");
  return guarded([&] {
    cfg->cfg.synth.validate();
    auto c = std::make_unique<astnet_corpus>();
    c->corpus = astnet::synth_corpus(cfg->cfg.synth);
    *out = c.release();
    return ASTNET_OK;
  });
}

astnet_status astnet_corpus_load(const char* dir, astnet_corpus** out) {
  ASTNET_REQUIRE(dir != nullptr && out != nullptr, "corpus_load: null argument");
  return guarded([&] {
    if (!std::filesystem::is_directory(dir)) {
      return fail(ASTNET_ERR_DATA, std::string("corpus directory ") + dir + " does not exist");
    }
    auto c = std::make_unique<astnet_corpus>();
    c->corpus = astnet::read_corpus(dir);
    *out = c.release();
    return ASTNET_OK;
  });
}

astnet_status astnet_corpus_save(const astnet_corpus* corpus, const char* dir) {
  ASTNET_REQUIRE(corpus != nullptr && dir != nullptr, "corpus_save: null argument");
  return guarded([&] {
    astnet::write_corpus(corpus->corpus, dir);
    return ASTNET_OK;
  });
}

void astnet_corpus_free(astnet_corpus* corpus) { delete corpus; }

size_t astnet_corpus_utterances(const astnet_corpus* corpus) {
  return corpus == nullptr ? 0 : corpus->corpus.utterances().size();
}

size_t astnet_corpus_subjects(const astnet_corpus* corpus) {
  return corpus == nullptr ? 0 : corpus->corpus.subjects().size();
}

size_t astnet_corpus_sentences(const astnet_corpus* corpus) {
  return corpus == nullptr ? 0 : corpus->corpus.sentence_ids().size();
}

// ---- models ---------------------------------------------------------------

astnet_status astnet_train(const astnet_config* cfg, const astnet_corpus* corpus, const astnet_model* generic,
                           astnet_model** out, char** manifest, astnet_epoch_fn on_epoch, void* user) {
  ASTNET_REQUIRE(cfg != nullptr && corpus != nullptr && out != nullptr, "train: null argument");
  return guarded([&] {
    const astnet::RunConfig& rc = cfg->cfg;
    rc.validate();
    const astnet::Corpus& c = corpus->corpus;
    const astnet::Scheme scheme = rc.train.scheme;
    if (c.channels() != rc.model.channels) {
      return fail(ASTNET_ERR_DATA, "corpus has " + std::to_string(c.channels()) + " channels, model expects " +
                                       std::to_string(rc.model.channels));
    }
    if (scheme != astnet::Scheme::Generic) {
      if (rc.subject.empty()) return fail(ASTNET_ERR_USAGE, "scheme " + astnet::to_string(scheme) + " needs a subject");
      if (!has_subject(c, rc.subject)) return fail(ASTNET_ERR_DATA, "subject " + rc.subject + " is not in the corpus");
    }
    if (scheme == astnet::Scheme::Finetuned && generic == nullptr) {
      return fail(ASTNET_ERR_USAGE, "scheme finetuned needs a generic checkpoint");
    }
    const auto folds = astnet::make_folds(c.sentence_ids(), rc.folds, rc.train.seed);
    const astnet::TrainConfig tc = rc.train_config_for(scheme);
    astnet::EpochCallback cb;
    if (on_epoch != nullptr) {
      cb = [&](std::size_t e, const astnet::EpochStats& s) { on_epoch(e, s.mean.mse, s.mean.bce, user); };
    }
    astnet::TrainResult result = astnet::train(c, folds[rc.fold], rc.model, tc, rc.subject,
                                               scheme == astnet::Scheme::Finetuned ? &generic->params : nullptr, cb);
    if (manifest != nullptr) {
      const astnet::RunManifest m = astnet::make_manifest(tc, rc.model, rc.fold, rc.subject, result,
                                                          result.params.config().max_decoder_steps);
      *manifest = dup_string(m.str());
    }
    *out = new astnet_model{std::move(result.params)};
    return ASTNET_OK;
  });
}

astnet_status astnet_model_load(const char* path, astnet_model** out) {
  ASTNET_REQUIRE(path != nullptr && out != nullptr, "model_load: null argument");
  return guarded([&] {
    if (!std::filesystem::exists(path)) return fail(ASTNET_ERR_DATA, std::string("checkpoint ") + path + " does not exist");
    *out = new astnet_model{astnet::load_checkpoint(path)};
    return ASTNET_OK;
  });
}

astnet_status astnet_model_save(const astnet_model* model, const char* path) {
  ASTNET_REQUIRE(model != nullptr && path != nullptr, "model_save: null argument");
  return guarded([&] {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    astnet::save_checkpoint(p, model->params);
    return ASTNET_OK;
  });
}

void astnet_model_free(astnet_model* model) { delete model; }

size_t astnet_model_channels(const astnet_model* model) {
  return model == nullptr ? 0 : model->params.config().channels;
}

size_t astnet_model_max_steps(const astnet_model* model) {
  return model == nullptr ? 0 : model->params.config().max_decoder_steps;
}

astnet_status astnet_checkpoint_path(const astnet_config* cfg, const char* root, int generic_slot, char** path) {
  ASTNET_REQUIRE(cfg != nullptr && root != nullptr && path != nullptr, "checkpoint_path: null argument");
  return guarded([&] {
    const astnet::RunConfig& rc = cfg->cfg;
    const astnet::Scheme scheme = generic_slot ? astnet::Scheme::Generic : rc.train.scheme;
    if (scheme != astnet::Scheme::Generic && rc.subject.empty()) {
      return fail(ASTNET_ERR_USAGE, "scheme " + astnet::to_string(scheme) + " needs a subject");
    }
    *path = dup_string(astnet::checkpoint_path(root, rc.train.direction, scheme, rc.fold, rc.subject).string());
    return ASTNET_OK;
  });
}

astnet_status astnet_transform_file(const astnet_model* model, const char* input_path, const char* output_path,
                                    const char* attention_path, size_t max_steps, int* truncated, size_t* frames) {
  ASTNET_REQUIRE(model != nullptr && input_path != nullptr && output_path != nullptr, "transform: null argument");
  return guarded([&] {
    astnet::Utterance utt = astnet::read_utterance_file(input_path);
    const astnet::ModelConfig& mc = model->params.config();
    if (utt.trajectory.channels() != mc.channels) {
      return fail(ASTNET_ERR_DATA, std::string("channel mismatch: ") + input_path + " has " +
                                       std::to_string(utt.trajectory.channels()) + " channels, checkpoint expects " +
                                       std::to_string(mc.channels));
    }
    const std::size_t bound = max_steps > 0 ? max_steps : mc.max_decoder_steps;
    if (bound == 0) return fail(ASTNET_ERR_USAGE, "checkpoint has no step bound; give max_steps_override");

    // The model works on zero-mean data; the input mean is restored on output.
    const astnet::Vector mean = utt.trajectory.frames.colwise().mean().transpose();
    astnet::InferResult r = astnet::infer(astnet::zero_mean(utt.trajectory), model->params, bound);
    r.output.frames.rowwise() += mean.transpose();

    astnet::Utterance pred;
    pred.sentence_id = utt.sentence_id;
    pred.subject_id = utt.subject_id;
    pred.rate = utt.rate;
    pred.trajectory = std::move(r.output);
    const std::filesystem::path op(output_path);
    if (op.has_parent_path()) std::filesystem::create_directories(op.parent_path());
    astnet::write_trajectory_file(op, pred);

    if (attention_path != nullptr && attention_path[0] != '\0') {
      std::ofstream a(attention_path);
      if (!a) return fail(ASTNET_ERR_IO, std::string("cannot write ") + attention_path);
      char buf[32];
      for (long t = 0; t < r.alphas.rows(); ++t) {
        for (long n = 0; n < r.alphas.cols(); ++n) {
          std::snprintf(buf, sizeof buf, n == 0 ? "%.6f" : " %.6f", r.alphas(t, n));
          a << buf;
        }
        a << '\n';
      }
      if (!a) return fail(ASTNET_ERR_IO, std::string("cannot write ") + attention_path);
    }
    if (truncated != nullptr) *truncated = r.truncated ? 1 : 0;
    if (frames != nullptr) *frames = pred.trajectory.length();
    return ASTNET_OK;
  });
}

// ---- evaluation -----------------------------------------------------------

astnet_status astnet_eval(const astnet_config* cfg, const astnet_corpus* corpus, char** table) {
  ASTNET_REQUIRE(cfg != nullptr && corpus != nullptr, "eval: null argument");
  return guarded([&] {
    const astnet::RunConfig& rc = cfg->cfg;
    rc.validate();
    const astnet::Corpus& c = corpus->corpus;
    const astnet::Direction dir = rc.train.direction;
    check_output_dir(rc.out, rc.force);

    std::vector<astnet::Scheme> schemes;
    for (const std::string& s : rc.schemes) {
      if (s != "itdtw") schemes.push_back(astnet::parse_scheme(s));
    }
    if (!schemes.empty() && rc.checkpoints.empty()) return fail(ASTNET_ERR_USAGE, "eval needs a checkpoint directory");

    // Load every checkpoint before any work so coverage gaps fail early.
    std::map<std::tuple<int, std::size_t, std::string>, astnet::AstNetParams> models;
    std::string missing;
    for (astnet::Scheme s : schemes) {
      for (std::size_t k = 0; k < rc.folds; ++k) {
        std::vector<std::string> subjects{""};
        if (s != astnet::Scheme::Generic) subjects = c.subjects();
        for (const std::string& subj : subjects) {
          const auto path = astnet::checkpoint_path(rc.checkpoints, dir, s, k, subj);
          if (!std::filesystem::exists(path)) {
            missing += "\n  " + path.string();
            continue;
          }
          astnet::AstNetParams p = astnet::load_checkpoint(path);
          if (p.config().channels != c.channels()) {
            return fail(ASTNET_ERR_DATA, "checkpoint " + path.string() + " has the wrong channel count");
          }
          models.emplace(std::make_tuple(static_cast<int>(s), k, subj), std::move(p));
        }
      }
    }
    if (!missing.empty()) return fail(ASTNET_ERR_DATA, "incomplete fold coverage, missing checkpoints:" + missing);

    const auto folds = astnet::make_folds(c.sentence_ids(), rc.folds, rc.train.seed);
    std::vector<astnet::SchemeEvaluation> evals;
    evals.push_back(astnet::evaluate_scheme(c, dir, folds, "itdtw", {}));
    for (astnet::Scheme s : schemes) {
      const bool shared = s == astnet::Scheme::Generic;
      astnet::ModelLookup lookup = [&, s, shared](std::size_t k, const std::string& subj) -> const astnet::AstNetParams* {
        auto it = models.find(std::make_tuple(static_cast<int>(s), k, shared ? std::string() : subj));
        return it == models.end() ? nullptr : &it->second;
      };
      evals.push_back(astnet::evaluate_scheme(c, dir, folds, astnet::to_string(s), lookup));
    }
    const astnet::SchemeTable tab = astnet::make_scheme_table(evals);
    std::filesystem::create_directories(rc.out);
    if (evals.size() > 1) {
      // Range and duration analyses describe the last listed model scheme.
      const astnet::SdatSummary sd = astnet::sdat_analysis(c, evals.back());
      const astnet::DurationStats du = astnet::duration_analysis(c, evals.back());
      astnet::emit_reports(tab, evals, &sd, &du, rc.out);
    } else {
      astnet::emit_reports(tab, evals, nullptr, nullptr, rc.out);
    }
    if (table != nullptr) *table = dup_string(tab.render());
    return ASTNET_OK;
  });
}

astnet_status astnet_gradcheck(const astnet_config* cfg, char** report, double* max_rel_error) {
  ASTNET_REQUIRE(cfg != nullptr, "gradcheck: null config");
  return guarded([&] {
    astnet::ToyGradCheckOptions opt;
    opt.seed = cfg->cfg.train.seed;
    opt.corrupt_group = cfg->cfg.gradcheck_corrupt;
    const astnet::GradientCheckReport rep = astnet::toy_gradient_check(opt);
    constexpr double kTolerance = 1e-4;
    std::string text;
    char buf[160];
    for (const astnet::ParamGroupError& g : rep.groups) {
      std::snprintf(buf, sizeof buf, "%-20s %.3e%s\n", g.name.c_str(), g.max_rel_error,
                    g.max_rel_error < kTolerance ? "" : "  FAIL");
      text += buf;
    }
    std::snprintf(buf, sizeof buf, "max %.3e over %zu entries\n", rep.max_rel_error, rep.n_checked);
    text += buf;
    if (report != nullptr) *report = dup_string(text);
    if (max_rel_error != nullptr) *max_rel_error = rep.max_rel_error;
    if (!rep.passed(kTolerance)) {
      std::string failed;
      for (const astnet::ParamGroupError& g : rep.groups) {
        if (!(g.max_rel_error < kTolerance)) failed += (failed.empty() ? "" : ", ") + g.name;
      }
      return fail(ASTNET_ERR_VERIFY, "gradient check failed for " + failed);
    }
    return ASTNET_OK;
  });
}

}  // extern "C"
