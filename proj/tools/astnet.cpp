// tools/astnet.cpp

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

// astnet: command-line front end over the C interface.
//
//   astnet synth     --out DIR [--sentences N] [--subjects N]
//   astnet train     --corpus DIR --out DIR --direction n2f|n2s --scheme S --fold K [--subject ID] [--generic CKPT]
//   astnet transform --checkpoint CKPT --input FILE --out FILE [--attention FILE] [--max-steps-override N]
//   astnet eval      --corpus DIR --checkpoints DIR --out DIR [--direction D] [--schemes a,b]
//   astnet gradcheck
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 verification failure.

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "astnet/astnet.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

int exit_code(astnet_status s) {
  switch (s) {
    case ASTNET_OK: return kExitOk;
    case ASTNET_ERR_USAGE: return kExitUsage;
    case ASTNET_ERR_VERIFY: return kExitVerify;
    case ASTNET_ERR_DATA:
    case ASTNET_ERR_IO: return kExitData;
  }
  return kExitData;
}

// Thrown to unwind with a status after the message has been printed.
struct Failure {
  astnet_status status;
};

void check(astnet_status s, const char* what) {
  if (s != ASTNET_OK) {
    std::fprintf(stderr, "astnet: %s: %s\n", what, astnet_last_error());
    throw Failure{s};
  }
}

void usage_error(const std::string& message) {
  std::fprintf(stderr, "astnet: %s\n", message.c_str());
  throw Failure{ASTNET_ERR_USAGE};
}

struct CString {
  char* p = nullptr;
  ~CString() { astnet_string_free(p); }
  std::string str() const { return p == nullptr ? std::string() : std::string(p); }
};

struct ConfigHandle {
  astnet_config* p = nullptr;
  ~ConfigHandle() { astnet_config_free(p); }
};
struct CorpusHandle {
  astnet_corpus* p = nullptr;
  ~CorpusHandle() { astnet_corpus_free(p); }
};
struct ModelHandle {
  astnet_model* p = nullptr;
  ~ModelHandle() { astnet_model_free(p); }
};

// Flags shared by every subcommand, plus per-command key overrides.
struct Options {
  std::string config;
  std::optional<std::string> seed, out, threads;
  bool force = false;
  std::vector<std::string> sets;  // --set key=value
  std::vector<std::pair<std::string, std::optional<std::string>*>> keyed;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output directory (transform: output file)");
  cmd->add_option("--threads", o.threads, "worker threads (default 1)");
  cmd->add_flag("--force", o.force, "overwrite existing output");
  cmd->add_option("--set", o.sets, "extra key=value override, repeatable");
}

void add_keyed(CLI::App* cmd, Options& o, const std::string& flag, const std::string& key,
               std::optional<std::string>& slot, const std::string& help) {
  cmd->add_option(flag, slot, help);
  o.keyed.emplace_back(key, &slot);
}

// Config file first, then flags; flags win.
void build_config(ConfigHandle& cfg, const Options& o) {
  check(astnet_config_new(&cfg.p), "config");
  if (!o.config.empty()) check(astnet_config_load(cfg.p, o.config.c_str()), "config");
  auto set = [&](const std::string& k, const std::string& v) {
    if (astnet_config_set(cfg.p, k.c_str(), v.c_str()) != ASTNET_OK) usage_error(astnet_last_error());
  };
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) usage_error("--set expects key=value, got '" + kv + "'");
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) set("seed", *o.seed);
  if (o.out) set("out", *o.out);
  if (o.threads) set("threads", *o.threads);
  if (o.force) set("force", "true");
  for (const auto& [key, slot] : o.keyed) {
    if (*slot) set(key, **slot);
  }
  if (astnet_config_validate(cfg.p) != ASTNET_OK) usage_error(astnet_last_error());
}

std::string get(const ConfigHandle& cfg, const char* key) {
  CString v;
  check(astnet_config_get(cfg.p, key, &v.p), "config");
  return v.str();
}

bool dir_is_nonempty(const std::string& dir) {
  std::error_code ec;
  return std::filesystem::is_directory(dir, ec) && !std::filesystem::is_empty(dir, ec);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) {
    std::fprintf(stderr, "astnet: cannot write %s\n", path.c_str());
    throw Failure{ASTNET_ERR_IO};
  }
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

int run_synth(const Options& o) {
  ConfigHandle cfg;
  build_config(cfg, o);
  const std::string out = get(cfg, "out");
  if (out.empty()) usage_error("synth: --out is required");
  if (dir_is_nonempty(out) && get(cfg, "force") != "true") {
    usage_error("synth: output directory " + out + " is not empty (use --force to overwrite)");
  }
  CorpusHandle corpus;
  check(astnet_corpus_synth(cfg.p, &corpus.p), "synth");
  check(astnet_corpus_save(corpus.p, out.c_str()), "synth");
  std::printf("wrote %zu utterances (%zu subjects x %zu sentences x 3 rates) to %s\n",
              astnet_corpus_utterances(corpus.p), astnet_corpus_subjects(corpus.p), astnet_corpus_sentences(corpus.p),
              out.c_str());
  return kExitOk;
}

void print_epoch(size_t epoch, double mse, double bce, void*) {
  std::fprintf(stderr, "epoch %zu  mse %.6f  bce %.6f\n", epoch + 1, mse, bce);
}

int run_train(const Options& o) {
  ConfigHandle cfg;
  build_config(cfg, o);
  const std::string corpus_dir = get(cfg, "corpus");
  const std::string out = get(cfg, "out");
  const std::string scheme = get(cfg, "scheme");
  if (corpus_dir.empty()) usage_error("train: --corpus is required");
  if (out.empty()) usage_error("train: --out is required");
  if (scheme != "generic" && get(cfg, "subject").empty()) usage_error("train: --scheme " + scheme + " needs --subject");

  CString ckpt;
  check(astnet_checkpoint_path(cfg.p, out.c_str(), 0, &ckpt.p), "train");
  if (std::filesystem::exists(ckpt.str()) && get(cfg, "force") != "true") {
    usage_error("train: " + ckpt.str() + " exists (use --force to overwrite)");
  }

  ModelHandle generic;
  if (scheme == "finetuned") {
    std::string gpath = get(cfg, "generic");
    if (gpath.empty()) {
      CString def;
      check(astnet_checkpoint_path(cfg.p, out.c_str(), 1, &def.p), "train");
      gpath = def.str();
    }
    check(astnet_model_load(gpath.c_str(), &generic.p), "train: generic checkpoint");
  }
  CorpusHandle corpus;
  check(astnet_corpus_load(corpus_dir.c_str(), &corpus.p), "train: corpus");

  ModelHandle model;
  CString manifest;
  check(astnet_train(cfg.p, corpus.p, generic.p, &model.p, &manifest.p, print_epoch, nullptr), "train");
  check(astnet_model_save(model.p, ckpt.str().c_str()), "train");
  std::filesystem::path log(ckpt.str());
  log.replace_extension(".manifest.txt");
  write_text(log, manifest.str());
  std::printf("wrote %s\n", ckpt.str().c_str());
  return kExitOk;
}

int run_transform(const Options& o) {
  ConfigHandle cfg;
  build_config(cfg, o);
  const std::string checkpoint = get(cfg, "checkpoint");
  const std::string input = get(cfg, "input");
  const std::string out = get(cfg, "out");
  const std::string attention = get(cfg, "attention");
  if (checkpoint.empty() || input.empty() || out.empty()) {
    usage_error("transform: --checkpoint, --input and --out are required");
  }
  if (std::filesystem::exists(out) && get(cfg, "force") != "true") {
    usage_error("transform: " + out + " exists (use --force to overwrite)");
  }
  if (!std::filesystem::exists(input)) {
    std::fprintf(stderr, "astnet: transform: input %s does not exist\n", input.c_str());
    throw Failure{ASTNET_ERR_DATA};
  }
  ModelHandle model;
  check(astnet_model_load(checkpoint.c_str(), &model.p), "transform");
  const size_t max_steps = std::stoul(get(cfg, "max_steps_override"));
  int truncated = 0;
  size_t frames = 0;
  check(astnet_transform_file(model.p, input.c_str(), out.c_str(), attention.empty() ? nullptr : attention.c_str(),
                              max_steps, &truncated, &frames),
        "transform");
  if (truncated) {
    std::fprintf(stderr, "warning: decoder reached the step bound (%zu frames) without a stop token\n", frames);
  }
  std::printf("wrote %zu frames to %s\n", frames, out.c_str());
  return kExitOk;
}

int run_eval(const Options& o) {
  ConfigHandle cfg;
  build_config(cfg, o);
  const std::string corpus_dir = get(cfg, "corpus");
  if (corpus_dir.empty()) usage_error("eval: --corpus is required");
  if (get(cfg, "out").empty()) usage_error("eval: --out is required");
  CorpusHandle corpus;
  check(astnet_corpus_load(corpus_dir.c_str(), &corpus.p), "eval: corpus");
  CString table;
  check(astnet_eval(cfg.p, corpus.p, &table.p), "eval");
  std::fputs(table.str().c_str(), stdout);
  return kExitOk;
}

int run_gradcheck(const Options& o) {
  ConfigHandle cfg;
  build_config(cfg, o);
  CString report;
  double worst = 0.0;
  const astnet_status s = astnet_gradcheck(cfg.p, &report.p, &worst);
  std::fputs(report.str().c_str(), stdout);
  if (s == ASTNET_ERR_VERIFY) {
    std::printf("FAIL: %s\n", astnet_last_error());
    return kExitVerify;
  }
  check(s, "gradcheck");
  std::printf("PASS\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaking-rate conversion of articulatory trajectories"};
  app.require_subcommand(1);
  app.set_version_flag("--version", astnet_version());

  Options synth_o, train_o, transform_o, eval_o, grad_o;
  std::optional<std::string> sentences, subjects;
  std::optional<std::string> t_corpus, t_direction, t_scheme, t_fold, t_subject, t_generic, t_epochs;
  std::optional<std::string> x_checkpoint, x_input, x_attention, x_max_steps;
  std::optional<std::string> e_corpus, e_checkpoints, e_direction, e_schemes;
  std::optional<std::string> g_corrupt;

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  add_common(synth, synth_o);
  add_keyed(synth, synth_o, "--sentences", "sentences", sentences, "sentences per subject");
  add_keyed(synth, synth_o, "--subjects", "subjects", subjects, "number of subjects");

  CLI::App* train = app.add_subcommand("train", "train one model");
  add_common(train, train_o);
  add_keyed(train, train_o, "--corpus", "corpus", t_corpus, "corpus directory");
  add_keyed(train, train_o, "--direction", "direction", t_direction, "n2f or n2s");
  add_keyed(train, train_o, "--scheme", "scheme", t_scheme, "subject_dependent, generic or finetuned");
  add_keyed(train, train_o, "--fold", "fold", t_fold, "test fold index");
  add_keyed(train, train_o, "--subject", "subject", t_subject, "subject id");
  add_keyed(train, train_o, "--generic", "generic", t_generic, "generic checkpoint to finetune");
  add_keyed(train, train_o, "--epochs", "epochs", t_epochs, "training epochs");

  CLI::App* transform = app.add_subcommand("transform", "convert one utterance with a checkpoint");
  add_common(transform, transform_o);
  add_keyed(transform, transform_o, "--checkpoint", "checkpoint", x_checkpoint, "checkpoint file");
  add_keyed(transform, transform_o, "--input", "input", x_input, "neutral-rate utterance file");
  add_keyed(transform, transform_o, "--attention", "attention", x_attention, "optional attention matrix output");
  add_keyed(transform, transform_o, "--max-steps-override", "max_steps_override", x_max_steps,
            "decoder step bound");

  CLI::App* eval = app.add_subcommand("eval", "score IT-DTW and trained schemes over all folds");
  add_common(eval, eval_o);
  add_keyed(eval, eval_o, "--corpus", "corpus", e_corpus, "corpus directory");
  add_keyed(eval, eval_o, "--checkpoints", "checkpoints", e_checkpoints, "checkpoint tree");
  add_keyed(eval, eval_o, "--direction", "direction", e_direction, "n2f or n2s");
  add_keyed(eval, eval_o, "--schemes", "schemes", e_schemes, "comma-separated schemes");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  add_common(gradcheck, grad_o);
  add_keyed(gradcheck, grad_o, "--corrupt-group", "gradcheck_corrupt", g_corrupt, "");
  gradcheck->get_option("--corrupt-group")->group("");  // test hook, hidden from help

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return run_synth(synth_o);
    if (train->parsed()) return run_train(train_o);
    if (transform->parsed()) return run_transform(transform_o);
    if (eval->parsed()) return run_eval(eval_o);
    if (gradcheck->parsed()) return run_gradcheck(grad_o);
  } catch (const Failure& f) {
    return exit_code(f.status);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "astnet: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
