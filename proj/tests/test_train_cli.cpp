#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctxasr/checkpoint.hpp"
#include "ctxasr/config.hpp"
#include "ctxasr/data.hpp"
#include "ctxasr/model.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/train.hpp"

using namespace ctxasr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ctxasr_train_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig micro_model() {
  ModelConfig m;
  m.d = 8;
  m.num_encoder_layers = 2;
  m.n_heads = 2;
  m.l_text = 0;
  m.l_bias = 1;
  m.l_mask = 2;
  m.K = 3;
  m.feature_dim = 6;
  m.beam_width = 3;
  m.nbest = 2;
  m.mask_span = 2;
  m.wordpiece_vocab = 0;  // resolved from the corpus vocabulary
  m.seed = 7;
  return m;
}

CorpusSpec micro_corpus_spec() {
  CorpusSpec spec;
  spec.n_common_words = 16;
  spec.n_entities = 12;
  spec.n_paired = 24;
  spec.n_text = 48;
  spec.feature_dim = 6;
  spec.n_test_per_set = 4;
  spec.n_val = 4;
  spec.test_distractors = 8;
  spec.train_bias_distractors = 2;
  spec.seed = 91;
  return spec;
}

EngineConfig micro_engine(const fs::path& data_dir) {
  EngineConfig cfg;
  cfg.model = micro_model();
  cfg.train.lr = 1e-3;
  cfg.train.warmup_steps = 2;
  cfg.train.train_steps = 6;
  cfg.train.mwer_steps = 4;
  cfg.train.batch_size = 2;
  cfg.train.text_batch_size = 2;
  cfg.train.bias_n_max = 3;
  cfg.train.log_every = 2;
  cfg.train.checkpoint_every = 3;
  cfg.train.data_dir = data_dir.string();
  return cfg;
}

// Vocabulary shared by the checkpoint and evaluation fixtures.
WordpieceVocab tiny_vocab() {
  return WordpieceVocab::build({{"play", "some", "jazz"}, {"call", "mom"}}, {});
}

}  // namespace

TEST_CASE("Adam learning-rate schedule: warmup, cosine, floor") {
  TrainConfig tcfg;
  tcfg.lr = 2e-3;
  tcfg.warmup_steps = 10;
  tcfg.lr_final_fraction = 0.1;
  Rng rng(3);
  WordpieceVocab vocab = tiny_vocab();
  ModelConfig mcfg = micro_model();
  mcfg.wordpiece_vocab = vocab.size();
  Model model(mcfg, rng);
  const int total = 100;
  Adam opt(model, tcfg, total);

  // Linear warmup hits lr exactly at the boundary.
  CHECK(opt.rate_at(1) == doctest::Approx(tcfg.lr * 0.1).epsilon(1e-12));
  CHECK(opt.rate_at(5) == doctest::Approx(tcfg.lr * 0.5).epsilon(1e-12));
  CHECK(opt.rate_at(10) == doctest::Approx(tcfg.lr).epsilon(1e-12));

  // Cosine decay from lr at the warmup boundary to lr * final_fraction at the
  // last step, monotone non-increasing in between.
  CHECK(opt.rate_at(total) == doctest::Approx(tcfg.lr * tcfg.lr_final_fraction).epsilon(1e-12));
  const double mid = opt.rate_at(55);
  const double expected_mid =
      tcfg.lr * tcfg.lr_final_fraction +
      tcfg.lr * (1.0 - tcfg.lr_final_fraction) * 0.5 *
          (1.0 + std::cos(M_PI * (55.0 - 10.0) / (100.0 - 10.0)));
  CHECK(mid == doctest::Approx(expected_mid).epsilon(1e-12));
  for (int s = 11; s < total; ++s) CHECK(opt.rate_at(s) >= opt.rate_at(s + 1));
}

TEST_CASE("Adam update matches the bias-corrected reference formula") {
  TrainConfig tcfg;
  tcfg.lr = 1e-2;
  tcfg.warmup_steps = 1;  // rate_at(step >= 1) is in the cosine region
  tcfg.lr_final_fraction = 1.0;  // constant lr: isolates the moment arithmetic
  Rng rng(4);
  WordpieceVocab vocab = tiny_vocab();
  ModelConfig mcfg = micro_model();
  mcfg.wordpiece_vocab = vocab.size();
  Model model(mcfg, rng);
  Adam opt(model, tcfg, 50);

  // Reference trajectory for gradient == 1 everywhere: every element shares
  // one scalar recurrence.
  std::vector<double> before;
  for (const auto& [name, p] : model.params())
    before.insert(before.end(), p.values().begin(), p.values().end());

  double m = 0.0, v = 0.0, offset = 0.0;
  for (int step = 1; step <= 3; ++step) {
    model.zero_grads();
    for (auto& [name, p] : model.params()) backward(sum_all(p));
    opt.apply(step);
    m = tcfg.adam_beta1 * m + (1.0 - tcfg.adam_beta1);
    v = tcfg.adam_beta2 * v + (1.0 - tcfg.adam_beta2);
    const double mhat = m / (1.0 - std::pow(tcfg.adam_beta1, step));
    const double vhat = v / (1.0 - std::pow(tcfg.adam_beta2, step));
    offset -= tcfg.lr * mhat / (std::sqrt(vhat) + tcfg.adam_eps);
  }

  std::size_t i = 0;
  double max_err = 0.0;
  for (const auto& [name, p] : model.params())
    for (double now : p.values())
      max_err = std::max(max_err, std::abs(now - (before[i++] + offset)));
  CHECK(max_err < 1e-12);
}

TEST_CASE("EpochStream: shuffled epochs, determinism, and seek") {
  EpochStream a(7, 42), b(7, 42);

  // Each epoch is a permutation of [0, 7) and consecutive epochs differ.
  std::vector<std::size_t> e0, e1;
  for (int i = 0; i < 7; ++i) e0.push_back(a.next());
  for (int i = 0; i < 7; ++i) e1.push_back(a.next());
  std::set<std::size_t> s0(e0.begin(), e0.end()), s1(e1.begin(), e1.end());
  CHECK(s0.size() == 7);
  CHECK(s1.size() == 7);
  CHECK(e0 != e1);
  CHECK(a.epoch() == 2);

  // A fresh stream replays the identical order.
  std::vector<std::size_t> replay;
  for (int i = 0; i < 14; ++i) replay.push_back(b.next());
  std::vector<std::size_t> joint = e0;
  joint.insert(joint.end(), e1.begin(), e1.end());
  CHECK(replay == joint);

  // seek(consumed) lands exactly where consuming that many items would.
  for (std::uint64_t consumed : {0ull, 3ull, 7ull, 10ull, 23ull}) {
    EpochStream walked(7, 42), jumped(7, 42);
    for (std::uint64_t i = 0; i < consumed; ++i) walked.next();
    jumped.seek(consumed);
    CHECK(jumped.epoch() == walked.epoch());
    for (int i = 0; i < 9; ++i) CHECK(jumped.next() == walked.next());
  }

  // A different seed yields a different first epoch (n! >> 1 at n = 7).
  EpochStream c(7, 43);
  std::vector<std::size_t> other;
  for (int i = 0; i < 7; ++i) other.push_back(c.next());
  CHECK(other != e0);
}

TEST_CASE("checkpoint round-trips parameters bitwise with state") {
  TempDir dir("ckpt_rt");
  Rng rng(11);
  WordpieceVocab vocab = tiny_vocab();
  ModelConfig mcfg = micro_model();
  mcfg.wordpiece_vocab = vocab.size();
  Model model(mcfg, rng);

  std::size_t n_params = 0;
  for (const auto& [name, p] : model.params()) n_params += p.size();
  TrainState state;
  state.step = 17;
  state.epoch = 3;
  state.best_val_wer = 42.5;
  state.best_step = 12;
  Rng filler(5);
  for (std::size_t i = 0; i < n_params; ++i) {
    state.adam_m.push_back(filler.normal());
    state.adam_v.push_back(std::abs(filler.normal()));
  }

  const std::string path = (dir.path / "model.ckpt").string();
  save_checkpoint(path, model, vocab, &state);
  Checkpoint ckpt = read_checkpoint(path);

  CHECK(ckpt.config == mcfg);
  CHECK(ckpt.vocab.to_json() == vocab.to_json());
  REQUIRE(ckpt.train.has_value());
  CHECK(ckpt.train->step == 17);
  CHECK(ckpt.train->epoch == 3);
  CHECK(ckpt.train->best_val_wer == 42.5);
  CHECK(ckpt.train->best_step == 12);
  CHECK(ckpt.train->adam_m == state.adam_m);
  CHECK(ckpt.train->adam_v == state.adam_v);

  // Weights restore bitwise into a fresh model.
  Model restored = restore_model(ckpt);
  REQUIRE(restored.params().size() == model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& [name_a, a] = model.params()[i];
    const auto& [name_b, b] = restored.params()[i];
    CHECK(name_a == name_b);
    REQUIRE(a.size() == b.size());
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a.values()[j] == b.values()[j]);
  }

  // Without a train block the optional stays empty.
  const std::string bare = (dir.path / "bare.ckpt").string();
  save_checkpoint(bare, model, vocab);
  CHECK(!read_checkpoint(bare).train.has_value());

  // Not-a-checkpoint and truncation are loud.
  const std::string junk = (dir.path / "junk.ckpt").string();
  std::ofstream(junk) << "definitely not a checkpoint";
  CHECK_THROWS(read_checkpoint(junk));
  std::string bytes = slurp(path);
  std::ofstream(junk, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS(read_checkpoint(junk));
}

TEST_CASE("load_params rejects a mismatched architecture") {
  TempDir dir("ckpt_mismatch");
  Rng rng(12);
  WordpieceVocab vocab = tiny_vocab();
  ModelConfig mcfg = micro_model();
  mcfg.wordpiece_vocab = vocab.size();
  Model model(mcfg, rng);
  const std::string path = (dir.path / "model.ckpt").string();
  save_checkpoint(path, model, vocab);

  ModelConfig wider = mcfg;
  wider.d = 16;
  Rng rng2(13);
  Model other(wider, rng2);
  CHECK_THROWS(load_params(other, read_checkpoint(path)));
}

TEST_CASE("train_cti writes checkpoints and an interrupted run resumes bitwise") {
  TempDir data("resume_data");
  generate_corpus(micro_corpus_spec(), data.path.string());
  EngineConfig cfg = micro_engine(data.path);

  // Reference: the uninterrupted run.
  TempDir full("resume_full");
  TrainResult ref = train_cti(cfg, TrainMode::Cti, full.path.string());
  CHECK(ref.steps_run == cfg.train.train_steps);
  CHECK(!ref.diverged);
  CHECK(fs::exists(full.path / "last.ckpt"));
  CHECK(fs::exists(full.path / "best.ckpt"));
  CHECK(fs::exists(full.path / "metrics.jsonl"));
  CHECK(std::isfinite(ref.best_val_wer));

  // Halt mid-run, then resume from last.ckpt: byte-identical artifacts.
  TempDir split("resume_split");
  EngineConfig halted = cfg;
  halted.train.halt_after_steps = 3;
  TrainResult first = train_cti(halted, TrainMode::Cti, split.path.string());
  CHECK(first.steps_run == 3);
  TrainResult second =
      train_cti(cfg, TrainMode::Cti, split.path.string(), (split.path / "last.ckpt").string());
  CHECK(second.steps_run == cfg.train.train_steps);
  CHECK(slurp(split.path / "last.ckpt") == slurp(full.path / "last.ckpt"));
  CHECK(slurp(split.path / "best.ckpt") == slurp(full.path / "best.ckpt"));
  CHECK(second.best_val_wer == ref.best_val_wer);
  CHECK(second.best_step == ref.best_step);

  // The checkpoint carries progress for inspection.
  Checkpoint last = read_checkpoint((full.path / "last.ckpt").string());
  REQUIRE(last.train.has_value());
  CHECK(last.train->step == cfg.train.train_steps);

  // Stage 2 runs from the stage-1 checkpoint and leaves its own artifacts.
  TempDir stage2("resume_mwer");
  TrainResult mwer = train_mwer(cfg, MwerMode::CtiMwer, (full.path / "last.ckpt").string(),
                                stage2.path.string());
  CHECK(mwer.steps_run == cfg.train.mwer_steps);
  CHECK(fs::exists(stage2.path / "last.ckpt"));
}

TEST_CASE("evaluate sweeps distractor counts with NaN for undefined cells") {
  TempDir data("eval_data");
  generate_corpus(micro_corpus_spec(), data.path.string());
  WordpieceVocab vocab = WordpieceVocab::load((data.path / "vocab.json").string());
  std::vector<PairedExample> tests =
      load_paired((data.path / "test_no_pre.jsonl").string(), vocab);
  std::vector<PairedExample> anti = load_paired((data.path / "test_anti.jsonl").string(), vocab);
  tests.insert(tests.end(), anti.begin(), anti.end());

  ModelConfig mcfg = micro_model();
  mcfg.wordpiece_vocab = vocab.size();
  Rng rng(21);
  Model model(mcfg, rng);
  std::vector<EvalCell> cells = evaluate(model, vocab, tests, {4, 8}, 0.5, 2);

  // Two set types x {0, 4, 8}.
  REQUIRE(cells.size() == 6);
  for (const EvalCell& c : cells) {
    CHECK(c.n_utterances == micro_corpus_spec().n_test_per_set);
    CHECK(c.wer >= 0.0);
    CHECK(std::isfinite(c.wer));
    // recall needs an in-context entity, no_bias_acc needs its absence; both
    // need a non-empty bias set.
    if (c.n_distractors > 0 && c.set_type == "no_pre")
      CHECK(c.recall >= 0.0);
    else
      CHECK(std::isnan(c.recall));
    if (c.n_distractors > 0 && c.set_type == "anti")
      CHECK(c.no_bias_acc >= 0.0);
    else
      CHECK(std::isnan(c.no_bias_acc));
  }

  // CSV: one row per cell, NaN rendered as an empty field.
  std::string csv = eval_csv(cells);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "set_type,n_distractors,n_utterances,wer,recall_at_k,no_bias_accuracy");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    if (line.rfind("no_pre,0,", 0) == 0) CHECK(line.find(",,") != std::string::npos);
  }
  CHECK(rows == 6);

  // Thread count must not change the aggregate numbers.
  std::vector<EvalCell> serial = evaluate(model, vocab, tests, {4, 8}, 0.5, 1);
  REQUIRE(serial.size() == cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(serial[i].wer == cells[i].wer);
    const bool both_nan = std::isnan(serial[i].recall) && std::isnan(cells[i].recall);
    CHECK((both_nan || serial[i].recall == cells[i].recall));
  }

  // corpus_wer is a finite percentage even on an untrained model.
  std::vector<PairedExample> val = load_paired((data.path / "val.jsonl").string(), vocab);
  double wer = corpus_wer(model, vocab, val, 0.5, 2);
  CHECK(wer >= 0.0);
  CHECK(std::isfinite(wer));
}

// The remaining cases exercise the installed binary end to end. CMake passes
// its location through the environment.
namespace {

const char* cli_path() { return std::getenv("CTXASR_BIN"); }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(cli_path()) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("CLI: gen-data then train then decode round-trip") {
  REQUIRE_MESSAGE(cli_path() != nullptr, "CTXASR_BIN not set; run under ctest");
  TempDir dir("cli");
  const fs::path log = dir.path / "log.txt";

  std::ofstream(dir.path / "spec.json") << micro_corpus_spec().to_json();
  CHECK(run_cli("gen-data --spec " + (dir.path / "spec.json").string() + " --out " +
                    (dir.path / "data").string(),
                log) == 0);
  CHECK(fs::exists(dir.path / "data" / "paired.jsonl"));

  EngineConfig cfg = micro_engine(dir.path / "data");
  std::ofstream(dir.path / "cfg.json") << config_to_json(cfg);
  CHECK(run_cli("train --config " + (dir.path / "cfg.json").string() +
                    " --mode sup_only --out " + (dir.path / "run").string(),
                log) == 0);
  CHECK(slurp(log).find("best val WER") != std::string::npos);

  CHECK(run_cli("decode --ckpt " + (dir.path / "run" / "best.ckpt").string() + " --input " +
                    (dir.path / "data" / "val.jsonl").string(),
                log) == 0);
  // Each emitted line is one utterance's JSON record.
  std::istringstream lines(slurp(log));
  std::string line;
  int n = 0;
  while (std::getline(lines, line))
    if (!line.empty() && line.front() == '{') ++n;
  CHECK(n == micro_corpus_spec().n_val);

  CHECK(run_cli("eval --ckpt " + (dir.path / "run" / "best.ckpt").string() + " --tests " +
                    (dir.path / "data").string() + " --distractors 4,8 --out " +
                    (dir.path / "results.csv").string(),
                log) == 0);
  std::string csv = slurp(dir.path / "results.csv");
  CHECK(csv.rfind("set_type,n_distractors,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);  // header + 3 sets x {0,4,8}
}

TEST_CASE("CLI failures exit nonzero with a one-line error") {
  REQUIRE_MESSAGE(cli_path() != nullptr, "CTXASR_BIN not set; run under ctest");
  TempDir dir("cli_err");
  const fs::path log = dir.path / "log.txt";

  // Missing config file.
  CHECK(run_cli("train --config " + (dir.path / "absent.json").string() +
                    " --mode sup_only --out " + (dir.path / "run").string(),
                log) == 1);
  std::string text = slurp(log);
  CHECK(text.rfind("error:", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);

  // Unknown config key.
  std::ofstream(dir.path / "bad.json") << "{\"no_such_knob\": 3}";
  CHECK(run_cli("train --config " + (dir.path / "bad.json").string() + " --mode sup_only --out " +
                    (dir.path / "run").string(),
                log) == 1);
  text = slurp(log);
  CHECK(text.rfind("error:", 0) == 0);
  CHECK(text.find("no_such_knob") != std::string::npos);

  // Unknown mode is a usage error from the parser.
  std::ofstream(dir.path / "cfg.json") << "{}";
  CHECK(run_cli("train --config " + (dir.path / "cfg.json").string() + " --mode bogus --out " +
                    (dir.path / "run").string(),
                log) != 0);
}
