#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ctxasr/checkpoint.hpp"
#include "ctxasr/config.hpp"
#include "ctxasr/data.hpp"
#include "ctxasr/grad_check.hpp"
#include "ctxasr/losses.hpp"
#include "ctxasr/model.hpp"

namespace ctxasr {

// Adam with bias correction under a linear-warmup / cosine-decay schedule.
// `step` counts completed updates starting from 1.
class Adam {
 public:
  Adam(Model& model, const TrainConfig& cfg, int total_steps);

  double rate_at(std::int64_t step) const;
  void apply(std::int64_t step);  // consumes the accumulated gradients

  // Moment transfer for checkpointing.
  void load(const TrainState& state);
  void fill(TrainState& state) const;

 private:
  Model& model_;
  double lr_, beta1_, beta2_, eps_, final_fraction_;
  int warmup_, total_;
  std::vector<double> m_, v_;  // concatenated in parameter-registry order
};

// Deterministic shuffled epochs over [0, n). The order is a pure function of
// (seed, epoch), and seek() jumps to any global position, so a resumed run
// replays exactly the order an uninterrupted run would have seen.
class EpochStream {
 public:
  EpochStream(std::size_t n, std::uint64_t seed);
  std::size_t next();
  void seek(std::uint64_t consumed);
  std::uint64_t epoch() const { return epoch_; }

 private:
  void reshuffle();
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

// One (set_type, distractor count) cell of the evaluation sweep. recall is
// NaN where it is undefined: unbiased rows (k == 0) and the anti set, which
// has no in-context entity. no_bias_acc is likewise NaN off the anti set.
struct EvalCell {
  std::string set_type;
  int n_distractors = 0;
  int n_utterances = 0;
  int word_errors = 0;  // raw counts, so cells can be pooled exactly
  int ref_words = 0;
  double wer = 0.0;
  double recall = std::numeric_limits<double>::quiet_NaN();
  double no_bias_acc = std::numeric_limits<double>::quiet_NaN();
};

// Decodes every test utterance once per distractor count (0 = unbiased) and
// aggregates WER%, retrieval recall@K, and NO_BIAS accuracy per set type.
// Fans out across `n_threads` workers (0 = hardware concurrency) over the
// read-only model.
std::vector<EvalCell> evaluate(Model& model, const WordpieceVocab& vocab,
                               const std::vector<PairedExample>& tests,
                               const std::vector<int>& distractor_counts, double lambda_c,
                               int n_threads = 0);
std::string eval_csv(const std::vector<EvalCell>& cells);
std::string eval_table(const std::vector<EvalCell>& cells);

// Corpus WER% decoding each example with its own bias set; the training loops
// use this on the validation split for checkpoint selection.
double corpus_wer(Model& model, const WordpieceVocab& vocab,
                  const std::vector<PairedExample>& examples, double lambda_c,
                  int n_threads = 0);

struct TrainResult {
  std::string best_checkpoint;  // lowest validation WER
  std::string last_checkpoint;  // most recent save
  double best_val_wer = std::numeric_limits<double>::infinity();
  std::int64_t best_step = -1;
  std::int64_t steps_run = 0;
  bool diverged = false;
};

// Stage 1: trains from scratch on cfg.train.data_dir, mixing paired and text
// batches 1:1 per step; writes metrics.jsonl, last.ckpt and best.ckpt under
// out_dir. A non-empty resume path continues that run's exact trajectory.
TrainResult train_cti(EngineConfig cfg, TrainMode mode, const std::string& out_dir,
                      const std::string& resume_path = "");

// Stage 2: fine-tunes the stage-1 checkpoint with the expected-word-error
// objective; biasing dropout empties each mini-batch's bias sets at
// bias_dropout_rate.
TrainResult train_mwer(EngineConfig cfg, MwerMode mode, const std::string& init_path,
                       const std::string& out_dir, const std::string& resume_path = "");

// Full-parameter finite-difference check of both training objectives on a
// built-in micro batch (two paired + two text examples over a tiny fixed
// vocabulary). The config supplies the architecture; wordpiece_vocab is
// resolved from the fixture vocabulary.
struct FullGradCheck {
  GradCheckReport cti;
  GradCheckReport cti_mwer;
  double seconds = 0.0;
  bool ok(double tol) const { return cti.ok(tol) && cti_mwer.ok(tol); }
};
FullGradCheck run_full_gradcheck(EngineConfig cfg);

}  // namespace ctxasr
