#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxasr/biasing.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/tensor.hpp"
#include "ctxasr/vocab.hpp"

namespace ctxasr {

struct PairedExample {
  std::string id;
  Tensor frames;                    // [T x F]
  std::vector<std::string> words;   // reference transcript
  std::vector<int> wordpieces;      // tokenized transcript
  BiasSet bias;
  int label = 0;                    // retrieval label into bias (or no_bias_index)
  // Test-set extras; empty/zero for training rows.
  std::string set_type;             // no_pre | pre | anti
  int n_distractors = 0;
  std::vector<std::string> entity;            // true phrase, empty for anti
  std::vector<std::vector<std::string>> distractors;  // eval-time sweep pool
};

struct TextSentence {
  std::string id;
  std::vector<std::string> words;
};

struct CorpusSpec {
  int n_common_words = 60;
  int n_entities = 200;
  int entity_min_words = 1;
  int entity_max_words = 2;
  int n_paired = 2000;
  int n_text = 40000;
  double text_entity_holdout = 0.5;  // fraction of entities never in paired data
  int feature_dim = 16;
  double noise_std = 0.1;
  std::uint64_t seed = 1;
  // Generation knobs beyond the core regime.
  int n_test_per_set = 100;
  int n_val = 100;
  int test_distractors = 64;
  int frames_min_rep = 1;
  int frames_max_rep = 3;
  int train_bias_distractors = 6;  // distractors sampled per paired example

  void validate() const;
  static CorpusSpec load(const std::string& path);
  std::string to_json() const;
};

// The entity lexicon as generated: phrase words plus whether the entity is
// held out of paired data.
struct EntityLexicon {
  std::vector<std::vector<std::string>> phrases;
  std::vector<std::uint8_t> held_out;  // parallel to phrases

  void save(const std::string& path) const;
  static EntityLexicon load(const std::string& path);
};

// Generates paired.jsonl, text.jsonl, val.jsonl, test_{no_pre,pre,anti}.jsonl,
// vocab.json, entities.json and spec.json under out_dir. Byte-identical
// output for identical specs.
void generate_corpus(const CorpusSpec& spec, const std::string& out_dir);

// Longest contained phrase by word count (contiguous subsequence match);
// ties to the lower index; no match -> bias_set.no_bias_index().
int assign_retrieval_label(const std::vector<std::string>& transcript, const BiasSet& bias_set);

// In-batch bias sampling for text training: pool the entity phrases contained
// in the batch's sentences, then draw up to `target_n` per example.
std::vector<BiasSet> sample_bias_set(const std::vector<std::vector<std::string>>& batch_sentences,
                                     const EntityLexicon& lexicon, int target_n, Rng& rng,
                                     const WordpieceVocab& vocab);

// JSONL I/O.
std::vector<PairedExample> load_paired(const std::string& path, const WordpieceVocab& vocab);
std::vector<TextSentence> load_text(const std::string& path);

// Rebuilds a test example's bias set for a swept distractor count; k == 0
// means an empty set (unbiased decoding).
BiasSet test_bias_at(const PairedExample& ex, int k, const WordpieceVocab& vocab, int* label_out);

// Tokenization helper used wherever a phrase list becomes a BiasSet.
BiasSet make_bias_set(const std::vector<std::vector<std::string>>& phrases,
                      const WordpieceVocab& vocab);

}  // namespace ctxasr
