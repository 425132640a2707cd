#pragma once

#include <string>
#include <vector>

#include "ctxasr/biasing.hpp"
#include "ctxasr/config.hpp"
#include "ctxasr/model.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/tensor.hpp"

namespace ctxasr {

// An unpaired-text training instance after preparation: upsampled phonemes,
// an in-batch-sampled bias set, and word-piece targets.
struct TextExample {
  std::string id;
  std::vector<std::string> words;
  std::vector<int> phonemes_upsampled;  // Y_phn, length I
  BiasSet bias_set;
  int retrieval_label = 0;              // phrase index or bias_set.no_bias_index()
  std::vector<int> wordpiece_targets;   // Y_text
};

// Toy G2P: one phoneme per character, a boundary phoneme between words.
// Characters outside [a-z0-9] are an input error.
std::vector<int> text_to_phonemes(const std::vector<std::string>& words);
// Inverse mapping (boundary phonemes split words); used as the round-trip oracle.
std::vector<std::string> phonemes_to_text(const std::vector<int>& phonemes);

// Each token repeated r ~ Uniform{min_rep..max_rep} times, independently.
std::vector<int> upsample(const std::vector<int>& tokens, Rng& rng, int min_rep, int max_rep);

// Replaces spans of S consecutive rows with mask_embedding until at least
// ratio * I positions are covered. Start positions are drawn uniformly
// without replacement; spans truncate at the sequence end; overlaps allowed.
// ratio == 0 returns H itself; ratio == 1 masks every row.
Tensor span_mask(const Tensor& H, double ratio, int S, Rng& rng, const Tensor& mask_embedding);

struct TextPath {
  Tensor encoded;       // [I x d] at the encoder top: injected, biased, masked
  Tensor H_at_bias;     // [I x d] just before biasing (for the word-piece retrieval loss)
  BiasOutput bias;      // retrieval state at l_bias; unset when with_biasing is false
  bool biased = false;
};

// phoneme embeddings -> encoder (l_text, l_bias] -> biasing -> encoder
// (l_bias, l_mask] -> span masking -> encoder (l_mask, top]. JOIST mode
// (with_biasing == false) skips the biasing stage on this path only.
TextPath build_text_path(const TextExample& example, Model& model, const ModelConfig& cfg,
                         Rng& rng, bool with_biasing, double lambda_c);

}  // namespace ctxasr
