#pragma once

#include <string>
#include <vector>

#include "ctxasr/data.hpp"
#include "ctxasr/model.hpp"
#include "ctxasr/vocab.hpp"

namespace ctxasr {

struct Hypothesis {
  std::vector<int> tokens;          // word-piece ids
  double log_prob = 0.0;            // exact lattice posterior of `tokens`
  std::vector<std::string> words;   // deterministic detokenization
};

// Frame-synchronous transducer beam search: every frame each hypothesis emits
// exactly one symbol (blank or a label), candidates with identical token
// sequences merge by log-sum-exp, and the top `beam_width` survive. Returned
// hypotheses are the top `n_best` unique sequences, sorted by descending
// log_prob, where log_prob is recomputed exactly by the lattice forward DP.
// beam_width == 1 reduces to greedy decoding by construction.
std::vector<Hypothesis> beam_search(Model& model, const Tensor& encoded,
                                    const WordpieceVocab& vocab, int beam_width, int n_best);

// Argmax symbol per frame; reference implementation for the beam_width == 1
// equivalence check.
std::vector<int> greedy_decode(Model& model, const Tensor& encoded);

struct DecodeResult {
  Hypothesis best;
  std::vector<Hypothesis> nbest;
  RetrievalResult retrieval;  // state of the biasing pass at l_bias
};

// Full inference path: frontend -> encoder to l_bias -> biasing at strength
// lambda_c -> encoder to the top -> beam search.
DecodeResult decode_utterance(const PairedExample& example, Model& model,
                              const ModelConfig& cfg, const WordpieceVocab& vocab,
                              double lambda_c, int n_best = 1);

}  // namespace ctxasr
