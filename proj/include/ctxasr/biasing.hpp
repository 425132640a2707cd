#pragma once

#include <string>
#include <vector>

#include "ctxasr/tensor.hpp"

namespace ctxasr {

class Model;

// A per-utterance set of context phrases. `no_bias_index() == N` is the
// correlation slot for "no phrase applies".
struct BiasSet {
  std::vector<std::vector<std::string>> phrases;  // N phrases, each >= 1 word
  std::vector<std::vector<int>> wordpieces;       // per-phrase word-piece ids

  int size() const { return static_cast<int>(phrases.size()); }
  int no_bias_index() const { return size(); }
  bool empty() const { return phrases.empty(); }
  void validate() const;  // non-empty phrases, tokenizations aligned
};

struct RetrievalResult {
  Tensor correlations;                       // [N+1], differentiable
  std::vector<int> selected_indices;         // <= K phrase indices, descending correlation
  std::vector<int> selected_wordpieces;      // flattened pieces of the selected phrases
  std::vector<int> selected_phrase_lengths;  // piece count per selected phrase
};

// a = max over time of H P^T / sqrt(d).  H: [L x d], P: [(N+1) x d].
Tensor correlate(const Tensor& H, const Tensor& P);

// Hard top-K over the real phrases (the NO_BIAS slot never competes: it has
// no word-pieces to attend over). Ties go to the lower index. Fills
// selected_wordpieces from `bias_set`.
RetrievalResult select_top_k(const Tensor& a, const BiasSet& bias_set, int K);

// C = Softmax(H keys^T / sqrt(d)) values, rows over M.
Tensor bias_attend(const Tensor& H, const Tensor& keys, const Tensor& values);

// H + lambda_c * C; lambda_c == 0 returns H itself (bitwise identity).
Tensor apply_bias(const Tensor& H, const Tensor& C, double lambda_c);

// Full two-pass composition with the model's projection layers:
// correlate -> select_top_k -> wordpiece_encode -> bias_attend -> apply_bias.
// With an empty bias set the input passes through unchanged and the
// correlation vector holds only the NO_BIAS slot.
struct BiasOutput {
  Tensor H_bias;
  RetrievalResult retrieval;
  Tensor keys;  // raw word-piece keys [M x d] when attention ran; else undefined
};
BiasOutput bias_pipeline(Model& model, const Tensor& H, const BiasSet& bias_set,
                         int K, double lambda_c);

}  // namespace ctxasr
