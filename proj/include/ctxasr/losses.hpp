#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctxasr/config.hpp"
#include "ctxasr/data.hpp"
#include "ctxasr/decoding.hpp"
#include "ctxasr/model.hpp"
#include "ctxasr/tensor.hpp"
#include "ctxasr/text_injection.hpp"

namespace ctxasr {

enum class TrainMode { SupOnly, Joist, Cti };
enum class MwerMode { Mwer, JoistMwer, CtiMwer };

TrainMode parse_train_mode(const std::string& s);
MwerMode parse_mwer_mode(const std::string& s);

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;  // asr_paired, retr_paired, asr_text, retr_text, mwer_paired, mwer_text
  Tensor total_tensor;                        // differentiable scalar
};

// Negative log of the alignment-sum. `lattice` has shape [T, U+1, V+1];
// entry (t, u) holds the emission log-probabilities after t frames consumed
// and u labels emitted. Each frame emits exactly one symbol: blank keeps u,
// label y[u] advances it, so U > T (in particular T == 0 with U > 0) has no
// alignment and is an error. Backward distributes posterior edge occupancies.
Tensor transducer_loss(const Tensor& lattice, std::span<const int> y);

// -log_softmax(a)[r]
Tensor retrieval_loss(const Tensor& a, int r);

// Max-pooled correlations of H against the selected word-piece keys plus one
// appended no-bias key; cross-entropy against uniform mass over the positive
// positions, or against the no-bias slot when there are none.
Tensor wordpiece_retrieval_loss(const Tensor& H, const Tensor& keys,
                                const std::vector<std::uint8_t>& positive_mask,
                                const Tensor& no_bias_key);

// Word-level Levenshtein distance (unit costs).
int edit_distance_words(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Expected word errors over the renormalized N-best: sum_n softmax(logprobs)_n
// * errors_n. Gradients flow only through the probabilities.
Tensor mwer_loss(const Tensor& nbest_logprobs, const std::vector<double>& word_errors);
// Convenience form matching how training uses it.
Tensor mwer_loss(const std::vector<Hypothesis>& nbest, const std::vector<Tensor>& logprobs,
                 const std::vector<std::string>& reference);

// Stage-1 objective. `seed` fixes the step's masking and upsampling draws so
// the loss is a deterministic function of (parameters, batches, seed).
LossReport cti_loss(const std::vector<PairedExample>& paired,
                    const std::vector<TextExample>& text, Model& model,
                    const ModelConfig& cfg, TrainMode mode, std::uint64_t seed);

// Stage-2 objective: expected-word-error over beam-searched N-best lists,
// scores recomputed with gradients by the lattice DP. `drop_bias` empties
// every bias set for this batch (biasing dropout).
LossReport cti_mwer_loss(const std::vector<PairedExample>& paired,
                         const std::vector<TextExample>& text, Model& model,
                         const ModelConfig& cfg, MwerMode mode, std::uint64_t seed,
                         bool drop_bias, const WordpieceVocab& vocab,
                         bool keep_aux = false);

}  // namespace ctxasr
