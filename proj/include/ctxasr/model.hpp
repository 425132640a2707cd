#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxasr/biasing.hpp"
#include "ctxasr/config.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/tensor.hpp"

namespace ctxasr {

struct WordpieceKV {
  Tensor keys;    // [M x d]
  Tensor values;  // [M x d], keys left-shifted per phrase, zero row at each end
};

// All trainable parameters plus the forward passes that use them: speech
// frontend, shared encoder stack with its three cut points, phoneme/phrase/
// word-piece encoders, label decoder, and the joint network.
class Model {
 public:
  Model(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Named parameters in a fixed, deterministic order.
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  Tensor param(const std::string& name) const;  // throws if absent
  void zero_grads();

  // --- speech / text front ends -------------------------------------------
  // Both front ends stamp their output with fixed sinusoidal position rows:
  // the encoder blocks are pure attention + feed-forward, so sequence order
  // has to enter with the input.
  Tensor frontend(const Tensor& frames);            // [T x F] -> [T x d]
  Tensor phoneme_embed(std::span<const int> ids);   // [I] -> [I x d]
  Tensor positional(int n) const;                   // [n x d] constant rows

  // Applies encoder blocks (from_layer, to_layer]; equal indices = identity.
  Tensor encode_range(const Tensor& x, int from_layer, int to_layer);

  // --- biasing-side encoders ----------------------------------------------
  // [(N+1) x d]; row N is the learned NO_BIAS embedding.
  Tensor phrase_encode(const BiasSet& bias_set);
  // One self-attention + feed-forward block over the concatenated pieces.
  WordpieceKV wordpiece_encode(const std::vector<int>& pieces,
                               const std::vector<int>& phrase_lengths);

  // Projections around the biasing mechanism (applied before correlation and
  // cross-attention respectively).
  Tensor corr_query(const Tensor& H) { return matmul(H, param("bias.corr_q")); }
  Tensor corr_key(const Tensor& P) { return matmul(P, param("bias.corr_k")); }
  Tensor attn_query(const Tensor& H) { return matmul(H, param("bias.attn_q")); }
  Tensor attn_key(const Tensor& K) { return matmul(K, param("bias.attn_k")); }
  Tensor attn_value(const Tensor& V) { return matmul(V, param("bias.attn_v")); }
  // Key row for the "no bias" logit of the word-piece retrieval loss.
  Tensor wp_no_bias_key() { return param("bias.wp_no_bias"); }

  Tensor mask_embedding() { return param("text.mask_embedding"); }

  // --- decoder + joint ------------------------------------------------------
  int sos() const { return cfg_.wordpiece_vocab; }    // start-of-sequence sentinel
  int blank() const { return cfg_.wordpiece_vocab; }  // joint output index V

  // Sum of two role-specific tables keyed by the last two labels. [1 x d]
  Tensor decoder_embed(int prev, int prev_prev);
  // Decoder rows for every prefix length u = 0..U of label sequence y. [(U+1) x d]
  Tensor decoder_context_rows(std::span<const int> y);

  // logits over V+1 (blank last) for one (acoustic, label) pair. [1 x (V+1)]
  Tensor joint(const Tensor& acoustic, const Tensor& label);

  // Whole-lattice log-probabilities, shape [T, U+1, V+1]: entry (t, u, k) is
  // the log-probability of emitting k after consuming t frames and u labels.
  Tensor joint_lattice_logprobs(const Tensor& encoded, std::span<const int> y);

  // Incremental pieces for decoding: project frames/label contexts once, then
  // combine one (frame, context) pair at a time.
  Tensor acoustic_rows(const Tensor& encoded);    // [T x d] through the joint's acoustic side
  Tensor label_row(int prev, int prev_prev);      // [1 x d] through the joint's label side
  Tensor joint_logprobs_row(const Tensor& acoustic_rows, int t, const Tensor& label_row);

 private:
  Tensor make_param(const std::string& name, Shape shape, Rng& rng, double stddev);
  Tensor encoder_block(const Tensor& x, const std::string& prefix);
  Tensor self_attention(const Tensor& x, const std::string& prefix);
  Tensor joint_hidden(const Tensor& acoustic_rows, const Tensor& label_rows);  // pairwise

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, int>> index_;  // name -> position, sorted
};

}  // namespace ctxasr
