#pragma once

#include <cstdint>
#include <string>

namespace ctxasr {

// Model architecture and loss weighting. Serialized as a flat JSON object
// whose keys match the field names below.
struct ModelConfig {
  int d = 64;                    // embedding dimension
  int num_encoder_layers = 8;
  int n_heads = 4;
  int l_text = 3;                // text injection layer
  int l_bias = 5;                // biasing layer
  int l_mask = 7;                // masking layer
  int K = 32;                    // top-K phrases kept by retrieval
  double lambda_c_train = 1.0;   // biasing strength during training
  double lambda_c_infer = 0.6;   // biasing strength during inference
  double lambda_a = 0.9;         // paired ASR loss weight
  double lambda_d = 0.1;         // paired retrieval loss weight
  double lambda_a_text = 0.1;    // text-path ASR loss weight
  double lambda_d_text = 0.1;    // text-path retrieval loss weight
  double lambda_m = 1.0;         // paired MWER weight
  double lambda_m_text = 1.0;    // text-path MWER weight
  double mask_ratio = 0.3;
  int mask_span = 10;            // span length S
  int upsample_min = 1;
  int upsample_max = 2;
  int beam_width = 8;
  int nbest = 4;
  double bias_dropout_rate = 0.3;
  int phoneme_vocab = 37;        // 26 letters + 10 digits + word boundary
  int wordpiece_vocab = 0;       // filled in from the corpus vocabulary
  int feature_dim = 16;
  std::uint64_t seed = 1;

  // Throws with a descriptive message on any violated invariant.
  // l_text == 0 means phoneme embeddings enter at the encoder input, which is
  // what makes very shallow configurations (e.g. the 2-layer gradient-check
  // model) expressible.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Orchestration knobs: optimizer, schedule, batching, data location. Loaded
// from the same JSON document as ModelConfig.
struct TrainConfig {
  double lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_final_fraction = 0.1;  // cosine decays to this fraction of lr
  int warmup_steps = 500;
  int train_steps = 4000;      // stage-1 (CTI) steps
  int mwer_steps = 2000;       // stage-2 (MWER) steps
  int batch_size = 4;          // paired examples per step
  int text_batch_size = 4;     // text examples per step
  int bias_n_max = 8;          // bias phrases sampled per training example
  int log_every = 100;
  int checkpoint_every = 1000;
  int halt_after_steps = 0;   // stop this session after N steps (0 = run to the end)
  bool mwer_keep_aux = false;  // add the CTI losses back during MWER fine-tuning
  std::string data_dir;

  void validate() const;
};

struct EngineConfig {
  ModelConfig model;
  TrainConfig train;
};

// Parses the flat JSON document at `path`. Unknown keys are an error (they
// are almost always typos); missing keys keep their defaults.
EngineConfig load_config(const std::string& path);
EngineConfig parse_config_json(const std::string& text, const std::string& origin);
std::string config_to_json(const EngineConfig& cfg);

}  // namespace ctxasr
