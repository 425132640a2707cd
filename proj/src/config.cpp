#include "ctxasr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ctxasr/tensor.hpp"

namespace ctxasr {

using nlohmann::json;

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { fail("config: " + msg); };
  if (d < 1) bad("d must be >= 1");
  if (num_encoder_layers < 1) bad("num_encoder_layers must be >= 1");
  if (n_heads < 1 || d % n_heads != 0) bad("n_heads must divide d");
  if (!(0 <= l_text && l_text < l_bias && l_bias < l_mask && l_mask <= num_encoder_layers))
    bad("layer indices must satisfy 0 <= l_text < l_bias < l_mask <= num_encoder_layers, got l_text=" +
        std::to_string(l_text) + " l_bias=" + std::to_string(l_bias) + " l_mask=" +
        std::to_string(l_mask) + " layers=" + std::to_string(num_encoder_layers));
  if (K < 1) bad("K must be >= 1");
  for (double l : {lambda_c_train, lambda_c_infer, lambda_a, lambda_d, lambda_a_text,
                   lambda_d_text, lambda_m, lambda_m_text})
    if (l < 0) bad("loss weights must be >= 0");
  if (mask_ratio < 0 || mask_ratio > 1) bad("mask_ratio must be in [0, 1]");
  if (mask_span < 1) bad("mask_span must be >= 1");
  if (!(1 <= upsample_min && upsample_min <= upsample_max)) bad("need 1 <= upsample_min <= upsample_max");
  if (nbest < 1 || beam_width < nbest) bad("need beam_width >= nbest >= 1");
  if (bias_dropout_rate < 0 || bias_dropout_rate > 1) bad("bias_dropout_rate must be in [0, 1]");
  if (phoneme_vocab < 1) bad("phoneme_vocab must be >= 1");
  if (wordpiece_vocab < 1) bad("wordpiece_vocab must be >= 1 (set from the corpus vocabulary)");
  if (feature_dim < 1) bad("feature_dim must be >= 1");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail("config: " + msg); };
  if (lr <= 0) bad("lr must be > 0");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
    bad("adam betas must be in [0, 1)");
  if (adam_eps <= 0) bad("adam_eps must be > 0");
  if (lr_final_fraction < 0 || lr_final_fraction > 1) bad("lr_final_fraction must be in [0, 1]");
  if (warmup_steps < 0) bad("warmup_steps must be >= 0");
  if (train_steps < 1) bad("train_steps must be >= 1");
  if (mwer_steps < 1) bad("mwer_steps must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (text_batch_size < 1) bad("text_batch_size must be >= 1");
  if (bias_n_max < 0) bad("bias_n_max must be >= 0");
  if (log_every < 1) bad("log_every must be >= 1");
  if (checkpoint_every < 1) bad("checkpoint_every must be >= 1");
  if (halt_after_steps < 0) bad("halt_after_steps must be >= 0");
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

EngineConfig parse_config_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail("config: " + origin + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) fail("config: " + origin + " must be a JSON object");

  static const std::set<std::string> known = {
      "d", "num_encoder_layers", "n_heads", "l_text", "l_bias", "l_mask", "K",
      "lambda_c_train", "lambda_c_infer", "lambda_a", "lambda_d", "lambda_a_text",
      "lambda_d_text", "lambda_m", "lambda_m_text", "mask_ratio", "mask_span",
      "upsample_min", "upsample_max", "beam_width", "nbest", "bias_dropout_rate",
      "phoneme_vocab", "wordpiece_vocab", "feature_dim", "seed",
      "lr", "adam_beta1", "adam_beta2", "adam_eps", "lr_final_fraction",
      "warmup_steps", "train_steps", "mwer_steps", "batch_size",
      "text_batch_size", "bias_n_max", "log_every", "checkpoint_every",
      "halt_after_steps", "mwer_keep_aux", "data_dir"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) fail("config: unknown key '" + it.key() + "' in " + origin);

  EngineConfig cfg;
  ModelConfig& m = cfg.model;
  read_field(j, "d", m.d);
  read_field(j, "num_encoder_layers", m.num_encoder_layers);
  read_field(j, "n_heads", m.n_heads);
  read_field(j, "l_text", m.l_text);
  read_field(j, "l_bias", m.l_bias);
  read_field(j, "l_mask", m.l_mask);
  read_field(j, "K", m.K);
  read_field(j, "lambda_c_train", m.lambda_c_train);
  read_field(j, "lambda_c_infer", m.lambda_c_infer);
  read_field(j, "lambda_a", m.lambda_a);
  read_field(j, "lambda_d", m.lambda_d);
  read_field(j, "lambda_a_text", m.lambda_a_text);
  read_field(j, "lambda_d_text", m.lambda_d_text);
  read_field(j, "lambda_m", m.lambda_m);
  read_field(j, "lambda_m_text", m.lambda_m_text);
  read_field(j, "mask_ratio", m.mask_ratio);
  read_field(j, "mask_span", m.mask_span);
  read_field(j, "upsample_min", m.upsample_min);
  read_field(j, "upsample_max", m.upsample_max);
  read_field(j, "beam_width", m.beam_width);
  read_field(j, "nbest", m.nbest);
  read_field(j, "bias_dropout_rate", m.bias_dropout_rate);
  read_field(j, "phoneme_vocab", m.phoneme_vocab);
  read_field(j, "wordpiece_vocab", m.wordpiece_vocab);
  read_field(j, "feature_dim", m.feature_dim);
  read_field(j, "seed", m.seed);

  TrainConfig& t = cfg.train;
  read_field(j, "lr", t.lr);
  read_field(j, "adam_beta1", t.adam_beta1);
  read_field(j, "adam_beta2", t.adam_beta2);
  read_field(j, "adam_eps", t.adam_eps);
  read_field(j, "lr_final_fraction", t.lr_final_fraction);
  read_field(j, "warmup_steps", t.warmup_steps);
  read_field(j, "train_steps", t.train_steps);
  read_field(j, "mwer_steps", t.mwer_steps);
  read_field(j, "batch_size", t.batch_size);
  read_field(j, "text_batch_size", t.text_batch_size);
  read_field(j, "bias_n_max", t.bias_n_max);
  read_field(j, "log_every", t.log_every);
  read_field(j, "checkpoint_every", t.checkpoint_every);
  read_field(j, "halt_after_steps", t.halt_after_steps);
  read_field(j, "mwer_keep_aux", t.mwer_keep_aux);
  read_field(j, "data_dir", t.data_dir);
  return cfg;
}

EngineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_json(buf.str(), path);
}

std::string config_to_json(const EngineConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  json j;
  j["d"] = m.d;
  j["num_encoder_layers"] = m.num_encoder_layers;
  j["n_heads"] = m.n_heads;
  j["l_text"] = m.l_text;
  j["l_bias"] = m.l_bias;
  j["l_mask"] = m.l_mask;
  j["K"] = m.K;
  j["lambda_c_train"] = m.lambda_c_train;
  j["lambda_c_infer"] = m.lambda_c_infer;
  j["lambda_a"] = m.lambda_a;
  j["lambda_d"] = m.lambda_d;
  j["lambda_a_text"] = m.lambda_a_text;
  j["lambda_d_text"] = m.lambda_d_text;
  j["lambda_m"] = m.lambda_m;
  j["lambda_m_text"] = m.lambda_m_text;
  j["mask_ratio"] = m.mask_ratio;
  j["mask_span"] = m.mask_span;
  j["upsample_min"] = m.upsample_min;
  j["upsample_max"] = m.upsample_max;
  j["beam_width"] = m.beam_width;
  j["nbest"] = m.nbest;
  j["bias_dropout_rate"] = m.bias_dropout_rate;
  j["phoneme_vocab"] = m.phoneme_vocab;
  j["wordpiece_vocab"] = m.wordpiece_vocab;
  j["feature_dim"] = m.feature_dim;
  j["seed"] = m.seed;
  j["lr"] = t.lr;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["lr_final_fraction"] = t.lr_final_fraction;
  j["warmup_steps"] = t.warmup_steps;
  j["train_steps"] = t.train_steps;
  j["mwer_steps"] = t.mwer_steps;
  j["batch_size"] = t.batch_size;
  j["text_batch_size"] = t.text_batch_size;
  j["bias_n_max"] = t.bias_n_max;
  j["log_every"] = t.log_every;
  j["checkpoint_every"] = t.checkpoint_every;
  j["halt_after_steps"] = t.halt_after_steps;
  j["mwer_keep_aux"] = t.mwer_keep_aux;
  j["data_dir"] = t.data_dir;
  return j.dump(2);
}

}  // namespace ctxasr
