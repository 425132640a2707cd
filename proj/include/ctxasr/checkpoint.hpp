#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctxasr/config.hpp"
#include "ctxasr/model.hpp"
#include "ctxasr/vocab.hpp"

namespace ctxasr {

// Optimizer and progress state carried across save/resume so a resumed run
// continues the exact trajectory of an uninterrupted one.
struct TrainState {
  std::int64_t step = 0;
  std::int64_t epoch = 0;  // completed passes over the paired split
  double best_val_wer = std::numeric_limits<double>::infinity();
  std::int64_t best_step = -1;
  // Adam moments, concatenated in parameter-registry order.
  std::vector<double> adam_m;
  std::vector<double> adam_v;
};

// Everything read back from disk: the model config and vocabulary travel with
// the weights so evaluation and decoding need no side files.
struct Checkpoint {
  ModelConfig config;
  WordpieceVocab vocab;
  std::vector<std::pair<std::string, std::vector<double>>> params;
  std::optional<TrainState> train;
};

// Single-file binary container: magic + JSON header (config, vocabulary,
// parameter manifest, optional optimizer scalars) followed by the raw
// little-endian doubles (parameter values, then Adam m and v if present).
void save_checkpoint(const std::string& path, const Model& model,
                     const WordpieceVocab& vocab, const TrainState* train = nullptr);
Checkpoint read_checkpoint(const std::string& path);

// Overwrites an existing model's parameters with the stored values; throws if
// the manifests disagree.
void load_params(Model& model, const Checkpoint& ckpt);

// Builds a fresh model from the stored config and overwrites every parameter
// with the stored values; throws if the manifests disagree.
Model restore_model(const Checkpoint& ckpt);

}  // namespace ctxasr
