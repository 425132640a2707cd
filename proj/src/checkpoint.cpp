#include "ctxasr/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>

#include "json.hpp"

namespace ctxasr {

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'C', 'T', 'X', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

void write_doubles(std::ostream& out, std::span<const double> vals) {
  // Raw IEEE-754 doubles; the header magic pins the byte order to the
  // little-endian hosts this engine targets.
  out.write(reinterpret_cast<const char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::vector<double>& vals, std::size_t n,
                  const std::string& path) {
  vals.resize(n);
  in.read(reinterpret_cast<char*>(vals.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) fail("checkpoint: " + path + " is truncated");
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const WordpieceVocab& vocab, const TrainState* train) {
  json header;
  EngineConfig ec;
  ec.model = model.config();
  header["config"] = json::parse(config_to_json(ec));
  header["vocab"] = json::parse(vocab.to_json());

  json manifest = json::array();
  std::size_t total = 0;
  for (const auto& [name, tensor] : model.params()) {
    manifest.push_back({name, tensor.size()});
    total += static_cast<std::size_t>(tensor.size());
  }
  header["params"] = manifest;

  if (train) {
    json t;
    t["step"] = train->step;
    t["epoch"] = train->epoch;
    t["best_step"] = train->best_step;
    // JSON has no infinity; omit the field until a validation score exists.
    if (std::isfinite(train->best_val_wer)) t["best_val_wer"] = train->best_val_wer;
    header["train"] = t;
    if (train->adam_m.size() != total || train->adam_v.size() != total)
      fail("checkpoint: optimizer state size does not match the parameter count");
  }

  const std::string header_text = header.dump();
  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  if (!out) fail("checkpoint: cannot write " + tmp);
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, tensor] : model.params()) write_doubles(out, tensor.values());
  if (train) {
    write_doubles(out, train->adam_m);
    write_doubles(out, train->adam_v);
  }
  out.close();
  if (!out) fail("checkpoint: write to " + tmp + " failed");
  // Write-then-rename so an interrupted save never leaves a torn checkpoint
  // at the published path.
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    fail("checkpoint: cannot rename " + tmp + " to " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    fail("checkpoint: " + path + " is not a checkpoint file");
  const std::uint64_t header_len = read_u64(in);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) fail("checkpoint: " + path + " is truncated");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    fail("checkpoint: " + path + " has a corrupt header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = parse_config_json(header.at("config").dump(), path + " header").model;
    ckpt.vocab = WordpieceVocab::from_json(header.at("vocab").dump());
    std::size_t total = 0;
    for (const auto& entry : header.at("params")) {
      const std::string name = entry.at(0).get<std::string>();
      const auto size = entry.at(1).get<std::int64_t>();
      if (size <= 0) fail("checkpoint: parameter " + name + " has non-positive size");
      ckpt.params.emplace_back(name, std::vector<double>());
      read_doubles(in, ckpt.params.back().second, static_cast<std::size_t>(size), path);
      total += static_cast<std::size_t>(size);
    }
    if (header.contains("train")) {
      const json& t = header.at("train");
      TrainState train;
      train.step = t.at("step").get<std::int64_t>();
      train.epoch = t.at("epoch").get<std::int64_t>();
      train.best_step = t.at("best_step").get<std::int64_t>();
      if (t.contains("best_val_wer")) train.best_val_wer = t.at("best_val_wer").get<double>();
      read_doubles(in, train.adam_m, total, path);
      read_doubles(in, train.adam_v, total, path);
      ckpt.train = std::move(train);
    }
  } catch (const json::exception& e) {
    fail("checkpoint: " + path + " has a corrupt header: " + e.what());
  }
  return ckpt;
}

void load_params(Model& model, const Checkpoint& ckpt) {
  auto& params = model.params();
  if (params.size() != ckpt.params.size())
    fail("checkpoint: parameter count mismatch (file has " +
         std::to_string(ckpt.params.size()) + ", model expects " +
         std::to_string(params.size()) + ")");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, tensor] = params[i];
    const auto& [saved_name, saved_values] = ckpt.params[i];
    if (name != saved_name)
      fail("checkpoint: parameter order mismatch at " + name + " vs " + saved_name);
    if (static_cast<std::size_t>(tensor.size()) != saved_values.size())
      fail("checkpoint: size mismatch for parameter " + name);
    std::copy(saved_values.begin(), saved_values.end(), tensor.values_mut().begin());
  }
}

Model restore_model(const Checkpoint& ckpt) {
  Rng rng(ckpt.config.seed);
  Model model(ckpt.config, rng);
  load_params(model, ckpt);
  return model;
}

}  // namespace ctxasr
