#include "ctxasr/model.hpp"

#include <cmath>

namespace ctxasr {

Tensor Model::make_param(const std::string& name, Shape shape, Rng& rng, double stddev) {
  Tensor t = stddev == 0.0 ? Tensor::zeros(std::move(shape), true)
                           : Tensor::randn(std::move(shape), rng, stddev, true);
  params_.emplace_back(name, t);
  return t;
}

Model::Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d;
  const int ff = 2 * d;
  const int V = cfg_.wordpiece_vocab;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double emb_std = 0.3;

  make_param("frontend.w", {cfg_.feature_dim, d}, rng, 1.0 / std::sqrt(static_cast<double>(cfg_.feature_dim)));
  make_param("frontend.b", {d}, rng, 0.0);
  make_param("phoneme.embed", {cfg_.phoneme_vocab, d}, rng, emb_std);

  auto block_params = [&](const std::string& prefix) {
    Tensor g1 = make_param(prefix + ".ln1_g", {d}, rng, 0.0);
    std::fill(g1.values_mut().begin(), g1.values_mut().end(), 1.0);
    make_param(prefix + ".ln1_b", {d}, rng, 0.0);
    make_param(prefix + ".attn_q", {d, d}, rng, w_std);
    make_param(prefix + ".attn_k", {d, d}, rng, w_std);
    make_param(prefix + ".attn_v", {d, d}, rng, w_std);
    make_param(prefix + ".attn_o", {d, d}, rng, w_std);
    Tensor g2 = make_param(prefix + ".ln2_g", {d}, rng, 0.0);
    std::fill(g2.values_mut().begin(), g2.values_mut().end(), 1.0);
    make_param(prefix + ".ln2_b", {d}, rng, 0.0);
    make_param(prefix + ".ff_w1", {d, ff}, rng, w_std);
    make_param(prefix + ".ff_b1", {ff}, rng, 0.0);
    make_param(prefix + ".ff_w2", {ff, d}, rng, 1.0 / std::sqrt(static_cast<double>(ff)));
    make_param(prefix + ".ff_b2", {d}, rng, 0.0);
  };
  for (int i = 0; i < cfg_.num_encoder_layers; ++i) block_params("enc" + std::to_string(i));

  make_param("wp.embed", {V, d}, rng, emb_std);
  block_params("wpenc");

  for (int i = 0; i < 4; ++i) {
    make_param("phrase.mlp" + std::to_string(i) + ".w", {d, d}, rng, w_std);
    make_param("phrase.mlp" + std::to_string(i) + ".b", {d}, rng, 0.0);
  }
  make_param("phrase.no_bias", {1, d}, rng, emb_std);

  make_param("bias.corr_q", {d, d}, rng, w_std);
  make_param("bias.corr_k", {d, d}, rng, w_std);
  make_param("bias.attn_q", {d, d}, rng, w_std);
  make_param("bias.attn_k", {d, d}, rng, w_std);
  make_param("bias.attn_v", {d, d}, rng, w_std);
  make_param("bias.wp_no_bias", {1, d}, rng, emb_std);
  make_param("text.mask_embedding", {d}, rng, emb_std);

  make_param("dec.prev", {V + 1, d}, rng, emb_std);
  make_param("dec.prev2", {V + 1, d}, rng, emb_std);

  make_param("joint.acoustic", {d, d}, rng, w_std);
  make_param("joint.label", {d, d}, rng, w_std);
  make_param("joint.hidden_b", {d}, rng, 0.0);
  make_param("joint.out", {d, V + 1}, rng, w_std);
  make_param("joint.out_b", {V + 1}, rng, 0.0);

  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i)
    index_.emplace_back(params_[i].first, static_cast<int>(i));
  std::sort(index_.begin(), index_.end());
}

Tensor Model::param(const std::string& name) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), name,
                             [](const auto& a, const std::string& b) { return a.first < b; });
  if (it == index_.end() || it->first != name) fail("model: unknown parameter '" + name + "'");
  return params_[static_cast<std::size_t>(it->second)].second;
}

void Model::zero_grads() {
  for (auto& [name, p] : params_) p.zero_grad();
}

Tensor Model::positional(int n) const {
  const int d = cfg_.d;
  std::vector<double> data(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
  for (int p = 0; p < n; ++p)
    for (int j = 0; j < d; j += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(j) / d);
      data[static_cast<std::size_t>(p) * d + j] = std::sin(p * rate);
      if (j + 1 < d) data[static_cast<std::size_t>(p) * d + j + 1] = std::cos(p * rate);
    }
  return Tensor::from({n, d}, std::move(data));
}

Tensor Model::frontend(const Tensor& frames) {
  if (frames.rank() != 2 || frames.dim(1) != cfg_.feature_dim)
    fail("frontend: expected [T x " + std::to_string(cfg_.feature_dim) + "] frames, got " +
         shape_str(frames.shape()));
  Tensor projected = add_row(matmul(frames, param("frontend.w")), param("frontend.b"));
  return add(projected, positional(frames.dim(0)));
}

Tensor Model::phoneme_embed(std::span<const int> ids) {
  Tensor e = embedding_lookup(param("phoneme.embed"), ids);
  return add(e, positional(static_cast<int>(ids.size())));
}

Tensor Model::self_attention(const Tensor& x, const std::string& prefix) {
  const int d = cfg_.d, heads = cfg_.n_heads, hd = d / heads;
  Tensor q = matmul(x, param(prefix + ".attn_q"));
  Tensor k = matmul(x, param(prefix + ".attn_k"));
  Tensor v = matmul(x, param(prefix + ".attn_v"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor attn = softmax(scale(matmul_nt(qh, kh), inv_sqrt), -1);
    ctx.push_back(matmul(attn, vh));
  }
  return matmul(concat_cols(ctx), param(prefix + ".attn_o"));
}

Tensor Model::encoder_block(const Tensor& x, const std::string& prefix) {
  Tensor normed = layer_norm(x, param(prefix + ".ln1_g"), param(prefix + ".ln1_b"));
  Tensor h = add(x, self_attention(normed, prefix));
  Tensor normed2 = layer_norm(h, param(prefix + ".ln2_g"), param(prefix + ".ln2_b"));
  Tensor ff1 = gelu(add_row(matmul(normed2, param(prefix + ".ff_w1")), param(prefix + ".ff_b1")));
  Tensor ff2 = add_row(matmul(ff1, param(prefix + ".ff_w2")), param(prefix + ".ff_b2"));
  return add(h, ff2);
}

Tensor Model::encode_range(const Tensor& x, int from_layer, int to_layer) {
  if (!(0 <= from_layer && from_layer <= to_layer && to_layer <= cfg_.num_encoder_layers))
    fail("encode_range: bad layer range (" + std::to_string(from_layer) + ", " +
         std::to_string(to_layer) + "] with " + std::to_string(cfg_.num_encoder_layers) + " layers");
  if (x.rank() != 2 || x.dim(1) != cfg_.d)
    fail("encode_range: expected [L x " + std::to_string(cfg_.d) + "], got " + shape_str(x.shape()));
  Tensor h = x;
  for (int i = from_layer; i < to_layer; ++i) h = encoder_block(h, "enc" + std::to_string(i));
  return h;
}

Tensor Model::phrase_encode(const BiasSet& bias_set) {
  bias_set.validate();
  Tensor no_bias = param("phrase.no_bias");
  if (bias_set.empty()) return no_bias;
  std::vector<Tensor> rows;
  rows.reserve(bias_set.wordpieces.size());
  for (const auto& pieces : bias_set.wordpieces)
    rows.push_back(mean_rows(embedding_lookup(param("wp.embed"), pieces)));
  Tensor h = concat_rows(rows);
  for (int i = 0; i < 4; ++i) {
    const std::string p = "phrase.mlp" + std::to_string(i);
    Tensor lin = add_row(matmul(h, param(p + ".w")), param(p + ".b"));
    h = i < 3 ? gelu(lin) : lin;
  }
  return concat_rows({h, no_bias});
}

WordpieceKV Model::wordpiece_encode(const std::vector<int>& pieces,
                                    const std::vector<int>& phrase_lengths) {
  if (pieces.empty()) fail("wordpiece_encode: empty piece sequence");
  int total = 0;
  for (int len : phrase_lengths) {
    if (len < 1) fail("wordpiece_encode: phrase with no pieces");
    total += len;
  }
  if (total != static_cast<int>(pieces.size()))
    fail("wordpiece_encode: phrase lengths sum to " + std::to_string(total) + ", have " +
         std::to_string(pieces.size()) + " pieces");

  Tensor emb = add(embedding_lookup(param("wp.embed"), pieces),
                   positional(static_cast<int>(pieces.size())));
  Tensor keys = encoder_block(emb, "wpenc");
  // Values: within each phrase the value for position i is the key of
  // position i+1; the final position of every phrase gets a zero row, so
  // attending to a phrase's last piece contributes nothing onward.
  Tensor zero_row = Tensor::zeros({1, cfg_.d});
  std::vector<Tensor> parts;
  int offset = 0;
  for (int len : phrase_lengths) {
    if (len > 1) parts.push_back(slice_rows(keys, offset + 1, offset + len));
    parts.push_back(zero_row);
    offset += len;
  }
  return {keys, concat_rows(parts)};
}

Tensor Model::decoder_embed(int prev, int prev_prev) {
  const std::vector<int> a = {prev}, b = {prev_prev};
  return add(embedding_lookup(param("dec.prev"), a), embedding_lookup(param("dec.prev2"), b));
}

Tensor Model::decoder_context_rows(std::span<const int> y) {
  const int U = static_cast<int>(y.size());
  std::vector<int> prev(static_cast<std::size_t>(U) + 1, sos());
  std::vector<int> prev2(static_cast<std::size_t>(U) + 1, sos());
  for (int u = 1; u <= U; ++u) prev[static_cast<std::size_t>(u)] = y[static_cast<std::size_t>(u - 1)];
  for (int u = 2; u <= U; ++u) prev2[static_cast<std::size_t>(u)] = y[static_cast<std::size_t>(u - 2)];
  return add(embedding_lookup(param("dec.prev"), prev), embedding_lookup(param("dec.prev2"), prev2));
}

Tensor Model::joint_hidden(const Tensor& acoustic_rows, const Tensor& label_rows) {
  Tensor a = matmul(acoustic_rows, param("joint.acoustic"));
  Tensor l = matmul(label_rows, param("joint.label"));
  return gelu(add_row(pairwise_add_rows(a, l), param("joint.hidden_b")));
}

Tensor Model::joint(const Tensor& acoustic, const Tensor& label) {
  Tensor h = joint_hidden(acoustic, label);
  return add_row(matmul(h, param("joint.out")), param("joint.out_b"));
}

Tensor Model::acoustic_rows(const Tensor& encoded) {
  return matmul(encoded, param("joint.acoustic"));
}

Tensor Model::label_row(int prev, int prev_prev) {
  return matmul(decoder_embed(prev, prev_prev), param("joint.label"));
}

Tensor Model::joint_logprobs_row(const Tensor& acoustic_rows, int t, const Tensor& label_row) {
  Tensor h = gelu(add_row(add(slice_rows(acoustic_rows, t, t + 1), label_row), param("joint.hidden_b")));
  Tensor logits = add_row(matmul(h, param("joint.out")), param("joint.out_b"));
  return log_softmax(logits, -1);
}

Tensor Model::joint_lattice_logprobs(const Tensor& encoded, std::span<const int> y) {
  const int T = encoded.dim(0);
  const int U = static_cast<int>(y.size());
  const int V = cfg_.wordpiece_vocab;
  for (int id : y)
    if (id < 0 || id >= V) fail("joint_lattice_logprobs: label id " + std::to_string(id) + " out of range");
  Tensor h = joint_hidden(encoded, decoder_context_rows(y));
  Tensor logits = add_row(matmul(h, param("joint.out")), param("joint.out_b"));
  return reshape(log_softmax(logits, -1), {T, U + 1, V + 1});
}

}  // namespace ctxasr
