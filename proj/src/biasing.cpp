#include "ctxasr/biasing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctxasr/model.hpp"

namespace ctxasr {

void BiasSet::validate() const {
  if (phrases.size() != wordpieces.size())
    fail("bias set: " + std::to_string(phrases.size()) + " phrases but " +
         std::to_string(wordpieces.size()) + " tokenizations");
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (phrases[i].empty()) fail("bias set: phrase " + std::to_string(i) + " has no words");
    if (wordpieces[i].empty()) fail("bias set: phrase " + std::to_string(i) + " has no word-pieces");
  }
}

Tensor correlate(const Tensor& H, const Tensor& P) {
  if (H.rank() != 2 || P.rank() != 2 || H.dim(1) != P.dim(1))
    fail("correlate: H " + shape_str(H.shape()) + " vs P " + shape_str(P.shape()));
  if (H.dim(0) == 0) fail("correlate: no time frames");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(H.dim(1)));
  // [L x (N+1)] correlation map, max-pooled over time.
  Tensor scores = scale(matmul_nt(H, P), inv_sqrt_d);
  return max_pool_axis(scores, 0).values;
}

RetrievalResult select_top_k(const Tensor& a, const BiasSet& bias_set, int K) {
  if (a.rank() != 1 || a.dim(0) != bias_set.size() + 1)
    fail("select_top_k: correlations " + shape_str(a.shape()) + " for " +
         std::to_string(bias_set.size()) + " phrases");
  if (K < 1) fail("select_top_k: K must be >= 1");
  RetrievalResult result;
  result.correlations = a;

  const int n = bias_set.size();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::span<const double> av = a.values();
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return av[static_cast<std::size_t>(x)] > av[static_cast<std::size_t>(y)]; });
  order.resize(static_cast<std::size_t>(std::min(K, n)));

  result.selected_indices = order;
  for (int idx : order) {
    const auto& pieces = bias_set.wordpieces[static_cast<std::size_t>(idx)];
    result.selected_wordpieces.insert(result.selected_wordpieces.end(), pieces.begin(), pieces.end());
    result.selected_phrase_lengths.push_back(static_cast<int>(pieces.size()));
  }
  return result;
}

Tensor bias_attend(const Tensor& H, const Tensor& keys, const Tensor& values) {
  if (keys.dim(0) < 1) fail("bias_attend: no keys (empty bias sets must skip biasing)");
  if (H.dim(1) != keys.dim(1) || keys.shape() != values.shape())
    fail("bias_attend: H " + shape_str(H.shape()) + ", keys " + shape_str(keys.shape()) +
         ", values " + shape_str(values.shape()));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(H.dim(1)));
  Tensor attn = softmax(scale(matmul_nt(H, keys), inv_sqrt_d), -1);
  return matmul(attn, values);
}

Tensor apply_bias(const Tensor& H, const Tensor& C, double lambda_c) {
  if (lambda_c == 0.0) return H;
  if (H.shape() != C.shape())
    fail("apply_bias: H " + shape_str(H.shape()) + " vs C " + shape_str(C.shape()));
  return add(H, scale(C, lambda_c));
}

BiasOutput bias_pipeline(Model& model, const Tensor& H, const BiasSet& bias_set,
                         int K, double lambda_c) {
  BiasOutput out;
  Tensor P = model.phrase_encode(bias_set);
  out.retrieval.correlations = correlate(model.corr_query(H), model.corr_key(P));
  if (bias_set.empty()) {
    // Nothing to retrieve or attend over; correlations carry only NO_BIAS.
    out.H_bias = H;
    return out;
  }
  RetrievalResult selected = select_top_k(out.retrieval.correlations, bias_set, K);
  out.retrieval = std::move(selected);
  if (lambda_c == 0.0) {
    out.H_bias = H;
    return out;
  }
  WordpieceKV kv = model.wordpiece_encode(out.retrieval.selected_wordpieces,
                                          out.retrieval.selected_phrase_lengths);
  out.keys = kv.keys;
  Tensor C = bias_attend(model.attn_query(H), model.attn_key(kv.keys), model.attn_value(kv.values));
  out.H_bias = apply_bias(H, C, lambda_c);
  return out;
}

}  // namespace ctxasr
