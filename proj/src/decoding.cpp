#include "ctxasr/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "ctxasr/losses.hpp"

namespace ctxasr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct BeamHyp {
  std::vector<int> tokens;
  double score = 0.0;  // log-sum over all explored alignments of `tokens`
};

// Deterministic ordering: better score first; on exact ties the shorter /
// lexicographically smaller token sequence wins (so a blank extension beats a
// label extension of the same score, matching greedy's tie-break).
bool beam_less(const BeamHyp& a, const BeamHyp& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_search(Model& model, const Tensor& encoded,
                                    const WordpieceVocab& vocab, int beam_width, int n_best) {
  if (n_best < 1 || beam_width < n_best)
    fail("beam_search: need beam_width >= n_best >= 1, got " + std::to_string(beam_width) +
         " and " + std::to_string(n_best));
  NoGradGuard no_grad;
  const int T = encoded.dim(0);
  const int V = model.config().wordpiece_vocab;
  const int sos = model.sos();
  Tensor acoustic = model.acoustic_rows(encoded);

  std::map<std::pair<int, int>, Tensor> label_cache;
  auto label_for = [&](const std::vector<int>& tokens) -> const Tensor& {
    const int prev = tokens.empty() ? sos : tokens.back();
    const int prev2 = tokens.size() < 2 ? sos : tokens[tokens.size() - 2];
    auto [it, inserted] = label_cache.try_emplace({prev, prev2});
    if (inserted) it->second = model.label_row(prev, prev2);
    return it->second;
  };

  std::vector<BeamHyp> beam = {BeamHyp{}};
  std::vector<int> label_order(static_cast<std::size_t>(V));
  for (int t = 0; t < T; ++t) {
    std::map<std::vector<int>, double> merged;
    for (const BeamHyp& hyp : beam) {
      Tensor lp = model.joint_logprobs_row(acoustic, t, label_for(hyp.tokens));
      std::span<const double> lpv = lp.values();
      // Blank keeps the sequence; the best `beam_width` labels extend it.
      auto slot = merged.try_emplace(hyp.tokens, kNegInf).first;
      slot->second = lse2(slot->second, hyp.score + lpv[static_cast<std::size_t>(V)]);
      for (int k = 0; k < V; ++k) label_order[static_cast<std::size_t>(k)] = k;
      const int keep = std::min(beam_width, V);
      std::partial_sort(label_order.begin(), label_order.begin() + keep, label_order.end(),
                        [&](int a, int b) {
                          if (lpv[static_cast<std::size_t>(a)] != lpv[static_cast<std::size_t>(b)])
                            return lpv[static_cast<std::size_t>(a)] > lpv[static_cast<std::size_t>(b)];
                          return a < b;
                        });
      for (int i = 0; i < keep; ++i) {
        const int y = label_order[static_cast<std::size_t>(i)];
        std::vector<int> tokens = hyp.tokens;
        tokens.push_back(y);
        auto lslot = merged.try_emplace(std::move(tokens), kNegInf).first;
        lslot->second = lse2(lslot->second, hyp.score + lpv[static_cast<std::size_t>(y)]);
      }
    }
    std::vector<BeamHyp> next;
    next.reserve(merged.size());
    for (auto& [tokens, score] : merged) next.push_back({tokens, score});
    std::sort(next.begin(), next.end(), beam_less);
    if (static_cast<int>(next.size()) > beam_width) next.resize(static_cast<std::size_t>(beam_width));
    beam = std::move(next);
  }

  const int take = std::min<int>(n_best, static_cast<int>(beam.size()));
  std::vector<Hypothesis> out;
  out.reserve(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i) {
    Hypothesis h;
    h.tokens = beam[static_cast<std::size_t>(i)].tokens;
    // Exact posterior of this sequence, independent of beam pruning.
    h.log_prob = -transducer_loss(model.joint_lattice_logprobs(encoded, h.tokens), h.tokens).item();
    h.words = vocab.detokenize(h.tokens);
    out.push_back(std::move(h));
  }
  std::sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  });
  return out;
}

std::vector<int> greedy_decode(Model& model, const Tensor& encoded) {
  NoGradGuard no_grad;
  const int T = encoded.dim(0);
  const int V = model.config().wordpiece_vocab;
  const int sos = model.sos();
  Tensor acoustic = model.acoustic_rows(encoded);
  std::vector<int> tokens;
  for (int t = 0; t < T; ++t) {
    const int prev = tokens.empty() ? sos : tokens.back();
    const int prev2 = tokens.size() < 2 ? sos : tokens[tokens.size() - 2];
    Tensor lp = model.joint_logprobs_row(acoustic, t, model.label_row(prev, prev2));
    std::span<const double> lpv = lp.values();
    int best = V;  // blank wins exact ties
    double best_v = lpv[static_cast<std::size_t>(V)];
    for (int k = 0; k < V; ++k)
      if (lpv[static_cast<std::size_t>(k)] > best_v) {
        best = k;
        best_v = lpv[static_cast<std::size_t>(k)];
      }
    if (best != V) tokens.push_back(best);
  }
  return tokens;
}

DecodeResult decode_utterance(const PairedExample& example, Model& model,
                              const ModelConfig& cfg, const WordpieceVocab& vocab,
                              double lambda_c, int n_best) {
  NoGradGuard no_grad;
  Tensor h = model.frontend(example.frames);
  h = model.encode_range(h, 0, cfg.l_bias);
  BiasOutput biased = bias_pipeline(model, h, example.bias, cfg.K, lambda_c);
  Tensor encoded = model.encode_range(biased.H_bias, cfg.l_bias, cfg.num_encoder_layers);
  DecodeResult result;
  result.nbest = beam_search(model, encoded, vocab, cfg.beam_width, n_best);
  result.best = result.nbest.front();
  result.retrieval = std::move(biased.retrieval);
  return result;
}

}  // namespace ctxasr
