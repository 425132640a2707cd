#include "ctxasr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ctxasr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

TrainMode parse_train_mode(const std::string& s) {
  if (s == "sup_only") return TrainMode::SupOnly;
  if (s == "joist") return TrainMode::Joist;
  if (s == "cti") return TrainMode::Cti;
  fail("unknown train mode '" + s + "' (expected sup_only|joist|cti)");
}

MwerMode parse_mwer_mode(const std::string& s) {
  if (s == "mwer") return MwerMode::Mwer;
  if (s == "joist_mwer") return MwerMode::JoistMwer;
  if (s == "cti_mwer") return MwerMode::CtiMwer;
  fail("unknown MWER mode '" + s + "' (expected mwer|joist_mwer|cti_mwer)");
}

Tensor transducer_loss(const Tensor& lattice, std::span<const int> y) {
  if (lattice.rank() != 3)
    fail("transducer_loss: lattice must be rank 3 [T x U+1 x V+1], got " + shape_str(lattice.shape()));
  const int T = lattice.dim(0);
  const int U = static_cast<int>(y.size());
  const int Vp1 = lattice.dim(2);
  const int blank = Vp1 - 1;
  if (lattice.dim(1) != U + 1)
    fail("transducer_loss: lattice has " + std::to_string(lattice.dim(1)) + " label rows for " +
         std::to_string(U) + " labels");
  for (int id : y)
    if (id < 0 || id >= blank) fail("transducer_loss: label id " + std::to_string(id) + " out of range");
  if (U > T)
    fail("transducer_loss: no alignment can emit " + std::to_string(U) + " labels in " +
         std::to_string(T) + " frames");

  std::span<const double> lp = lattice.values();
  auto at = [&](int t, int u, int k) -> double {
    return lp[(static_cast<std::size_t>(t) * (U + 1) + static_cast<std::size_t>(u)) * Vp1 +
              static_cast<std::size_t>(k)];
  };

  // alpha(t, u): log-probability of having consumed t frames and emitted the
  // first u labels. Each frame emits exactly one symbol.
  std::vector<double> alpha(static_cast<std::size_t>(T + 1) * (U + 1), kNegInf);
  auto al = [&](int t, int u) -> double& {
    return alpha[static_cast<std::size_t>(t) * (U + 1) + static_cast<std::size_t>(u)];
  };
  al(0, 0) = 0.0;
  for (int t = 1; t <= T; ++t)
    for (int u = 0; u <= std::min(t, U); ++u) {
      const double via_blank = al(t - 1, u) == kNegInf ? kNegInf : al(t - 1, u) + at(t - 1, u, blank);
      const double via_label =
          (u > 0 && al(t - 1, u - 1) != kNegInf)
              ? al(t - 1, u - 1) + at(t - 1, u - 1, y[static_cast<std::size_t>(u - 1)])
              : kNegInf;
      al(t, u) = lse2(via_blank, via_label);
    }
  const double log_z = al(T, U);
  if (!std::isfinite(log_z)) fail("transducer_loss: non-finite alignment sum");

  auto node = std::make_shared<detail::Node>();
  node->shape = {1};
  node->value = {-log_z};
  node->op = "transducer_loss";
  if (lattice.requires_grad() && detail::grad_enabled()) {
    node->requires_grad = true;
    node->parents = {lattice.node()};
    std::vector<int> y_copy(y.begin(), y.end());
    detail::Node* parent = lattice.node().get();
    node->backward = [parent, y_copy = std::move(y_copy), alpha = std::move(alpha), T, U, Vp1,
                      blank, log_z](detail::Node& n) {
      parent->ensure_grad();
      const double g = n.grad[0];
      std::span<const double> lpv = parent->value;
      auto at2 = [&](int t, int u, int k) -> double {
        return lpv[(static_cast<std::size_t>(t) * (U + 1) + static_cast<std::size_t>(u)) * Vp1 +
                   static_cast<std::size_t>(k)];
      };
      auto al2 = [&](int t, int u) -> double {
        return alpha[static_cast<std::size_t>(t) * (U + 1) + static_cast<std::size_t>(u)];
      };
      std::vector<double> beta(static_cast<std::size_t>(T + 1) * (U + 1), kNegInf);
      auto be = [&](int t, int u) -> double& {
        return beta[static_cast<std::size_t>(t) * (U + 1) + static_cast<std::size_t>(u)];
      };
      be(T, U) = 0.0;
      for (int t = T - 1; t >= 0; --t)
        for (int u = std::min(t, U); u >= 0; --u) {
          const double via_blank = be(t + 1, u) == kNegInf ? kNegInf : at2(t, u, blank) + be(t + 1, u);
          const double via_label =
              (u < U && be(t + 1, u + 1) != kNegInf)
                  ? at2(t, u, y_copy[static_cast<std::size_t>(u)]) + be(t + 1, u + 1)
                  : kNegInf;
          be(t, u) = lse2(via_blank, via_label);
        }
      // d(-logZ)/d lp(edge) = -posterior occupancy of that edge.
      for (int t = 0; t < T; ++t)
        for (int u = 0; u <= std::min(t, U); ++u) {
          if (al2(t, u) == kNegInf) continue;
          const std::size_t base =
              (static_cast<std::size_t>(t) * (U + 1) + static_cast<std::size_t>(u)) * Vp1;
          if (be(t + 1, u) != kNegInf)
            parent->grad[base + static_cast<std::size_t>(blank)] -=
                g * std::exp(al2(t, u) + at2(t, u, blank) + be(t + 1, u) - log_z);
          if (u < U && be(t + 1, u + 1) != kNegInf)
            parent->grad[base + static_cast<std::size_t>(y_copy[static_cast<std::size_t>(u)])] -=
                g * std::exp(al2(t, u) + at2(t, u, y_copy[static_cast<std::size_t>(u)]) +
                             be(t + 1, u + 1) - log_z);
        }
    };
  }
  return Tensor::wrap(std::move(node));
}

Tensor retrieval_loss(const Tensor& a, int r) {
  if (a.rank() != 1) fail("retrieval_loss: correlations must be rank 1, got " + shape_str(a.shape()));
  if (r < 0 || r >= a.dim(0))
    fail("retrieval_loss: label " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  return scale(pick(log_softmax(a, -1), r), -1.0);
}

Tensor wordpiece_retrieval_loss(const Tensor& H, const Tensor& keys,
                                const std::vector<std::uint8_t>& positive_mask,
                                const Tensor& no_bias_key) {
  if (keys.dim(0) < 1) fail("wordpiece_retrieval_loss: no keys");
  if (static_cast<int>(positive_mask.size()) != keys.dim(0))
    fail("wordpiece_retrieval_loss: mask length " + std::to_string(positive_mask.size()) +
         " for " + std::to_string(keys.dim(0)) + " keys");
  const int M = keys.dim(0);
  Tensor corr = correlate(H, concat_rows({keys, no_bias_key}));  // [M+1]
  Tensor lsm = log_softmax(corr, -1);
  std::vector<int> positives;
  for (int i = 0; i < M; ++i)
    if (positive_mask[static_cast<std::size_t>(i)]) positives.push_back(i);
  if (positives.empty()) return scale(pick(lsm, M), -1.0);
  Tensor sum = pick(lsm, positives[0]);
  for (std::size_t i = 1; i < positives.size(); ++i) sum = add(sum, pick(lsm, positives[i]));
  return scale(sum, -1.0 / static_cast<double>(positives.size()));
}

int edit_distance_words(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

Tensor mwer_loss(const Tensor& nbest_logprobs, const std::vector<double>& word_errors) {
  if (nbest_logprobs.size() == 0) fail("mwer_loss: empty N-best list");
  if (static_cast<std::size_t>(nbest_logprobs.size()) != word_errors.size())
    fail("mwer_loss: " + std::to_string(nbest_logprobs.size()) + " log-probs for " +
         std::to_string(word_errors.size()) + " error counts");
  if (!nbest_logprobs.all_finite()) fail("mwer_loss: non-finite hypothesis log-probability");
  const int n = static_cast<int>(word_errors.size());
  Tensor lp = nbest_logprobs.rank() == 1 ? nbest_logprobs : reshape(nbest_logprobs, {n});
  Tensor errors = Tensor::from({n}, word_errors);
  return sum_all(mul(softmax(lp, -1), errors));
}

Tensor mwer_loss(const std::vector<Hypothesis>& nbest, const std::vector<Tensor>& logprobs,
                 const std::vector<std::string>& reference) {
  if (nbest.empty() || nbest.size() != logprobs.size())
    fail("mwer_loss: hypothesis/log-prob count mismatch");
  std::vector<double> errors;
  errors.reserve(nbest.size());
  for (const Hypothesis& h : nbest)
    errors.push_back(static_cast<double>(edit_distance_words(h.words, reference)));
  std::vector<Tensor> rows;
  rows.reserve(logprobs.size());
  for (const Tensor& t : logprobs) rows.push_back(t.rank() == 1 ? reshape(t, {1, 1}) : t);
  Tensor stacked = reshape(concat_rows(rows), {static_cast<int>(logprobs.size())});
  return mwer_loss(stacked, errors);
}

namespace {

// Positions of the ground-truth phrase's pieces within the flattened selected
// word-piece sequence; all-false when the phrase was not retrieved or the
// label is NO_BIAS.
std::vector<std::uint8_t> positive_piece_mask(const RetrievalResult& retrieval, int label,
                                              int no_bias_index) {
  std::vector<std::uint8_t> mask(retrieval.selected_wordpieces.size(), 0);
  if (label == no_bias_index) return mask;
  int offset = 0;
  for (std::size_t s = 0; s < retrieval.selected_indices.size(); ++s) {
    const int len = retrieval.selected_phrase_lengths[s];
    if (retrieval.selected_indices[s] == label)
      for (int i = 0; i < len; ++i) mask[static_cast<std::size_t>(offset + i)] = 1;
    offset += len;
  }
  return mask;
}

struct WeightedSum {
  Tensor tensor;
  void add_term(const Tensor& t) { tensor = tensor.defined() ? add(tensor, t) : t; }
};

}  // namespace

LossReport cti_loss(const std::vector<PairedExample>& paired,
                    const std::vector<TextExample>& text, Model& model,
                    const ModelConfig& cfg, TrainMode mode, std::uint64_t seed) {
  const double lambda_a_text = mode == TrainMode::SupOnly ? 0.0 : cfg.lambda_a_text;
  const double lambda_d_text = mode == TrainMode::Cti ? cfg.lambda_d_text : 0.0;
  const bool text_biasing = mode == TrainMode::Cti;

  LossReport report;
  WeightedSum total;

  if ((cfg.lambda_a > 0 || cfg.lambda_d > 0)) {
    if (paired.empty()) fail("cti_loss: paired batch is empty but paired weights are nonzero");
    WeightedSum asr, retr;
    for (const PairedExample& ex : paired) {
      Tensor h = model.encode_range(model.frontend(ex.frames), 0, cfg.l_bias);
      BiasOutput b = bias_pipeline(model, h, ex.bias, cfg.K, cfg.lambda_c_train);
      Tensor encoded = model.encode_range(b.H_bias, cfg.l_bias, cfg.num_encoder_layers);
      asr.add_term(transducer_loss(model.joint_lattice_logprobs(encoded, ex.wordpieces), ex.wordpieces));
      Tensor r = retrieval_loss(b.retrieval.correlations, ex.label);
      if (b.keys.defined()) {
        auto mask = positive_piece_mask(b.retrieval, ex.label, ex.bias.no_bias_index());
        r = add(r, wordpiece_retrieval_loss(h, b.keys, mask, model.wp_no_bias_key()));
      }
      retr.add_term(r);
    }
    const double inv = 1.0 / static_cast<double>(paired.size());
    Tensor asr_mean = scale(asr.tensor, inv);
    Tensor retr_mean = scale(retr.tensor, inv);
    report.components["asr_paired"] = asr_mean.item();
    report.components["retr_paired"] = retr_mean.item();
    total.add_term(scale(asr_mean, cfg.lambda_a));
    total.add_term(scale(retr_mean, cfg.lambda_d));
  }

  if (lambda_a_text > 0 || lambda_d_text > 0) {
    if (text.empty()) fail("cti_loss: text batch is empty but text weights are nonzero");
    WeightedSum asr, retr;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const TextExample& ex = text[i];
      Rng mask_rng(Rng::mix(seed, 0x7E47u, static_cast<std::uint64_t>(i)));
      TextPath path = build_text_path(ex, model, cfg, mask_rng, text_biasing, cfg.lambda_c_train);
      asr.add_term(transducer_loss(model.joint_lattice_logprobs(path.encoded, ex.wordpiece_targets),
                                   ex.wordpiece_targets));
      if (path.biased) {
        Tensor r = retrieval_loss(path.bias.retrieval.correlations, ex.retrieval_label);
        if (path.bias.keys.defined()) {
          auto mask = positive_piece_mask(path.bias.retrieval, ex.retrieval_label,
                                          ex.bias_set.no_bias_index());
          r = add(r, wordpiece_retrieval_loss(path.H_at_bias, path.bias.keys, mask,
                                              model.wp_no_bias_key()));
        }
        retr.add_term(r);
      }
    }
    const double inv = 1.0 / static_cast<double>(text.size());
    Tensor asr_mean = scale(asr.tensor, inv);
    report.components["asr_text"] = asr_mean.item();
    total.add_term(scale(asr_mean, lambda_a_text));
    if (retr.tensor.defined()) {
      Tensor retr_mean = scale(retr.tensor, inv);
      report.components["retr_text"] = retr_mean.item();
      total.add_term(scale(retr_mean, lambda_d_text));
    }
  }

  if (!total.tensor.defined()) fail("cti_loss: all loss weights are zero");
  report.total_tensor = total.tensor;
  report.total = total.tensor.item();
  return report;
}

namespace {

// Beam-search an N-best list over `encoded`, then rescore every hypothesis
// with gradients via the lattice DP.
Tensor nbest_mwer_term(Model& model, const Tensor& encoded, const ModelConfig& cfg,
                       const WordpieceVocab& vocab, const std::vector<std::string>& reference) {
  std::vector<Hypothesis> nbest = beam_search(model, encoded, vocab, cfg.beam_width, cfg.nbest);
  std::vector<Tensor> scores;
  scores.reserve(nbest.size());
  for (const Hypothesis& h : nbest)
    scores.push_back(scale(
        transducer_loss(model.joint_lattice_logprobs(encoded, h.tokens), h.tokens), -1.0));
  return mwer_loss(nbest, scores, reference);
}

}  // namespace

LossReport cti_mwer_loss(const std::vector<PairedExample>& paired,
                         const std::vector<TextExample>& text, Model& model,
                         const ModelConfig& cfg, MwerMode mode, std::uint64_t seed,
                         bool drop_bias, const WordpieceVocab& vocab, bool keep_aux) {
  const double lambda_m_text = mode == MwerMode::Mwer ? 0.0 : cfg.lambda_m_text;
  const bool text_biasing = mode == MwerMode::CtiMwer;
  static const BiasSet kEmptyBias;

  LossReport report;
  WeightedSum total;

  if (cfg.lambda_m > 0) {
    if (paired.empty()) fail("cti_mwer_loss: paired batch is empty but lambda_m > 0");
    WeightedSum mwer;
    for (const PairedExample& ex : paired) {
      Tensor h = model.encode_range(model.frontend(ex.frames), 0, cfg.l_bias);
      BiasOutput b = bias_pipeline(model, h, drop_bias ? kEmptyBias : ex.bias, cfg.K,
                                   cfg.lambda_c_train);
      Tensor encoded = model.encode_range(b.H_bias, cfg.l_bias, cfg.num_encoder_layers);
      mwer.add_term(nbest_mwer_term(model, encoded, cfg, vocab, ex.words));
    }
    Tensor mean = scale(mwer.tensor, 1.0 / static_cast<double>(paired.size()));
    report.components["mwer_paired"] = mean.item();
    total.add_term(scale(mean, cfg.lambda_m));
  }

  if (lambda_m_text > 0) {
    if (text.empty()) fail("cti_mwer_loss: text batch is empty but lambda_m_text > 0");
    WeightedSum mwer;
    for (std::size_t i = 0; i < text.size(); ++i) {
      TextExample ex = text[i];
      if (drop_bias) {
        ex.bias_set = kEmptyBias;
        ex.retrieval_label = 0;
      }
      Rng mask_rng(Rng::mix(seed, 0x7E47u, static_cast<std::uint64_t>(i)));
      TextPath path = build_text_path(ex, model, cfg, mask_rng, text_biasing, cfg.lambda_c_train);
      mwer.add_term(nbest_mwer_term(model, path.encoded, cfg, vocab, ex.words));
    }
    Tensor mean = scale(mwer.tensor, 1.0 / static_cast<double>(text.size()));
    report.components["mwer_text"] = mean.item();
    total.add_term(scale(mean, lambda_m_text));
  }

  if (keep_aux) {
    const TrainMode aux_mode = mode == MwerMode::CtiMwer   ? TrainMode::Cti
                               : mode == MwerMode::JoistMwer ? TrainMode::Joist
                                                             : TrainMode::SupOnly;
    LossReport aux = cti_loss(paired, text, model, cfg, aux_mode, Rng::mix(seed, 0xA0u));
    for (const auto& [name, value] : aux.components) report.components[name] = value;
    total.add_term(aux.total_tensor);
  }

  if (!total.tensor.defined()) fail("cti_mwer_loss: all loss weights are zero");
  report.total_tensor = total.tensor;
  report.total = total.tensor.item();
  return report;
}

}  // namespace ctxasr
