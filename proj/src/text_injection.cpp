#include "ctxasr/text_injection.hpp"

#include <algorithm>
#include <cmath>

#include "ctxasr/vocab.hpp"

namespace ctxasr {

std::vector<int> text_to_phonemes(const std::vector<std::string>& words) {
  if (words.empty()) fail("text_to_phonemes: empty word sequence");
  std::vector<int> out;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (w > 0) out.push_back(kBoundaryPhoneme);
    if (words[w].empty()) fail("text_to_phonemes: empty word");
    for (char c : words[w]) {
      const int id = char_to_phoneme(c);
      if (id < 0 || id == kBoundaryPhoneme)
        fail("text_to_phonemes: character '" + std::string(1, c) + "' outside inventory");
      out.push_back(id);
    }
  }
  return out;
}

std::vector<std::string> phonemes_to_text(const std::vector<int>& phonemes) {
  std::vector<std::string> words(1);
  for (int p : phonemes) {
    if (p == kBoundaryPhoneme)
      words.emplace_back();
    else
      words.back() += phoneme_to_char(p);
  }
  return words;
}

std::vector<int> upsample(const std::vector<int>& tokens, Rng& rng, int min_rep, int max_rep) {
  if (min_rep < 1 || min_rep > max_rep) fail("upsample: need 1 <= min_rep <= max_rep");
  std::vector<int> out;
  out.reserve(tokens.size() * static_cast<std::size_t>(max_rep));
  for (int t : tokens) {
    const int reps = rng.uniform_int(min_rep, max_rep);
    for (int r = 0; r < reps; ++r) out.push_back(t);
  }
  return out;
}

Tensor span_mask(const Tensor& H, double ratio, int S, Rng& rng, const Tensor& mask_embedding) {
  if (ratio < 0.0 || ratio > 1.0) fail("span_mask: ratio must be in [0, 1]");
  if (S < 1) fail("span_mask: span must be >= 1");
  if (ratio == 0.0) return H;
  const int I = H.dim(0);
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(I), 0);
  if (ratio == 1.0) {
    std::fill(covered.begin(), covered.end(), 1);
  } else {
    const double target = ratio * I;
    std::vector<int> starts = rng.sample_indices(I, I);
    int n_covered = 0;
    for (int s : starts) {
      if (n_covered >= target) break;
      const int end = std::min(s + S, I);
      for (int i = s; i < end; ++i) {
        if (!covered[static_cast<std::size_t>(i)]) {
          covered[static_cast<std::size_t>(i)] = 1;
          ++n_covered;
        }
      }
    }
  }
  return masked_fill_rows(H, covered, mask_embedding);
}

TextPath build_text_path(const TextExample& example, Model& model, const ModelConfig& cfg,
                         Rng& rng, bool with_biasing, double lambda_c) {
  if (example.phonemes_upsampled.empty()) fail("build_text_path: no phonemes");
  TextPath out;
  Tensor e_phn = model.phoneme_embed(example.phonemes_upsampled);
  out.H_at_bias = model.encode_range(e_phn, cfg.l_text, cfg.l_bias);
  Tensor h = out.H_at_bias;
  if (with_biasing) {
    out.bias = bias_pipeline(model, h, example.bias_set, cfg.K, lambda_c);
    out.biased = true;
    h = out.bias.H_bias;
  }
  h = model.encode_range(h, cfg.l_bias, cfg.l_mask);
  h = span_mask(h, cfg.mask_ratio, cfg.mask_span, rng, model.mask_embedding());
  out.encoded = model.encode_range(h, cfg.l_mask, cfg.num_encoder_layers);
  return out;
}

}  // namespace ctxasr
