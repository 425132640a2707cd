#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "ctxasr/data.hpp"
#include "ctxasr/grad_check.hpp"
#include "ctxasr/model.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/vocab.hpp"

using namespace ctxasr;

namespace {

ModelConfig tiny_cfg(int vocab_size) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.num_encoder_layers = 3;
  cfg.n_heads = 2;
  cfg.l_text = 1;
  cfg.l_bias = 2;
  cfg.l_mask = 3;
  cfg.K = 4;
  cfg.feature_dim = 5;
  cfg.wordpiece_vocab = vocab_size;
  cfg.validate();
  return cfg;
}

WordpieceVocab tiny_vocab() {
  return WordpieceVocab::build({{"play", "jazz"}, {"call", "mom"}, {"weather", "report"}}, {});
}

struct M {
  WordpieceVocab vocab = tiny_vocab();
  Rng rng{4242};
  Model model{tiny_cfg(vocab.size()), rng};
  ModelConfig cfg = model.config();
};

}  // namespace

TEST_CASE("parameter registry is deterministic and queryable") {
  M a, b;
  REQUIRE(a.model.params().size() == b.model.params().size());
  for (std::size_t i = 0; i < a.model.params().size(); ++i) {
    CHECK(a.model.params()[i].first == b.model.params()[i].first);
    CHECK(a.model.params()[i].second.values()[0] == b.model.params()[i].second.values()[0]);
  }
  std::set<std::string> names;
  for (const auto& [name, t] : a.model.params()) {
    CHECK(t.requires_grad());
    names.insert(name);
  }
  CHECK(names.size() == a.model.params().size());  // no duplicate names
  CHECK(a.model.param("joint.out_b").dim(0) == a.vocab.size() + 1);
  CHECK_THROWS(a.model.param("no.such.param"));
}

TEST_CASE("frontend and encode_range shapes and composition") {
  M m;
  Rng rng(9);
  Tensor frames = Tensor::randn({11, m.cfg.feature_dim}, rng, 1.0, false);
  Tensor x = m.model.frontend(frames);
  REQUIRE(x.shape() == Shape{11, m.cfg.d});

  Tensor full = m.model.encode_range(x, 0, m.cfg.num_encoder_layers);
  Tensor step = m.model.encode_range(m.model.encode_range(x, 0, 2), 2, m.cfg.num_encoder_layers);
  REQUIRE(full.shape() == step.shape());
  for (std::size_t i = 0; i < full.values().size(); ++i)
    CHECK(full.values()[i] == step.values()[i]);  // identical op sequence -> bitwise

  // Empty range is the identity (same node, not a copy).
  CHECK(m.model.encode_range(x, 1, 1).node().get() == x.node().get());
  CHECK_THROWS(m.model.encode_range(x, 2, 1));
  CHECK_THROWS(m.model.encode_range(x, 0, m.cfg.num_encoder_layers + 1));
}

TEST_CASE("phrase_encode layout: one row per phrase plus trailing NO_BIAS") {
  M m;
  BiasSet bias = make_bias_set({{"jazz"}, {"call", "mom"}}, m.vocab);
  Tensor P = m.model.phrase_encode(bias);
  REQUIRE(P.shape() == Shape{3, m.cfg.d});

  // Empty set: only the learned NO_BIAS row.
  Tensor P0 = m.model.phrase_encode(BiasSet{});
  REQUIRE(P0.shape() == Shape{1, m.cfg.d});
  std::span<const double> nb = m.model.param("phrase.no_bias").values();
  for (int j = 0; j < m.cfg.d; ++j) {
    CHECK(P0.values()[static_cast<std::size_t>(j)] == nb[static_cast<std::size_t>(j)]);
    CHECK(P.values()[static_cast<std::size_t>(2 * m.cfg.d + j)] == nb[static_cast<std::size_t>(j)]);
  }

  // Reordering phrases reorders rows bitwise.
  BiasSet flipped = make_bias_set({{"call", "mom"}, {"jazz"}}, m.vocab);
  Tensor Q = m.model.phrase_encode(flipped);
  for (int j = 0; j < m.cfg.d; ++j) {
    CHECK(P.values()[static_cast<std::size_t>(j)] == Q.values()[static_cast<std::size_t>(m.cfg.d + j)]);
    CHECK(P.values()[static_cast<std::size_t>(m.cfg.d + j)] == Q.values()[static_cast<std::size_t>(j)]);
  }
}

TEST_CASE("decoder embedding depends on both of the last two labels") {
  M m;
  const int sos = m.model.sos();
  Tensor a = m.model.decoder_embed(3, sos);
  Tensor b = m.model.decoder_embed(3, 1);
  Tensor c = m.model.decoder_embed(1, sos);
  bool prev2_matters = false, prev_matters = false;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    prev2_matters |= a.values()[i] != b.values()[i];
    prev_matters |= a.values()[i] != c.values()[i];
  }
  CHECK(prev2_matters);
  CHECK(prev_matters);

  // Context rows for y enumerate prefixes: row 0 is (sos, sos).
  std::vector<int> y = {2, 0, 1};
  Tensor rows = m.model.decoder_context_rows(y);
  REQUIRE(rows.shape() == Shape{4, m.cfg.d});
  Tensor first = m.model.decoder_embed(sos, sos);
  Tensor last = m.model.decoder_embed(1, 0);
  for (int j = 0; j < m.cfg.d; ++j) {
    CHECK(rows.values()[static_cast<std::size_t>(j)] == first.values()[static_cast<std::size_t>(j)]);
    CHECK(rows.values()[static_cast<std::size_t>(3 * m.cfg.d + j)] ==
          last.values()[static_cast<std::size_t>(j)]);
  }
}

TEST_CASE("joint lattice rows are normalized log-probabilities") {
  M m;
  Rng rng(17);
  Tensor frames = Tensor::randn({6, m.cfg.feature_dim}, rng, 1.0, false);
  Tensor encoded = m.model.encode_range(m.model.frontend(frames), 0, m.cfg.num_encoder_layers);
  std::vector<int> y = {1, 4};
  Tensor lattice = m.model.joint_lattice_logprobs(encoded, y);
  REQUIRE(lattice.shape() == Shape{6, 3, m.vocab.size() + 1});
  std::span<const double> lp = lattice.values();
  const int Vp1 = m.vocab.size() + 1;
  for (int t = 0; t < 6; ++t)
    for (int u = 0; u < 3; ++u) {
      double z = 0.0;
      for (int k = 0; k < Vp1; ++k) z += std::exp(lp[(t * 3 + u) * Vp1 + k]);
      CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("incremental joint rows match the whole-lattice computation") {
  M m;
  Rng rng(19);
  Tensor frames = Tensor::randn({5, m.cfg.feature_dim}, rng, 1.0, false);
  Tensor encoded = m.model.encode_range(m.model.frontend(frames), 0, m.cfg.num_encoder_layers);
  std::vector<int> y = {0, 3};
  Tensor lattice = m.model.joint_lattice_logprobs(encoded, y);
  const int Vp1 = m.vocab.size() + 1;

  Tensor ac = m.model.acoustic_rows(encoded);
  const int sos = m.model.sos();
  std::vector<std::pair<int, int>> contexts = {{sos, sos}, {0, sos}, {3, 0}};
  for (int u = 0; u < 3; ++u) {
    Tensor lr = m.model.label_row(contexts[static_cast<std::size_t>(u)].first,
                                  contexts[static_cast<std::size_t>(u)].second);
    for (int t = 0; t < 5; ++t) {
      Tensor row = m.model.joint_logprobs_row(ac, t, lr);
      REQUIRE(row.shape() == Shape{1, Vp1});
      for (int k = 0; k < Vp1; ++k)
        CHECK(row.values()[static_cast<std::size_t>(k)] ==
              doctest::Approx(lattice.values()[(t * 3 + u) * Vp1 + k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("encoder and joint gradients check out end to end") {
  M m;
  Rng rng(23);
  Tensor frames = Tensor::randn({4, m.cfg.feature_dim}, rng, 1.0, false);
  std::vector<int> y = {2};
  std::vector<std::pair<std::string, Tensor>> sample = {
      {"frontend.w", m.model.param("frontend.w")},
      {"enc0.attn_q", m.model.param("enc0.attn_q")},
      {"enc2.ff_w2", m.model.param("enc2.ff_w2")},
      {"enc1.ln1_g", m.model.param("enc1.ln1_g")},
      {"joint.acoustic", m.model.param("joint.acoustic")},
      {"joint.label", m.model.param("joint.label")},
      {"dec.prev2", m.model.param("dec.prev2")},
  };
  auto report = grad_check(sample, [&] {
    Tensor encoded = m.model.encode_range(m.model.frontend(frames), 0, m.cfg.num_encoder_layers);
    Tensor lattice = m.model.joint_lattice_logprobs(encoded, y);
    return sum_all(lattice);
  });
  INFO(report.worst_param, "[", report.worst_index, "]");
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("zero_grads clears every parameter gradient") {
  M m;
  Rng rng(29);
  Tensor frames = Tensor::randn({3, m.cfg.feature_dim}, rng, 1.0, false);
  backward(sum_all(m.model.encode_range(m.model.frontend(frames), 0, 1)));
  bool any = false;
  for (auto& [name, t] : m.model.params())
    for (double g : t.grad())
      if (g != 0.0) any = true;
  CHECK(any);
  m.model.zero_grads();
  for (auto& [name, t] : m.model.params())
    for (double g : t.grad()) CHECK(g == 0.0);
}
