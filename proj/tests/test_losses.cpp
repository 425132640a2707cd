#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ctxasr/data.hpp"
#include "ctxasr/grad_check.hpp"
#include "ctxasr/losses.hpp"
#include "ctxasr/model.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/text_injection.hpp"

using namespace ctxasr;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Independent oracle: explicit enumeration of every frame-emission path.
// Each of the T frames emits either blank (label count stays) or the next
// reference label; paths ending with all U labels emitted contribute.
double enumerate_transducer_loss(const Tensor& lattice, const std::vector<int>& y) {
  const int T = lattice.dim(0), Up1 = lattice.dim(1), Vp1 = lattice.dim(2);
  const int U = static_cast<int>(y.size());
  REQUIRE(Up1 == U + 1);
  std::span<const double> lp = lattice.values();
  auto at = [&](int t, int u, int k) {
    return lp[(static_cast<std::size_t>(t) * Up1 + static_cast<std::size_t>(u)) * Vp1 +
              static_cast<std::size_t>(k)];
  };
  double total = kNegInf;
  auto rec = [&](auto&& self, int t, int u, double acc) -> void {
    if (t == T) {
      if (u == U) total = lse2(total, acc);
      return;
    }
    self(self, t + 1, u, acc + at(t, u, Vp1 - 1));
    if (u < U) self(self, t + 1, u + 1, acc + at(t, u, y[static_cast<std::size_t>(u)]));
  };
  rec(rec, 0, 0, 0.0);
  return -total;
}

Tensor random_lattice(int T, int U, int Vp1, Rng& rng, bool requires_grad = false) {
  return Tensor::randn({T, U + 1, Vp1}, rng, 1.0, requires_grad);
}

}  // namespace

TEST_CASE("transducer_loss matches the two-path hand example") {
  // T=2, U=1: the label either rides frame 0 (then blank on frame 1 at u=1)
  // or frame 1 (after a blank at u=0).
  Rng rng(7);
  const int Vp1 = 4, y0 = 2;
  Tensor lattice = random_lattice(2, 1, Vp1, rng);
  std::span<const double> lp = lattice.values();
  auto at = [&](int t, int u, int k) { return lp[(static_cast<std::size_t>(t) * 2 + u) * Vp1 + k]; };
  const int blank = Vp1 - 1;
  const double expected =
      -lse2(at(0, 0, y0) + at(1, 1, blank), at(0, 0, blank) + at(1, 0, y0));
  std::vector<int> y = {y0};
  CHECK(transducer_loss(lattice, y).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("transducer_loss agrees with path enumeration on 200 random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int T = rng.uniform_int(1, 4);
    const int U = rng.uniform_int(0, std::min(T, 3));
    const int Vp1 = rng.uniform_int(2, 5);  // V in [1,4]
    std::vector<int> y(static_cast<std::size_t>(U));
    for (int& id : y) id = rng.uniform_int(0, Vp1 - 2);
    Tensor lattice = random_lattice(T, U, Vp1, rng);
    const double dp = transducer_loss(lattice, y).item();
    const double brute = enumerate_transducer_loss(lattice, y);
    CHECK(std::abs(dp - brute) < 1e-9);
  }
}

TEST_CASE("transducer_loss gradient matches central differences") {
  Rng rng(23);
  std::vector<int> y = {1, 0, 2};
  Tensor lattice = random_lattice(5, 3, 4, rng, true);
  auto report = grad_check({{"lattice", lattice}}, [&] { return transducer_loss(lattice, y); });
  INFO(report.worst_param, "[", report.worst_index, "] analytic=", report.worst_analytic,
       " numeric=", report.worst_numeric);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("transducer_loss scales its backward by the upstream gradient") {
  Rng rng(29);
  std::vector<int> y = {0};
  Tensor lattice = random_lattice(3, 1, 3, rng, true);
  backward(scale(transducer_loss(lattice, y), 2.5));
  std::vector<double> scaled(lattice.grad().begin(), lattice.grad().end());
  lattice.zero_grad();
  backward(transducer_loss(lattice, y));
  for (std::size_t i = 0; i < scaled.size(); ++i)
    CHECK(scaled[i] == doctest::Approx(2.5 * lattice.grad()[i]).epsilon(1e-12));
}

TEST_CASE("transducer_loss rejects impossible and malformed inputs") {
  Rng rng(31);
  std::vector<int> y2 = {0, 1};
  Tensor tall = random_lattice(1, 2, 3, rng);
  CHECK_THROWS(transducer_loss(tall, y2));  // U > T
  Tensor flat = Tensor::randn({2, 3}, rng, 1.0, false);
  std::vector<int> y1 = {0};
  CHECK_THROWS(transducer_loss(flat, y1));  // rank 2
  Tensor wrong_rows = random_lattice(3, 2, 3, rng);
  CHECK_THROWS(transducer_loss(wrong_rows, y1));  // U+1 mismatch
  Tensor ok = random_lattice(3, 1, 3, rng);
  std::vector<int> blank_label = {2};
  CHECK_THROWS(transducer_loss(ok, blank_label));  // blank used as label
}

TEST_CASE("retrieval_loss uniform, direct, and permutation cases") {
  Tensor uniform = Tensor::full({5}, 0.7);
  CHECK(retrieval_loss(uniform, 3).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // N=2, a=[1,2,0], r=1 -> -log(e^2 / (e^1 + e^2 + e^0))
  Tensor a = Tensor::from({3}, {1.0, 2.0, 0.0});
  const double z = std::exp(1.0) + std::exp(2.0) + 1.0;
  CHECK(retrieval_loss(a, 1).item() == doctest::Approx(-std::log(std::exp(2.0) / z)).epsilon(1e-12));

  // Swapping two slots while tracking the label leaves the loss unchanged.
  Tensor b = Tensor::from({3}, {0.0, 2.0, 1.0});
  CHECK(retrieval_loss(a, 1).item() == doctest::Approx(retrieval_loss(b, 1).item()).epsilon(1e-12));
  CHECK(retrieval_loss(a, 0).item() == doctest::Approx(retrieval_loss(b, 2).item()).epsilon(1e-12));

  CHECK_THROWS(retrieval_loss(a, 3));
  CHECK_THROWS(retrieval_loss(a, -1));
}

TEST_CASE("wordpiece_retrieval_loss multi-hot cross-entropy") {
  const int d = 4;
  Tensor H = Tensor::zeros({2, d});  // all correlations equal (zero)
  Rng rng(41);
  Tensor keys = Tensor::randn({4, d}, rng, 1.0, false);
  Tensor no_bias = Tensor::randn({1, d}, rng, 1.0, false);

  // All-equal correlations, 2 positives of M=4 plus the no-bias logit:
  // p_i = 1/5 everywhere, uniform target over the 2 positives -> log 5.
  std::vector<std::uint8_t> two = {1, 0, 1, 0};
  CHECK(wordpiece_retrieval_loss(H, keys, two, no_bias).item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // Single positive reduces to the standard cross-entropy at that index.
  Tensor H2 = Tensor::randn({3, d}, rng, 1.0, false);
  std::vector<std::uint8_t> one = {0, 0, 1, 0};
  Tensor corr = correlate(H2, concat_rows({keys, no_bias}));
  const double expect = -log_softmax(corr, -1).values()[2];
  CHECK(wordpiece_retrieval_loss(H2, keys, one, no_bias).item() ==
        doctest::Approx(expect).epsilon(1e-12));

  // No positives: the appended no-bias slot is the target.
  std::vector<std::uint8_t> none = {0, 0, 0, 0};
  const double expect_nb = -log_softmax(corr, -1).values()[4];
  CHECK(wordpiece_retrieval_loss(H2, keys, none, no_bias).item() ==
        doctest::Approx(expect_nb).epsilon(1e-12));

  std::vector<std::uint8_t> short_mask = {1};
  CHECK_THROWS(wordpiece_retrieval_loss(H2, keys, short_mask, no_bias));
}

TEST_CASE("edit_distance_words oracle cases") {
  using V = std::vector<std::string>;
  CHECK(edit_distance_words({}, {}) == 0);
  CHECK(edit_distance_words(V{"a", "b"}, V{"a", "b"}) == 0);
  CHECK(edit_distance_words(V{"a", "x", "c"}, V{"a", "b", "c"}) == 1);       // sub
  CHECK(edit_distance_words(V{"a", "b", "c"}, V{"a", "c"}) == 1);            // ins
  CHECK(edit_distance_words(V{"a"}, V{"a", "b", "c"}) == 2);                 // del x2
  CHECK(edit_distance_words({}, V{"x", "y", "z"}) == 3);
  CHECK(edit_distance_words(V{"k", "i", "t", "t", "e", "n"},
                            V{"s", "i", "t", "t", "i", "n", "g"}) == 3);
}

TEST_CASE("mwer_loss hand value, shift invariance, and expectation oracle") {
  // Two equiprobable hypotheses with 1 and 3 errors -> expectation 2.0.
  Tensor equal = Tensor::from({2}, {-4.0, -4.0});
  CHECK(mwer_loss(equal, {1.0, 3.0}).item() == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(1, 6);
    std::vector<double> lp(static_cast<std::size_t>(n)), errs(static_cast<std::size_t>(n));
    for (double& v : lp) v = rng.normal(0.0, 3.0) - 10.0;
    for (double& e : errs) e = static_cast<double>(rng.uniform_int(0, 8));
    Tensor t = Tensor::from({n}, lp);
    const double loss = mwer_loss(t, errs).item();

    // Direct expectation with our own softmax.
    double mx = *std::max_element(lp.begin(), lp.end());
    double z = 0.0;
    for (double v : lp) z += std::exp(v - mx);
    double expect = 0.0;
    for (int i = 0; i < n; ++i)
      expect += std::exp(lp[static_cast<std::size_t>(i)] - mx) / z * errs[static_cast<std::size_t>(i)];
    CHECK(std::abs(loss - expect) < 1e-10);

    // Bounds: a convex combination of the error counts.
    const auto [lo, hi] = std::minmax_element(errs.begin(), errs.end());
    CHECK(loss >= *lo - 1e-12);
    CHECK(loss <= *hi + 1e-12);

    // Shift invariance: adding a constant to every log-prob is a no-op.
    std::vector<double> shifted = lp;
    for (double& v : shifted) v += 17.5;
    CHECK(std::abs(mwer_loss(Tensor::from({n}, shifted), errs).item() - loss) < 1e-12);
  }
}

TEST_CASE("mwer_loss gradient flows through the probabilities") {
  Rng rng(59);
  Tensor lp = Tensor::randn({4}, rng, 1.0, true);
  std::vector<double> errs = {0.0, 2.0, 1.0, 5.0};
  auto report = grad_check({{"lp", lp}}, [&] { return mwer_loss(lp, errs); });
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("mwer_loss input validation") {
  Tensor lp = Tensor::from({2}, {-1.0, -2.0});
  CHECK_THROWS(mwer_loss(lp, {1.0}));  // count mismatch
  Tensor bad = Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS(mwer_loss(bad, {1.0}));
  CHECK_THROWS(mwer_loss(std::vector<Hypothesis>{}, {}, {"a"}));
}

// ---------------------------------------------------------------------------
// Composite objectives on a miniature model.

namespace {

struct Fixture {
  ModelConfig cfg;
  WordpieceVocab vocab;
  Rng rng;
  Model model;
  std::vector<PairedExample> paired;
  std::vector<TextExample> text;

  static ModelConfig make_cfg(int vocab_size) {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.num_encoder_layers = 2;
    cfg.n_heads = 2;
    cfg.l_text = 0;
    cfg.l_bias = 1;
    cfg.l_mask = 2;
    cfg.K = 4;
    cfg.feature_dim = 6;
    cfg.wordpiece_vocab = vocab_size;
    cfg.beam_width = 3;
    cfg.nbest = 2;
    cfg.validate();
    return cfg;
  }

  Fixture()
      : vocab(WordpieceVocab::build(
            {{"play", "some", "jazz"}, {"call", "mom", "now"}, {"the", "weather"}}, {})),
        rng(123),
        model(make_cfg(vocab.size()), rng) {
    cfg = model.config();

    Rng data_rng(77);
    PairedExample ex1;
    ex1.id = "p1";
    ex1.words = {"play", "some", "jazz"};
    ex1.wordpieces = vocab.tokenize(ex1.words);
    ex1.frames = Tensor::randn({12, cfg.feature_dim}, data_rng, 1.0, false);
    ex1.bias = make_bias_set({{"jazz"}, {"mom"}}, vocab);
    ex1.label = 0;
    paired.push_back(ex1);

    PairedExample ex2;
    ex2.id = "p2";
    ex2.words = {"the", "weather"};
    ex2.wordpieces = vocab.tokenize(ex2.words);
    ex2.frames = Tensor::randn({9, cfg.feature_dim}, data_rng, 1.0, false);
    ex2.bias = make_bias_set({{"call", "mom"}}, vocab);
    ex2.label = ex2.bias.no_bias_index();
    paired.push_back(ex2);

    TextExample tx;
    tx.id = "t1";
    tx.words = {"call", "mom"};
    tx.phonemes_upsampled = upsample(text_to_phonemes(tx.words), data_rng, 1, 2);
    tx.bias_set = make_bias_set({{"mom"}, {"jazz"}}, vocab);
    tx.retrieval_label = 0;
    tx.wordpiece_targets = vocab.tokenize(tx.words);
    text.push_back(tx);

    TextExample tx2;
    tx2.id = "t2";
    tx2.words = {"the", "weather", "now"};
    tx2.phonemes_upsampled = upsample(text_to_phonemes(tx2.words), data_rng, 1, 2);
    tx2.bias_set = make_bias_set({{"jazz"}}, vocab);
    tx2.retrieval_label = tx2.bias_set.no_bias_index();
    tx2.wordpiece_targets = vocab.tokenize(tx2.words);
    text.push_back(tx2);
  }
};

double weighted_total(const LossReport& r, const ModelConfig& cfg, double lm = 0.0,
                      double lm_text = 0.0) {
  double t = 0.0;
  auto get = [&](const char* k) {
    auto it = r.components.find(k);
    return it == r.components.end() ? 0.0 : it->second;
  };
  t += cfg.lambda_a * get("asr_paired");
  t += cfg.lambda_d * get("retr_paired");
  t += cfg.lambda_a_text * get("asr_text");
  t += cfg.lambda_d_text * get("retr_text");
  t += lm * get("mwer_paired");
  t += lm_text * get("mwer_text");
  return t;
}

}  // namespace

TEST_CASE("cti_loss components, modes, and determinism") {
  Fixture f;

  LossReport cti = cti_loss(f.paired, f.text, f.model, f.cfg, TrainMode::Cti, 99);
  CHECK(cti.components.count("asr_paired") == 1);
  CHECK(cti.components.count("retr_paired") == 1);
  CHECK(cti.components.count("asr_text") == 1);
  CHECK(cti.components.count("retr_text") == 1);
  CHECK(std::abs(cti.total - weighted_total(cti, f.cfg)) < 1e-10);
  CHECK(std::isfinite(cti.total));

  // Same seed -> bitwise identical; the loss is a pure function of the batch.
  LossReport again = cti_loss(f.paired, f.text, f.model, f.cfg, TrainMode::Cti, 99);
  CHECK(again.total == cti.total);

  LossReport sup = cti_loss(f.paired, f.text, f.model, f.cfg, TrainMode::SupOnly, 99);
  CHECK(sup.components.count("asr_text") == 0);
  CHECK(sup.components.count("retr_text") == 0);
  CHECK(std::abs(sup.total - weighted_total(sup, f.cfg)) < 1e-10);

  LossReport joist = cti_loss(f.paired, f.text, f.model, f.cfg, TrainMode::Joist, 99);
  CHECK(joist.components.count("asr_text") == 1);
  CHECK(joist.components.count("retr_text") == 0);
  CHECK(std::abs(joist.total - weighted_total(joist, f.cfg)) < 1e-10);

  // The paired-path terms do not depend on the mode.
  CHECK(sup.components.at("asr_paired") == doctest::Approx(cti.components.at("asr_paired")).epsilon(1e-12));
  CHECK(joist.components.at("retr_paired") == doctest::Approx(cti.components.at("retr_paired")).epsilon(1e-12));
}

TEST_CASE("cti_loss gradients on a parameter cross-section") {
  Fixture f;
  std::vector<std::pair<std::string, Tensor>> sample = {
      {"bias.corr_q", f.model.param("bias.corr_q")},
      {"joint.out_b", f.model.param("joint.out_b")},
      {"phrase.no_bias", f.model.param("phrase.no_bias")},
      {"text.mask_embedding", f.model.param("text.mask_embedding")},
      {"dec.prev", f.model.param("dec.prev")},
  };
  auto report = grad_check(sample, [&] {
    return cti_loss(f.paired, f.text, f.model, f.cfg, TrainMode::Cti, 5).total_tensor;
  });
  INFO(report.worst_param, "[", report.worst_index, "] analytic=", report.worst_analytic,
       " numeric=", report.worst_numeric);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("cti_mwer_loss modes, dropout, and aux switch") {
  Fixture f;

  LossReport m = cti_mwer_loss(f.paired, f.text, f.model, f.cfg, MwerMode::CtiMwer, 7,
                               /*drop_bias=*/false, f.vocab);
  CHECK(m.components.count("mwer_paired") == 1);
  CHECK(m.components.count("mwer_text") == 1);
  CHECK(std::abs(m.total - weighted_total(m, f.cfg, f.cfg.lambda_m, f.cfg.lambda_m_text)) < 1e-10);
  CHECK(m.components.at("mwer_paired") >= -1e-12);  // expected word errors

  LossReport same = cti_mwer_loss(f.paired, f.text, f.model, f.cfg, MwerMode::CtiMwer, 7,
                                  false, f.vocab);
  CHECK(same.total == m.total);

  LossReport plain = cti_mwer_loss(f.paired, f.text, f.model, f.cfg, MwerMode::Mwer, 7,
                                   false, f.vocab);
  CHECK(plain.components.count("mwer_text") == 0);

  LossReport dropped = cti_mwer_loss(f.paired, f.text, f.model, f.cfg, MwerMode::CtiMwer, 7,
                                     /*drop_bias=*/true, f.vocab);
  CHECK(std::isfinite(dropped.total));

  LossReport aux = cti_mwer_loss(f.paired, f.text, f.model, f.cfg, MwerMode::CtiMwer, 7,
                                 false, f.vocab, /*keep_aux=*/true);
  CHECK(aux.components.count("asr_paired") == 1);
  CHECK(aux.components.count("mwer_paired") == 1);
  const double expect = weighted_total(aux, f.cfg, f.cfg.lambda_m, f.cfg.lambda_m_text);
  CHECK(std::abs(aux.total - expect) < 1e-10);
}

TEST_CASE("train mode parsing") {
  CHECK(parse_train_mode("sup_only") == TrainMode::SupOnly);
  CHECK(parse_train_mode("joist") == TrainMode::Joist);
  CHECK(parse_train_mode("cti") == TrainMode::Cti);
  CHECK_THROWS(parse_train_mode("mwer"));
  CHECK(parse_mwer_mode("mwer") == MwerMode::Mwer);
  CHECK(parse_mwer_mode("joist_mwer") == MwerMode::JoistMwer);
  CHECK(parse_mwer_mode("cti_mwer") == MwerMode::CtiMwer);
  CHECK_THROWS(parse_mwer_mode("cti"));
}
