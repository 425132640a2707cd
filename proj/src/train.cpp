#include "ctxasr/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ctxasr/decoding.hpp"
#include "ctxasr/text_injection.hpp"
#include "json.hpp"

namespace ctxasr {

namespace {

using json = nlohmann::json;

// Stream purposes hashed with the model seed so every consumer of randomness
// draws from an independent, step-addressable stream. Together with the
// per-step loss seeds this makes a training run a pure function of
// (config, corpus); resuming replays the identical trajectory.
constexpr std::uint64_t kPairedStreamSeed = 0x9A12;
constexpr std::uint64_t kTextStreamSeed = 0x7E21;
constexpr std::uint64_t kTextPrepSeed = 0x7B1A;
constexpr std::uint64_t kLossSeed = 0x105E;
constexpr std::uint64_t kDropSeed = 0xD209;

}  // namespace

// --- optimizer ---------------------------------------------------------------

Adam::Adam(Model& model, const TrainConfig& cfg, int total_steps)
    : model_(model),
      lr_(cfg.lr),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      final_fraction_(cfg.lr_final_fraction),
      warmup_(cfg.warmup_steps),
      total_(total_steps) {
  std::size_t total = 0;
  for (const auto& [name, t] : model.params()) total += static_cast<std::size_t>(t.size());
  m_.assign(total, 0.0);
  v_.assign(total, 0.0);
}

double Adam::rate_at(std::int64_t step) const {
  if (warmup_ > 0 && step <= warmup_)
    return lr_ * static_cast<double>(step) / static_cast<double>(warmup_);
  const double floor_lr = lr_ * final_fraction_;
  if (total_ <= warmup_) return floor_lr;
  double p = static_cast<double>(step - warmup_) / static_cast<double>(total_ - warmup_);
  p = std::clamp(p, 0.0, 1.0);
  return floor_lr + (lr_ - floor_lr) * 0.5 * (1.0 + std::cos(M_PI * p));
}

void Adam::apply(std::int64_t step) {
  const double rate = rate_at(step);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step));
  std::size_t off = 0;
  for (auto& [name, t] : model_.params()) {
    t.ensure_grad();  // parameters outside this step's graph have zero grad
    const auto g = t.grad();
    auto x = t.values_mut();
    for (std::size_t i = 0; i < x.size(); ++i, ++off) {
      m_[off] = beta1_ * m_[off] + (1.0 - beta1_) * g[i];
      v_[off] = beta2_ * v_[off] + (1.0 - beta2_) * g[i] * g[i];
      x[i] -= rate * (m_[off] / bc1) / (std::sqrt(v_[off] / bc2) + eps_);
    }
  }
}

void Adam::load(const TrainState& state) {
  if (state.adam_m.size() != m_.size() || state.adam_v.size() != v_.size())
    fail("train: checkpoint optimizer state does not match the model's parameter count");
  m_ = state.adam_m;
  v_ = state.adam_v;
}

void Adam::fill(TrainState& state) const {
  state.adam_m = m_;
  state.adam_v = v_;
}

// --- data order --------------------------------------------------------------

EpochStream::EpochStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
  if (n_ == 0) fail("train: cannot stream over an empty corpus");
  reshuffle();
}

void EpochStream::reshuffle() {
  order_.resize(n_);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(Rng::mix(seed_, epoch_));
  rng.shuffle(order_);
}

std::size_t EpochStream::next() {
  const std::size_t item = order_[pos_++];
  if (pos_ == n_) {  // roll over eagerly so epoch() is always consumed / n
    ++epoch_;
    pos_ = 0;
    reshuffle();
  }
  return item;
}

void EpochStream::seek(std::uint64_t consumed) {
  epoch_ = consumed / n_;
  pos_ = static_cast<std::size_t>(consumed % n_);
  reshuffle();
}

// --- evaluation --------------------------------------------------------------

namespace {

struct UttStat {
  int errors = 0;
  int ref_words = 0;
  int in_context = 0;
  int recalled = 0;
  int anti = 0;
  int anti_no_bias = 0;
};

// Decode one utterance with its bias set rebuilt for `k` distractors and
// score it against the reference.
UttStat decode_one(Model& model, const WordpieceVocab& vocab, const PairedExample& ex, int k,
                   double lambda_c) {
  PairedExample probe = ex;
  int label = 0;
  probe.bias = test_bias_at(ex, k, vocab, &label);
  probe.label = label;
  DecodeResult res = decode_utterance(probe, model, model.config(), vocab, lambda_c, 1);

  UttStat st;
  st.errors = edit_distance_words(res.best.words, ex.words);
  st.ref_words = static_cast<int>(ex.words.size());
  if (!probe.bias.empty()) {
    if (label != probe.bias.no_bias_index()) {
      st.in_context = 1;
      const auto& sel = res.retrieval.selected_indices;
      st.recalled = std::find(sel.begin(), sel.end(), label) != sel.end() ? 1 : 0;
    } else {
      st.anti = 1;
      const auto corr = res.retrieval.correlations.values();
      const auto arg = std::max_element(corr.begin(), corr.end()) - corr.begin();
      st.anti_no_bias = arg == probe.bias.no_bias_index() ? 1 : 0;
    }
  }
  return st;
}

// Runs `body(i)` for i in [0, n) across a small worker pool; the first
// exception wins and is rethrown on the caller's thread.
void parallel_for(std::size_t n, int n_threads, const std::function<void(std::size_t)>& body) {
  int workers = n_threads > 0 ? n_threads
                              : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(n));
  std::atomic<std::size_t> cursor{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto run = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= n) break;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        break;
      }
    }
  };
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);
}

std::string format_or_dash(double v, int precision) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

std::vector<EvalCell> evaluate(Model& model, const WordpieceVocab& vocab,
                               const std::vector<PairedExample>& tests,
                               const std::vector<int>& distractor_counts, double lambda_c,
                               int n_threads) {
  if (tests.empty()) fail("eval: no test utterances");
  std::vector<int> ks = {0};
  for (int k : distractor_counts) {
    if (k < 0) fail("eval: negative distractor count");
    if (k > 0 && std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
  }
  std::sort(ks.begin(), ks.end());

  // Canonical set order, then anything else in order of appearance.
  std::vector<std::string> sets;
  for (const char* name : {"no_pre", "pre", "anti"})
    for (const auto& ex : tests)
      if (ex.set_type == name && std::find(sets.begin(), sets.end(), name) == sets.end())
        sets.push_back(name);
  for (const auto& ex : tests)
    if (std::find(sets.begin(), sets.end(), ex.set_type) == sets.end())
      sets.push_back(ex.set_type);

  std::vector<EvalCell> cells;
  for (const auto& set_name : sets) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < tests.size(); ++i)
      if (tests[i].set_type == set_name) idx.push_back(i);
    for (int k : ks) {
      std::vector<UttStat> stats(idx.size());
      parallel_for(idx.size(), n_threads, [&](std::size_t i) {
        stats[i] = decode_one(model, vocab, tests[idx[i]], k, lambda_c);
      });
      UttStat sum;
      for (const auto& st : stats) {
        sum.errors += st.errors;
        sum.ref_words += st.ref_words;
        sum.in_context += st.in_context;
        sum.recalled += st.recalled;
        sum.anti += st.anti;
        sum.anti_no_bias += st.anti_no_bias;
      }
      EvalCell cell;
      cell.set_type = set_name;
      cell.n_distractors = k;
      cell.n_utterances = static_cast<int>(idx.size());
      cell.word_errors = sum.errors;
      cell.ref_words = sum.ref_words;
      cell.wer = sum.ref_words > 0 ? 100.0 * sum.errors / sum.ref_words : 0.0;
      if (sum.in_context > 0)
        cell.recall = static_cast<double>(sum.recalled) / sum.in_context;
      if (sum.anti > 0)
        cell.no_bias_acc = static_cast<double>(sum.anti_no_bias) / sum.anti;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string eval_csv(const std::vector<EvalCell>& cells) {
  std::ostringstream os;
  os << "set_type,n_distractors,n_utterances,wer,recall_at_k,no_bias_accuracy\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& c : cells) {
    os << c.set_type << ',' << c.n_distractors << ',' << c.n_utterances << ',' << c.wer << ',';
    if (!std::isnan(c.recall)) os << c.recall;
    os << ',';
    if (!std::isnan(c.no_bias_acc)) os << c.no_bias_acc;
    os << '\n';
  }
  return os.str();
}

std::string eval_table(const std::vector<EvalCell>& cells) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "set_type" << std::right << std::setw(14)
     << "n_distractors" << std::setw(7) << "utts" << std::setw(9) << "WER%" << std::setw(10)
     << "recall@K" << std::setw(13) << "NO_BIAS_acc" << '\n';
  for (const auto& c : cells) {
    os << std::left << std::setw(10) << c.set_type << std::right << std::setw(14)
       << c.n_distractors << std::setw(7) << c.n_utterances << std::setw(9)
       << format_or_dash(c.wer, 2) << std::setw(10) << format_or_dash(c.recall, 3)
       << std::setw(13) << format_or_dash(c.no_bias_acc, 3) << '\n';
  }
  return os.str();
}

double corpus_wer(Model& model, const WordpieceVocab& vocab,
                  const std::vector<PairedExample>& examples, double lambda_c, int n_threads) {
  if (examples.empty()) fail("eval: no utterances to score");
  std::vector<std::pair<int, int>> counts(examples.size());
  parallel_for(examples.size(), n_threads, [&](std::size_t i) {
    DecodeResult res = decode_utterance(examples[i], model, model.config(), vocab, lambda_c, 1);
    counts[i] = {edit_distance_words(res.best.words, examples[i].words),
                 static_cast<int>(examples[i].words.size())};
  });
  long errors = 0, ref = 0;
  for (const auto& [e, r] : counts) {
    errors += e;
    ref += r;
  }
  return ref > 0 ? 100.0 * static_cast<double>(errors) / static_cast<double>(ref) : 0.0;
}

// --- training loops ----------------------------------------------------------

namespace {

struct TrainCorpus {
  WordpieceVocab vocab;
  EntityLexicon lexicon;
  std::vector<PairedExample> paired;
  std::vector<TextSentence> text;
  std::vector<PairedExample> val;
};

TrainCorpus load_train_corpus(const std::string& dir) {
  if (dir.empty()) fail("train: config field data_dir is empty");
  TrainCorpus c;
  c.vocab = WordpieceVocab::load(dir + "/vocab.json");
  c.lexicon = EntityLexicon::load(dir + "/entities.json");
  c.paired = load_paired(dir + "/paired.jsonl", c.vocab);
  c.text = load_text(dir + "/text.jsonl");
  c.val = load_paired(dir + "/val.jsonl", c.vocab);
  if (c.paired.empty()) fail("train: " + dir + "/paired.jsonl is empty");
  if (c.text.empty()) fail("train: " + dir + "/text.jsonl is empty");
  if (c.val.empty()) fail("train: " + dir + "/val.jsonl is empty");
  return c;
}

// The checkpoint's architecture must match the configured one; loss weights
// and decoding knobs may legitimately differ between stages.
void check_architecture(const ModelConfig& want, const ModelConfig& have, const std::string& who) {
  auto mismatch = [&](const char* field) {
    fail(who + ": checkpoint architecture differs from config in field " + field);
  };
  if (want.d != have.d) mismatch("d");
  if (want.num_encoder_layers != have.num_encoder_layers) mismatch("num_encoder_layers");
  if (want.n_heads != have.n_heads) mismatch("n_heads");
  if (want.l_text != have.l_text) mismatch("l_text");
  if (want.l_bias != have.l_bias) mismatch("l_bias");
  if (want.l_mask != have.l_mask) mismatch("l_mask");
  if (want.phoneme_vocab != have.phoneme_vocab) mismatch("phoneme_vocab");
  if (want.wordpiece_vocab != have.wordpiece_vocab) mismatch("wordpiece_vocab");
  if (want.feature_dim != have.feature_dim) mismatch("feature_dim");
}

std::vector<PairedExample> make_paired_batch(const TrainCorpus& corpus, EpochStream& stream,
                                             int n) {
  std::vector<PairedExample> batch;
  batch.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) batch.push_back(corpus.paired[stream.next()]);
  return batch;
}

// Text preparation is re-drawn per visit: upsampling repeats and the in-batch
// bias sets both come from the step's own stream.
std::vector<TextExample> make_text_batch(const TrainCorpus& corpus, EpochStream& stream,
                                         const EngineConfig& cfg, std::uint64_t step_seed) {
  const int n = cfg.train.text_batch_size;
  std::vector<const TextSentence*> sentences;
  std::vector<std::vector<std::string>> batch_words;
  sentences.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const TextSentence& s = corpus.text[stream.next()];
    sentences.push_back(&s);
    batch_words.push_back(s.words);
  }
  Rng rng(Rng::mix(step_seed, kTextPrepSeed));
  std::vector<BiasSet> bias =
      sample_bias_set(batch_words, corpus.lexicon, cfg.train.bias_n_max, rng, corpus.vocab);
  std::vector<TextExample> batch(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    TextExample& ex = batch[static_cast<std::size_t>(i)];
    ex.id = sentences[static_cast<std::size_t>(i)]->id;
    ex.words = sentences[static_cast<std::size_t>(i)]->words;
    ex.phonemes_upsampled = upsample(text_to_phonemes(ex.words), rng, cfg.model.upsample_min,
                                     cfg.model.upsample_max);
    ex.bias_set = std::move(bias[static_cast<std::size_t>(i)]);
    ex.retrieval_label = assign_retrieval_label(ex.words, ex.bias_set);
    ex.wordpiece_targets = corpus.vocab.tokenize(ex.words);
  }
  return batch;
}

struct Stage {
  int total_steps = 0;
  bool is_mwer = false;
  TrainMode cti_mode = TrainMode::SupOnly;
  MwerMode mwer_mode = MwerMode::Mwer;
  std::string name;  // error/message prefix: "train" or "train-mwer"
};

TrainResult run_stage(const EngineConfig& cfg, Model& model, const TrainCorpus& corpus,
                      const std::string& out_dir, const Stage& stage,
                      const std::string& resume_path) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(stage.name + ": cannot create output directory " + out_dir);

  TrainResult result;
  result.last_checkpoint = out_dir + "/last.ckpt";
  result.best_checkpoint = out_dir + "/best.ckpt";

  Adam opt(model, cfg.train, stage.total_steps);
  std::int64_t start_step = 0;
  if (!resume_path.empty()) {
    Checkpoint ckpt = read_checkpoint(resume_path);
    if (!ckpt.train) fail(stage.name + ": " + resume_path + " carries no optimizer state");
    check_architecture(cfg.model, ckpt.config, stage.name);
    load_params(model, ckpt);
    opt.load(*ckpt.train);
    start_step = ckpt.train->step;
    result.best_val_wer = ckpt.train->best_val_wer;
    result.best_step = ckpt.train->best_step;
  }

  std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::app);
  if (!metrics) fail(stage.name + ": cannot write " + out_dir + "/metrics.jsonl");

  EpochStream paired_stream(corpus.paired.size(), Rng::mix(cfg.model.seed, kPairedStreamSeed));
  EpochStream text_stream(corpus.text.size(), Rng::mix(cfg.model.seed, kTextStreamSeed));
  paired_stream.seek(static_cast<std::uint64_t>(start_step) *
                     static_cast<std::uint64_t>(cfg.train.batch_size));
  text_stream.seek(static_cast<std::uint64_t>(start_step) *
                   static_cast<std::uint64_t>(cfg.train.text_batch_size));

  auto validate_and_save = [&](std::int64_t step) {
    const double val = corpus_wer(model, corpus.vocab, corpus.val, cfg.model.lambda_c_infer);
    json line;
    line["step"] = step;
    line["val_wer"] = val;
    metrics << line.dump() << '\n' << std::flush;
    if (val < result.best_val_wer) {
      result.best_val_wer = val;
      result.best_step = step;
    }
    TrainState state;
    state.step = step;
    state.epoch = static_cast<std::int64_t>(paired_stream.epoch());
    state.best_val_wer = result.best_val_wer;
    state.best_step = result.best_step;
    opt.fill(state);
    save_checkpoint(result.last_checkpoint, model, corpus.vocab, &state);
    if (result.best_step == step)
      save_checkpoint(result.best_checkpoint, model, corpus.vocab, &state);
  };

  // An initial checkpoint guarantees a "last good" artifact exists even if
  // the very first steps diverge.
  if (start_step == 0) validate_and_save(0);

  // halt_after_steps lets a scheduler split one run across sessions; the
  // learning-rate schedule stays pinned to the stage's full length.
  const std::int64_t stop =
      cfg.train.halt_after_steps > 0
          ? std::min<std::int64_t>(cfg.train.halt_after_steps, stage.total_steps)
          : stage.total_steps;

  for (std::int64_t s = start_step + 1; s <= stop; ++s) {
    auto paired = make_paired_batch(corpus, paired_stream, cfg.train.batch_size);
    const std::uint64_t step_seed =
        Rng::mix(cfg.model.seed, kLossSeed, static_cast<std::uint64_t>(s));
    auto text = make_text_batch(corpus, text_stream, cfg, step_seed);

    model.zero_grads();
    LossReport report;
    if (stage.is_mwer) {
      Rng drop_rng(Rng::mix(cfg.model.seed, kDropSeed, static_cast<std::uint64_t>(s)));
      const bool drop = drop_rng.uniform_real() < cfg.model.bias_dropout_rate;
      report = cti_mwer_loss(paired, text, model, cfg.model, stage.mwer_mode, step_seed, drop,
                             corpus.vocab, cfg.train.mwer_keep_aux);
    } else {
      report = cti_loss(paired, text, model, cfg.model, stage.cti_mode, step_seed);
    }

    if (!std::isfinite(report.total)) {
      json line;
      line["step"] = s;
      line["event"] = "diverged";
      metrics << line.dump() << '\n' << std::flush;
      result.diverged = true;
      result.steps_run = s - 1;
      return result;  // the last checkpoint interval survives untouched
    }

    backward(report.total_tensor);
    opt.apply(s);

    if (s % cfg.train.log_every == 0 || s == stop) {
      json line;
      line["step"] = s;
      line["lr"] = opt.rate_at(s);
      line["total"] = report.total;
      for (const auto& [key, value] : report.components) line[key] = value;
      metrics << line.dump() << '\n' << std::flush;
    }
    if (s % cfg.train.checkpoint_every == 0 || s == stop) validate_and_save(s);
  }
  result.steps_run = stop;
  return result;
}

// Fill wordpiece_vocab from the corpus vocabulary; a conflicting explicit
// value is a config error.
void resolve_vocab_size(EngineConfig& cfg, const WordpieceVocab& vocab, const std::string& who) {
  if (cfg.model.wordpiece_vocab == 0) {
    cfg.model.wordpiece_vocab = vocab.size();
  } else if (cfg.model.wordpiece_vocab != vocab.size()) {
    fail(who + ": config wordpiece_vocab (" + std::to_string(cfg.model.wordpiece_vocab) +
         ") does not match vocab.json (" + std::to_string(vocab.size()) + ")");
  }
  cfg.model.validate();
}

}  // namespace

TrainResult train_cti(EngineConfig cfg, TrainMode mode, const std::string& out_dir,
                      const std::string& resume_path) {
  TrainCorpus corpus = load_train_corpus(cfg.train.data_dir);
  resolve_vocab_size(cfg, corpus.vocab, "train");
  Rng rng(cfg.model.seed);
  Model model(cfg.model, rng);
  Stage stage;
  stage.total_steps = cfg.train.train_steps;
  stage.is_mwer = false;
  stage.cti_mode = mode;
  stage.name = "train";
  return run_stage(cfg, model, corpus, out_dir, stage, resume_path);
}

TrainResult train_mwer(EngineConfig cfg, MwerMode mode, const std::string& init_path,
                       const std::string& out_dir, const std::string& resume_path) {
  TrainCorpus corpus = load_train_corpus(cfg.train.data_dir);
  resolve_vocab_size(cfg, corpus.vocab, "train-mwer");
  Rng rng(cfg.model.seed);
  Model model(cfg.model, rng);
  if (resume_path.empty()) {
    Checkpoint init = read_checkpoint(init_path);
    check_architecture(cfg.model, init.config, "train-mwer");
    if (init.vocab.to_json() != corpus.vocab.to_json())
      fail("train-mwer: init checkpoint vocabulary differs from data_dir vocab.json");
    load_params(model, init);
  }
  Stage stage;
  stage.total_steps = cfg.train.mwer_steps;
  stage.is_mwer = true;
  stage.mwer_mode = mode;
  stage.name = "train-mwer";
  return run_stage(cfg, model, corpus, out_dir, stage, resume_path);
}

FullGradCheck run_full_gradcheck(EngineConfig cfg) {
  WordpieceVocab vocab = WordpieceVocab::build(
      {{"play", "some", "jazz"}, {"call", "mom", "now"}, {"the", "weather"}}, {});
  resolve_vocab_size(cfg, vocab, "gradcheck");
  Rng rng(cfg.model.seed);
  Model model(cfg.model, rng);

  Rng data_rng(Rng::mix(cfg.model.seed, 0xF1D0));
  std::vector<PairedExample> paired(2);
  paired[0].id = "p1";
  paired[0].words = {"play", "some", "jazz"};
  paired[0].wordpieces = vocab.tokenize(paired[0].words);
  paired[0].frames = Tensor::randn({12, cfg.model.feature_dim}, data_rng, 1.0, false);
  paired[0].bias = make_bias_set({{"jazz"}, {"call", "mom"}}, vocab);
  paired[0].label = 0;
  paired[1].id = "p2";
  paired[1].words = {"the", "weather"};
  paired[1].wordpieces = vocab.tokenize(paired[1].words);
  paired[1].frames = Tensor::randn({9, cfg.model.feature_dim}, data_rng, 1.0, false);
  paired[1].bias = make_bias_set({{"call", "mom"}}, vocab);
  paired[1].label = paired[1].bias.no_bias_index();

  std::vector<TextExample> text(2);
  text[0].id = "t1";
  text[0].words = {"call", "mom"};
  text[0].phonemes_upsampled = upsample(text_to_phonemes(text[0].words), data_rng, 1, 2);
  text[0].bias_set = make_bias_set({{"call", "mom"}, {"jazz"}}, vocab);
  text[0].retrieval_label = 0;
  text[0].wordpiece_targets = vocab.tokenize(text[0].words);
  text[1].id = "t2";
  text[1].words = {"the", "weather", "now"};
  text[1].phonemes_upsampled = upsample(text_to_phonemes(text[1].words), data_rng, 1, 2);
  text[1].bias_set = make_bias_set({{"jazz"}}, vocab);
  text[1].retrieval_label = text[1].bias_set.no_bias_index();
  text[1].wordpiece_targets = vocab.tokenize(text[1].words);

  const std::uint64_t loss_seed = Rng::mix(cfg.model.seed, 0xC11E);
  FullGradCheck out;
  const auto start = std::chrono::steady_clock::now();
  out.cti = grad_check(model.params(), [&] {
    return cti_loss(paired, text, model, cfg.model, TrainMode::Cti, loss_seed).total_tensor;
  });
  out.cti_mwer = grad_check(model.params(), [&] {
    return cti_mwer_loss(paired, text, model, cfg.model, MwerMode::CtiMwer, loss_seed,
                         /*drop_bias=*/false, vocab)
        .total_tensor;
  });
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace ctxasr
